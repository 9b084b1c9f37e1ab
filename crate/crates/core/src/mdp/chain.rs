//! Structural analysis of the support graph of a Markov chain.

use crate::error::{OpeError, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainStructure {
    /// Closed communicating classes, each sorted ascending.
    pub recurrent_classes: Vec<Vec<usize>>,
    /// Period of each recurrent class, same order.
    pub periods: Vec<usize>,
    /// Whether the whole support graph is strongly connected.
    pub irreducible: bool,
}

impl ChainStructure {
    /// A single recurrent class that is aperiodic (transient states allowed).
    pub fn is_ergodic(&self) -> bool {
        self.recurrent_classes.len() == 1 && self.periods[0] == 1
    }
}

fn successors(p: &Matrix) -> Vec<Vec<usize>> {
    let n = p.nrows();
    (0..n)
        .map(|i| (0..n).filter(|&j| p[(i, j)] > 0.0).collect())
        .collect()
}

/// Kosaraju's algorithm; returns the component id of every node.
fn strongly_connected(succ: &[Vec<usize>]) -> (Vec<usize>, usize) {
    let n = succ.len();
    let mut pred = vec![Vec::new(); n];
    for (u, outs) in succ.iter().enumerate() {
        for &v in outs {
            pred[v].push(u);
        }
    }

    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for root in 0..n {
        if visited[root] {
            continue;
        }
        visited[root] = true;
        let mut stack = vec![(root, 0usize)];
        while let Some(&mut (u, ref mut next)) = stack.last_mut() {
            if *next < succ[u].len() {
                let v = succ[u][*next];
                *next += 1;
                if !visited[v] {
                    visited[v] = true;
                    stack.push((v, 0));
                }
            } else {
                order.push(u);
                stack.pop();
            }
        }
    }

    let mut comp = vec![usize::MAX; n];
    let mut count = 0;
    for &root in order.iter().rev() {
        if comp[root] != usize::MAX {
            continue;
        }
        comp[root] = count;
        let mut stack = vec![root];
        while let Some(u) = stack.pop() {
            for &v in &pred[u] {
                if comp[v] == usize::MAX {
                    comp[v] = count;
                    stack.push(v);
                }
            }
        }
        count += 1;
    }
    (comp, count)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Period of a strongly connected class: gcd over internal edges of
/// `level(u) + 1 - level(v)` for BFS levels from one member.
fn class_period(succ: &[Vec<usize>], members: &[usize], in_class: &[bool]) -> usize {
    let n = succ.len();
    let mut level = vec![usize::MAX; n];
    let start = members[0];
    level[start] = 0;
    let mut queue = std::collections::VecDeque::from([start]);
    let mut g = 0;
    while let Some(u) = queue.pop_front() {
        for &v in &succ[u] {
            if !in_class[v] {
                continue;
            }
            if level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            } else {
                g = gcd(g, (level[u] + 1).abs_diff(level[v]));
            }
        }
    }
    g.max(1)
}

pub fn analyze_chain(p: &Matrix) -> ChainStructure {
    let succ = successors(p);
    let (comp, count) = strongly_connected(&succ);
    let mut closed = vec![true; count];
    for (u, outs) in succ.iter().enumerate() {
        if outs.iter().any(|&v| comp[v] != comp[u]) {
            closed[comp[u]] = false;
        }
    }
    let mut recurrent_classes = Vec::new();
    let mut periods = Vec::new();
    for c in (0..count).filter(|&c| closed[c]) {
        let members: Vec<usize> = (0..succ.len()).filter(|&u| comp[u] == c).collect();
        let in_class: Vec<bool> = comp.iter().map(|&x| x == c).collect();
        periods.push(class_period(&succ, &members, &in_class));
        recurrent_classes.push(members);
    }
    let mut idx: Vec<usize> = (0..recurrent_classes.len()).collect();
    idx.sort_by_key(|&i| recurrent_classes[i][0]);
    ChainStructure {
        recurrent_classes: idx.iter().map(|&i| recurrent_classes[i].clone()).collect(),
        periods: idx.iter().map(|&i| periods[i]).collect(),
        irreducible: count == 1,
    }
}

/// Requires a unique stationary distribution that power iteration converges
/// to: exactly one recurrent class, and that class aperiodic.
pub fn check_ergodic(p: &Matrix) -> Result<()> {
    let info = analyze_chain(p);
    match info.recurrent_classes.len() {
        1 => {}
        k => {
            return Err(OpeError::NotErgodic(format!(
                "{k} closed communicating classes"
            )))
        }
    }
    if info.periods[0] != 1 {
        return Err(OpeError::NotErgodic(format!(
            "recurrent class has period {}",
            info.periods[0]
        )));
    }
    Ok(())
}

/// Stronger check used by generators: every state recurrent, aperiodic.
pub fn check_irreducible_aperiodic(p: &Matrix) -> Result<()> {
    let info = analyze_chain(p);
    if !info.irreducible {
        return Err(OpeError::NotErgodic(
            "support graph is not strongly connected".into(),
        ));
    }
    if info.periods[0] != 1 {
        return Err(OpeError::NotErgodic(format!(
            "chain has period {}",
            info.periods[0]
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> Matrix {
        let n = rows.len();
        Matrix::from_fn(n, n, |i, j| rows[i][j])
    }

    #[test]
    fn cycle_is_periodic() {
        let p = mat(&[&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0]]);
        let info = analyze_chain(&p);
        assert!(info.irreducible);
        assert_eq!(info.periods, vec![3]);
        assert!(check_ergodic(&p).is_err());
    }

    #[test]
    fn even_circle_has_period_two() {
        let n = 4;
        let p = Matrix::from_fn(n, n, |i, j| {
            if j == (i + 1) % n || j == (i + n - 1) % n {
                0.5
            } else {
                0.0
            }
        });
        assert_eq!(analyze_chain(&p).periods, vec![2]);
    }

    #[test]
    fn odd_circle_is_aperiodic() {
        let n = 5;
        let p = Matrix::from_fn(n, n, |i, j| {
            if j == (i + 1) % n {
                0.3
            } else if j == (i + n - 1) % n {
                0.7
            } else {
                0.0
            }
        });
        assert!(check_irreducible_aperiodic(&p).is_ok());
    }

    #[test]
    fn transient_states_are_allowed_but_two_classes_are_not() {
        // 0 transient, {1,2} recurrent and aperiodic via self-loop
        let p = mat(&[&[0.5, 0.5, 0.0], &[0.0, 0.5, 0.5], &[0.0, 1.0, 0.0]]);
        let info = analyze_chain(&p);
        assert_eq!(info.recurrent_classes, vec![vec![1, 2]]);
        assert!(check_ergodic(&p).is_ok());
        assert!(check_irreducible_aperiodic(&p).is_err());

        let two = mat(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(check_ergodic(&two).is_err());
    }
}
