//! Δ-residuals, the kernel minimax loss and its gradient.
//!
//! Every loss here is a weighted sum over [`DeltaTerm`]s. A term has a value
//! `Δ_i(w)` linear in the state weights and an anchor state where the
//! discriminator is evaluated. The RKHS closed form of the worst-case squared
//! loss is the V-statistic `Σ_ij p_i p_j Δ_i Δ_j k(anchor_i, anchor_j)`, which
//! is computed by first aggregating `h(s') = Σ_{i: anchor_i = s'} p_i Δ_i` and
//! then evaluating `hᵀKh`.

use super::kernel::{Kernel, StateKernel};
use super::model::{RatioModel, StateRatio};
use crate::error::{OpeError, Result};
use crate::linalg::{self, Matrix};
use crate::mdp::{policy_ratio, visitation, StochasticPolicy, TabularMdp, TransitionSample};

/// Tolerance on the total mass of term probabilities.
pub const PROBABILITY_MASS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeltaTerm {
    /// `Δ = w(s)β − w(s')`, anchored at `s'`.
    Transition { s: usize, beta: f64, s_next: usize },
    /// Dummy transition of the discounted case: `Δ = 1 − w(s0)`, anchored at `s0`.
    Initial { s0: usize },
}

impl DeltaTerm {
    pub fn anchor(&self) -> usize {
        match *self {
            DeltaTerm::Transition { s_next, .. } => s_next,
            DeltaTerm::Initial { s0 } => s0,
        }
    }

    pub fn value(&self, w: &[f64]) -> f64 {
        match *self {
            DeltaTerm::Transition { s, beta, s_next } => w[s] * beta - w[s_next],
            DeltaTerm::Initial { s0 } => 1.0 - w[s0],
        }
    }

    fn max_state(&self) -> usize {
        match *self {
            DeltaTerm::Transition { s, s_next, .. } => s.max(s_next),
            DeltaTerm::Initial { s0 } => s0,
        }
    }
}

/// Transition terms for observed samples, with `β = π(a|s)/π0(a|s)`.
pub fn transition_terms(
    samples: &[TransitionSample],
    behavior: &StochasticPolicy,
    target: &StochasticPolicy,
) -> Result<Vec<DeltaTerm>> {
    samples
        .iter()
        .map(|x| {
            check_index(x.s, behavior.n_states())?;
            check_index(x.s_next, behavior.n_states())?;
            check_index(x.a, behavior.n_actions())?;
            Ok(DeltaTerm::Transition {
                s: x.s,
                beta: policy_ratio(target, behavior, x.s, x.a)?,
                s_next: x.s_next,
            })
        })
        .collect()
}

fn check_index(i: usize, n: usize) -> Result<()> {
    if i < n {
        Ok(())
    } else {
        Err(OpeError::InvalidArgument(format!(
            "index {i} out of range 0..{n}"
        )))
    }
}

/// Weight table of `ratio` over `n_states` states.
pub fn ratio_table<R: StateRatio + ?Sized>(ratio: &R, n_states: usize) -> Result<Vec<f64>> {
    (0..n_states)
        .map(|s| {
            ratio
                .ratio(s)
                .ok_or_else(|| OpeError::InvalidArgument(format!("ratio undefined at state {s}")))
        })
        .collect()
}

fn check_terms(terms: &[DeltaTerm], probs: &[f64], n_states: usize) -> Result<()> {
    if terms.is_empty() {
        return Err(OpeError::InvalidArgument("no samples".into()));
    }
    if terms.len() != probs.len() {
        return Err(OpeError::DimensionMismatch {
            what: "sample weights vs samples",
            expected: terms.len(),
            got: probs.len(),
        });
    }
    if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
        return Err(OpeError::InvalidArgument("negative sample weight".into()));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > PROBABILITY_MASS_TOL {
        return Err(OpeError::InvalidArgument(format!(
            "sample weights sum to {total}, not 1"
        )));
    }
    if let Some(t) = terms.iter().find(|t| t.max_state() >= n_states) {
        return Err(OpeError::InvalidArgument(format!(
            "term {t:?} references a state outside 0..{n_states}"
        )));
    }
    Ok(())
}

/// `h(s') = Σ_{i: anchor_i = s'} p_i Δ_i(w)` over all states.
pub fn aggregate_residuals(w: &[f64], terms: &[DeltaTerm], probs: &[f64]) -> Vec<f64> {
    let mut h = vec![0.0; w.len()];
    for (t, p) in terms.iter().zip(probs) {
        h[t.anchor()] += p * t.value(w);
    }
    h
}

fn quadratic_form(h: &[f64], kernel: &Matrix) -> f64 {
    let support: Vec<usize> = (0..h.len()).filter(|&i| h[i] != 0.0).collect();
    let mut total = 0.0;
    for &i in &support {
        for &j in &support {
            total += h[i] * kernel[(i, j)] * h[j];
        }
    }
    total
}

/// V-statistic `Σ_ij p_i p_j Δ_i Δ_j k(s'_i, s'_j)` for the weight table `w`.
pub fn rkhs_loss(
    w: &[f64],
    terms: &[DeltaTerm],
    probs: &[f64],
    kernel: &StateKernel,
) -> Result<f64> {
    if w.len() != kernel.n_states() {
        return Err(OpeError::DimensionMismatch {
            what: "weight table vs kernel states",
            expected: kernel.n_states(),
            got: w.len(),
        });
    }
    check_terms(terms, probs, w.len())?;
    let h = aggregate_residuals(w, terms, probs);
    // PSD kernel; clamp rounding below zero
    Ok(quadratic_form(&h, kernel.matrix()).max(0.0))
}

/// `E[w(s)]` over the transition terms (the behavior visitation marginal).
fn source_mean(w: &[f64], terms: &[DeltaTerm], probs: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, p) in terms.iter().zip(probs) {
        if let DeltaTerm::Transition { s, .. } = *t {
            num += p * w[s];
            den += p;
        }
    }
    if den > 0.0 {
        num / den
    } else {
        let total: f64 = probs.iter().sum();
        terms
            .iter()
            .zip(probs)
            .map(|(t, p)| p * w[t.anchor()])
            .sum::<f64>()
            / total
    }
}

/// `D(w / z_w)` with `z_w` the mean of `w` over the transition sources.
pub fn normalized_rkhs_loss(
    w: &[f64],
    terms: &[DeltaTerm],
    probs: &[f64],
    kernel: &StateKernel,
) -> Result<f64> {
    check_terms(terms, probs, w.len())?;
    let z = source_mean(w, terms, probs);
    if !(z > 0.0) {
        return Err(OpeError::ZeroWeights);
    }
    let scaled: Vec<f64> = w.iter().map(|x| x / z).collect();
    rkhs_loss(&scaled, terms, probs, kernel)
}

/// Exact population terms of the minimax loss on a tabular MDP.
///
/// Average case (`γ = 1`): one term per `(s, a, s')` with probability
/// `d_{π0}(s) π0(a|s) T(s'|s,a)`. Discounted case: the same transitions with
/// total mass `γ`, plus initial-state terms with probability `(1−γ) d0(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub n_states: usize,
    pub gamma: f64,
    pub terms: Vec<DeltaTerm>,
    pub probs: Vec<f64>,
    /// Visitation distribution `d_{π0}` of the behavior policy.
    pub behavior_visitation: Vec<f64>,
}

impl Population {
    pub fn new(
        mdp: &TabularMdp,
        behavior: &StochasticPolicy,
        target: &StochasticPolicy,
        gamma: f64,
    ) -> Result<Self> {
        target.check_compatible(mdp)?;
        let d = visitation(mdp, behavior, gamma)?;
        let n = mdp.n_states();
        let mass = if gamma < 1.0 { gamma } else { 1.0 };
        let mut terms = Vec::new();
        let mut probs = Vec::new();
        for s in 0..n {
            for a in 0..mdp.n_actions() {
                let pa = behavior.prob(s, a);
                if d[s] == 0.0 || pa == 0.0 {
                    continue;
                }
                let beta = target.prob(s, a) / pa;
                for (s_next, t) in mdp.transition_row(s, a).iter().enumerate() {
                    if *t > 0.0 {
                        terms.push(DeltaTerm::Transition { s, beta, s_next });
                        probs.push(mass * d[s] * pa * t);
                    }
                }
            }
        }
        if gamma < 1.0 {
            for (s0, p) in mdp.initial().iter().enumerate() {
                if *p > 0.0 {
                    terms.push(DeltaTerm::Initial { s0 });
                    probs.push((1.0 - gamma) * p);
                }
            }
        }
        // remove rounding drift so the weights form an exact distribution
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        Ok(Self {
            n_states: n,
            gamma,
            terms,
            probs,
            behavior_visitation: d,
        })
    }

    /// `(M, b)` with `h = M w + b`.
    pub fn linear_form(&self) -> (Matrix, Vec<f64>) {
        linear_form(&self.terms, &self.probs, self.n_states)
    }

    pub fn loss(&self, w: &[f64], kernel: &StateKernel) -> Result<f64> {
        rkhs_loss(w, &self.terms, &self.probs, kernel)
    }

    pub fn normalized_loss(&self, w: &[f64], kernel: &StateKernel) -> Result<f64> {
        normalized_rkhs_loss(w, &self.terms, &self.probs, kernel)
    }

    /// `L(w, f) = Σ_i p_i Δ_i(w) f(anchor_i)`.
    pub fn functional(&self, w: &[f64], f: &[f64]) -> Result<f64> {
        for (what, v) in [
            ("weight table vs MDP states", w),
            ("test function vs MDP states", f),
        ] {
            if v.len() != self.n_states {
                return Err(OpeError::DimensionMismatch {
                    what,
                    expected: self.n_states,
                    got: v.len(),
                });
            }
        }
        Ok(linalg::dot(
            &aggregate_residuals(w, &self.terms, &self.probs),
            f,
        ))
    }
}

/// `(M, b)` such that the aggregated residual is `h = M w + b`.
pub fn linear_form(terms: &[DeltaTerm], probs: &[f64], n_states: usize) -> (Matrix, Vec<f64>) {
    let mut m = Matrix::zeros(n_states, n_states);
    let mut b = vec![0.0; n_states];
    for (t, p) in terms.iter().zip(probs) {
        match *t {
            DeltaTerm::Transition { s, beta, s_next } => {
                m[(s_next, s)] += p * beta;
                m[(s_next, s_next)] -= p;
            }
            DeltaTerm::Initial { s0 } => {
                m[(s0, s0)] -= p;
                b[s0] += p;
            }
        }
    }
    (m, b)
}

/// Exact `L(w, f)` of the minimax formulation: the average-case form when
/// `γ = 1`, the discounted form with the `(1−γ) E_{d0}[(1−w) f]` term
/// otherwise. `w` is used as given, without normalization.
pub fn minimax_loss_functional(
    w: &[f64],
    f: &[f64],
    mdp: &TabularMdp,
    behavior: &StochasticPolicy,
    target: &StochasticPolicy,
    gamma: f64,
) -> Result<f64> {
    Population::new(mdp, behavior, target, gamma)?.functional(w, f)
}

/// Value and parameter gradient of `scale · D(w_θ / z)`, where `D` is the
/// weighted V-statistic over `terms` and `z` the weighted mean of `w_θ(s)`
/// over transition sources.
pub fn objective_and_gradient(
    model: &RatioModel,
    terms: &[DeltaTerm],
    probs: &[f64],
    kernel: &StateKernel,
    scale: f64,
) -> Result<(f64, Vec<f64>)> {
    let n = model.n_states();
    if kernel.n_states() != n {
        return Err(OpeError::DimensionMismatch {
            what: "kernel states vs ratio model states",
            expected: n,
            got: kernel.n_states(),
        });
    }
    if terms.is_empty() || terms.len() != probs.len() {
        return Err(OpeError::DimensionMismatch {
            what: "sample weights vs samples",
            expected: terms.len(),
            got: probs.len(),
        });
    }
    if let Some(t) = terms.iter().find(|t| t.max_state() >= n) {
        return Err(OpeError::InvalidArgument(format!(
            "term {t:?} references a state outside 0..{n}"
        )));
    }

    // pre-activation and weight at every state touched by the batch
    let mut touched: Vec<usize> = Vec::new();
    let mut pre = vec![f64::NAN; n];
    let mut w = vec![0.0; n];
    let mut touch = |s: usize, touched: &mut Vec<usize>| {
        if pre[s].is_nan() {
            pre[s] = model.features().project(model.theta(), s);
            w[s] = model.link().apply(pre[s], model.clip_floor());
            touched.push(s);
        }
    };
    for t in terms {
        match *t {
            DeltaTerm::Transition { s, s_next, .. } => {
                touch(s, &mut touched);
                touch(s_next, &mut touched);
            }
            DeltaTerm::Initial { s0 } => touch(s0, &mut touched),
        }
    }

    let mut source_mass = vec![0.0; n];
    let mut total_source = 0.0;
    for (t, p) in terms.iter().zip(probs) {
        if let DeltaTerm::Transition { s, .. } = *t {
            source_mass[s] += p;
            total_source += p;
        }
    }
    if total_source == 0.0 {
        // no transitions: normalize over anchors instead
        for (t, p) in terms.iter().zip(probs) {
            source_mass[t.anchor()] += p;
            total_source += p;
        }
    }
    let z: f64 = touched.iter().map(|&s| source_mass[s] * w[s]).sum::<f64>() / total_source;
    if !(z > 0.0 && z.is_finite()) {
        return Err(OpeError::ZeroWeights);
    }
    let u: Vec<f64> = w.iter().map(|x| x / z).collect();

    let h = aggregate_residuals(&u, terms, probs);
    let anchors: Vec<usize> = touched.iter().copied().filter(|&s| h[s] != 0.0).collect();
    let k = kernel.matrix();
    let mut kh = vec![0.0; n];
    let mut value = 0.0;
    let delta = matches!(kernel.kernel(), Kernel::Delta);
    for &i in &anchors {
        let g: f64 = if delta {
            h[i]
        } else {
            anchors.iter().map(|&j| k[(i, j)] * h[j]).sum()
        };
        kh[i] = g;
        value += h[i] * g;
    }
    value *= scale;

    // dD/du at each state
    let mut grad_u = vec![0.0; n];
    for (t, p) in terms.iter().zip(probs) {
        let g = 2.0 * scale * p * kh[t.anchor()];
        match *t {
            DeltaTerm::Transition { s, beta, s_next } => {
                grad_u[s] += g * beta;
                grad_u[s_next] -= g;
            }
            DeltaTerm::Initial { s0 } => grad_u[s0] -= g,
        }
    }
    // u = w / z with z = Σ_s source_mass(s) w(s) / total_source
    let inner: f64 = touched.iter().map(|&s| grad_u[s] * w[s]).sum();
    let mut grad = vec![0.0; model.theta().len()];
    for &s in &touched {
        let dw = grad_u[s] / z - inner / (z * z) * source_mass[s] / total_source;
        let d_pre = model.link().derivative(pre[s], w[s], model.clip_floor());
        if dw != 0.0 && d_pre != 0.0 {
            model.features().accumulate(s, dw * d_pre, &mut grad);
        }
    }
    Ok((value, grad))
}
