//! Logged trajectories as CSV: one row per transition with columns
//! `trajectory,t,s,a,s_next,r`. Rows of a trajectory are contiguous and in
//! time order.

use std::path::Path;

use anyhow::{bail, Context, Result};
use ope::{Trajectory, TransitionSample};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct DataRow {
    trajectory: usize,
    t: usize,
    s: usize,
    a: usize,
    s_next: usize,
    r: f64,
}

pub fn write_trajectories(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["trajectory", "t", "s", "a", "s_next", "r"])?;
    for (i, tau) in trajectories.iter().enumerate() {
        for x in tau.steps() {
            w.serialize(DataRow {
                trajectory: i,
                t: x.t,
                s: x.s,
                a: x.a,
                s_next: x.s_next,
                r: x.r,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    if !path.exists() {
        bail!("data file {} does not exist", path.display());
    }
    let mut reader =
        csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    let mut current: Option<(usize, Vec<TransitionSample>)> = None;
    for (line, row) in reader.deserialize::<DataRow>().enumerate() {
        let row = row.with_context(|| format!("{} record {}", path.display(), line + 1))?;
        let step = TransitionSample {
            s: row.s,
            a: row.a,
            s_next: row.s_next,
            r: row.r,
            t: row.t,
        };
        match &mut current {
            Some((id, steps)) if *id == row.trajectory => steps.push(step),
            _ => {
                if let Some((id, steps)) = current.take() {
                    out.push(Trajectory::new(steps).with_context(|| format!("trajectory {id}"))?);
                }
                current = Some((row.trajectory, vec![step]));
            }
        }
    }
    if let Some((id, steps)) = current {
        out.push(Trajectory::new(steps).with_context(|| format!("trajectory {id}"))?);
    }
    if out.is_empty() {
        bail!("data file {} has no transitions", path.display());
    }
    Ok(out)
}
