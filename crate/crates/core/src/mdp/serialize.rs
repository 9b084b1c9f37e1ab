//! JSON file formats for MDPs and policies.
//!
//! An MDP file looks like
//!
//! ```json
//! {
//!   "format": "tabular-mdp",
//!   "version": 1,
//!   "n_states": 2,
//!   "n_actions": 1,
//!   "transition": [0.5, 0.5, 1.0, 0.0],
//!   "reward": [1.0, 0.0],
//!   "initial": [1.0, 0.0]
//! }
//! ```
//!
//! `transition` is flattened in `(s, a, s')` order and `reward` in `(s, a)`
//! order. Numbers are written as shortest round-trip decimals, so a
//! save/load cycle reproduces every entry bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{StochasticPolicy, TabularMdp};
use crate::error::{OpeError, Result};

pub const MDP_FORMAT: &str = "tabular-mdp";
pub const POLICY_FORMAT: &str = "stochastic-policy";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpFile {
    pub format: String,
    pub version: u32,
    pub n_states: usize,
    pub n_actions: usize,
    pub transition: Vec<f64>,
    pub reward: Vec<f64>,
    pub initial: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyFile {
    pub format: String,
    pub version: u32,
    pub n_states: usize,
    pub n_actions: usize,
    pub probs: Vec<f64>,
}

fn check_header(format: &str, version: u32, expected: &str) -> Result<()> {
    if format != expected {
        return Err(OpeError::Serialization(format!(
            "expected format {expected:?}, found {format:?}"
        )));
    }
    if version != FORMAT_VERSION {
        return Err(OpeError::Serialization(format!(
            "unsupported {expected} version {version}"
        )));
    }
    Ok(())
}

impl TryFrom<MdpFile> for TabularMdp {
    type Error = OpeError;

    fn try_from(f: MdpFile) -> Result<Self> {
        check_header(&f.format, f.version, MDP_FORMAT)?;
        TabularMdp::new(f.n_states, f.n_actions, f.transition, f.reward, f.initial)
    }
}

impl From<TabularMdp> for MdpFile {
    fn from(m: TabularMdp) -> Self {
        MdpFile {
            format: MDP_FORMAT.into(),
            version: FORMAT_VERSION,
            n_states: m.n_states,
            n_actions: m.n_actions,
            transition: m.transition,
            reward: m.reward,
            initial: m.initial,
        }
    }
}

impl TryFrom<PolicyFile> for StochasticPolicy {
    type Error = OpeError;

    fn try_from(f: PolicyFile) -> Result<Self> {
        check_header(&f.format, f.version, POLICY_FORMAT)?;
        StochasticPolicy::new(f.n_states, f.n_actions, f.probs)
    }
}

impl From<StochasticPolicy> for PolicyFile {
    fn from(p: StochasticPolicy) -> Self {
        PolicyFile {
            format: POLICY_FORMAT.into(),
            version: FORMAT_VERSION,
            n_states: p.n_states,
            n_actions: p.n_actions,
            probs: p.probs,
        }
    }
}

impl TabularMdp {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")
            .map_err(|e| OpeError::Serialization(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| OpeError::Serialization(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

impl StochasticPolicy {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
