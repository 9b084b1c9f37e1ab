//! Experiment runner for the off-policy estimators: parameter sweeps, the
//! circle variance demonstration, ratio fitting and one-shot evaluation.

pub mod config;
pub mod data;
pub mod env;
pub mod eval;
pub mod fit;
pub mod output;
pub mod pipeline;
pub mod sweep;
pub mod variance;
