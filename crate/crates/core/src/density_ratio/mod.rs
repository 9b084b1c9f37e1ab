//! Estimation of the stationary density ratio `w(s) = d_π(s) / d_{π0}(s)`.
//!
//! The ratio is the unique (up to scale in the average case) zero of the
//! minimax loss `max_f L(w, f)²` with `L(w, f) = E_{d_{π0}}[Δ(w; s,a,s') f(s')]`.
//! With an RKHS unit ball as the discriminator class the maximum has the
//! closed form of a kernel V-statistic, which is minimized either exactly on
//! tabular problems or by minibatch gradient descent.

mod features;
mod kernel;
mod loss;
mod model;
mod sgd;
mod tabular;

pub use features::FeatureMap;
pub use kernel::{
    median_pairwise_distance, resolve_bandwidth, Bandwidth, BandwidthRule, Kernel, KernelKind,
    KernelSpec, StateKernel, MEDIAN_SUBSAMPLE,
};
pub use loss::{
    aggregate_residuals, linear_form, minimax_loss_functional, normalized_rkhs_loss,
    objective_and_gradient, ratio_table, rkhs_loss, transition_terms, DeltaTerm, Population,
    PROBABILITY_MASS_TOL,
};
pub use model::{Link, RatioModel, StateRatio, RATIO_FORMAT, RATIO_FORMAT_VERSION};
pub use sgd::{augmented_index, sgd_fit_average, sgd_fit_discounted, SgdConfig, SgdFit};
pub use tabular::{
    population_null_space, solve_population, tabular_exact_solve, TabularSolution,
    RELATIVE_CLIP_FLOOR, UNVISITED_TOL,
};
