//! Densities of excursion lengths under a drifted diffusion.
//!
//! Under zero drift the length of a δ-excursion has a closed-form Lévy law.
//! A drift reweights excursion paths by the Girsanov exponential martingale,
//! so the drifted density is the Lévy density times the mean of
//! `exp(M)` over Brownian δ-excursions of the same length.

mod diagnostics;
mod estimate;
mod girsanov;
mod intensity;
mod joint;
mod levy;
mod penalty;

pub(crate) use girsanov::{weight, weight_grad, Times, WeightScratch};

pub use diagnostics::{expressiveness_bound, ou_fht_cdf, ou_fht_density, scale_function, Lamperti};
pub use estimate::{
    bridge_log_density, elbo, excursion_log_density, log_girsanov_weights, log_mean_exp, LogDensityEstimate,
};
pub use girsanov::{girsanov_weight_gradient, log_girsanov_weight};
pub use intensity::{conditional_intensity, intensity_from_density};
pub use joint::{build_joint_excursion, joint_log_density, JointBatch};
pub use levy::{delta_gradient, levy_cdf, levy_excursion_density, levy_log_density, levy_quantile, levy_scale_mle};
pub use penalty::{
    log_trapezoid_weights, penalty_from_mass, penalty_tau_grid, recurrence_mass, recurrence_penalty,
    unit_excursion_height_tail, MassEstimate,
};
pub(crate) use penalty::grid_batch;
