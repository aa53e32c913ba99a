//! Numerical loss, variational gradients, and gradient descent for the 1D
//! Gaussian random OOD feature.
//!
//! The loss of a conditional density `p(z̃|z)` is
//!
//! ```text
//! L = -[KL(p(z̃|1) || p(z̃|0)) + KL(p(z̃|0) || p(z̃|1))] + α [I(Z̃;Z) - β I(Z̃;Y)]
//! ```
//!
//! and the feature is restricted to `p(z̃|z) = N(μ(z), σ_c(z))` sampled on a uniform
//! grid, so `p(z̃|y)` becomes a Gaussian mixture weighted by the discretized `p(z|y)`.

mod feature;
mod gradient;
mod loss;
mod optimize;

pub use feature::{feature_density, ClassDensities, GaussianRandomFeature, LossParams};
pub use gradient::{gaussian_projection, grad_mu_sigma, grad_p, ib_gradient, kl_gradient, InnerGrid};
pub use loss::{
    default_eval_grid, evaluate_loss, evaluate_loss_default, LossBreakdown, COVERAGE_SIGMAS, EVAL_SIGMAS,
    MAX_EVAL_POINTS,
};
pub use optimize::{optimize, optimize_from, optimize_with, OptimizeOutput, OptimizerConfig, TraceRecord};

#[cfg(test)]
mod tests;
