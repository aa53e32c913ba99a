//! Hyperparameter search for the piecewise family, information-bottleneck estimates
//! for fixed shapes, and optimizer sweeps over a loss or distribution parameter.

mod ib;
mod search;
mod sweep;

pub use ib::{default_sigma_probe, estimate_ib, IbEstimate};
pub use search::{evaluate_shape, sample_candidate, tune_piecewise, TuneConfig, TuneResult};
pub use sweep::{run_sweep, Knob, SweepPoint, SweepSpec};
