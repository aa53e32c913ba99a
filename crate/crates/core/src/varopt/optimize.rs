use serde::{Deserialize, Serialize};

use super::feature::{ClassDensities, GaussianRandomFeature, LossParams};
use super::gradient::{grad_mu_sigma, InnerGrid};
use super::loss::{evaluate_loss_default, LossBreakdown};
use crate::error::{ensure_positive, Error, Result};

/// Gradient-descent settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// Initial (and maximal) step size η.
    pub learning_rate: f64,
    pub iterations: usize,
    /// Inner `z̃` half-width in units of `σ_{c,i}`.
    pub k: f64,
    /// Inner `z̃` point count per grid point.
    pub inner_points: usize,
    /// Constant initial `σ_c`; `None` selects `0.2 · span / 12`.
    pub sigma_init: Option<f64>,
    /// Projection floor for `σ_c`.
    pub sigma_min: f64,
    /// Step halvings tried before an iteration is rejected.
    pub max_halvings: u32,
    /// Gradients at `z_i` are divided by `max(p(z_i), ρ · max_j p(z_j))` with
    /// `p(z) = Σ_y p(y) p(z|y)`; this is ρ. `None` applies the raw functional gradients.
    pub precondition_floor: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 0.05,
            iterations: 2000,
            k: 8.0,
            inner_points: 61,
            sigma_init: None,
            sigma_min: 1e-3,
            max_halvings: 8,
            precondition_floor: Some(1e-2),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_positive("learning_rate", self.learning_rate)?;
        ensure_positive("sigma_min", self.sigma_min)?;
        if let Some(rho) = self.precondition_floor {
            if !(rho > 0.0 && rho <= 1.0) {
                return Err(Error::InvalidParameter(format!("precondition_floor must be in (0, 1], got {rho}")));
            }
        }
        if let Some(s) = self.sigma_init {
            ensure_positive("sigma_init", s)?;
        }
        if self.iterations == 0 {
            return Err(Error::InvalidParameter("iterations must be >= 1".into()));
        }
        self.inner().validate()
    }

    pub fn inner(&self) -> InnerGrid {
        InnerGrid { k: self.k, points: self.inner_points }
    }

    pub fn initial_sigma(&self, span: f64) -> f64 {
        self.sigma_init.unwrap_or(0.2 * span / 12.0).max(self.sigma_min)
    }
}

/// One row of the optimization trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub kl_sym: f64,
    pub i_zz: f64,
    pub i_zy: f64,
    pub total: f64,
    /// Step size actually applied; zero when every halving was rejected.
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizeOutput {
    pub feature: GaussianRandomFeature,
    /// Loss of the initial feature.
    pub initial: LossBreakdown,
    pub trace: Vec<TraceRecord>,
}

impl OptimizeOutput {
    pub fn final_loss(&self) -> LossBreakdown {
        self.trace.last().map_or(self.initial, |r| LossBreakdown {
            kl_sym: r.kl_sym,
            i_zz: r.i_zz,
            i_zy: r.i_zy,
            total: r.total,
        })
    }
}

/// Runs gradient descent from the identity feature `μ_i = z_i`, constant `σ_c`.
pub fn optimize(
    dens: ClassDensities<'_>,
    params: &LossParams,
    config: &OptimizerConfig,
) -> Result<OptimizeOutput> {
    optimize_with(dens, params, config, |_| {})
}

/// [`optimize`] with an observer called after every iteration.
pub fn optimize_with<F: FnMut(&TraceRecord)>(
    dens: ClassDensities<'_>,
    params: &LossParams,
    config: &OptimizerConfig,
    observer: F,
) -> Result<OptimizeOutput> {
    config.validate()?;
    let grid = *dens.id.grid();
    let init = GaussianRandomFeature::identity(grid, config.initial_sigma(grid.hi() - grid.lo()))?;
    optimize_from(init, dens, params, config, observer)
}

/// Gradient descent from an arbitrary starting feature.
///
/// Every iteration computes both gradients from the frozen current iterate, then
/// applies `μ ← μ - η∇_μ`, `σ_c ← max(σ_min, σ_c - η∇_σ)` to all grid points at once.
/// With `precondition_floor` set, both gradients are first divided by the floored
/// marginal `p(z_i)`, so low-density regions move at a rate comparable to the bulk.
/// A step that raises the total loss is halved up to `max_halvings` times; if none
/// is accepted the iterate is kept. The next iteration starts from twice the last
/// accepted step, capped at the configured learning rate.
pub fn optimize_from<F: FnMut(&TraceRecord)>(
    init: GaussianRandomFeature,
    dens: ClassDensities<'_>,
    params: &LossParams,
    config: &OptimizerConfig,
    mut observer: F,
) -> Result<OptimizeOutput> {
    config.validate()?;
    params.validate()?;
    dens.check_feature(&init)?;

    let mut feature = init;
    for s in feature.sigma_mut() {
        *s = s.max(config.sigma_min);
    }
    let initial = evaluate_loss_default(&feature, dens, params)?;
    if !initial.total.is_finite() {
        return Err(Error::Diverged { iteration: 0 });
    }
    let mut current = initial;
    let mut trace = Vec::with_capacity(config.iterations);
    let mut step = config.learning_rate;
    let mut candidate = feature.clone();
    let scale = config.precondition_floor.map(|rho| {
        let marg: Vec<f64> = dens
            .id
            .values()
            .iter()
            .zip(dens.ood.values())
            .map(|(a, b)| params.p0() * a + params.p1 * b)
            .collect();
        let floor = rho * marg.iter().fold(0.0f64, |a, &b| a.max(b));
        marg.into_iter().map(|m| 1.0 / m.max(floor)).collect::<Vec<f64>>()
    });

    for iteration in 0..config.iterations {
        let (mut g_mu, mut g_sigma) = grad_mu_sigma(&feature, dens, params, config.inner())?;
        if let Some(w) = &scale {
            for ((gm, gs), w) in g_mu.iter_mut().zip(g_sigma.iter_mut()).zip(w) {
                *gm *= w;
                *gs *= w;
            }
        }
        if g_mu.iter().chain(&g_sigma).any(|g| !g.is_finite()) {
            return Err(Error::Diverged { iteration });
        }

        let mut accepted = None;
        let mut trial = step;
        for _ in 0..=config.max_halvings {
            for (c, (m, g)) in candidate.mean_mut().iter_mut().zip(feature.mean().iter().zip(&g_mu)) {
                *c = m - trial * g;
            }
            for (c, (s, g)) in candidate.sigma_mut().iter_mut().zip(feature.sigma().iter().zip(&g_sigma)) {
                *c = (s - trial * g).max(config.sigma_min);
            }
            if let Ok(loss) = evaluate_loss_default(&candidate, dens, params) {
                if loss.total <= current.total {
                    accepted = Some(loss);
                    break;
                }
            }
            trial *= 0.5;
        }

        let applied = match accepted {
            Some(loss) => {
                std::mem::swap(&mut feature, &mut candidate);
                current = loss;
                step = (2.0 * trial).min(config.learning_rate);
                trial
            }
            None => {
                step = trial;
                0.0
            }
        };
        let record = TraceRecord {
            iteration,
            kl_sym: current.kl_sym,
            i_zz: current.i_zz,
            i_zy: current.i_zy,
            total: current.total,
            step: applied,
        };
        observer(&record);
        trace.push(record);
    }

    Ok(OptimizeOutput { feature, initial, trace })
}
