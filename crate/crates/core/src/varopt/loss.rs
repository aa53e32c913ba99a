use serde::{Deserialize, Serialize};

use super::feature::{mixture_point, ClassDensities, GaussianRandomFeature, LossParams};
use crate::densities::Grid1D;
use crate::error::{Error, Result};
use crate::quadrature::{normal_entropy, trapezoid, xlogx};

/// The evaluation grid must contain every component out to this many σ.
pub const COVERAGE_SIGMAS: f64 = 6.0;

/// Half-width, in σ units, of the evaluation grid built by [`default_eval_grid`].
pub const EVAL_SIGMAS: f64 = 10.0;

/// Upper bound on evaluation-grid size.
pub const MAX_EVAL_POINTS: usize = 200_001;

/// Components of the loss functional, all in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Symmetrized KL divergence between `p(z̃|0)` and `p(z̃|1)`.
    pub kl_sym: f64,
    /// Compression term `I(Z̃;Z)`.
    pub i_zz: f64,
    /// Relevance term `I(Z̃;Y)`.
    pub i_zy: f64,
    /// `-kl_sym + α (i_zz - β i_zy)`.
    pub total: f64,
}

impl LossBreakdown {
    pub fn from_parts(kl_sym: f64, i_zz: f64, i_zy: f64, params: &LossParams) -> Self {
        let total = -kl_sym + params.alpha * (i_zz - params.beta * i_zy);
        LossBreakdown { kl_sym, i_zz, i_zy, total }
    }

    /// Information-bottleneck value `I(Z̃;Z) - β I(Z̃;Y)`.
    pub fn ib(&self, beta: f64) -> f64 {
        self.i_zz - beta * self.i_zy
    }
}

/// Evaluation grid spanning `μ_i ± 10σ_i` with at least `4N` points and spacing no
/// coarser than a third of the narrowest component.
pub fn default_eval_grid(feature: &GaussianRandomFeature) -> Result<Grid1D> {
    let (lo, hi) = feature.support(EVAL_SIGMAS);
    let base = 4 * feature.grid().len();
    let resolve = ((hi - lo) / (feature.min_sigma() / 3.0)).ceil();
    let n = if resolve.is_finite() { (resolve as usize + 1).max(base) } else { base };
    Grid1D::new(lo, hi, n.min(MAX_EVAL_POINTS))
}

/// Numerical loss of a Gaussian random feature.
///
/// `kl_sym` and `i_zy` are trapezoid integrals over `eval_grid`. The compression term is
/// `I(Z̃;Z) = h(Z̃) - Σ_i p(z_i) Δz h(N(μ_i, σ_i))`: the inner integral of the double
/// quadrature `∫∫ p(z) p(z̃|z) log p(z̃|z)` is the closed-form Gaussian entropy, the outer
/// `h(Z̃)` is integrated on `eval_grid`.
pub fn evaluate_loss(
    feature: &GaussianRandomFeature,
    dens: ClassDensities<'_>,
    params: &LossParams,
    eval_grid: &Grid1D,
) -> Result<LossBreakdown> {
    dens.check_feature(feature)?;
    params.validate()?;
    let (need_lo, need_hi) = feature.support(COVERAGE_SIGMAS);
    if eval_grid.lo() > need_lo || eval_grid.hi() < need_hi {
        return Err(Error::Coverage { need_lo, need_hi });
    }

    let (w0, w1) = (params.p0(), params.p1);
    let n = eval_grid.len();
    let mut kl = Vec::with_capacity(n);
    let mut rel = Vec::with_capacity(n);
    let mut ent = Vec::with_capacity(n);
    for k in 0..n {
        let q = mixture_point(feature, dens, eval_grid.point(k));
        let marg = w0 * q.id + w1 * q.ood;
        kl.push((q.ood - q.id) * (q.ood / q.id).ln());
        rel.push(w0 * q.id * (q.id / marg).ln() + w1 * q.ood * (q.ood / marg).ln());
        ent.push(-xlogx(marg));
    }
    let h = eval_grid.step();
    let kl_sym = trapezoid(&kl, h);
    let i_zy = trapezoid(&rel, h);
    let h_marg = trapezoid(&ent, h);

    let dz = feature.grid().step();
    let (p0, p1) = (dens.id.values(), dens.ood.values());
    let h_cond: f64 = feature
        .sigma()
        .iter()
        .enumerate()
        .map(|(i, &s)| (w0 * p0[i] + w1 * p1[i]) * dz * normal_entropy(s))
        .sum();
    let i_zz = h_marg - h_cond;

    for (name, v) in [("kl_sym", kl_sym), ("i_zz", i_zz), ("i_zy", i_zy)] {
        if !v.is_finite() {
            return Err(Error::NumericalDomain(format!("{name} evaluated to {v}")));
        }
    }
    Ok(LossBreakdown::from_parts(kl_sym, i_zz, i_zy, params))
}

/// [`evaluate_loss`] on [`default_eval_grid`].
pub fn evaluate_loss_default(
    feature: &GaussianRandomFeature,
    dens: ClassDensities<'_>,
    params: &LossParams,
) -> Result<LossBreakdown> {
    let eval = default_eval_grid(feature)?;
    evaluate_loss(feature, dens, params, &eval)
}
