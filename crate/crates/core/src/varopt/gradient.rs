use rayon::prelude::*;

use super::feature::{mixture_point, ClassDensities, GaussianRandomFeature, LossParams, MixturePoint};
use crate::densities::DENSITY_FLOOR;
use crate::error::{ensure_finite, Error, Result};

/// Inner `z̃` discretization used per grid point: `M` points on `μ_i ± kσ_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerGrid {
    pub k: f64,
    pub points: usize,
}

impl InnerGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.k.is_finite() && self.k >= 3.0) {
            return Err(Error::InvalidParameter(format!("inner half-width k must be >= 3, got {}", self.k)));
        }
        if self.points < 3 {
            return Err(Error::InvalidParameter(format!("inner grid needs >= 3 points, got {}", self.points)));
        }
        Ok(())
    }
}

/// Variational gradient of the symmetrized KL term at `(z̃, z)`:
///
/// `p(z|0) [l(z) log l(z̃) - l(z̃)] - p(z|1) [l(z)^-1 log l(z̃) + l(z̃)^-1]`
///
/// with `l = p(·|1) / p(·|0)`. Defined up to an additive function of `z`.
#[inline]
pub fn kl_gradient(pz0: f64, pz1: f64, q0: f64, q1: f64) -> f64 {
    let lz = pz1 / pz0;
    let lzt = q1 / q0;
    let log_lzt = lzt.ln();
    pz0 * (lz * log_lzt - lzt) - pz1 * (log_lzt / lz + 1.0 / lzt)
}

/// Variational gradient of the information bottleneck at `(z̃, z)`:
///
/// `Σ_y p(y) p(z|y) [log(p(z̃|z) / p(z̃)) - β log(p(z̃|y) / p(z̃))]`.
#[inline]
pub fn ib_gradient(pz0: f64, pz1: f64, cond: f64, q0: f64, q1: f64, params: &LossParams) -> f64 {
    let (w0, w1) = (params.p0(), params.p1);
    let marg = w0 * q0 + w1 * q1;
    let compress = (cond.max(DENSITY_FLOOR) / marg).ln();
    w0 * pz0 * (compress - params.beta * (q0 / marg).ln()) + w1 * pz1 * (compress - params.beta * (q1 / marg).ln())
}

#[inline]
fn loss_gradient_at(
    feature: &GaussianRandomFeature,
    dens: ClassDensities<'_>,
    params: &LossParams,
    zt: f64,
    i: usize,
    q: MixturePoint,
) -> f64 {
    let (pz0, pz1) = (dens.id.values()[i], dens.ood.values()[i]);
    let cond = feature.conditional(i, zt);
    -kl_gradient(pz0, pz1, q.id, q.ood) + params.alpha * ib_gradient(pz0, pz1, cond, q.id, q.ood, params)
}

/// `∇_{p(z̃|z)} L(z̃, z_i) = -∇D_KL + α ∇IB`.
pub fn grad_p(
    feature: &GaussianRandomFeature,
    dens: ClassDensities<'_>,
    params: &LossParams,
    zt: f64,
    z_index: usize,
) -> Result<f64> {
    dens.check_feature(feature)?;
    params.validate()?;
    ensure_finite("z̃", zt)?;
    let len = feature.grid().len();
    if z_index >= len {
        return Err(Error::IndexOutOfRange { index: z_index, len });
    }
    let q = mixture_point(feature, dens, zt);
    Ok(loss_gradient_at(feature, dens, params, zt, z_index, q))
}

/// Projects an integrand onto the mean and std directions of `N(mean, sigma)`:
///
/// `∫ g(z̃) (z̃-μ)/σ² N dz̃` and `∫ g(z̃) [(z̃-μ)²/σ² - 1]/σ N dz̃`,
/// by the trapezoid rule on `inner.points` nodes over `μ ± kσ`.
pub fn gaussian_projection<G: FnMut(f64) -> f64>(mean: f64, sigma: f64, inner: InnerGrid, mut g: G) -> (f64, f64) {
    let m = inner.points;
    let lo = mean - inner.k * sigma;
    let h = 2.0 * inner.k * sigma / (m - 1) as f64;
    let (mut gm, mut gs) = (0.0, 0.0);
    for j in 0..m {
        let u = if j + 1 == m { inner.k } else { -inner.k + j as f64 * h / sigma };
        let zt = if j + 1 == m { mean + inner.k * sigma } else { lo + j as f64 * h };
        let w = if j == 0 || j + 1 == m { 0.5 * h } else { h };
        let dens = crate::quadrature::INV_SQRT_2PI / sigma * (-0.5 * u * u).exp();
        let val = g(zt) * dens * w;
        gm += val * u / sigma;
        gs += val * (u * u - 1.0) / sigma;
    }
    (gm, gs)
}

/// Gradients of the loss with respect to `μ_i` and `σ_{c,i}` at every grid point.
///
/// These are functional gradients (densities in `z`); the derivative of the
/// discretized loss with respect to `μ_i` is `Δz` times the returned value.
pub fn grad_mu_sigma(
    feature: &GaussianRandomFeature,
    dens: ClassDensities<'_>,
    params: &LossParams,
    inner: InnerGrid,
) -> Result<(Vec<f64>, Vec<f64>)> {
    dens.check_feature(feature)?;
    params.validate()?;
    inner.validate()?;
    let per_point: Vec<(f64, f64)> = (0..feature.grid().len())
        .into_par_iter()
        .map(|i| {
            let (mu, s) = (feature.mean()[i], feature.sigma()[i]);
            gaussian_projection(mu, s, inner, |zt| {
                let q = mixture_point(feature, dens, zt);
                loss_gradient_at(feature, dens, params, zt, i, q)
            })
        })
        .collect();
    Ok(per_point.into_iter().unzip())
}
