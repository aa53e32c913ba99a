use serde::{Deserialize, Serialize};

use crate::densities::{DensityGrid, Grid1D};
use crate::error::{ensure_finite, ensure_positive, Error, Result};
use crate::quadrature::INV_SQRT_2PI;

/// Gaussian random OOD feature `p(z̃|z) = N(μ(z), σ_c(z))`, sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianRandomFeature {
    grid: Grid1D,
    mean: Vec<f64>,
    sigma: Vec<f64>,
}

impl GaussianRandomFeature {
    pub fn new(grid: Grid1D, mean: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if mean.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), got: mean.len() });
        }
        if sigma.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), got: sigma.len() });
        }
        for &m in &mean {
            ensure_finite("feature mean", m)?;
        }
        for &s in &sigma {
            ensure_positive("feature sigma", s)?;
        }
        Ok(GaussianRandomFeature { grid, mean, sigma })
    }

    /// `μ_i = z_i` with constant `σ_c`.
    pub fn identity(grid: Grid1D, sigma: f64) -> Result<Self> {
        GaussianRandomFeature::new(grid, grid.points(), vec![sigma; grid.len()])
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub(crate) fn mean_mut(&mut self) -> &mut [f64] {
        &mut self.mean
    }

    pub(crate) fn sigma_mut(&mut self) -> &mut [f64] {
        &mut self.sigma
    }

    /// Range `[min(μ_i - kσ_i), max(μ_i + kσ_i)]` holding the feature's mass.
    pub fn support(&self, k: f64) -> (f64, f64) {
        self.mean.iter().zip(&self.sigma).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (m, s)| {
            (lo.min(m - k * s), hi.max(m + k * s))
        })
    }

    pub fn min_sigma(&self) -> f64 {
        self.sigma.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Conditional density `p(z̃|z_i)`.
    #[inline]
    pub fn conditional(&self, i: usize, zt: f64) -> f64 {
        let s = self.sigma[i];
        let u = (zt - self.mean[i]) / s;
        INV_SQRT_2PI / s * (-0.5 * u * u).exp()
    }
}

/// Weights of the loss functional and the OOD prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    /// Information-bottleneck weight α.
    pub alpha: f64,
    /// Relevance weight β on `I(Z̃;Y)`.
    pub beta: f64,
    /// Prior `p(Y = 1)`.
    #[serde(default = "default_p1")]
    pub p1: f64,
}

fn default_p1() -> f64 {
    0.5
}

impl LossParams {
    pub fn new(alpha: f64, beta: f64, p1: f64) -> Result<Self> {
        let p = LossParams { alpha, beta, p1 };
        p.validate()?;
        Ok(p)
    }

    /// α and β may be zero so the KL-only and compression-only ablations stay expressible.
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::InvalidParameter(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::InvalidParameter(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(self.p1 > 0.0 && self.p1 < 1.0) {
            return Err(Error::InvalidParameter(format!("p1 must lie in (0, 1), got {}", self.p1)));
        }
        Ok(())
    }

    pub fn p0(&self) -> f64 {
        1.0 - self.p1
    }

    /// Binary entropy `H(Y)`, the ceiling of `I(Z̃;Y)`.
    pub fn label_entropy(&self) -> f64 {
        let (a, b) = (self.p1, 1.0 - self.p1);
        -(a * a.ln() + b * b.ln())
    }
}

/// ID and OOD densities sharing one grid.
#[derive(Debug, Clone, Copy)]
pub struct ClassDensities<'a> {
    pub id: &'a DensityGrid,
    pub ood: &'a DensityGrid,
}

impl<'a> ClassDensities<'a> {
    pub fn new(id: &'a DensityGrid, ood: &'a DensityGrid) -> Result<Self> {
        if id.grid() != ood.grid() {
            return Err(Error::GridMismatch("ID and OOD densities live on different grids".into()));
        }
        Ok(ClassDensities { id, ood })
    }

    pub(crate) fn check_feature(&self, feature: &GaussianRandomFeature) -> Result<()> {
        if feature.grid() != self.id.grid() {
            return Err(Error::GridMismatch("feature grid differs from the density grid".into()));
        }
        Ok(())
    }
}

/// Class-conditional feature densities at one point, each floored at [`MIXTURE_FLOOR`].
#[derive(Debug, Clone, Copy)]
pub(crate) struct MixturePoint {
    pub id: f64,
    pub ood: f64,
}

/// Floor on mixture densities. Only guards exact zeros far beyond every component,
/// so the loss stays differentiable wherever the gradient is evaluated.
pub(crate) const MIXTURE_FLOOR: f64 = 1e-290;

/// Squared standardized distance beyond which a component contributes below `e^-60`.
const CUTOFF_SQ: f64 = 120.0;

/// `p(z̃|y) = Σ_i N(z̃; μ_i, σ_i) p(z_i|y) Δz` for both classes at once.
#[inline]
pub(crate) fn mixture_point(feature: &GaussianRandomFeature, dens: ClassDensities<'_>, zt: f64) -> MixturePoint {
    let (p0, p1) = (dens.id.values(), dens.ood.values());
    let (mut a, mut b) = (0.0, 0.0);
    for i in 0..p0.len() {
        let s = feature.sigma[i];
        let u = (zt - feature.mean[i]) / s;
        let u2 = u * u;
        if u2 > CUTOFF_SQ {
            continue;
        }
        let g = INV_SQRT_2PI / s * (-0.5 * u2).exp();
        a += g * p0[i];
        b += g * p1[i];
    }
    let h = feature.grid.step();
    MixturePoint { id: (a * h).max(MIXTURE_FLOOR), ood: (b * h).max(MIXTURE_FLOOR) }
}

/// `p(z̃|y)` for a single class density.
pub fn feature_density(feature: &GaussianRandomFeature, cond: &DensityGrid, zt: f64) -> Result<f64> {
    if feature.grid() != cond.grid() {
        return Err(Error::GridMismatch("feature grid differs from the density grid".into()));
    }
    ensure_finite("z̃", zt)?;
    let dens = ClassDensities { id: cond, ood: cond };
    Ok(mixture_point(feature, dens, zt).id)
}
