//! Parametric 1D feature distributions, their maximum-likelihood fits, and
//! discretization onto uniform grids.
//!
//! Three families model the per-coordinate feature density `p(z|y)`:
//!
//! - Gaussian `N(mean, std)`,
//! - Laplace `(1/2b) exp(-|z - loc| / b)`,
//! - an inverse-Gaussian law on the standardized distance `d(z) = |z - id_mean| / id_std`
//!   to a Gaussian ID model. Since `∫ p_IG(d(z)) dz = 2 id_std`, the density is scaled by
//!   `1 / (2 id_std)` so it integrates to one.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ensure_positive, Error, Result};
use crate::quadrature::{normal_pdf, simpson};

/// Floor applied to every discretized density value, in density units.
pub const DENSITY_FLOOR: f64 = 1e-12;

/// Minimum probability mass a grid must capture before it is accepted.
pub const MIN_GRID_MASS: f64 = 0.999;

/// Half-width of the default study grid, in units of the widest standard deviation.
pub const STUDY_HALF_WIDTH: f64 = 6.0;

/// Point count of the default study grid.
pub const STUDY_POINTS: usize = 241;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistributionSpec {
    Gaussian {
        mean: f64,
        std: f64,
    },
    Laplace {
        loc: f64,
        scale: f64,
    },
    InverseGaussianOod {
        ig_mean: f64,
        ig_shape: f64,
        id_mean: f64,
        id_std: f64,
    },
}

impl DistributionSpec {
    pub fn gaussian(mean: f64, std: f64) -> Self {
        DistributionSpec::Gaussian { mean, std }
    }

    pub fn laplace(loc: f64, scale: f64) -> Self {
        DistributionSpec::Laplace { loc, scale }
    }

    pub fn inverse_gaussian_ood(ig_mean: f64, ig_shape: f64, id_mean: f64, id_std: f64) -> Self {
        DistributionSpec::InverseGaussianOod { ig_mean, ig_shape, id_mean, id_std }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DistributionSpec::Gaussian { mean, std } => {
                ensure_finite("mean", mean)?;
                ensure_positive("std", std)
            }
            DistributionSpec::Laplace { loc, scale } => {
                ensure_finite("loc", loc)?;
                ensure_positive("scale", scale)
            }
            DistributionSpec::InverseGaussianOod { ig_mean, ig_shape, id_mean, id_std } => {
                ensure_positive("ig_mean", ig_mean)?;
                ensure_positive("ig_shape", ig_shape)?;
                ensure_finite("id_mean", id_mean)?;
                ensure_positive("id_std", id_std)
            }
        }
    }

    /// Copy with the named parameter replaced, using the JSON field names.
    pub fn with_param(&self, name: &str, value: f64) -> Result<Self> {
        let mut out = *self;
        let slot = match (&mut out, name) {
            (DistributionSpec::Gaussian { mean, .. }, "mean") => mean,
            (DistributionSpec::Gaussian { std, .. }, "std") => std,
            (DistributionSpec::Laplace { loc, .. }, "loc") => loc,
            (DistributionSpec::Laplace { scale, .. }, "scale") => scale,
            (DistributionSpec::InverseGaussianOod { ig_mean, .. }, "ig_mean") => ig_mean,
            (DistributionSpec::InverseGaussianOod { ig_shape, .. }, "ig_shape") => ig_shape,
            (DistributionSpec::InverseGaussianOod { id_mean, .. }, "id_mean") => id_mean,
            (DistributionSpec::InverseGaussianOod { id_std, .. }, "id_std") => id_std,
            _ => return Err(Error::InvalidParameter(format!("no parameter `{name}` on {self:?}"))),
        };
        *slot = value;
        out.validate()?;
        Ok(out)
    }

    /// Center of symmetry of the density.
    pub fn center(&self) -> f64 {
        match *self {
            DistributionSpec::Gaussian { mean, .. } => mean,
            DistributionSpec::Laplace { loc, .. } => loc,
            DistributionSpec::InverseGaussianOod { id_mean, .. } => id_mean,
        }
    }

    /// Standard deviation of the distribution, in feature units.
    pub fn std_dev(&self) -> f64 {
        match *self {
            DistributionSpec::Gaussian { std, .. } => std,
            DistributionSpec::Laplace { scale, .. } => std::f64::consts::SQRT_2 * scale,
            // z - id_mean = ±id_std·d with a fair sign, so Var z = id_std² E[d²]
            // and E[d²] = Var d + (E d)² = ig_mean³/ig_shape + ig_mean².
            DistributionSpec::InverseGaussianOod { ig_mean, ig_shape, id_std, .. } => {
                id_std * (ig_mean.powi(3) / ig_shape + ig_mean * ig_mean).sqrt()
            }
        }
    }

    /// Density at `z` without validation. The inverse-Gaussian variant is normalized.
    pub(crate) fn pdf(&self, z: f64) -> f64 {
        match *self {
            DistributionSpec::Gaussian { mean, std } => normal_pdf(z, mean, std),
            DistributionSpec::Laplace { loc, scale } => (-(z - loc).abs() / scale).exp() / (2.0 * scale),
            DistributionSpec::InverseGaussianOod { ig_mean, ig_shape, id_mean, id_std } => {
                let d = (z - id_mean).abs() / id_std;
                inverse_gaussian_pdf(d, ig_mean, ig_shape) / (2.0 * id_std)
            }
        }
    }

    /// Density at `z` using the raw inverse-Gaussian law on `d(z)`, without the
    /// `1 / (2 id_std)` normalizer. Identical to [`density_eval`] for the other families.
    pub fn density_unnormalized(&self, z: f64) -> Result<f64> {
        self.validate()?;
        ensure_finite("z", z)?;
        Ok(match *self {
            DistributionSpec::InverseGaussianOod { ig_mean, ig_shape, id_mean, id_std } => {
                inverse_gaussian_pdf((z - id_mean).abs() / id_std, ig_mean, ig_shape)
            }
            _ => self.pdf(z),
        })
    }
}

/// Inverse-Gaussian density `IG(x; mean, shape)`; zero for `x <= 0`.
pub fn inverse_gaussian_pdf(x: f64, mean: f64, shape: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let dev = x - mean;
    (shape / (2.0 * PI * x * x * x)).sqrt() * (-shape * dev * dev / (2.0 * mean * mean * x)).exp()
}

/// Evaluates the (normalized) density of `spec` at `z`.
pub fn density_eval(spec: &DistributionSpec, z: f64) -> Result<f64> {
    spec.validate()?;
    ensure_finite("z", z)?;
    Ok(spec.pdf(z))
}

/// Gaussian maximum-likelihood fit: sample mean and the `1/N` standard deviation.
pub fn fit_gaussian(samples: &[f64]) -> Result<DistributionSpec> {
    check_samples(samples)?;
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    if var <= 0.0 {
        return Err(Error::DegenerateData("zero variance".into()));
    }
    Ok(DistributionSpec::Gaussian { mean, std: var.sqrt() })
}

/// Laplace maximum-likelihood fit: median location, mean absolute deviation scale.
pub fn fit_laplace(samples: &[f64]) -> Result<DistributionSpec> {
    check_samples(samples)?;
    let loc = median(samples);
    let scale = samples.iter().map(|x| (x - loc).abs()).sum::<f64>() / samples.len() as f64;
    if scale <= 0.0 {
        return Err(Error::DegenerateData("zero absolute deviation".into()));
    }
    Ok(DistributionSpec::Laplace { loc, scale })
}

/// Fits the inverse-Gaussian law of the standardized distance to a given ID Gaussian.
///
/// Uses the closed-form IG maximum-likelihood estimates on `d_k = |x_k - mean| / std`;
/// samples sitting exactly at the ID mean carry no information and are skipped.
pub fn fit_inverse_gaussian_ood(samples: &[f64], id: &DistributionSpec) -> Result<DistributionSpec> {
    let (id_mean, id_std) = match *id {
        DistributionSpec::Gaussian { mean, std } => (mean, std),
        _ => return Err(Error::InvalidParameter("ID model must be Gaussian".into())),
    };
    id.validate()?;
    check_samples(samples)?;
    let d: Vec<f64> = samples
        .iter()
        .map(|x| (x - id_mean).abs() / id_std)
        .filter(|&d| d > 0.0)
        .collect();
    if d.len() < 2 {
        return Err(Error::DegenerateData("fewer than two samples away from the ID mean".into()));
    }
    let n = d.len() as f64;
    let ig_mean = d.iter().sum::<f64>() / n;
    let inv = d.iter().map(|x| 1.0 / x - 1.0 / ig_mean).sum::<f64>() / n;
    if inv <= 0.0 {
        return Err(Error::DegenerateData("distances have no spread".into()));
    }
    Ok(DistributionSpec::InverseGaussianOod { ig_mean, ig_shape: 1.0 / inv, id_mean, id_std })
}

fn check_samples(samples: &[f64]) -> Result<()> {
    if samples.len() < 2 {
        return Err(Error::DegenerateData(format!("need at least 2 samples, got {}", samples.len())));
    }
    if let Some(x) = samples.iter().find(|x| !x.is_finite()) {
        return Err(Error::DegenerateData(format!("non-finite sample {x}")));
    }
    Ok(())
}

fn median(samples: &[f64]) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Uniform 1D grid `z_i = lo + i Δz`, `i = 0..n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    lo: f64,
    hi: f64,
    n: usize,
}

impl Grid1D {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        ensure_finite("grid lower bound", lo)?;
        ensure_finite("grid upper bound", hi)?;
        if lo >= hi {
            return Err(Error::InvalidParameter(format!("grid bounds not increasing: {lo} >= {hi}")));
        }
        if n < 2 {
            return Err(Error::InvalidParameter(format!("grid needs at least 2 points, got {n}")));
        }
        Ok(Grid1D { lo, hi, n })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    #[inline]
    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.hi
        } else {
            self.lo + i as f64 * self.step()
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.point(i)).collect()
    }

    /// The default study grid: `center ± 6 s_max` with [`STUDY_POINTS`] points, where the
    /// center is the mean of the specs' centers and `s_max` their largest std.
    pub fn study(specs: &[DistributionSpec], n: usize) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Empty("distribution list"));
        }
        for s in specs {
            s.validate()?;
        }
        let center = specs.iter().map(DistributionSpec::center).sum::<f64>() / specs.len() as f64;
        let s_max = specs.iter().map(DistributionSpec::std_dev).fold(0.0, f64::max);
        Grid1D::new(center - STUDY_HALF_WIDTH * s_max, center + STUDY_HALF_WIDTH * s_max, n)
    }
}

/// A probability density sampled on a [`Grid1D`], normalized so that `Σ p_i Δz = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    grid: Grid1D,
    values: Vec<f64>,
}

impl DensityGrid {
    /// Floors `values` at [`DENSITY_FLOOR`] and renormalizes to unit discrete mass.
    pub fn from_values(grid: Grid1D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), got: values.len() });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidParameter(format!("density value {v} is not a finite non-negative number")));
        }
        let mut values: Vec<f64> = values.into_iter().map(|v| v.max(DENSITY_FLOOR)).collect();
        let mass = values.iter().sum::<f64>() * grid.step();
        for v in values.iter_mut() {
            *v = (*v / mass).max(DENSITY_FLOOR);
        }
        Ok(DensityGrid { grid, values })
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Discrete mass `Σ p_i Δz`.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.step()
    }
}

/// Probability mass of `spec` on `[lo, hi]` by composite Simpson quadrature.
pub fn mass_on_interval(spec: &DistributionSpec, lo: f64, hi: f64) -> f64 {
    // 40001 points keep the Laplace kink and narrow IG cores well resolved.
    simpson(|z| spec.pdf(z), lo, hi, 40_001)
}

/// Samples `spec` on `grid`, floors at [`DENSITY_FLOOR`] and renormalizes.
pub fn discretize(spec: &DistributionSpec, grid: &Grid1D) -> Result<DensityGrid> {
    spec.validate()?;
    let mass = mass_on_interval(spec, grid.lo(), grid.hi());
    if mass < MIN_GRID_MASS {
        return Err(Error::GridTooNarrow { lo: grid.lo(), hi: grid.hi(), mass });
    }
    let values = grid.points().into_iter().map(|z| spec.pdf(z)).collect();
    DensityGrid::from_values(*grid, values)
}
