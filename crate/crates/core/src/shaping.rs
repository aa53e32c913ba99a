//! Element-wise shaping functions and their application to feature matrices.
//!
//! Two kinds of shape are supported: the seven-parameter piecewise-linear family
//! ([`PiecewiseLinearShape`]) and a sampled curve ([`CurveShape`]) carrying an
//! optimized mean `μ(z)` into deployment.
//!
//! The piecewise family on `z >= 0`:
//!
//! ```text
//! 0  <= z < z1 : y0 + (y1a - y0) z / z1
//! z1 <= z < z2 : y1b + m1 (z - z1)
//! z2 <= z      : y1b + m1 (z2 - z1) + m2 (z - z2)
//! ```
//!
//! Negative inputs are handled by [`NegativeMode`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ensure_positive, Error, Result};
use crate::varopt::GaussianRandomFeature;

/// Anything that maps a scalar feature value to a shaped value.
pub trait ShapeFunction: Sync {
    fn eval(&self, z: f64) -> f64;
}

/// Treatment of `z < 0` by the piecewise family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeMode {
    /// Pass negative inputs through unchanged.
    #[default]
    Identity,
    /// `f(z) = -f(-z)`.
    Odd,
    /// Map negative inputs to zero.
    Zero,
}

impl NegativeMode {
    fn is_default(&self) -> bool {
        *self == NegativeMode::Identity
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiecewiseLinearShape {
    pub y0: f64,
    pub y1a: f64,
    pub z1: f64,
    pub y1b: f64,
    pub m1: f64,
    pub z2: f64,
    pub m2: f64,
    #[serde(default, skip_serializing_if = "NegativeMode::is_default")]
    pub negative: NegativeMode,
}

impl PiecewiseLinearShape {
    pub fn new(y0: f64, y1a: f64, z1: f64, y1b: f64, m1: f64, z2: f64, m2: f64) -> Self {
        PiecewiseLinearShape { y0, y1a, z1, y1b, m1, z2, m2, negative: NegativeMode::Identity }
    }

    pub fn with_negative(self, negative: NegativeMode) -> Self {
        PiecewiseLinearShape { negative, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("y0", self.y0), ("y1a", self.y1a), ("y1b", self.y1b), ("m1", self.m1), ("m2", self.m2)] {
            ensure_finite(name, v)?;
        }
        ensure_positive("z1", self.z1)?;
        ensure_finite("z2", self.z2)?;
        if self.z2 < self.z1 {
            return Err(Error::InvalidParameter(format!("z2 ({}) must be >= z1 ({})", self.z2, self.z1)));
        }
        Ok(())
    }

    /// The parameters in the fixed order `y0, y1a, z1, y1b, m1, z2, m2`.
    pub fn to_array(&self) -> [f64; 7] {
        [self.y0, self.y1a, self.z1, self.y1b, self.m1, self.z2, self.m2]
    }

    pub fn from_array(p: [f64; 7]) -> Self {
        PiecewiseLinearShape::new(p[0], p[1], p[2], p[3], p[4], p[5], p[6])
    }

    fn positive(&self, z: f64) -> f64 {
        if z < self.z1 {
            self.y0 + (self.y1a - self.y0) * z / self.z1
        } else if z < self.z2 {
            self.y1b + self.m1 * (z - self.z1)
        } else {
            self.y1b + self.m1 * (self.z2 - self.z1) + self.m2 * (z - self.z2)
        }
    }
}

impl ShapeFunction for PiecewiseLinearShape {
    fn eval(&self, z: f64) -> f64 {
        if z >= 0.0 {
            return self.positive(z);
        }
        match self.negative {
            NegativeMode::Identity => z,
            NegativeMode::Odd => -self.positive(-z),
            NegativeMode::Zero => 0.0,
        }
    }
}

/// Evaluates the piecewise family at `z`.
pub fn shape_piecewise(p: &PiecewiseLinearShape, z: f64) -> f64 {
    p.eval(z)
}

/// Tuned rows for published models, keyed by `model/dataset`.
pub fn tuned_presets() -> Vec<(&'static str, PiecewiseLinearShape)> {
    type P = PiecewiseLinearShape;
    vec![
        ("resnet50/imagenet", P::new(0.0, 0.0, 0.52, 0.73, 0.61, 1.2, -0.3)),
        ("mobilenet_v2/imagenet", P::new(0.0, 0.0, 0.55, 0.5, 0.79, 1.49, -0.74)),
        ("vit_b_16/imagenet", P::new(0.0, 0.0, 0.05, 1.58, 2.0, 2.0, -1.0)),
        ("vit_l_16/imagenet", P::new(0.0, 0.0, 0.06, 1.76, 1.79, 2.0, -0.32)),
        ("densenet101/cifar10", P::new(0.0, 0.0, 0.51, 0.41, 1.18, 1.1, 0.37)),
        ("mlp_mixer_nano/cifar10", P::new(-0.3, 0.25, 0.73, 0.40, 0.10, 3.54, 1.76)),
        ("densenet101/cifar100", P::new(0.0, 0.1, 1.0, 2.0, 0.17, 1.8, -0.18)),
        ("mlp_mixer_nano/cifar100", P::new(0.0, 0.3, 0.59, 0.4, 0.1, 4.0, 2.0)),
    ]
}

/// Piecewise-linear interpolant through sampled `(z_i, μ_i)` with linear extrapolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveShape {
    z: Vec<f64>,
    mu: Vec<f64>,
    left_slope: f64,
    right_slope: f64,
}

impl CurveShape {
    /// Builds a curve whose end slopes are those of the first and last segments.
    pub fn new(z: Vec<f64>, mu: Vec<f64>) -> Result<Self> {
        if z.len() != mu.len() {
            return Err(Error::DimensionMismatch { expected: z.len(), got: mu.len() });
        }
        if z.len() < 2 {
            return Err(Error::InvalidParameter("a curve needs at least two knots".into()));
        }
        let n = z.len();
        let left = (mu[1] - mu[0]) / (z[1] - z[0]);
        let right = (mu[n - 1] - mu[n - 2]) / (z[n - 1] - z[n - 2]);
        Self::with_slopes(z, mu, left, right)
    }

    pub fn with_slopes(z: Vec<f64>, mu: Vec<f64>, left_slope: f64, right_slope: f64) -> Result<Self> {
        if z.len() != mu.len() {
            return Err(Error::DimensionMismatch { expected: z.len(), got: mu.len() });
        }
        if z.len() < 2 {
            return Err(Error::InvalidParameter("a curve needs at least two knots".into()));
        }
        if z.iter().chain(&mu).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("curve knots must be finite".into()));
        }
        if z.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("curve abscissae must be strictly increasing".into()));
        }
        ensure_finite("left_slope", left_slope)?;
        ensure_finite("right_slope", right_slope)?;
        Ok(CurveShape { z, mu, left_slope, right_slope })
    }

    /// Mean curve of an optimized feature.
    pub fn from_feature(feature: &GaussianRandomFeature) -> Result<Self> {
        Self::new(feature.grid().points(), feature.mean().to_vec())
    }

    pub fn knots(&self) -> &[f64] {
        &self.z
    }

    pub fn values(&self) -> &[f64] {
        &self.mu
    }

    pub fn slopes(&self) -> (f64, f64) {
        (self.left_slope, self.right_slope)
    }
}

impl ShapeFunction for CurveShape {
    fn eval(&self, z: f64) -> f64 {
        let n = self.z.len();
        if z < self.z[0] {
            return self.mu[0] + self.left_slope * (z - self.z[0]);
        }
        if z > self.z[n - 1] {
            return self.mu[n - 1] + self.right_slope * (z - self.z[n - 1]);
        }
        // First knot strictly greater than z.
        let hi = self.z.partition_point(|&k| k <= z);
        let lo = hi - 1;
        if self.z[lo] == z || hi == n {
            return self.mu[lo];
        }
        let t = (z - self.z[lo]) / (self.z[hi] - self.z[lo]);
        self.mu[lo] + t * (self.mu[hi] - self.mu[lo])
    }
}

pub fn shape_from_curve(c: &CurveShape, z: f64) -> f64 {
    c.eval(z)
}

/// Either supported shape, as read from configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Piecewise(PiecewiseLinearShape),
    Curve(CurveShape),
}

impl ShapeFunction for Shape {
    fn eval(&self, z: f64) -> f64 {
        match self {
            Shape::Piecewise(p) => p.eval(z),
            Shape::Curve(c) => c.eval(z),
        }
    }
}

/// Row-major `rows × cols` matrix of `f32` features with optional 0/1 labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f32>,
    labels: Option<Vec<u8>>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f32>, labels: Option<Vec<u8>>) -> Result<Self> {
        if cols == 0 {
            return Err(Error::InvalidParameter("feature dimension must be >= 1".into()));
        }
        let expected = rows.checked_mul(cols).ok_or_else(|| Error::InvalidParameter("matrix too large".into()))?;
        if values.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: values.len() });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite feature value at flat index {pos}")));
        }
        if let Some(l) = &labels {
            if l.len() != rows {
                return Err(Error::DimensionMismatch { expected: rows, got: l.len() });
            }
            if let Some(pos) = l.iter().position(|&b| b > 1) {
                return Err(Error::InvalidParameter(format!("label at row {pos} is {}, expected 0 or 1", l[pos])));
            }
        }
        Ok(FeatureMatrix { rows, cols, values, labels })
    }

    pub fn from_rows(rows: &[Vec<f32>], labels: Option<Vec<u8>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch { expected: cols, got: bad.len() });
        }
        Self::new(rows.len(), cols, rows.concat(), labels)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    /// Keeps the rows whose label equals `label`; `None` if the matrix is unlabeled.
    pub fn select_label(&self, label: u8) -> Option<FeatureMatrix> {
        let labels = self.labels.as_ref()?;
        let mut values = Vec::new();
        let mut kept = 0;
        for (i, &l) in labels.iter().enumerate() {
            if l == label {
                values.extend_from_slice(self.row(i));
                kept += 1;
            }
        }
        Some(FeatureMatrix { rows: kept, cols: self.cols, values, labels: Some(vec![label; kept]) })
    }

    /// All entries as `f64`.
    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| f64::from(v)).collect()
    }
}

/// Applies `shape` to every entry, evaluating in `f64` and rounding to `f32`.
pub fn apply<S: ShapeFunction + ?Sized>(shape: &S, f: &FeatureMatrix) -> FeatureMatrix {
    let values = f.values.par_iter().map(|&v| shape.eval(f64::from(v)) as f32).collect();
    FeatureMatrix { rows: f.rows, cols: f.cols, values, labels: f.labels.clone() }
}
