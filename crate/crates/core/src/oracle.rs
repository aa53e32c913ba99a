//! Closed-form loss for a linear-mean Gaussian feature under Gaussian ID/OOD models.
//!
//! With `p(z|y) = N(μ_y, σ)` and `p(z̃|z) = N(Wz + b, σ_c)` every class-conditional
//! feature density is Gaussian with variance `σ_z̃² = σ_c² + W²σ²`, which gives
//!
//! - one-direction KL `W²(μ₁-μ₀)² / (2σ_z̃²)`, equal in both directions,
//! - `I(Z̃;Z|Y) = ½ log(σ_z̃² / σ_c²)`,
//! - `I(Z̃;Y) = h(G̃) - ½(log 2π + 1)`, where `G̃` is a unit-variance two-component
//!   mixture separated by `μ' = W(μ₁-μ₀)/σ_z̃`.
//!
//! The marginal of `Z` is a two-Gaussian mixture, so the full compression term obeys the
//! chain rule `I(Z̃;Z) = I(Z̃;Z|Y) + I(Z̃;Y)` (Z̃ depends on Y only through Z). Both the
//! conditional term and the full term are reported.
//!
//! Nothing here depends on `b`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ensure_positive, Error, Result};
use crate::quadrature::{normal_pdf, simpson, xlogx};
use crate::varopt::{LossBreakdown, LossParams};

/// Simpson nodes used for the mixture entropy `h(G̃)`.
pub const MIXTURE_ENTROPY_POINTS: usize = 4001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFeatureConfig {
    /// Slope W.
    pub w: f64,
    /// Offset b.
    #[serde(default)]
    pub b: f64,
    pub sigma_c: f64,
    pub id_mean: f64,
    pub ood_mean: f64,
    /// Shared class-conditional std σ.
    pub sigma: f64,
    pub alpha: f64,
    pub beta: f64,
    #[serde(default = "half")]
    pub p1: f64,
}

fn half() -> f64 {
    0.5
}

impl LinearFeatureConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_finite("w", self.w)?;
        ensure_finite("b", self.b)?;
        ensure_finite("id_mean", self.id_mean)?;
        ensure_finite("ood_mean", self.ood_mean)?;
        ensure_positive("sigma_c", self.sigma_c)?;
        ensure_positive("sigma", self.sigma)?;
        self.params().validate()
    }

    pub fn params(&self) -> LossParams {
        LossParams { alpha: self.alpha, beta: self.beta, p1: self.p1 }
    }

    pub fn with_w(&self, w: f64) -> Self {
        LinearFeatureConfig { w, ..*self }
    }

    /// `σ_z̃ = sqrt(σ_c² + W²σ²)`.
    pub fn feature_std(&self) -> f64 {
        (self.sigma_c * self.sigma_c + self.w * self.w * self.sigma * self.sigma).sqrt()
    }

    /// Separation `μ' = W(μ₁-μ₀)/σ_z̃` of the standardized mixture.
    pub fn standardized_shift(&self) -> f64 {
        self.w * (self.ood_mean - self.id_mean) / self.feature_std()
    }
}

/// Closed-form loss together with its intermediate terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormLoss {
    /// One-direction KL divergence.
    pub kl_one: f64,
    /// `I(Z̃;Z|Y) = ½ log(σ_z̃²/σ_c²)`.
    pub i_zz_given_y: f64,
    /// Entropy of the standardized mixture `G̃`.
    pub mixture_entropy: f64,
    /// Loss components on the same footing as the numerical evaluation.
    pub breakdown: LossBreakdown,
}

/// Entropy (nats) of `p1·N(0,1) + (1-p1)·N(shift,1)` by composite Simpson quadrature
/// on `[min(0,shift) - 10, max(0,shift) + 10]`.
pub fn mixture_entropy(shift: f64, p1: f64) -> f64 {
    let lo = shift.min(0.0) - 10.0;
    let hi = shift.max(0.0) + 10.0;
    simpson(
        |x| -xlogx(p1 * normal_pdf(x, 0.0, 1.0) + (1.0 - p1) * normal_pdf(x, shift, 1.0)),
        lo,
        hi,
        MIXTURE_ENTROPY_POINTS,
    )
}

pub fn closed_form_loss(cfg: &LinearFeatureConfig) -> Result<ClosedFormLoss> {
    cfg.validate()?;
    let var = cfg.feature_std().powi(2);
    let gap = cfg.ood_mean - cfg.id_mean;
    let kl_one = cfg.w * cfg.w * gap * gap / (2.0 * var);
    let i_zz_given_y = 0.5 * (var / (cfg.sigma_c * cfg.sigma_c)).ln();
    let h_mix = mixture_entropy(cfg.standardized_shift(), cfg.p1);
    let i_zy = (h_mix - 0.5 * ((2.0 * std::f64::consts::PI).ln() + 1.0)).max(0.0);
    let breakdown = LossBreakdown::from_parts(2.0 * kl_one, i_zz_given_y + i_zy, i_zy, &cfg.params());
    if !breakdown.total.is_finite() {
        return Err(Error::NumericalDomain("closed-form loss is not finite".into()));
    }
    Ok(ClosedFormLoss { kl_one, i_zz_given_y, mixture_entropy: h_mix, breakdown })
}

/// Sampled loss landscape over `W`, with the index of the sampled minimum of `total`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landscape {
    pub points: Vec<(f64, ClosedFormLoss)>,
    pub argmin: usize,
}

impl Landscape {
    pub fn argmin_w(&self) -> f64 {
        self.points[self.argmin].0
    }

    pub fn min_total(&self) -> f64 {
        self.points[self.argmin].1.breakdown.total
    }
}

pub fn loss_landscape(template: &LinearFeatureConfig, w_values: &[f64]) -> Result<Landscape> {
    if w_values.is_empty() {
        return Err(Error::Empty("W values"));
    }
    let points = w_values
        .iter()
        .map(|&w| closed_form_loss(&template.with_w(w)).map(|l| (w, l)))
        .collect::<Result<Vec<_>>>()?;
    let argmin = points
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.breakdown.total.total_cmp(&b.1 .1.breakdown.total))
        .map(|(i, _)| i)
        .unwrap_or(0);
    Ok(Landscape { points, argmin })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_scales(alpha: f64) -> LinearFeatureConfig {
        LinearFeatureConfig {
            w: 1.0,
            b: 0.0,
            sigma_c: 1.0,
            id_mean: 0.5,
            ood_mean: -0.5,
            sigma: 1.0,
            alpha,
            beta: 1.0,
            p1: 0.5,
        }
    }

    #[test]
    fn zero_slope_destroys_information() {
        let l = closed_form_loss(&unit_scales(0.5).with_w(0.0)).unwrap();
        assert_eq!(l.breakdown.kl_sym, 0.0);
        assert_eq!(l.i_zz_given_y, 0.0);
        assert!(l.breakdown.i_zy.abs() < 1e-12);
        assert!(l.breakdown.i_zz.abs() < 1e-12);
    }

    #[test]
    fn unit_slope_spot_values() {
        let cfg = LinearFeatureConfig { id_mean: 0.0, ood_mean: 1.0, ..unit_scales(0.5) };
        let l = closed_form_loss(&cfg).unwrap();
        assert!((l.kl_one - 0.25).abs() < 1e-12);
        assert!((l.breakdown.kl_sym - 0.5).abs() < 1e-12);
        assert!((l.i_zz_given_y - 0.346_573_590_279_972_6).abs() < 1e-12);
    }

    #[test]
    fn large_slope_limit() {
        let l = closed_form_loss(&unit_scales(0.5).with_w(1e3)).unwrap();
        assert!((l.kl_one - 0.5).abs() < 1e-4);
    }

    #[test]
    fn relevance_bounded_by_label_entropy() {
        for p1 in [0.1, 0.5, 0.8] {
            for w in [0.0, 0.3, 2.0, 50.0] {
                let cfg = LinearFeatureConfig { p1, ..unit_scales(1.0).with_w(w) };
                let l = closed_form_loss(&cfg).unwrap();
                let h = cfg.params().label_entropy();
                assert!(l.breakdown.i_zy >= 0.0 && l.breakdown.i_zy <= h + 1e-12, "p1={p1} w={w}");
            }
        }
    }

    #[test]
    fn mixture_entropy_reflection_invariant() {
        for p1 in [0.2, 0.5, 0.7] {
            let a = mixture_entropy(1.3, p1);
            let b = mixture_entropy(-1.3, p1);
            let c = mixture_entropy(1.3, 1.0 - p1);
            assert!((a - b).abs() < 1e-12);
            assert!((a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn landscape_is_even_with_interior_minimum() {
        let ws: Vec<f64> = (-300..=300).map(|i| i as f64 * 0.01).collect();
        let land = loss_landscape(&unit_scales(0.5), &ws).unwrap();
        for (i, (w, l)) in land.points.iter().enumerate() {
            let mirror = &land.points[ws.len() - 1 - i];
            assert_eq!(mirror.0, -w);
            assert!((l.breakdown.total - mirror.1.breakdown.total).abs() < 1e-9);
        }
        assert!(land.argmin_w().abs() > 0.0);
        assert!(land.argmin_w().abs() < 3.0);
        let far = closed_form_loss(&unit_scales(0.5).with_w(50.0)).unwrap();
        assert!(far.breakdown.total - land.min_total() > 1.0);
    }

    #[test]
    fn no_interior_minimum_without_bottleneck() {
        let ws: Vec<f64> = (0..=300).map(|i| i as f64 * 0.01).collect();
        let land = loss_landscape(&unit_scales(0.0), &ws).unwrap();
        for pair in land.points.windows(2) {
            assert!(pair[1].1.breakdown.total < pair[0].1.breakdown.total);
        }
    }
}
