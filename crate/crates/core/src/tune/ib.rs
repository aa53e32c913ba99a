use serde::{Deserialize, Serialize};

use crate::densities::{discretize, DistributionSpec, Grid1D, STUDY_POINTS};
use crate::error::{ensure_positive, Result};
use crate::shaping::ShapeFunction;
use crate::varopt::{evaluate_loss_default, ClassDensities, GaussianRandomFeature, LossParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IbEstimate {
    /// `I(Z̃;Z) - β I(Z̃;Y)`.
    pub ib: f64,
    pub i_zz: f64,
    pub i_zy: f64,
    pub sigma_probe: f64,
}

/// Probe width used when none is given: 5% of the ID standard deviation.
pub fn default_sigma_probe(id: &DistributionSpec) -> f64 {
    0.05 * id.std_dev()
}

/// Information bottleneck of a deterministic shape, lifted to the random feature
/// `N(shape(z), σ_probe)` on the default study grid of `id` and `ood`.
pub fn estimate_ib<S: ShapeFunction + ?Sized>(
    shape: &S,
    id: &DistributionSpec,
    ood: &DistributionSpec,
    sigma_probe: f64,
    beta: f64,
    p1: f64,
) -> Result<IbEstimate> {
    ensure_positive("sigma_probe", sigma_probe)?;
    let params = LossParams::new(1.0, beta, p1)?;
    let grid = Grid1D::study(&[*id, *ood], STUDY_POINTS)?;
    let p0 = discretize(id, &grid)?;
    let p1d = discretize(ood, &grid)?;
    let dens = ClassDensities::new(&p0, &p1d)?;
    let mean = grid.points().into_iter().map(|z| shape.eval(z)).collect();
    let feature = GaussianRandomFeature::new(grid, mean, vec![sigma_probe; grid.len()])?;
    let l = evaluate_loss_default(&feature, dens, &params)?;
    Ok(IbEstimate { ib: l.ib(beta), i_zz: l.i_zz, i_zy: l.i_zy, sigma_probe })
}
