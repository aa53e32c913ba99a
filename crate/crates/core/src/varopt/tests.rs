use super::*;
use crate::densities::{discretize, DensityGrid, DistributionSpec, Grid1D};
use crate::oracle::{closed_form_loss, LinearFeatureConfig};
use crate::quadrature::{normal_pdf, trapezoid};

fn densities(id: DistributionSpec, ood: DistributionSpec, grid: &Grid1D) -> (DensityGrid, DensityGrid) {
    (discretize(&id, grid).unwrap(), discretize(&ood, grid).unwrap())
}

#[test]
fn narrow_identity_feature_reproduces_density() {
    let grid = Grid1D::new(-6.0, 6.0, 1201).unwrap();
    let cond = discretize(&DistributionSpec::gaussian(0.0, 1.0), &grid).unwrap();
    let feature = GaussianRandomFeature::identity(grid, 1e-2).unwrap();
    let v = feature_density(&feature, &cond, 0.0).unwrap();
    assert!((v - 0.3989).abs() < 0.01);
}

#[test]
fn feature_density_has_unit_mass() {
    let grid = Grid1D::new(-3.0, 3.0, 121).unwrap();
    let cond = discretize(&DistributionSpec::laplace(0.2, 0.35), &grid).unwrap();
    let mean: Vec<f64> = grid.points().iter().map(|z| 0.5 * z + 0.3 * z.sin()).collect();
    let feature = GaussianRandomFeature::new(grid, mean, vec![0.15; 121]).unwrap();
    let n = 4001;
    let h = 20.0 / (n - 1) as f64;
    let v: Vec<f64> = (0..n).map(|k| feature_density(&feature, &cond, -10.0 + k as f64 * h).unwrap()).collect();
    assert!((trapezoid(&v, h) - 1.0).abs() < 1e-3);
}

#[test]
fn constant_feature_collapses_mixture() {
    let grid = Grid1D::new(-4.0, 4.0, 81).unwrap();
    let cond = discretize(&DistributionSpec::gaussian(0.7, 0.9), &grid).unwrap();
    let feature = GaussianRandomFeature::new(grid, vec![1.5; 81], vec![0.4; 81]).unwrap();
    for zt in [-0.5, 1.5, 2.2] {
        let v = feature_density(&feature, &cond, zt).unwrap();
        assert!((v - normal_pdf(zt, 1.5, 0.4)).abs() < 1e-12);
    }
}

#[test]
fn grid_mismatch_is_rejected() {
    let g1 = Grid1D::new(-3.0, 3.0, 41).unwrap();
    let g2 = Grid1D::new(-3.0, 3.0, 43).unwrap();
    let cond = discretize(&DistributionSpec::gaussian(0.0, 0.5), &g1).unwrap();
    let feature = GaussianRandomFeature::identity(g2, 0.2).unwrap();
    assert!(feature_density(&feature, &cond, 0.0).is_err());
}

#[test]
fn identical_classes_have_no_separation_or_relevance() {
    let grid = Grid1D::new(-3.0, 3.0, 61).unwrap();
    let (p0, _) = densities(DistributionSpec::gaussian(0.0, 0.5), DistributionSpec::gaussian(0.0, 0.5), &grid);
    let dens = ClassDensities::new(&p0, &p0).unwrap();
    let mean: Vec<f64> = grid.points().iter().map(|z| z * z - 0.5 * z).collect();
    let feature = GaussianRandomFeature::new(grid, mean, vec![0.2; 61]).unwrap();
    let l = evaluate_loss_default(&feature, dens, &LossParams::new(1.0, 10.0, 0.5).unwrap()).unwrap();
    assert_eq!(l.kl_sym, 0.0);
    assert!(l.i_zy.abs() < 1e-15);
}

#[test]
fn constant_feature_carries_no_information() {
    let grid = Grid1D::new(-3.0, 3.0, 61).unwrap();
    let (p0, p1) = densities(DistributionSpec::gaussian(-0.5, 0.5), DistributionSpec::gaussian(0.5, 0.5), &grid);
    let dens = ClassDensities::new(&p0, &p1).unwrap();
    let feature = GaussianRandomFeature::new(grid, vec![0.0; 61], vec![0.3; 61]).unwrap();
    let l = evaluate_loss_default(&feature, dens, &LossParams::new(1.0, 10.0, 0.5).unwrap()).unwrap();
    assert!(l.i_zz.abs() < 1e-6, "i_zz = {}", l.i_zz);
    assert!(l.i_zy.abs() < 1e-6);
    assert!(l.kl_sym.abs() < 1e-6);
}

#[test]
fn eval_grid_must_cover_support() {
    let grid = Grid1D::new(-3.0, 3.0, 41).unwrap();
    let (p0, p1) = densities(DistributionSpec::gaussian(-0.5, 0.5), DistributionSpec::gaussian(0.5, 0.5), &grid);
    let dens = ClassDensities::new(&p0, &p1).unwrap();
    let feature = GaussianRandomFeature::identity(grid, 0.1).unwrap();
    let short = Grid1D::new(-2.0, 2.0, 400).unwrap();
    let params = LossParams::new(1.0, 1.0, 0.5).unwrap();
    assert!(matches!(evaluate_loss(&feature, dens, &params, &short), Err(crate::Error::Coverage { .. })));
}

#[test]
fn breakdown_respects_invariants() {
    let grid = Grid1D::study(&[DistributionSpec::gaussian(0.0, 0.66), DistributionSpec::laplace(0.0, 1.0)], 121).unwrap();
    let (p0, p1) = densities(DistributionSpec::gaussian(0.0, 0.66), DistributionSpec::laplace(0.0, 1.0), &grid);
    let dens = ClassDensities::new(&p0, &p1).unwrap();
    for p1w in [0.2, 0.5, 0.9] {
        let params = LossParams::new(3.0, 10.0, p1w).unwrap();
        let feature = GaussianRandomFeature::identity(grid, 0.2).unwrap();
        let l = evaluate_loss_default(&feature, dens, &params).unwrap();
        assert!(l.kl_sym >= 0.0 && l.i_zz >= 0.0);
        assert!(l.i_zy >= 0.0 && l.i_zy <= params.label_entropy());
        assert!((l.total - (-l.kl_sym + 3.0 * (l.i_zz - 10.0 * l.i_zy))).abs() < 1e-9);
    }
}

#[test]
fn matches_closed_form_for_linear_features() {
    // Unit class std, unit conditional std, unit mean gap.
    let (id_mean, ood_mean, sigma, sigma_c) = (0.5, -0.5, 1.0, 1.0);
    let id = DistributionSpec::gaussian(id_mean, sigma);
    let ood = DistributionSpec::gaussian(ood_mean, sigma);
    let grid = Grid1D::study(&[id, ood], 241).unwrap();
    let (p0, p1) = densities(id, ood, &grid);
    let dens = ClassDensities::new(&p0, &p1).unwrap();
    for w in [0.25, 0.5, 1.0, 2.0] {
        for b in [0.0, 0.3] {
            let cfg = LinearFeatureConfig { w, b, sigma_c, id_mean, ood_mean, sigma, alpha: 0.5, beta: 1.0, p1: 0.5 };
            let exact = closed_form_loss(&cfg).unwrap().breakdown;
            let mean = grid.points().iter().map(|z| w * z + b).collect();
            let feature = GaussianRandomFeature::new(grid, mean, vec![sigma_c; grid.len()]).unwrap();
            let num = evaluate_loss_default(&feature, dens, &cfg.params()).unwrap();
            assert!((num.kl_sym - exact.kl_sym).abs() < 1e-3, "kl w={w} b={b}: {num:?} vs {exact:?}");
            assert!((num.i_zz - exact.i_zz).abs() < 1e-3, "i_zz w={w} b={b}: {num:?} vs {exact:?}");
            assert!((num.i_zy - exact.i_zy).abs() < 1e-3, "i_zy w={w} b={b}: {num:?} vs {exact:?}");
        }
    }
}

#[test]
fn kl_gradient_with_unit_likelihood_ratio() {
    for p in [0.1, 0.37, 1.2] {
        assert!((kl_gradient(p, p, 0.4, 0.4) + 2.0 * p).abs() < 1e-15);
    }
}

#[test]
fn grad_p_without_bottleneck_is_negated_kl_gradient() {
    let grid = Grid1D::new(-3.0, 3.0, 41).unwrap();
    let (p0, p1) = densities(DistributionSpec::gaussian(-0.5, 0.5), DistributionSpec::gaussian(0.5, 0.7), &grid);
    let dens = ClassDensities::new(&p0, &p1).unwrap();
    let feature = GaussianRandomFeature::identity(grid, 0.25).unwrap();
    let params = LossParams::new(0.0, 10.0, 0.5).unwrap();
    for (i, zt) in [(5usize, -1.7), (20, 0.1), (33, 2.0)] {
        let g = grad_p(&feature, dens, &params, zt, i).unwrap();
        let q0 = feature_density(&feature, &p0, zt).unwrap();
        let q1 = feature_density(&feature, &p1, zt).unwrap();
        let expect = -kl_gradient(p0.values()[i], p1.values()[i], q0, q1);
        assert_eq!(g, expect);
    }
    assert!(matches!(
        grad_p(&feature, dens, &params, 0.0, 41),
        Err(crate::Error::IndexOutOfRange { index: 41, len: 41 })
    ));
}

#[test]
fn grad_p_identical_classes() {
    let grid = Grid1D::new(-3.0, 3.0, 41).unwrap();
    let p0 = discretize(&DistributionSpec::gaussian(0.0, 0.8), &grid).unwrap();
    let dens = ClassDensities::new(&p0, &p0).unwrap();
    let feature = GaussianRandomFeature::identity(grid, 0.3).unwrap();
    let params = LossParams::new(0.0, 1.0, 0.5).unwrap();
    let g = grad_p(&feature, dens, &params, 0.4, 17).unwrap();
    assert!((g - 2.0 * p0.values()[17]).abs() < 1e-12);
}

#[test]
fn projection_of_constant_has_no_mean_gradient() {
    let inner = InnerGrid { k: 6.0, points: 61 };
    let (gm, gs) = gaussian_projection(0.7, 0.3, inner, |_| 2.5);
    assert!(gm.abs() < 1e-12);
    assert!(gs.abs() < 1e-6);
}

/// Central differences of the loss with respect to single `μ_i` / `σ_i` entries,
/// scaled by `1/Δz` to density units.
pub(crate) fn finite_difference(
    feature: &GaussianRandomFeature,
    dens: ClassDensities<'_>,
    params: &LossParams,
    i: usize,
    eps: f64,
) -> (f64, f64) {
    let eval = default_eval_grid(feature).unwrap();
    let loss = |f: &GaussianRandomFeature| evaluate_loss(f, dens, params, &eval).unwrap().total;
    let dz = feature.grid().step();
    let shift = |dm: f64, ds: f64| {
        let mut m = feature.mean().to_vec();
        let mut s = feature.sigma().to_vec();
        m[i] += dm;
        s[i] += ds;
        GaussianRandomFeature::new(*feature.grid(), m, s).unwrap()
    };
    let dmu = (loss(&shift(eps, 0.0)) - loss(&shift(-eps, 0.0))) / (2.0 * eps * dz);
    let dsig = (loss(&shift(0.0, eps)) - loss(&shift(0.0, -eps))) / (2.0 * eps * dz);
    (dmu, dsig)
}

#[test]
fn gradients_match_finite_differences() {
    let grid = Grid1D::new(-3.0, 3.0, 41).unwrap();
    let (p0, p1) = densities(DistributionSpec::gaussian(-0.5, 0.5), DistributionSpec::gaussian(0.5, 0.5), &grid);
    let dens = ClassDensities::new(&p0, &p1).unwrap();
    let mean: Vec<f64> = grid.points().iter().map(|z| z + 0.2 * (1.3 * z).sin()).collect();
    let sigma: Vec<f64> = grid.points().iter().map(|z| 0.25 + 0.05 * z.cos()).collect();
    let feature = GaussianRandomFeature::new(grid, mean, sigma).unwrap();
    let inner = InnerGrid { k: 8.0, points: 31 };
    for params in [LossParams::new(1.0, 10.0, 0.5).unwrap(), LossParams::new(0.0, 10.0, 0.5).unwrap()] {
        let (gm, gs) = grad_mu_sigma(&feature, dens, &params, inner).unwrap();
        let scale_m = gm.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let scale_s = gs.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        for i in [3, 12, 18, 20, 25, 34] {
            let (fm, fs) = finite_difference(&feature, dens, &params, i, 1e-5);
            assert!((gm[i] - fm).abs() <= 1e-3 * fm.abs().max(1e-3 * scale_m), "mu i={i}: {} vs {fm}", gm[i]);
            assert!((gs[i] - fs).abs() <= 1e-3 * fs.abs().max(1e-3 * scale_s), "sigma i={i}: {} vs {fs}", gs[i]);
        }
    }
}

#[test]
fn symmetric_problem_has_odd_mean_and_even_sigma_gradients() {
    let grid = Grid1D::new(-8.0, 8.0, 61).unwrap();
    let (p0, p1) = densities(DistributionSpec::gaussian(0.0, 0.66), DistributionSpec::laplace(0.0, 1.0), &grid);
    let dens = ClassDensities::new(&p0, &p1).unwrap();
    let pts = grid.points();
    let mean: Vec<f64> = pts.iter().map(|z| z + 0.3 * z.powi(3) / 8.0).collect();
    let sigma: Vec<f64> = pts.iter().map(|z| 0.3 + 0.02 * z * z).collect();
    let feature = GaussianRandomFeature::new(grid, mean, sigma).unwrap();
    let (gm, gs) = grad_mu_sigma(&feature, dens, &LossParams::new(3.0, 10.0, 0.5).unwrap(), InnerGrid { k: 8.0, points: 31 })
        .unwrap();
    let n = gm.len();
    for i in 0..n {
        assert!((gm[i] + gm[n - 1 - i]).abs() < 1e-6, "odd at {i}");
        assert!((gs[i] - gs[n - 1 - i]).abs() < 1e-6, "even at {i}");
    }
}

#[test]
fn optimizer_trace_is_monotone_and_respects_floor() {
    let grid = Grid1D::new(-3.0, 3.0, 41).unwrap();
    let (p0, p1) = densities(DistributionSpec::gaussian(-0.5, 0.5), DistributionSpec::gaussian(0.5, 0.5), &grid);
    let dens = ClassDensities::new(&p0, &p1).unwrap();
    let cfg = OptimizerConfig { iterations: 60, inner_points: 31, ..OptimizerConfig::default() };
    let params = LossParams::new(1.0, 10.0, 0.5).unwrap();
    let mut seen = 0;
    let out = optimize_with(dens, &params, &cfg, |_| seen += 1).unwrap();
    assert_eq!(seen, 60);
    assert!(out.trace[0].total <= out.initial.total);
    for w in out.trace.windows(2) {
        assert!(w[1].total <= w[0].total);
    }
    assert!(out.feature.sigma().iter().all(|&s| s >= cfg.sigma_min));
    assert!(out.final_loss().total < out.initial.total);
}

#[test]
fn optimizer_rejects_bad_config() {
    let grid = Grid1D::new(-3.0, 3.0, 41).unwrap();
    let (p0, p1) = densities(DistributionSpec::gaussian(-0.5, 0.5), DistributionSpec::gaussian(0.5, 0.5), &grid);
    let dens = ClassDensities::new(&p0, &p1).unwrap();
    let params = LossParams::new(1.0, 10.0, 0.5).unwrap();
    let bad = OptimizerConfig { k: 2.0, ..OptimizerConfig::default() };
    assert!(optimize(dens, &params, &bad).is_err());
    let bad = OptimizerConfig { learning_rate: 0.0, ..OptimizerConfig::default() };
    assert!(optimize(dens, &params, &bad).is_err());
}
