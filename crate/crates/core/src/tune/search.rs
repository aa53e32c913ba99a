use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detect::{energy_score, evaluate, ClassifierHead, EvalReport, ScoreSet};
use crate::error::{ensure_positive, Error, Result};
use crate::shaping::{apply, FeatureMatrix, PiecewiseLinearShape};

const GOLDEN: f64 = 0.618_033_988_749_894_8;

/// Search box and budget for [`tune_piecewise`].
///
/// `budget` counts objective evaluations. A quarter of it (when `budget >= 8` and
/// `refine_steps > 0`) is reserved for coordinate-wise golden-section refinement of
/// the best random candidate; the rest is spent on seeded uniform samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneConfig {
    pub lower: PiecewiseLinearShape,
    pub upper: PiecewiseLinearShape,
    pub budget: usize,
    pub seed: u64,
    /// Golden-section evaluations per coordinate visit.
    pub refine_steps: usize,
    pub temperature: f64,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            lower: PiecewiseLinearShape::new(-0.5, -0.5, 0.01, -0.5, -1.0, 0.01, -1.0),
            upper: PiecewiseLinearShape::new(2.0, 2.0, 4.0, 2.0, 2.0, 4.0, 2.0),
            budget: 64,
            seed: 0,
            refine_steps: 4,
            temperature: 1.0,
        }
    }
}

impl TuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::InvalidParameter("budget must be >= 1".into()));
        }
        ensure_positive("temperature", self.temperature)?;
        ensure_positive("lower.z1", self.lower.z1)?;
        let names = ["y0", "y1a", "z1", "y1b", "m1", "z2", "m2"];
        for ((lo, hi), name) in self.lower.to_array().iter().zip(self.upper.to_array()).zip(names) {
            if !(lo.is_finite() && hi.is_finite() && *lo <= hi) {
                return Err(Error::InvalidParameter(format!("bounds for {name} must be finite with lower <= upper")));
            }
        }
        Ok(())
    }

    fn split(&self) -> (usize, usize) {
        let refine = if self.budget >= 8 && self.refine_steps > 0 { self.budget / 4 } else { 0 };
        (self.budget - refine, refine)
    }

    fn bounds(&self) -> ([f64; 7], [f64; 7]) {
        (self.lower.to_array(), self.upper.to_array())
    }

    fn build(&self, p: [f64; 7]) -> PiecewiseLinearShape {
        let mut s = PiecewiseLinearShape::from_array(p).with_negative(self.lower.negative);
        s.z2 = s.z2.max(s.z1);
        s
    }
}

/// The `index`-th random candidate: uniform in the box, from stream `index` of a
/// ChaCha8 generator keyed by `cfg.seed`, with `z2` raised to `z1` when it falls below.
pub fn sample_candidate(cfg: &TuneConfig, index: u64) -> PiecewiseLinearShape {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let (lo, hi) = cfg.bounds();
    let mut p = [0.0; 7];
    for j in 0..7 {
        let u: f64 = rng.random();
        p[j] = if lo[j] == hi[j] { lo[j] } else { lo[j] + (hi[j] - lo[j]) * u };
    }
    cfg.build(p)
}

/// Shapes both sets, scores them through `head`, and reports detection metrics.
pub fn evaluate_shape(
    shape: &PiecewiseLinearShape,
    id: &FeatureMatrix,
    ood: &FeatureMatrix,
    head: &ClassifierHead,
    temperature: f64,
) -> Result<EvalReport> {
    let s_id = energy_score(head, &apply(shape, id), temperature)?;
    let s_ood = energy_score(head, &apply(shape, ood), temperature)?;
    evaluate(&ScoreSet::new(s_id, s_ood)?)
}

/// Lower FPR95 wins; AUROC breaks exact FPR ties.
fn better(a: &EvalReport, b: &EvalReport) -> bool {
    a.fpr95 < b.fpr95 || (a.fpr95 == b.fpr95 && a.auroc > b.auroc)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub shape: PiecewiseLinearShape,
    pub report: EvalReport,
    pub evaluations: usize,
}

pub fn tune_piecewise(
    val_id: &FeatureMatrix,
    val_ood: &FeatureMatrix,
    head: &ClassifierHead,
    cfg: &TuneConfig,
) -> Result<TuneResult> {
    cfg.validate()?;
    if val_id.rows() == 0 {
        return Err(Error::Empty("ID validation set"));
    }
    if val_ood.rows() == 0 {
        return Err(Error::Empty("OOD validation set"));
    }
    let objective = |s: &PiecewiseLinearShape| evaluate_shape(s, val_id, val_ood, head, cfg.temperature);
    let (n_random, mut remaining) = cfg.split();

    let reports = (0..n_random as u64)
        .into_par_iter()
        .map(|i| {
            let s = sample_candidate(cfg, i);
            objective(&s).map(|r| (s, r))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut evaluations = reports.len();
    let (mut best, mut best_report) = reports[0];
    for (s, r) in &reports[1..] {
        if better(r, &best_report) {
            best = *s;
            best_report = *r;
        }
    }

    let (lo, hi) = cfg.bounds();
    let free: Vec<usize> = (0..7).filter(|&j| lo[j] < hi[j]).collect();
    let mut visit = 0;
    while remaining > 0 && !free.is_empty() {
        let j = free[visit % free.len()];
        visit += 1;
        let steps = cfg.refine_steps.max(2).min(remaining);
        let base = best.to_array();
        let mut eval_at = |x: f64| -> Result<(PiecewiseLinearShape, EvalReport)> {
            let mut p = base;
            p[j] = x;
            let s = cfg.build(p);
            evaluations += 1;
            objective(&s).map(|r| (s, r))
        };
        let (mut a, mut b) = (lo[j], hi[j]);
        let mut c = b - GOLDEN * (b - a);
        let mut d = a + GOLDEN * (b - a);
        let mut fc = eval_at(c)?;
        let mut used = 1;
        let mut fd = if steps >= 2 {
            used += 1;
            Some(eval_at(d)?)
        } else {
            None
        };
        let mut round_best = fc;
        if let Some(x) = fd {
            if better(&x.1, &round_best.1) {
                round_best = x;
            }
        }
        while used < steps {
            let (Some(dv), cv) = (fd, fc) else { break };
            if better(&cv.1, &dv.1) {
                b = d;
                d = c;
                fd = Some(cv);
                c = b - GOLDEN * (b - a);
                fc = eval_at(c)?;
                if better(&fc.1, &round_best.1) {
                    round_best = fc;
                }
            } else {
                a = c;
                c = d;
                fc = dv;
                d = a + GOLDEN * (b - a);
                let x = eval_at(d)?;
                fd = Some(x);
                if better(&x.1, &round_best.1) {
                    round_best = x;
                }
            }
            used += 1;
        }
        remaining -= used;
        if better(&round_best.1, &best_report) {
            best = round_best.0;
            best_report = round_best.1;
        }
    }

    Ok(TuneResult { shape: best, report: best_report, evaluations })
}
