//! Energy scoring through a linear classifier head and OOD detection metrics.
//!
//! ID samples are the positive class throughout: higher scores mean "more ID".

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};
use crate::shaping::FeatureMatrix;

/// Default true-positive rate for [`fpr_at_tpr`].
pub const DEFAULT_TPR: f64 = 0.95;

/// Final linear layer: `classes × dim` row-major weights and `classes` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    classes: usize,
    dim: usize,
    weights: Vec<f32>,
    bias: Vec<f32>,
}

impl ClassifierHead {
    pub fn new(classes: usize, dim: usize, weights: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        if classes == 0 || dim == 0 {
            return Err(Error::InvalidParameter("head needs at least one class and one feature".into()));
        }
        if weights.len() != classes * dim {
            return Err(Error::DimensionMismatch { expected: classes * dim, got: weights.len() });
        }
        if bias.len() != classes {
            return Err(Error::DimensionMismatch { expected: classes, got: bias.len() });
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("head entries must be finite".into()));
        }
        Ok(ClassifierHead { classes, dim, weights, bias })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    /// Adds `c` to every bias.
    pub fn shift_bias(&self, c: f32) -> Self {
        ClassifierHead { bias: self.bias.iter().map(|b| b + c).collect(), ..self.clone() }
    }

    fn logits_into(&self, row: &[f32], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            let w = &self.weights[c * self.dim..(c + 1) * self.dim];
            *o = w.iter().zip(row).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum::<f64>() + f64::from(self.bias[c]);
        }
    }

    /// Row-major `rows × classes` logits.
    pub fn logits(&self, f: &FeatureMatrix) -> Result<Vec<f64>> {
        self.check(f)?;
        let mut out = vec![0.0; f.rows() * self.classes];
        out.par_chunks_mut(self.classes).enumerate().for_each(|(i, o)| self.logits_into(f.row(i), o));
        Ok(out)
    }

    fn check(&self, f: &FeatureMatrix) -> Result<()> {
        if f.cols() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: f.cols() });
        }
        Ok(())
    }
}

/// `T · log Σ_c exp(v_c / T)`, shifted by the maximum for stability.
pub fn logsumexp_t(values: &[f64], t: f64) -> f64 {
    let m = values.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b / t));
    if m == f64::NEG_INFINITY {
        return m;
    }
    t * (m + values.iter().map(|v| (v / t - m).exp()).sum::<f64>().ln())
}

/// Per-row energy score `T · logsumexp(logits / T)`.
pub fn energy_score(head: &ClassifierHead, f: &FeatureMatrix, t: f64) -> Result<Vec<f64>> {
    ensure_positive("temperature", t)?;
    head.check(f)?;
    Ok((0..f.rows())
        .into_par_iter()
        .map_init(
            || vec![0.0; head.classes],
            |buf, i| {
                head.logits_into(f.row(i), buf);
                logsumexp_t(buf, t)
            },
        )
        .collect())
}

/// ID and OOD scores for metric computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub id_scores: Vec<f64>,
    pub ood_scores: Vec<f64>,
}

impl ScoreSet {
    pub fn new(id_scores: Vec<f64>, ood_scores: Vec<f64>) -> Result<Self> {
        let s = ScoreSet { id_scores, ood_scores };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.id_scores.is_empty() {
            return Err(Error::Empty("ID scores"));
        }
        if self.ood_scores.is_empty() {
            return Err(Error::Empty("OOD scores"));
        }
        if self.id_scores.iter().chain(&self.ood_scores).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("scores must be finite".into()));
        }
        Ok(())
    }

    /// ID and OOD roles exchanged.
    pub fn swapped(&self) -> Self {
        ScoreSet { id_scores: self.ood_scores.clone(), ood_scores: self.id_scores.clone() }
    }
}

/// Smallest `k` with `k / n >= tpr`.
pub(crate) fn required_count(n: usize, tpr: f64) -> usize {
    let nf = n as f64;
    let mut k = ((tpr * nf).ceil() as usize).clamp(1, n);
    while k > 1 && (k - 1) as f64 / nf >= tpr {
        k -= 1;
    }
    while k < n && (k as f64) / nf < tpr {
        k += 1;
    }
    k
}

/// False positive rate at the largest threshold that keeps at least `tpr` of the ID
/// scores at or above it. Returns `(fpr, threshold)`.
pub fn fpr_at_tpr(s: &ScoreSet, tpr: f64) -> Result<(f64, f64)> {
    s.validate()?;
    if !(tpr > 0.0 && tpr < 1.0) {
        return Err(Error::InvalidParameter(format!("tpr must be in (0, 1), got {tpr}")));
    }
    let mut id = s.id_scores.clone();
    id.sort_unstable_by(|a, b| b.total_cmp(a));
    let tau = id[required_count(id.len(), tpr) - 1];
    let fp = s.ood_scores.iter().filter(|&&v| v >= tau).count();
    Ok((fp as f64 / s.ood_scores.len() as f64, tau))
}

/// Mann–Whitney AUROC `P(id > ood) + ½ P(id = ood)`.
pub fn auroc(s: &ScoreSet) -> Result<f64> {
    s.validate()?;
    let mut ood = s.ood_scores.clone();
    ood.sort_unstable_by(f64::total_cmp);
    // Twice the statistic, kept integral so ties are exact.
    let twice: u128 = s
        .id_scores
        .iter()
        .map(|&x| {
            let below = ood.partition_point(|&o| o < x);
            let at_or_below = ood.partition_point(|&o| o <= x);
            (2 * below + (at_or_below - below)) as u128
        })
        .sum();
    let pairs = 2 * s.id_scores.len() as u128 * s.ood_scores.len() as u128;
    Ok(twice as f64 / pairs as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fpr95: f64,
    pub auroc: f64,
    pub n_id: usize,
    pub n_ood: usize,
    pub threshold: f64,
}

pub fn evaluate(s: &ScoreSet) -> Result<EvalReport> {
    let (fpr95, threshold) = fpr_at_tpr(s, DEFAULT_TPR)?;
    Ok(EvalReport { fpr95, auroc: auroc(s)?, n_id: s.id_scores.len(), n_ood: s.ood_scores.len(), threshold })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Scans every observed score as a threshold.
    pub(crate) fn brute_fpr(s: &ScoreSet, tpr: f64) -> (f64, f64) {
        let n = s.id_scores.len() as f64;
        let mut best: Option<f64> = None;
        for &t in s.id_scores.iter().chain(&s.ood_scores) {
            let frac = s.id_scores.iter().filter(|&&v| v >= t).count() as f64 / n;
            if frac >= tpr && best.is_none_or(|b| t > b) {
                best = Some(t);
            }
        }
        let t = best.unwrap();
        (s.ood_scores.iter().filter(|&&v| v >= t).count() as f64 / s.ood_scores.len() as f64, t)
    }

    pub(crate) fn brute_auroc(s: &ScoreSet) -> f64 {
        let mut twice = 0u128;
        for a in &s.id_scores {
            for b in &s.ood_scores {
                twice += if a > b { 2 } else if a == b { 1 } else { 0 };
            }
        }
        twice as f64 / (2 * s.id_scores.len() as u128 * s.ood_scores.len() as u128) as f64
    }

    #[test]
    fn energy_examples() {
        let head = ClassifierHead::new(1, 1, vec![1.0], vec![0.0]).unwrap();
        let f = FeatureMatrix::from_rows(&[vec![2.5], vec![-1.0]], None).unwrap();
        assert_eq!(energy_score(&head, &f, 1.0).unwrap(), vec![2.5, -1.0]);
        assert!((logsumexp_t(&[0.7, 0.7], 1.0) - (0.7 + 2f64.ln())).abs() < 1e-15);
        assert_eq!(logsumexp_t(&[1000.0, 0.0], 1.0), 1000.0);
        assert!((logsumexp_t(&[3.0, 1.0], 2.0) - 2.0 * (1.5f64.exp() + 0.5f64.exp()).ln()).abs() < 1e-12);
    }

    #[test]
    fn energy_rejects_dimension_mismatch() {
        let head = ClassifierHead::new(2, 3, vec![0.0; 6], vec![0.0; 2]).unwrap();
        let f = FeatureMatrix::from_rows(&[vec![1.0, 2.0]], None).unwrap();
        assert!(matches!(energy_score(&head, &f, 1.0), Err(Error::DimensionMismatch { expected: 3, got: 2 })));
        assert!(ClassifierHead::new(2, 3, vec![0.0; 5], vec![0.0; 2]).is_err());
        assert!(energy_score(&head, &FeatureMatrix::from_rows(&[vec![1.0; 3]], None).unwrap(), 0.0).is_err());
    }

    #[test]
    fn bias_shift_shifts_scores() {
        let head = ClassifierHead::new(3, 2, vec![0.5, -1.0, 2.0, 0.25, -0.75, 1.5], vec![0.1, 0.0, -0.2]).unwrap();
        let f = FeatureMatrix::from_rows(&[vec![1.0, 2.0], vec![-0.5, 0.3]], None).unwrap();
        let a = energy_score(&head, &f, 1.0).unwrap();
        let b = energy_score(&head.shift_bias(2.0), &f, 1.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((y - x - 2.0).abs() < 1e-6);
        }
    }

    #[test]
    fn metric_anchors() {
        let perfect = ScoreSet::new(vec![1.0; 20], vec![0.0; 20]).unwrap();
        assert_eq!(fpr_at_tpr(&perfect, 0.95).unwrap().0, 0.0);
        assert_eq!(auroc(&perfect).unwrap(), 1.0);
        let same = ScoreSet::new(vec![0.1, 0.5, 0.9, 0.3], vec![0.9, 0.3, 0.1, 0.5]).unwrap();
        assert!(fpr_at_tpr(&same, 0.95).unwrap().0 >= 0.95);
        assert_eq!(auroc(&same).unwrap(), 0.5);
        let small = ScoreSet::new(vec![3.0, 1.0], vec![2.0, 0.0]).unwrap();
        assert_eq!(auroc(&small).unwrap(), 0.75);
    }

    #[test]
    fn metrics_reject_empty_sets() {
        let s = ScoreSet { id_scores: vec![], ood_scores: vec![1.0] };
        assert!(matches!(auroc(&s), Err(Error::Empty(_))));
        assert!(matches!(fpr_at_tpr(&s, 0.95), Err(Error::Empty(_))));
        let s = ScoreSet { id_scores: vec![1.0], ood_scores: vec![] };
        assert!(evaluate(&s).is_err());
    }

    #[test]
    fn required_count_edges() {
        assert_eq!(required_count(20, 0.95), 19);
        assert_eq!(required_count(100, 0.95), 95);
        assert_eq!(required_count(1, 0.95), 1);
        assert_eq!(required_count(3, 0.5), 2);
    }

    #[test]
    fn matches_brute_force_seed_11() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let id: Vec<f64> = (0..200).map(|_| rng.random::<f64>() + 0.3).collect();
        let ood: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
        let s = ScoreSet::new(id, ood).unwrap();
        assert_eq!(fpr_at_tpr(&s, 0.95).unwrap(), brute_fpr(&s, 0.95));
        assert_eq!(auroc(&s).unwrap(), brute_auroc(&s));
    }

    fn arb_scores() -> impl Strategy<Value = ScoreSet> {
        // Coarse values force ties.
        let v = proptest::collection::vec((0i32..40).prop_map(|k| k as f64 * 0.25), 1..60);
        (v.clone(), v).prop_map(|(a, b)| ScoreSet::new(a, b).unwrap())
    }

    proptest! {
        #[test]
        fn agrees_with_brute_force(s in arb_scores(), tpr in 0.05..0.99f64) {
            prop_assert_eq!(fpr_at_tpr(&s, tpr).unwrap(), brute_fpr(&s, tpr));
            prop_assert_eq!(auroc(&s).unwrap(), brute_auroc(&s));
        }

        #[test]
        fn auroc_invariant_under_monotone_maps(s in arb_scores()) {
            let f = |v: &Vec<f64>| v.iter().map(|x| (0.7 * x).exp() - 3.0).collect::<Vec<_>>();
            let t = ScoreSet::new(f(&s.id_scores), f(&s.ood_scores)).unwrap();
            prop_assert_eq!(auroc(&s).unwrap(), auroc(&t).unwrap());
        }

        #[test]
        fn auroc_swap_complements(s in arb_scores()) {
            prop_assert!((auroc(&s).unwrap() + auroc(&s.swapped()).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn fpr_monotone_in_tpr(s in arb_scores(), a in 0.05..0.99f64, b in 0.05..0.99f64) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(fpr_at_tpr(&s, lo).unwrap().0 <= fpr_at_tpr(&s, hi).unwrap().0);
        }
    }
}
