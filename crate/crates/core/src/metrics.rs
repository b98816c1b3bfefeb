//! AUC-ROC, best F1 and mean precision@k, evaluated on activation pairs.

use std::cmp::Ordering;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::data::ActivationSet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationSet<T> {
    pub scores: Vec<T>,
    pub labels: Vec<u8>,
    /// (country, product) of each entry, when known.
    pub keys: Option<Vec<(usize, usize)>>,
}

impl<T: Scalar> EvaluationSet<T> {
    pub fn new(scores: Vec<T>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::shape(format!("{} scores for {} labels", scores.len(), labels.len())));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::param("labels must be binary (0/1)"));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::param("scores must be finite"));
        }
        Ok(Self { scores, labels, keys: None })
    }

    /// Entries of `scores`/`truth` at the activation pairs, row-major.
    pub fn from_activations(scores: ArrayView2<'_, T>, truth: ArrayView2<'_, u8>, mask: &ActivationSet) -> Result<Self> {
        if scores.dim() != truth.dim() || scores.dim() != mask.mask.dim() {
            return Err(Error::shape(format!(
                "scores {:?}, truth {:?}, activations {:?}",
                scores.dim(),
                truth.dim(),
                mask.mask.dim()
            )));
        }
        let keys: Vec<(usize, usize)> = mask.pairs().collect();
        let mut ev = Self::new(keys.iter().map(|&ix| scores[ix]).collect(), keys.iter().map(|&ix| truth[ix]).collect())?;
        ev.keys = Some(keys);
        Ok(ev)
    }

    pub fn n_pos(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn n_neg(&self) -> usize {
        self.labels.len() - self.n_pos()
    }

    /// Indices sorted by descending score.
    fn descending(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| cmp_desc(self.scores[a], self.scores[b]));
        idx
    }
}

fn cmp_desc<T: Scalar>(a: T, b: T) -> Ordering {
    b.partial_cmp(&a).expect("finite scores")
}

/// Groups of equal score in descending order, as (positives, negatives, score).
fn tie_groups<T: Scalar>(ev: &EvaluationSet<T>) -> Vec<(u64, u64, T)> {
    let mut groups: Vec<(u64, u64, T)> = Vec::new();
    for i in ev.descending() {
        let s = ev.scores[i];
        match groups.last_mut() {
            Some(g) if g.2 == s => {}
            _ => groups.push((0, 0, s)),
        }
        let g = groups.last_mut().expect("pushed above");
        if ev.labels[i] == 1 { g.0 += 1 } else { g.1 += 1 }
    }
    groups
}

/// P(score of a random positive > score of a random negative), ties ½.
pub fn auc_roc<T: Scalar>(ev: &EvaluationSet<T>) -> Result<T> {
    let (p, n) = (ev.n_pos() as u128, ev.n_neg() as u128);
    if p == 0 || n == 0 {
        return Err(Error::UndefinedMetric("AUC needs both positive and negative labels".into()));
    }
    // twice the Mann–Whitney U, accumulated exactly
    let mut twice_u: u128 = 0;
    let mut neg_below = n;
    for (gp, gn, _) in tie_groups(ev) {
        let (gp, gn) = (gp as u128, gn as u128);
        neg_below -= gn;
        twice_u += 2 * gp * neg_below + gp * gn;
    }
    Ok(T::lit(twice_u as f64 / (2 * p * n) as f64))
}

/// Best F1 over thresholds at the distinct scores (positive iff score ≥ t),
/// with the smallest threshold attaining it.
pub fn best_f1<T: Scalar>(ev: &EvaluationSet<T>) -> Result<(T, T)> {
    let p = ev.n_pos() as u64;
    if p == 0 {
        return Err(Error::UndefinedMetric("F1 needs at least one positive label".into()));
    }
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut best: Option<(f64, T)> = None;
    for (gp, gn, s) in tie_groups(ev) {
        tp += gp;
        fp += gn;
        let f1 = f1_from_counts(tp, fp, p - tp);
        if best.is_none_or(|(b, _)| f1 >= b) {
            best = Some((f1, s));
        }
    }
    let (f1, t) = best.ok_or_else(|| Error::UndefinedMetric("empty evaluation set".into()))?;
    Ok((T::lit(f1), t))
}

/// 2TP / (2TP + FP + FN): the harmonic mean of precision and recall.
pub fn f1_from_counts(tp: u64, fp: u64, fn_: u64) -> f64 {
    let den = 2 * tp + fp + fn_;
    if den == 0 { 0.0 } else { (2 * tp) as f64 / den as f64 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionAtK {
    pub k: usize,
    pub value: f64,
    pub n_countries: usize,
    /// Countries with fewer than k candidates.
    pub skipped: Vec<usize>,
}

/// Per country, precision among its k best-scored candidate pairs (ties by
/// product index), averaged over countries with at least k candidates.
pub fn mean_precision_at_k<T: Scalar>(
    scores: ArrayView2<'_, T>,
    truth: ArrayView2<'_, u8>,
    mask: &ActivationSet,
    k: usize,
) -> Result<PrecisionAtK> {
    if k == 0 {
        return Err(Error::param("k must be positive"));
    }
    if scores.dim() != truth.dim() || scores.dim() != mask.mask.dim() {
        return Err(Error::shape("scores, truth and activations must share a shape"));
    }
    let mut total = 0.0;
    let mut n_countries = 0;
    let mut skipped = Vec::new();
    for c in 0..scores.nrows() {
        let mut cand: Vec<usize> = (0..scores.ncols()).filter(|&p| mask.contains(c, p)).collect();
        if cand.len() < k {
            skipped.push(c);
            continue;
        }
        cand.sort_by(|&a, &b| cmp_desc(scores[[c, a]], scores[[c, b]]).then(a.cmp(&b)));
        let hits = cand[..k].iter().filter(|&&p| truth[[c, p]] == 1).count();
        total += hits as f64 / k as f64;
        n_countries += 1;
    }
    if n_countries == 0 {
        return Err(Error::UndefinedMetric(format!("no country has {k} candidate activations")));
    }
    Ok(PrecisionAtK { k, value: total / n_countries as f64, n_countries, skipped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub n_countries: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

/// AUC, best F1 and mP@k of a score matrix on the activation pairs.
pub fn evaluate_on_activations<T: Scalar>(
    scores: ArrayView2<'_, T>,
    truth: ArrayView2<'_, u8>,
    mask: &ActivationSet,
    k: usize,
) -> Result<Vec<MetricReport>> {
    let ev = EvaluationSet::from_activations(scores, truth, mask)?;
    let (n_pos, n_neg) = (ev.n_pos(), ev.n_neg());
    let countries = ev.keys.as_ref().map(|ks| {
        let mut c: Vec<usize> = ks.iter().map(|k| k.0).collect();
        c.dedup();
        c.len()
    });
    let n_countries = countries.unwrap_or(0);
    let auc = auc_roc(&ev)?;
    let (f1, t) = best_f1(&ev)?;
    let pk = mean_precision_at_k(scores, truth, mask, k)?;
    let report = |metric: String, value: f64, n_countries, threshold| MetricReport {
        metric,
        value,
        n_pos,
        n_neg,
        n_countries,
        threshold,
    };
    Ok(vec![
        report("auc_roc".into(), auc.as_f64(), n_countries, None),
        report("best_f1".into(), f1.as_f64(), n_countries, Some(t.as_f64())),
        report(format!("mean_precision_at_{k}"), pk.value, pk.n_countries, None),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn ev(scores: &[f64], labels: &[u8]) -> EvaluationSet<f64> {
        EvaluationSet::new(scores.to_vec(), labels.to_vec()).unwrap()
    }

    fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &a) in scores.iter().enumerate() {
            for (j, &b) in scores.iter().enumerate() {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    wins += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc_roc(&ev(&[0.9, 0.8, 0.1, 0.0], &[1, 1, 0, 0])).unwrap(), 1.0);
        assert_eq!(auc_roc(&ev(&[0.3; 6], &[1, 0, 1, 0, 0, 1])).unwrap(), 0.5);
        assert!(matches!(auc_roc(&ev(&[0.1, 0.2], &[1, 1])), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn f1_examples() {
        let (f, t) = best_f1(&ev(&[0.9, 0.8, 0.1, 0.0], &[1, 1, 0, 0])).unwrap();
        assert_eq!((f, t), (1.0, 0.8));
        // all ties with positive rate q = 2/5: 2q/(1+q)
        let (f, t) = best_f1(&ev(&[0.5; 5], &[1, 0, 1, 0, 0])).unwrap();
        assert_eq!(t, 0.5);
        assert!((f - 2.0 * 0.4 / 1.4).abs() < 1e-15);
        assert!(best_f1(&ev(&[0.1], &[0])).is_err());
    }

    #[test]
    fn precision_at_k_examples() {
        let mut mask = ActivationSet { mask: Array2::from_elem((2, 12), true), training_window: (0, 0), target_year: 1 };
        let scores = Array2::from_shape_fn((2, 12), |(c, p)| if c == 0 { p as f64 } else { 0.5 });
        let mut truth = Array2::zeros((2, 12));
        for p in 2..12 {
            truth[[0, p]] = 1;
        }
        // country 1: exactly ten candidates, three of them true
        for p in 10..12 {
            mask.mask[[1, p]] = false;
        }
        for p in [0, 4, 7] {
            truth[[1, p]] = 1;
        }
        let r = mean_precision_at_k(scores.view(), truth.view(), &mask, 10).unwrap();
        assert_eq!(r.n_countries, 2);
        assert!((r.value - (1.0 + 0.3) / 2.0).abs() < 1e-15);
        mask.mask[[1, 0]] = false;
        let r = mean_precision_at_k(scores.view(), truth.view(), &mask, 10).unwrap();
        assert_eq!((r.value, r.skipped.clone()), (1.0, vec![1]));
        mask.mask.fill(false);
        assert!(mean_precision_at_k(scores.view(), truth.view(), &mask, 10).is_err());
    }

    #[test]
    fn precision_ties_break_by_product_index() {
        let mask = ActivationSet { mask: Array2::from_elem((1, 4), true), training_window: (0, 0), target_year: 1 };
        let scores = Array2::from_elem((1, 4), 0.5);
        let truth = Array2::from_shape_vec((1, 4), vec![1, 0, 0, 1]).unwrap();
        let r = mean_precision_at_k(scores.view(), truth.view(), &mask, 1).unwrap();
        assert_eq!(r.value, 1.0);
    }

    #[test]
    fn report_has_three_metrics() {
        let mask = ActivationSet { mask: Array2::from_elem((2, 3), true), training_window: (0, 0), target_year: 1 };
        let scores = Array2::from_shape_vec((2, 3), vec![0.9, 0.1, 0.5, 0.2, 0.8, 0.3]).unwrap();
        let truth = Array2::from_shape_vec((2, 3), vec![1, 0, 0, 0, 1, 0]).unwrap();
        let r = evaluate_on_activations(scores.view(), truth.view(), &mask, 1).unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!(r[0].value, 1.0);
        assert_eq!((r[0].n_pos, r[0].n_neg, r[0].n_countries), (2, 4, 2));
        assert_eq!(r[1].threshold, Some(0.8));
        let json = serde_json::to_string(&r[0]).unwrap();
        assert!(!json.contains("threshold"));
    }

    fn set() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
        (2usize..60).prop_flat_map(|n| {
            (prop::collection::vec((0u8..8).prop_map(|v| v as f64 / 8.0), n), prop::collection::vec(0u8..2, n))
        })
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_count((s, l) in set()) {
            prop_assume!(l.contains(&0) && l.contains(&1));
            prop_assert_eq!(auc_roc(&ev(&s, &l)).unwrap(), pairwise_auc(&s, &l));
        }

        #[test]
        fn auc_of_negated_scores_is_complement(s in prop::collection::hash_set(0u32..10_000, 2..40), seed in any::<u64>()) {
            let s: Vec<f64> = s.into_iter().map(f64::from).collect();
            let l: Vec<u8> = (0..s.len()).map(|i| ((seed >> (i % 64)) & 1) as u8).collect();
            prop_assume!(l.contains(&0) && l.contains(&1));
            let neg: Vec<f64> = s.iter().map(|v| -v).collect();
            let sum = auc_roc(&ev(&s, &l)).unwrap() + auc_roc(&ev(&neg, &l)).unwrap();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }

        #[test]
        fn metrics_invariant_under_monotone_maps((s, l) in set()) {
            prop_assume!(l.contains(&0) && l.contains(&1));
            let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() + 1.0).collect();
            prop_assert_eq!(auc_roc(&ev(&s, &l)).unwrap(), auc_roc(&ev(&t, &l)).unwrap());
            prop_assert_eq!(best_f1(&ev(&s, &l)).unwrap().0, best_f1(&ev(&t, &l)).unwrap().0);
        }

        #[test]
        fn best_f1_dominates_every_threshold((s, l) in set()) {
            prop_assume!(l.contains(&1));
            let (best, _) = best_f1(&ev(&s, &l)).unwrap();
            for &t in &s {
                let tp = s.iter().zip(&l).filter(|(v, y)| **v >= t && **y == 1).count() as u64;
                let fp = s.iter().zip(&l).filter(|(v, y)| **v >= t && **y == 0).count() as u64;
                let fn_ = l.iter().filter(|&&y| y == 1).count() as u64 - tp;
                prop_assert!(best >= f1_from_counts(tp, fp, fn_));
            }
        }
    }
}
