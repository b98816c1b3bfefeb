//! Permutation-null validation of Gini importances.
//!
//! A feature survives when its importance beats the null distribution of
//! importances obtained from forests trained on shuffled labels in at least
//! `pass_fraction` of the repeated fits.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{train_forest, ForestParams, TrainingMatrix};
use crate::rng::{derive_seed, tag, task_rng};
use crate::scalar::Scalar;

/// How per-fold results are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FoldAggregation {
    /// Average importance and null vectors over folds, then compute p-values.
    #[default]
    AverageImportances,
    /// Compute p-values per fold and average them.
    AveragePValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationParams {
    pub n_rep: usize,
    pub n_perm: usize,
    pub alpha: f64,
    pub pass_fraction: f64,
    pub fold_aggregation: FoldAggregation,
}

impl Default for ValidationParams {
    fn default() -> Self {
        Self { n_rep: 50, n_perm: 500, alpha: 0.05, pass_fraction: 0.95, fold_aggregation: FoldAggregation::default() }
    }
}

impl ValidationParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_rep == 0 || self.n_perm == 0 {
            return Err(Error::param("n_rep and n_perm must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::param("alpha must lie in (0, 1]"));
        }
        if !(self.pass_fraction > 0.0 && self.pass_fraction <= 1.0) {
            return Err(Error::param("pass_fraction must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Number of repetitions that must pass: ⌈pass_fraction · n_rep⌉.
    pub fn required_passes(&self) -> usize {
        required_passes(self.pass_fraction, self.n_rep)
    }
}

fn required_passes(pass_fraction: f64, n_rep: usize) -> usize {
    // guard against 0.95 * 20 = 19.000000000000004
    ((pass_fraction * n_rep as f64) - 1e-9).ceil().max(0.0) as usize
}

/// `n_perm × V` null importances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullDistribution<T> {
    pub samples: Array2<T>,
}

impl<T: Scalar> NullDistribution<T> {
    pub fn n_perm(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.samples.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidatedImportance<T> {
    pub target: String,
    pub mean_importance: Vec<T>,
    pub p_value_pass_counts: Vec<usize>,
    pub validated_mask: Vec<bool>,
    pub n_rep: usize,
}

impl<T: Scalar> ValidatedImportance<T> {
    pub fn n_validated(&self) -> usize {
        self.validated_mask.iter().filter(|&&k| k).count()
    }
}

/// Importances of `n_rep` forests that differ only in their seed.
pub fn repeated_importances<T: Scalar>(
    x: &TrainingMatrix,
    y: &[u8],
    n_rep: usize,
    params: &ForestParams,
    seed: u64,
) -> Result<Vec<Vec<T>>> {
    (0..n_rep)
        .into_par_iter()
        .map(|n| {
            let f = train_forest::<T>(x, y, params, derive_seed(seed, &[tag("rep"), n as u64]))?;
            Ok(f.gini_importance())
        })
        .collect()
}

/// Importances of forests trained on independently shuffled labels.
pub fn null_importances<T: Scalar>(
    x: &TrainingMatrix,
    y: &[u8],
    n_perm: usize,
    params: &ForestParams,
    seed: u64,
) -> Result<NullDistribution<T>> {
    let rows: Vec<Vec<T>> = (0..n_perm)
        .into_par_iter()
        .map(|m| {
            let mut shuffled = y.to_vec();
            shuffled.shuffle(&mut task_rng(seed, &[tag("perm"), m as u64]));
            let f = train_forest::<T>(x, &shuffled, params, derive_seed(seed, &[tag("null-forest"), m as u64]))?;
            Ok(f.gini_importance())
        })
        .collect::<Result<_>>()?;
    Ok(NullDistribution { samples: stack(&rows, x.n_features())? })
}

fn stack<T: Scalar>(rows: &[Vec<T>], v: usize) -> Result<Array2<T>> {
    let flat: Vec<T> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), v), flat).map_err(|e| Error::shape(e.to_string()))
}

/// pv[n][j] = #{m : ni_m[j] > gi_n[j]} / n_perm.
pub fn p_values<T: Scalar>(gi: &[Vec<T>], nulls: &NullDistribution<T>) -> Result<Array2<T>> {
    let v = nulls.n_features();
    let n_perm = nulls.n_perm();
    if n_perm == 0 {
        return Err(Error::param("empty null distribution"));
    }
    if let Some(bad) = gi.iter().find(|g| g.len() != v) {
        return Err(Error::shape(format!("importance vector of length {}, nulls have {v} features", bad.len())));
    }
    // sort each null column once; the count is then a binary search
    let sorted: Vec<Vec<T>> = (0..v)
        .map(|j| {
            let mut c = nulls.samples.column(j).to_vec();
            c.sort_by(|a, b| a.partial_cmp(b).expect("finite importances"));
            c
        })
        .collect();
    let denom = T::from_count(n_perm);
    let mut pv = Array2::zeros((gi.len(), v));
    for (n, g) in gi.iter().enumerate() {
        for j in 0..v {
            let col = &sorted[j];
            let not_greater = col.partition_point(|&x| x <= g[j]);
            pv[[n, j]] = T::from_count(n_perm - not_greater) / denom;
        }
    }
    Ok(pv)
}

/// Keep feature j iff at least ⌈pass_fraction · n_rep⌉ of its p-values fall
/// below `alpha`; kept features carry their mean importance, the rest zero.
pub fn validate<T: Scalar>(
    target: &str,
    gi: &[Vec<T>],
    pv: &Array2<T>,
    alpha: f64,
    pass_fraction: f64,
) -> Result<ValidatedImportance<T>> {
    let n_rep = gi.len();
    if n_rep == 0 {
        return Err(Error::param("no importance repetitions"));
    }
    if pv.nrows() != n_rep {
        return Err(Error::shape(format!("{} p-value rows for {n_rep} repetitions", pv.nrows())));
    }
    let v = pv.ncols();
    if gi.iter().any(|g| g.len() != v) {
        return Err(Error::shape("importance vectors and p-values disagree on V"));
    }
    let need = required_passes(pass_fraction, n_rep);
    let alpha = T::lit(alpha);
    let reps = T::from_count(n_rep);
    let mut mean_importance = vec![T::zero(); v];
    let mut p_value_pass_counts = vec![0; v];
    let mut validated_mask = vec![false; v];
    for j in 0..v {
        let mean = gi.iter().map(|g| g[j]).sum::<T>() / reps;
        let passes = pv.column(j).iter().filter(|&&p| p < alpha).count();
        p_value_pass_counts[j] = passes;
        // a feature no forest ever split on explains nothing, whatever its p-value
        if passes >= need && mean > T::zero() {
            validated_mask[j] = true;
            mean_importance[j] = mean;
        }
    }
    Ok(ValidatedImportance { target: target.to_string(), mean_importance, p_value_pass_counts, validated_mask, n_rep })
}

/// Full procedure on a single training set.
pub fn validate_importances<T: Scalar>(
    target: &str,
    x: &TrainingMatrix,
    y: &[u8],
    forest: &ForestParams,
    params: &ValidationParams,
    seed: u64,
) -> Result<ValidatedImportance<T>> {
    validate_folds(target, &[(x, y)], forest, params, seed)
}

/// Steps 1–2 on each fold's training set, combined as configured, then
/// steps 3–4 on the combined vectors.
pub fn validate_folds<T: Scalar>(
    target: &str,
    folds: &[(&TrainingMatrix, &[u8])],
    forest: &ForestParams,
    params: &ValidationParams,
    seed: u64,
) -> Result<ValidatedImportance<T>> {
    params.validate()?;
    let Some((first, _)) = folds.first() else {
        return Err(Error::param("no folds to validate"));
    };
    let v = first.n_features();
    if folds.iter().any(|(x, _)| x.n_features() != v) {
        return Err(Error::shape("folds disagree on the number of features"));
    }
    let per_fold: Vec<(Vec<Vec<T>>, NullDistribution<T>)> = folds
        .par_iter()
        .enumerate()
        .map(|(k, (x, y))| {
            let s = derive_seed(seed, &[tag("fold"), k as u64]);
            let gi = repeated_importances::<T>(x, y, params.n_rep, forest, s)?;
            let ni = null_importances::<T>(x, y, params.n_perm, forest, s)?;
            Ok((gi, ni))
        })
        .collect::<Result<_>>()?;
    let k = T::from_count(folds.len());
    let mut gi = vec![vec![T::zero(); v]; params.n_rep];
    for (g, _) in &per_fold {
        for (acc, row) in gi.iter_mut().zip(g) {
            acc.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
        }
    }
    gi.iter_mut().flatten().for_each(|a| *a /= k);
    let pv = match params.fold_aggregation {
        FoldAggregation::AverageImportances => {
            let mut samples = Array2::zeros((params.n_perm, v));
            for (_, ni) in &per_fold {
                samples += &ni.samples;
            }
            samples.mapv_inplace(|a| a / k);
            p_values(&gi, &NullDistribution { samples })?
        }
        FoldAggregation::AveragePValues => {
            let mut pv = Array2::zeros((params.n_rep, v));
            for (g, ni) in &per_fold {
                pv += &p_values(g, ni)?;
            }
            pv.mapv_inplace(|a| a / k);
            pv
        }
    };
    validate(target, &gi, &pv, params.alpha, params.pass_fraction)
}
