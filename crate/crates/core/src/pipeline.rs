//! Training-set assembly across years, country cross-validation, and the
//! full score and explainer matrices.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{find_activations, ActivationSet, CompetitivenessSeries, DigitLevel};
use crate::error::{Error, Result};
use crate::forest::{train_forest, ForestParams, TrainingMatrix};
use crate::rng::{derive_seed, tag, task_rng};
use crate::scalar::Scalar;
use crate::validation::{validate_folds, ValidatedImportance, ValidationParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecastConfig {
    pub delta: i32,
    /// First year of the window; the first available year when unset.
    pub y0: Option<i32>,
    /// Target year; the last available year when unset.
    pub yf: Option<i32>,
    pub n_folds: usize,
    pub target_level: DigitLevel,
    pub forest: ForestParams,
    pub validation: ValidationParams,
    pub seed: u64,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            delta: 5,
            y0: None,
            yf: None,
            n_folds: 13,
            target_level: DigitLevel::Two,
            forest: ForestParams::default(),
            validation: ValidationParams::default(),
            seed: 0,
        }
    }
}

/// The resolved time window of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub y0: i32,
    pub yf: i32,
    pub delta: i32,
}

impl Window {
    /// Feature years of the stacked training rows.
    pub fn train_years(&self) -> std::ops::RangeInclusive<i32> {
        self.y0..=self.yf - 2 * self.delta
    }

    /// Year of the test features, and the last year training may see.
    pub fn test_feature_year(&self) -> i32 {
        self.yf - self.delta
    }
}

impl ForecastConfig {
    pub fn window<T: Scalar>(&self, series: &CompetitivenessSeries<T>) -> Result<Window> {
        let (Some(&first), Some(&last)) = (series.years.first(), series.years.last()) else {
            return Err(Error::Data("empty series".into()));
        };
        let w = Window { y0: self.y0.unwrap_or(first), yf: self.yf.unwrap_or(last), delta: self.delta };
        if w.delta < 1 {
            return Err(Error::param("delta must be at least one year"));
        }
        if w.yf - w.y0 < 2 * w.delta {
            return Err(Error::param(format!(
                "window {}–{} is shorter than 2·delta = {}",
                w.y0,
                w.yf,
                2 * w.delta
            )));
        }
        if self.n_folds == 0 {
            return Err(Error::param("n_folds must be positive"));
        }
        Ok(w)
    }
}

/// Forecast scores for the target year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix<T> {
    pub year: i32,
    pub countries: Vec<String>,
    pub products: Vec<String>,
    pub scores: Array2<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub x_train: Array2<u8>,
    pub y_train: Vec<u8>,
    /// (country index, feature year) of each training row.
    pub row_keys: Vec<(usize, i32)>,
    pub x_test: Array2<u8>,
    pub y_test: Vec<u8>,
}

fn check_aligned<T: Scalar>(features: &CompetitivenessSeries<T>, targets: &CompetitivenessSeries<T>) -> Result<()> {
    if features.countries != targets.countries {
        return Err(Error::shape("feature and target series list different countries"));
    }
    Ok(())
}

/// Rows (country ∈ `countries`, year ∈ train years), year-major.
fn stacked_rows<T: Scalar>(
    features: &CompetitivenessSeries<T>,
    w: &Window,
    countries: &[usize],
) -> Result<(Array2<u8>, Vec<(usize, i32)>)> {
    let years: Vec<i32> = w.train_years().collect();
    let v = features.products.len();
    let mut x = Array2::zeros((years.len() * countries.len(), v));
    let mut keys = Vec::with_capacity(x.nrows());
    let mut r = 0;
    for &y in &years {
        let m = &features.m(y)?.entries;
        for &c in countries {
            x.row_mut(r).assign(&m.row(c));
            keys.push((c, y));
            r += 1;
        }
    }
    Ok((x, keys))
}

fn stacked_labels<T: Scalar>(
    targets: &CompetitivenessSeries<T>,
    target: usize,
    w: &Window,
    keys: &[(usize, i32)],
) -> Result<Vec<u8>> {
    let mut cache: Option<(i32, &Array2<u8>)> = None;
    keys.iter()
        .map(|&(c, y)| {
            let ly = y + w.delta;
            let m = match cache {
                Some((cy, m)) if cy == ly => m,
                _ => {
                    let m = &targets.m(ly)?.entries;
                    cache = Some((ly, m));
                    m
                }
            };
            Ok(m[[c, target]])
        })
        .collect()
}

/// X_train stacks M(y) for y ∈ [y0, yf−2δ]; y_train is column `target` of
/// M(y+δ); the test pair is M(yf−δ) and column `target` of M(yf).
pub fn build_training_set<T: Scalar>(
    features: &CompetitivenessSeries<T>,
    targets: &CompetitivenessSeries<T>,
    target: usize,
    cfg: &ForecastConfig,
) -> Result<TrainingSet> {
    check_aligned(features, targets)?;
    if target >= targets.products.len() {
        return Err(Error::shape(format!("target {target} out of {} products", targets.products.len())));
    }
    let w = cfg.window(features)?;
    let all: Vec<usize> = (0..features.countries.len()).collect();
    let (x_train, row_keys) = stacked_rows(features, &w, &all)?;
    let y_train = stacked_labels(targets, target, &w, &row_keys)?;
    let x_test = features.m(w.test_feature_year())?.entries.clone();
    let y_test = targets.m(w.yf)?.entries.column(target).to_vec();
    Ok(TrainingSet { x_train, y_train, row_keys, x_test, y_test })
}

/// Near-equal partition of the countries into `n_folds` groups. The
/// assignment depends only on the set of country codes and the seed, not on
/// their order; each group lists indices sorted by code.
pub fn country_folds(countries: &[String], n_folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let n = countries.len();
    if n_folds == 0 || n_folds > n {
        return Err(Error::param(format!("cannot split {n} countries into {n_folds} folds")));
    }
    let mut order = canonical_order(countries);
    order.shuffle(&mut task_rng(seed, &[tag("folds")]));
    Ok((0..n_folds)
        .map(|k| {
            let mut g = order[k * n / n_folds..(k + 1) * n / n_folds].to_vec();
            g.sort_by(|&a, &b| countries[a].cmp(&countries[b]));
            g
        })
        .collect())
}

fn canonical_order(countries: &[String]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..countries.len()).collect();
    order.sort_by(|&a, &b| countries[a].cmp(&countries[b]));
    order
}

/// Per-fold training matrices, shared by every target.
struct FoldData {
    members: Vec<Vec<usize>>,
    train: Vec<(TrainingMatrix, Vec<(usize, i32)>)>,
}

fn fold_data<T: Scalar>(features: &CompetitivenessSeries<T>, w: &Window, cfg: &ForecastConfig) -> Result<FoldData> {
    let members = country_folds(&features.countries, cfg.n_folds, cfg.seed)?;
    let canonical = canonical_order(&features.countries);
    let train = members
        .iter()
        .map(|held_out| {
            let rest: Vec<usize> = canonical.iter().copied().filter(|c| !held_out.contains(c)).collect();
            if rest.is_empty() {
                return Err(Error::param("a fold leaves no training countries"));
            }
            let (x, keys) = stacked_rows(features, w, &rest)?;
            Ok((TrainingMatrix::new(x.view())?, keys))
        })
        .collect::<Result<_>>()?;
    Ok(FoldData { members, train })
}

/// Cross-validated forecast: for each target and fold, a forest trained on
/// the other folds' countries scores the fold's countries from M(yf−δ).
/// Only years up to yf−δ are read.
pub fn run_forecast<T: Scalar>(
    features: &CompetitivenessSeries<T>,
    targets: &CompetitivenessSeries<T>,
    cfg: &ForecastConfig,
) -> Result<ScoreMatrix<T>> {
    check_aligned(features, targets)?;
    let w = cfg.window(features)?;
    let folds = fold_data(features, &w, cfg)?;
    let x_test = &features.m(w.test_feature_year())?.entries;
    let n_targets = targets.products.len();
    let units: Vec<(usize, usize)> = (0..n_targets).flat_map(|p| (0..cfg.n_folds).map(move |k| (p, k))).collect();
    let results: Vec<Vec<T>> = units
        .par_iter()
        .map(|&(p, k)| {
            let (x, keys) = &folds.train[k];
            let y = stacked_labels(targets, p, &w, keys)?;
            let seed = derive_seed(cfg.seed, &[tag("forecast"), p as u64, k as u64]);
            let forest = train_forest::<T>(x, &y, &cfg.forest, seed)?;
            forest.predict_proba(x_test.select(Axis(0), &folds.members[k]).view())
        })
        .collect::<Result<_>>()?;
    let mut scores = Array2::zeros((features.countries.len(), n_targets));
    for (&(p, k), s) in units.iter().zip(results) {
        for (&c, v) in folds.members[k].iter().zip(s) {
            scores[[c, p]] = v;
        }
    }
    Ok(ScoreMatrix { year: w.yf, countries: features.countries.clone(), products: targets.products.clone(), scores })
}

/// One validated importance vector per target, over the same country folds.
pub fn run_explainers<T: Scalar>(
    features: &CompetitivenessSeries<T>,
    targets: &CompetitivenessSeries<T>,
    cfg: &ForecastConfig,
) -> Result<ExplainerMatrix<T>> {
    check_aligned(features, targets)?;
    if features.products.iter().any(|p| p.len() != 2) {
        return Err(Error::param("explainer features must be 2-digit sectors"));
    }
    let w = cfg.window(features)?;
    let folds = fold_data(features, &w, cfg)?;
    let rows = (0..targets.products.len())
        .into_par_iter()
        .map(|p| {
            let labels: Vec<Vec<u8>> = folds
                .train
                .iter()
                .map(|(_, keys)| stacked_labels(targets, p, &w, keys))
                .collect::<Result<_>>()?;
            let sets: Vec<(&TrainingMatrix, &[u8])> =
                folds.train.iter().zip(&labels).map(|((x, _), y)| (x, y.as_slice())).collect();
            let seed = derive_seed(cfg.seed, &[tag("explain"), p as u64]);
            let v = validate_folds::<T>(&targets.products[p], &sets, &cfg.forest, &cfg.validation, seed);
            log::debug!("validated explainers for {}", targets.products[p]);
            v
        })
        .collect::<Result<_>>()?;
    Ok(ExplainerMatrix { targets: targets.products.clone(), features: features.products.clone(), rows })
}

/// Validated importances, targets × features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainerMatrix<T> {
    pub targets: Vec<String>,
    pub features: Vec<String>,
    pub rows: Vec<ValidatedImportance<T>>,
}

impl<T: Scalar> ExplainerMatrix<T> {
    /// Rows are mean importances with non-validated entries zeroed.
    pub fn matrix(&self) -> Array2<T> {
        let mut m = Array2::zeros((self.targets.len(), self.features.len()));
        for (i, r) in self.rows.iter().enumerate() {
            for (j, &v) in r.mean_importance.iter().enumerate() {
                m[[i, j]] = v;
            }
        }
        m
    }
}

/// Candidate pairs for evaluation: RCA below `low` throughout [y0, yf−δ].
pub fn activation_candidates<T: Scalar>(
    targets: &CompetitivenessSeries<T>,
    cfg: &ForecastConfig,
    low: T,
) -> Result<ActivationSet> {
    let w = cfg.window(targets)?;
    find_activations(&targets.rca_window(w.y0, w.test_feature_year())?, low, w.yf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_world, WorldParams};

    fn world(seed: u64) -> (CompetitivenessSeries<f64>, CompetitivenessSeries<f64>) {
        let p = WorldParams { n_countries: 20, n_products: 12, n_capabilities: 4, n_groups: 2, n_years: 9, seed, ..Default::default() };
        let w = generate_synthetic_world::<f64>(&p).unwrap();
        let f = w.exports.aggregate_to_sectors().unwrap().competitiveness(1.0).unwrap();
        let t = w.exports.competitiveness(1.0).unwrap();
        (f, t)
    }

    fn cfg() -> ForecastConfig {
        ForecastConfig {
            delta: 3,
            n_folds: 4,
            forest: ForestParams { n_trees: 10, ..Default::default() },
            validation: ValidationParams { n_rep: 3, n_perm: 10, ..Default::default() },
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn window_rules() {
        let (f, _) = world(1);
        assert_eq!(cfg().window(&f).unwrap(), Window { y0: 2000, yf: 2008, delta: 3 });
        let c = ForecastConfig { y0: Some(1996), yf: Some(2018), delta: 5, ..Default::default() };
        let w = Window { y0: 1996, yf: 2018, delta: 5 };
        assert_eq!(w.train_years(), 1996..=2008);
        assert_eq!(w.test_feature_year(), 2013);
        assert!(ForecastConfig { delta: 5, ..c.clone() }.window(&f).is_ok());
        assert!(ForecastConfig { delta: 5, y0: Some(2000), yf: Some(2008), ..c }.window(&f).is_err());
    }

    #[test]
    fn training_set_layout() {
        let (f, t) = world(2);
        let c = cfg();
        let s = build_training_set(&f, &t, 3, &c).unwrap();
        // 2000..=2002 feature years
        assert_eq!(s.x_train.nrows(), 20 * 3);
        assert_eq!(s.y_train.len(), 60);
        assert_eq!(s.row_keys[21], (1, 2001));
        assert_eq!(s.x_train.row(21), f.m(2001).unwrap().entries.row(1));
        assert_eq!(s.y_train[21], t.m(2004).unwrap().entries[[1, 3]]);
        assert_eq!(s.x_test, f.m(2005).unwrap().entries);
        assert_eq!(s.y_test, t.m(2008).unwrap().entries.column(3).to_vec());
        // a window exactly 2δ long leaves one training year
        let tight = ForecastConfig { y0: Some(2002), ..c };
        assert_eq!(build_training_set(&f, &t, 3, &tight).unwrap().x_train.nrows(), 20);
    }

    #[test]
    fn missing_year_is_a_data_error() {
        let (f, t) = world(3);
        let c = ForecastConfig { y0: Some(1990), ..cfg() };
        assert!(matches!(build_training_set(&f, &t, 0, &c), Err(Error::Data(_))));
    }

    #[test]
    fn folds_are_near_equal_and_seeded() {
        let names: Vec<String> = (0..169).map(|i| format!("K{i:03}")).collect();
        let folds = country_folds(&names, 13, 1).unwrap();
        assert!(folds.iter().all(|g| g.len() == 13));
        let names: Vec<String> = (0..50).map(|i| format!("K{i:03}")).collect();
        let folds = country_folds(&names, 13, 1).unwrap();
        assert!(folds.iter().all(|g| g.len() == 3 || g.len() == 4));
        let mut all: Vec<usize> = folds.concat();
        all.sort();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        assert_eq!(folds, country_folds(&names, 13, 1).unwrap());
        assert_ne!(folds, country_folds(&names, 13, 2).unwrap());
        assert!(country_folds(&names[..5], 13, 1).is_err());
    }

    #[test]
    fn folds_ignore_country_order() {
        let names: Vec<String> = (0..30).map(|i| format!("K{i:03}")).collect();
        let mut rev = names.clone();
        rev.reverse();
        let a = country_folds(&names, 4, 9).unwrap();
        let b = country_folds(&rev, 4, 9).unwrap();
        for (ga, gb) in a.iter().zip(&b) {
            let ca: Vec<&String> = ga.iter().map(|&i| &names[i]).collect();
            let cb: Vec<&String> = gb.iter().map(|&i| &rev[i]).collect();
            assert_eq!(ca, cb);
        }
    }

    #[test]
    fn forecast_scores_are_probabilities_and_deterministic() {
        let (f, t) = world(4);
        let s = run_forecast(&f, &t, &cfg()).unwrap();
        assert_eq!(s.scores.dim(), (20, 12));
        assert!(s.scores.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(s, run_forecast(&f, &t, &cfg()).unwrap());
    }

    #[test]
    fn forecast_never_reads_beyond_test_features() {
        let (f, t) = world(5);
        let c = ForecastConfig { yf: Some(2008), ..cfg() };
        let full = run_forecast(&f, &t, &c).unwrap();
        let cut = run_forecast(&f.truncated(2005), &t.truncated(2005), &c).unwrap();
        assert_eq!(full, cut);
    }

    #[test]
    fn constant_target_gives_constant_scores() {
        let (f, mut t) = world(6);
        for m in &mut t.m {
            m.entries.column_mut(0).fill(0);
        }
        let s = run_forecast(&f, &t, &cfg()).unwrap();
        assert!(s.scores.column(0).iter().all(|&v| v == 0.0));
        let e = run_explainers(&f, &t, &cfg()).unwrap();
        assert!(e.matrix().row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn permuting_countries_permutes_scores() {
        let (f, t) = world(7);
        let perm: Vec<usize> = (0..20).rev().collect();
        let shuffle = |s: &CompetitivenessSeries<f64>| {
            let mut s = s.clone();
            s.countries = perm.iter().map(|&i| s.countries[i].clone()).collect();
            for m in &mut s.m {
                m.entries = m.entries.select(Axis(0), &perm);
            }
            for r in &mut s.rca {
                r.values = r.values.select(Axis(0), &perm);
            }
            s
        };
        let a = run_forecast(&f, &t, &cfg()).unwrap();
        let b = run_forecast(&shuffle(&f), &shuffle(&t), &cfg()).unwrap();
        assert_eq!(a.scores.select(Axis(0), &perm), b.scores);
    }

    #[test]
    fn fold_models_never_train_on_their_countries() {
        let (f, _) = world(8);
        let c = cfg();
        let w = c.window(&f).unwrap();
        let folds = fold_data(&f, &w, &c).unwrap();
        for (held, (x, keys)) in folds.members.iter().zip(&folds.train) {
            assert!(keys.iter().all(|(k, _)| !held.contains(k)));
            assert_eq!(x.n_rows(), keys.len());
        }
    }

    #[test]
    fn shifted_copy_of_a_feature_dominates() {
        let (f, mut t) = world(9);
        // target p is sector 1 itself, shifted by δ
        for (m, y) in t.m.iter_mut().zip(f.years.clone()) {
            let src = f.m(y - 3).map(|s| s.entries.column(1).to_owned());
            if let Ok(col) = src {
                m.entries.column_mut(2).assign(&col);
            }
        }
        let c = ForecastConfig { validation: ValidationParams { n_rep: 5, n_perm: 20, ..Default::default() }, ..cfg() };
        let e = run_explainers(&f, &t, &c).unwrap();
        let row = e.matrix().row(2).to_vec();
        let best = (0..row.len()).max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap()).unwrap();
        assert_eq!(best, 1, "{row:?}");
    }
}
