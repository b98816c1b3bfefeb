//! Fitness-Complexity of countries and products, and the complexity of a
//! product's validated explainers.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Correctly rounded sum (Shewchuk's exact partials), so that totals do not
/// depend on the order of the terms.
pub(crate) fn exact_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in values {
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    // round the partials, most significant first, with the half-way fix-up
    let mut n = partials.len();
    if n == 0 {
        return 0.0;
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != 0.0 {
            break;
        }
    }
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        if y == x - hi {
            hi = x;
        }
    }
    hi
}

fn sum<T: Scalar>(values: impl IntoIterator<Item = T>) -> T {
    T::lit(exact_sum(values.into_iter().map(Scalar::as_f64)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComplexityParams {
    pub n_iter: usize,
    pub tol: f64,
}

impl Default for ComplexityParams {
    fn default() -> Self {
        Self { n_iter: 1000, tol: 1e-9 }
    }
}

/// Fitness of the countries and complexity of the products that survive
/// pruning of all-zero rows and columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityVector<T> {
    pub fitness: Vec<T>,
    pub complexity: Vec<T>,
    pub countries: Vec<usize>,
    pub products: Vec<usize>,
    pub pruned_countries: Vec<usize>,
    pub pruned_products: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Scalar> ComplexityVector<T> {
    /// Complexity indexed like the input columns; `None` for pruned products.
    pub fn complexity_by_product(&self, n_products: usize) -> Vec<Option<T>> {
        let mut out = vec![None; n_products];
        for (&p, &q) in self.products.iter().zip(&self.complexity) {
            out[p] = Some(q);
        }
        out
    }

    pub fn fitness_by_country(&self, n_countries: usize) -> Vec<Option<T>> {
        let mut out = vec![None; n_countries];
        for (&c, &f) in self.countries.iter().zip(&self.fitness) {
            out[c] = Some(f);
        }
        out
    }
}

fn normalize<T: Scalar>(v: &mut [T]) {
    let mean = sum(v.iter().copied()) / T::from_count(v.len());
    v.iter_mut().for_each(|x| *x /= mean);
}

/// Competition ranks (number of strictly larger entries), so that tied
/// entries share a rank and the result does not depend on index order.
fn ranking<T: Scalar>(v: &[T]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].partial_cmp(&v[a]).expect("finite"));
    let mut rank = vec![0; v.len()];
    for k in 1..idx.len() {
        rank[idx[k]] = if v[idx[k]] == v[idx[k - 1]] { rank[idx[k - 1]] } else { k };
    }
    rank
}

/// F̃_c = Σ_p M_cp Q_p, Q̃_p = 1 / Σ_c M_cp / F_c, both rescaled to mean one
/// each step, from all-ones. Stops once rankings are stable and the largest
/// relative change is below `tol`, or when values leave the representable
/// range (nested matrices drive some of them to zero).
pub fn fitness_complexity<T: Scalar>(m: ArrayView2<'_, u8>, params: &ComplexityParams) -> Result<ComplexityVector<T>> {
    if m.iter().any(|&v| v > 1) {
        return Err(Error::param("competitiveness matrix must be binary"));
    }
    let countries: Vec<usize> = (0..m.nrows()).filter(|&c| m.row(c).iter().any(|&v| v == 1)).collect();
    let products: Vec<usize> = (0..m.ncols()).filter(|&p| m.column(p).iter().any(|&v| v == 1)).collect();
    if countries.is_empty() || products.is_empty() {
        return Err(Error::Degenerate("matrix is empty after pruning".into()));
    }
    let pruned_countries = (0..m.nrows()).filter(|c| !countries.contains(c)).collect();
    let pruned_products = (0..m.ncols()).filter(|p| !products.contains(p)).collect();
    // sparse adjacency in both directions
    let by_country: Vec<Vec<usize>> = countries
        .iter()
        .map(|&c| (0..products.len()).filter(|&j| m[[c, products[j]]] == 1).collect())
        .collect();
    let by_product: Vec<Vec<usize>> = products
        .iter()
        .map(|&p| (0..countries.len()).filter(|&i| m[[countries[i], p]] == 1).collect())
        .collect();

    let mut f = vec![T::one(); countries.len()];
    let mut q = vec![T::one(); products.len()];
    let tol = T::lit(params.tol);
    let (mut rank_f, mut rank_q) = (ranking(&f), ranking(&q));
    let mut converged = false;
    let mut iterations = 0;
    while iterations < params.n_iter {
        let mut nf: Vec<T> = by_country.iter().map(|ps| sum(ps.iter().map(|&j| q[j]))).collect();
        let mut nq: Vec<T> = by_product
            .iter()
            .map(|cs| T::one() / sum(cs.iter().map(|&i| T::one() / f[i])))
            .collect();
        normalize(&mut nf);
        normalize(&mut nq);
        let healthy = |v: &[T]| v.iter().all(|x| x.is_finite() && *x > T::zero());
        if !healthy(&nf) || !healthy(&nq) {
            break;
        }
        iterations += 1;
        let change = |new: &[T], old: &[T]| new.iter().zip(old).map(|(&a, &b)| ((a - b) / b).abs()).fold(T::zero(), T::max);
        let delta = change(&nf, &f).max(change(&nq, &q));
        let (rf, rq) = (ranking(&nf), ranking(&nq));
        let stable = rf == rank_f && rq == rank_q;
        f = nf;
        q = nq;
        rank_f = rf;
        rank_q = rq;
        if stable && delta < tol {
            converged = true;
            break;
        }
    }
    Ok(ComplexityVector { fitness: f, complexity: q, countries, products, pruned_countries, pruned_products, iterations, converged })
}

/// Per product, the mean over years of ln Q_p(y).
pub fn mean_log_complexity<T: Scalar>(series: &[Vec<T>]) -> Result<Vec<T>> {
    let Some(first) = series.first() else {
        return Err(Error::param("no complexity years"));
    };
    let n = first.len();
    if series.iter().any(|q| q.len() != n) {
        return Err(Error::shape("complexity vectors differ in length"));
    }
    if series.iter().flatten().any(|&q| !(q > T::zero()) || !q.is_finite()) {
        return Err(Error::Degenerate("complexity must be positive to take logs".into()));
    }
    let years = T::from_count(series.len());
    Ok((0..n).map(|p| sum(series.iter().map(|q| q[p].ln())) / years).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExplainerWeighting {
    /// Plain mean over validated features.
    #[default]
    Uniform,
    /// Mean weighted by validated importance.
    Importance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveBin<T> {
    /// Mean target complexity in the bin.
    pub center: T,
    pub mean: T,
    pub se: T,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityCurve<T> {
    pub weighting: ExplainerWeighting,
    pub bins: Vec<CurveBin<T>>,
    /// Targets without any validated explainer.
    pub n_excluded: usize,
}

/// Explainer complexity of each target: mean complexity of the features with
/// non-zero validated importance.
pub fn explainer_complexity<T: Scalar>(
    importances: ArrayView2<'_, T>,
    feature_complexity: &[T],
    weighting: ExplainerWeighting,
) -> Result<Vec<Option<T>>> {
    if importances.ncols() != feature_complexity.len() {
        return Err(Error::shape(format!(
            "{} features against {} complexities",
            importances.ncols(),
            feature_complexity.len()
        )));
    }
    Ok(importances
        .rows()
        .into_iter()
        .map(|row| {
            let used: Vec<(T, T)> = row
                .iter()
                .zip(feature_complexity)
                .filter(|(w, _)| **w > T::zero())
                .map(|(&w, &c)| (w, c))
                .collect();
            if used.is_empty() {
                return None;
            }
            Some(match weighting {
                ExplainerWeighting::Uniform => sum(used.iter().map(|u| u.1)) / T::from_count(used.len()),
                ExplainerWeighting::Importance => sum(used.iter().map(|u| u.0 * u.1)) / sum(used.iter().map(|u| u.0)),
            })
        })
        .collect())
}

/// Targets ordered by complexity into `n_bins` equal-count bins; each bin
/// reports the mean explainer complexity and its standard error.
pub fn explainer_complexity_curve<T: Scalar>(
    importances: ArrayView2<'_, T>,
    feature_complexity: &[T],
    target_complexity: &[T],
    n_bins: usize,
    weighting: ExplainerWeighting,
) -> Result<ComplexityCurve<T>> {
    if importances.nrows() != target_complexity.len() {
        return Err(Error::shape("one complexity per target required"));
    }
    let values = explainer_complexity(importances, feature_complexity, weighting)?;
    let mut kept: Vec<usize> = (0..values.len()).filter(|&t| values[t].is_some()).collect();
    let n_excluded = values.len() - kept.len();
    let n = kept.len();
    if n_bins == 0 || n_bins > n {
        return Err(Error::param(format!("{n_bins} bins for {n} targets with explainers")));
    }
    kept.sort_by(|&a, &b| target_complexity[a].partial_cmp(&target_complexity[b]).expect("finite").then(a.cmp(&b)));
    let bins = (0..n_bins)
        .map(|b| {
            let members = &kept[b * n / n_bins..(b + 1) * n / n_bins];
            let k = T::from_count(members.len());
            let ys: Vec<T> = members.iter().map(|&t| values[t].expect("kept")).collect();
            let mean = sum(ys.iter().copied()) / k;
            let se = if members.len() > 1 {
                let var = sum(ys.iter().map(|&y| (y - mean) * (y - mean))) / (k - T::one());
                (var / k).sqrt()
            } else {
                T::zero()
            };
            CurveBin { center: sum(members.iter().map(|&t| target_complexity[t])) / k, mean, se, n: members.len() }
        })
        .collect();
    Ok(ComplexityCurve { weighting, bins, n_excluded })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2, Axis};
    use proptest::prelude::*;
    use rand::Rng;

    use crate::rng::task_rng;

    #[test]
    fn exact_sum_is_order_free() {
        let v = [1e16, 1.0, -1e16, 3.5, 1e-8];
        let mut w = v;
        w.reverse();
        assert_eq!(exact_sum(v), exact_sum(w));
        assert_eq!(exact_sum(v), 4.5 + 1e-8);
        assert_eq!(exact_sum([0.1; 10]), 1.0);
    }

    #[test]
    fn all_ones_is_a_fixed_point() {
        for (r, c) in [(1, 1), (3, 7), (13, 5), (50, 200)] {
            let m = Array2::from_elem((r, c), 1u8);
            let cv = fitness_complexity::<f64>(m.view(), &ComplexityParams::default()).unwrap();
            assert!(cv.fitness.iter().chain(&cv.complexity).all(|&v| v == 1.0));
            assert!(cv.converged);
        }
    }

    #[test]
    fn nested_matrix_orders_by_diversification() {
        let m = Array2::from_shape_fn((10, 10), |(c, p)| u8::from(p <= c));
        let cv = fitness_complexity::<f64>(m.view(), &ComplexityParams::default()).unwrap();
        assert!(cv.fitness.windows(2).all(|w| w[0] < w[1]), "{:?}", cv.fitness);
        assert!(cv.complexity.windows(2).all(|w| w[0] < w[1]), "{:?}", cv.complexity);
    }

    #[test]
    fn pruning_is_reported() {
        let m = array![[1u8, 0, 1], [0, 0, 0], [1, 0, 0]];
        let cv = fitness_complexity::<f64>(m.view(), &ComplexityParams::default()).unwrap();
        assert_eq!((cv.pruned_countries.clone(), cv.pruned_products.clone()), (vec![1], vec![1]));
        assert_eq!(cv.complexity_by_product(3)[1], None);
        assert!(fitness_complexity::<f64>(Array2::zeros((2, 2)).view(), &ComplexityParams::default()).is_err());
    }

    #[test]
    fn disconnected_blocks_match_separate_runs() {
        let mut rng = task_rng(5, &[]);
        let a = Array2::from_shape_fn((6, 8), |_| u8::from(rng.random_range(0.0..1.0) < 0.6));
        let b = Array2::from_shape_fn((5, 4), |_| u8::from(rng.random_range(0.0..1.0) < 0.6));
        // no empty rows or columns, so nothing is pruned
        let cover = |mut m: Array2<u8>| {
            let (r, c) = m.dim();
            for i in 0..r.max(c) {
                m[[i % r, i % c]] = 1;
            }
            m
        };
        let (a, b) = (cover(a), cover(b));
        let mut m = Array2::zeros((11, 12));
        m.slice_mut(ndarray::s![..6, ..8]).assign(&a);
        m.slice_mut(ndarray::s![6.., 8..]).assign(&b);
        let p = ComplexityParams { n_iter: 5000, tol: 1e-12 };
        let whole = fitness_complexity::<f64>(m.view(), &p).unwrap();
        let ra = fitness_complexity::<f64>(a.view(), &p).unwrap();
        let rb = fitness_complexity::<f64>(b.view(), &p).unwrap();
        let rescaled = |v: &[f64]| {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| x / mean).collect::<Vec<_>>()
        };
        let close = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(a, b)| (a - b).abs() < 1e-6 * b.abs().max(1.0));
        assert!(whole.pruned_countries.is_empty() && whole.pruned_products.is_empty());
        assert!(close(&rescaled(&whole.fitness[..6]), &ra.fitness));
        assert!(close(&rescaled(&whole.fitness[6..]), &rb.fitness));
        assert!(close(&rescaled(&whole.complexity[..8]), &ra.complexity));
        assert!(close(&rescaled(&whole.complexity[8..]), &rb.complexity));
    }

    #[test]
    fn mean_log_examples() {
        assert_eq!(mean_log_complexity(&[vec![2.0f64], vec![2.0]]).unwrap(), vec![2f64.ln()]);
        let v = mean_log_complexity(&[vec![1.0f64], vec![1f64.exp().powi(2)]]).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-15);
        assert!(mean_log_complexity(&[vec![0.0f64]]).is_err());
    }

    #[test]
    fn curve_examples() {
        // every target explained only by the most complex feature
        let imp = array![[0.0, 0.0, 0.4], [0.0, 0.0, 0.9], [0.0, 0.0, 0.1], [0.0, 0.0, 0.0]];
        let curve = explainer_complexity_curve(imp.view(), &[1.0, 2.0, 5.0], &[0.3, 0.1, 0.2, 0.4], 3, ExplainerWeighting::Uniform).unwrap();
        assert_eq!(curve.n_excluded, 1);
        assert!(curve.bins.iter().all(|b| b.mean == 5.0 && b.se == 0.0 && b.n == 1));
        assert_eq!(curve.bins.iter().map(|b| b.center).collect::<Vec<_>>(), vec![0.1, 0.2, 0.3]);
        let w = explainer_complexity(array![[0.25, 0.75, 0.0]].view(), &[1.0, 2.0, 5.0], ExplainerWeighting::Importance).unwrap();
        assert_eq!(w, vec![Some(1.75)]);
        let u = explainer_complexity(array![[0.25, 0.75, 0.0]].view(), &[1.0, 2.0, 5.0], ExplainerWeighting::Uniform).unwrap();
        assert_eq!(u, vec![Some(1.5)]);
        assert!(explainer_complexity_curve(imp.view(), &[1.0, 2.0, 5.0], &[0.3, 0.1, 0.2, 0.4], 4, ExplainerWeighting::Uniform).is_err());
    }

    #[test]
    fn bin_standard_error() {
        let imp = array![[1.0, 0.0], [0.0, 1.0]];
        let curve = explainer_complexity_curve(imp.view(), &[1.0, 3.0], &[0.0, 1.0], 1, ExplainerWeighting::Uniform).unwrap();
        // values {1, 3}: sample sd √2, se = √2/√2
        assert_eq!((curve.bins[0].mean, curve.bins[0].se), (2.0, 1.0));
    }

    fn spearman(a: &[f64], b: &[f64]) -> f64 {
        let rank = |v: &[f64]| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
            let mut r = vec![0.0; v.len()];
            for (k, &i) in idx.iter().enumerate() {
                r[i] = k as f64;
            }
            r
        };
        let (ra, rb) = (rank(a), rank(b));
        let n = a.len() as f64;
        let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y).powi(2)).sum();
        1.0 - 6.0 * d2 / (n * (n * n - 1.0))
    }

    #[test]
    fn planted_coupling_gives_a_rising_curve() {
        // 40 features of increasing complexity; target t draws three
        // explainers near its own complexity rank
        let mut rng = task_rng(11, &[]);
        let feature_c: Vec<f64> = (0..40).map(|j| (j as f64 / 8.0).exp()).collect();
        let n_targets = 200;
        let target_c: Vec<f64> = (0..n_targets).map(|_| rng.random_range(0.0..5.0)).collect();
        let mut imp = Array2::<f64>::zeros((n_targets, 40));
        for t in 0..n_targets {
            let centre = (target_c[t] / 5.0 * 39.0).round() as i64;
            for _ in 0..3 {
                let j = (centre + rng.random_range(-4..=4)).clamp(0, 39) as usize;
                imp[[t, j]] = rng.random_range(0.05..0.5);
            }
        }
        for weighting in [ExplainerWeighting::Uniform, ExplainerWeighting::Importance] {
            let curve = explainer_complexity_curve(imp.view(), &feature_c, &target_c, 20, weighting).unwrap();
            let centers: Vec<f64> = curve.bins.iter().map(|b| b.center).collect();
            let means: Vec<f64> = curve.bins.iter().map(|b| b.mean).collect();
            assert!(spearman(&centers, &means) > 0.8, "{means:?}");
            assert_eq!(curve.bins.iter().map(|b| b.n).sum::<usize>(), n_targets);
        }
    }

    #[test]
    fn one_target_per_bin_is_a_scatter() {
        let imp = array![[0.2, 0.1], [0.0, 0.3], [0.5, 0.0]];
        let curve = explainer_complexity_curve(imp.view(), &[1.0, 4.0], &[3.0, 1.0, 2.0], 3, ExplainerWeighting::Uniform).unwrap();
        let pts: Vec<(f64, f64, f64)> = curve.bins.iter().map(|b| (b.center, b.mean, b.se)).collect();
        assert_eq!(pts, vec![(1.0, 4.0, 0.0), (2.0, 1.0, 0.0), (3.0, 2.5, 0.0)]);
    }

    proptest! {
        #[test]
        fn permutation_equivariance_is_exact(seed in any::<u64>(), r in 2usize..9, c in 2usize..9) {
            let mut rng = task_rng(seed, &[]);
            let m = Array2::from_shape_fn((r, c), |_| u8::from(rng.random_range(0.0..1.0) < 0.5));
            let mut rows: Vec<usize> = (0..r).collect();
            let mut cols: Vec<usize> = (0..c).collect();
            use rand::seq::SliceRandom;
            rows.shuffle(&mut rng);
            cols.shuffle(&mut rng);
            let pm = m.select(Axis(0), &rows).select(Axis(1), &cols);
            let params = ComplexityParams { n_iter: 200, tol: 1e-9 };
            let a = fitness_complexity::<f64>(m.view(), &params);
            let b = fitness_complexity::<f64>(pm.view(), &params);
            prop_assert_eq!(a.is_ok(), b.is_ok());
            if let (Ok(a), Ok(b)) = (a, b) {
                let fa = a.fitness_by_country(r);
                let fb = b.fitness_by_country(r);
                for (i, &orig) in rows.iter().enumerate() {
                    prop_assert_eq!(fb[i], fa[orig]);
                }
                let qa = a.complexity_by_product(c);
                let qb = b.complexity_by_product(c);
                for (j, &orig) in cols.iter().enumerate() {
                    prop_assert_eq!(qb[j], qa[orig]);
                }
            }
        }

        #[test]
        fn normalized_to_mean_one(seed in any::<u64>()) {
            let mut rng = task_rng(seed, &[]);
            let m = Array2::from_shape_fn((6, 9), |_| u8::from(rng.random_range(0.0..1.0) < 0.5));
            if let Ok(cv) = fitness_complexity::<f64>(m.view(), &ComplexityParams { n_iter: 50, tol: 1e-9 }) {
                let mf = cv.fitness.iter().sum::<f64>() / cv.fitness.len() as f64;
                let mq = cv.complexity.iter().sum::<f64>() / cv.complexity.len() as f64;
                prop_assert!((mf - 1.0).abs() < 1e-12 && (mq - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn mean_log_lies_between_extremes(q in prop::collection::vec(0.1f64..10.0, 1..8)) {
            let series: Vec<Vec<f64>> = q.iter().map(|&v| vec![v]).collect();
            let m = mean_log_complexity(&series).unwrap()[0];
            let lo = q.iter().copied().fold(f64::INFINITY, f64::min).ln();
            let hi = q.iter().copied().fold(0.0, f64::max).ln();
            prop_assert!(m >= lo - 1e-12 && m <= hi + 1e-12);
        }

        #[test]
        fn mean_log_shifts_by_log_c(q in prop::collection::vec(prop::collection::vec(0.1f64..10.0, 3), 1..6), c in 0.5f64..4.0) {
            let base = mean_log_complexity(&q).unwrap();
            let scaled: Vec<Vec<f64>> = q.iter().map(|v| v.iter().map(|x| x * c).collect()).collect();
            let shifted = mean_log_complexity(&scaled).unwrap();
            for (a, b) in base.iter().zip(&shifted) {
                prop_assert!((b - a - c.ln()).abs() < 1e-12);
            }
        }
    }
}
