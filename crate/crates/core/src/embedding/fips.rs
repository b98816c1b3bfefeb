//! Gaussian similarities between embedded products and the density
//! forecast they induce.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Pairwise Euclidean distances between the rows of `coords`.
pub fn distance_matrix<T: Scalar>(coords: ArrayView2<'_, T>) -> Array2<T> {
    let n = coords.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let s: T = coords.row(i).iter().zip(coords.row(j)).map(|(&a, &b)| (a - b) * (a - b)).sum();
            d[[i, j]] = s.sqrt();
            d[[j, i]] = d[[i, j]];
        }
    }
    d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix<T> {
    pub b: Array2<T>,
    pub sigma: T,
}

/// B = exp(−½ (D/σ)²) / √(2πσ²).
pub fn similarity_matrix<T: Scalar>(d: &Array2<T>, sigma: T) -> Result<SimilarityMatrix<T>> {
    if !(sigma > T::zero()) || !sigma.is_finite() {
        return Err(Error::param("sigma must be positive and finite"));
    }
    let norm = T::one() / (T::lit(2.0) * T::PI() * sigma * sigma).sqrt();
    let half = T::lit(0.5);
    Ok(SimilarityMatrix { b: d.mapv(|v| norm * (-half * (v / sigma) * (v / sigma)).exp()), sigma })
}

/// S_cp = Σ_p' B_pp' M_cp' / Σ_p' B_pp', optionally leaving p itself out.
pub fn density_scores<T: Scalar>(b: &SimilarityMatrix<T>, m: ArrayView2<'_, u8>, exclude_self: bool) -> Result<Array2<T>> {
    let n = b.b.nrows();
    if b.b.ncols() != n || m.ncols() != n {
        return Err(Error::shape(format!("similarity {:?} against {} products", b.b.dim(), m.ncols())));
    }
    let mut s = Array2::zeros((m.nrows(), n));
    for p in 0..n {
        let row = b.b.row(p);
        let mut total = T::zero();
        for (q, &w) in row.iter().enumerate() {
            if !(exclude_self && q == p) {
                total += w;
            }
        }
        if !(total > T::zero()) {
            return Err(Error::Degenerate(format!("product {p} has no similarity mass")));
        }
        for c in 0..m.nrows() {
            let mut acc = T::zero();
            for (q, &w) in row.iter().enumerate() {
                if m[[c, q]] == 1 && !(exclude_self && q == p) {
                    acc += w;
                }
            }
            s[[c, p]] = (acc / total).min(T::one());
        }
    }
    Ok(s)
}

/// Mean over points of the number of other points within 3σ.
pub fn avg_nearest_neighbors<T: Scalar>(d: &Array2<T>, sigma: T) -> T {
    let n = d.nrows();
    if n == 0 {
        return T::zero();
    }
    let r = T::lit(3.0) * sigma;
    let count = (0..n)
        .map(|i| (0..n).filter(|&j| j != i && d[[i, j]] <= r).count())
        .sum::<usize>();
    T::from_count(count) / T::from_count(n)
}

/// Smallest σ (to relative precision 1e-3) whose neighbour count reaches
/// target − ½; fails when the count then overshoots target + ½.
pub fn tune_sigma<T: Scalar>(d: &Array2<T>, target_nn: usize) -> Result<T> {
    let n = d.nrows();
    if target_nn == 0 || target_nn + 1 > n {
        return Err(Error::param(format!("target of {target_nn} neighbours with {n} points")));
    }
    let goal = T::from_count(target_nn);
    let half = T::lit(0.5);
    let maxd = d.iter().copied().fold(T::zero(), T::max);
    // at σ = maxd/3 every pair is within range
    let mut hi = if maxd > T::zero() { maxd / T::lit(3.0) } else { T::one() };
    let mut lo = T::zero();
    let tol = T::lit(1e-3);
    for _ in 0..200 {
        if hi - lo <= tol * hi {
            break;
        }
        let mid = (lo + hi) * half;
        if avg_nearest_neighbors(d, mid) >= goal - half {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let got = avg_nearest_neighbors(d, hi);
    if (got - goal).abs() > half {
        return Err(Error::Search(format!(
            "no σ gives {target_nn} neighbours on average (closest: {got} at σ = {hi})"
        )));
    }
    Ok(hi)
}
