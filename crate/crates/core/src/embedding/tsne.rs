//! Exact t-SNE: perplexity-calibrated Gaussian affinities in the input
//! space, a Student-t kernel in the plane, gradient descent with early
//! exaggeration, momentum and adaptive gains.

use ndarray::{Array2, ArrayView2, Axis};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{tag, task_rng};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneParams {
    pub perplexity: f64,
    pub n_iter: usize,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub momentum: f64,
    pub final_momentum: f64,
    /// n / exaggeration when unset.
    pub learning_rate: Option<f64>,
    pub init_scale: f64,
    pub min_gain: f64,
}

impl Default for TsneParams {
    fn default() -> Self {
        Self {
            perplexity: 10.0,
            n_iter: 1000,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            momentum: 0.5,
            final_momentum: 0.8,
            learning_rate: None,
            init_scale: 1e-4,
            min_gain: 0.01,
        }
    }
}

/// Two-dimensional layout of the rows of an importance matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FipsEmbedding<T> {
    pub coords: Array2<T>,
    pub perplexity: f64,
    pub seed: u64,
    pub kl_divergence: T,
    /// KL at the end of the exaggeration phase.
    pub kl_after_exaggeration: T,
}

fn squared_distances<T: Scalar>(x: ArrayView2<'_, T>) -> Array2<T> {
    let n = x.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let s: T = x.row(i).iter().zip(x.row(j)).map(|(&a, &b)| (a - b) * (a - b)).sum();
            d[[i, j]] = s;
            d[[j, i]] = s;
        }
    }
    d
}

/// Row-conditional affinities p_{j|i} ∝ exp(−β_i d²_ij), each β_i found by
/// bisection so that the row's perplexity exp(H) matches the target. Returns
/// the matrix and the realized perplexity of each row.
pub fn conditional_affinities<T: Scalar>(d2: &Array2<T>, perplexity: f64) -> Result<(Array2<T>, Vec<T>)> {
    let n = d2.nrows();
    if d2.ncols() != n {
        return Err(Error::shape("distance matrix must be square"));
    }
    if !(perplexity > 0.0) {
        return Err(Error::param("perplexity must be positive"));
    }
    let target = T::lit(perplexity.ln());
    let tol = T::lit(1e-10).max(T::epsilon() * T::lit(100.0));
    let rows: Vec<(Vec<T>, T)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let row: Vec<T> = (0..n).filter(|&j| j != i).map(|j| d2[[i, j]]).collect();
            let dmin = row.iter().copied().fold(T::infinity(), T::min);
            let eval = |beta: T| {
                let w: Vec<T> = row.iter().map(|&d| (-(d - dmin) * beta).exp()).collect();
                let z: T = w.iter().copied().sum();
                let mean: T = row.iter().zip(&w).map(|(&d, &p)| (d - dmin) * p).sum::<T>() / z;
                // H = ln Z + β E[d]
                (z.ln() + beta * mean, w, z)
            };
            let (mut beta, mut lo, mut hi) = (T::one(), T::zero(), T::infinity());
            let mut best = eval(beta);
            for _ in 0..200 {
                let diff = best.0 - target;
                if diff.abs() < tol {
                    break;
                }
                if diff > T::zero() {
                    lo = beta;
                    beta = if hi.is_infinite() { beta * T::lit(2.0) } else { (beta + hi) / T::lit(2.0) };
                } else {
                    hi = beta;
                    beta = (beta + lo) / T::lit(2.0);
                }
                best = eval(beta);
            }
            let (h, w, z) = best;
            let mut full = Vec::with_capacity(n);
            let mut it = w.into_iter();
            for j in 0..n {
                full.push(if j == i { T::zero() } else { it.next().expect("n−1 weights") / z });
            }
            (full, h.exp())
        })
        .collect();
    let mut p = Array2::zeros((n, n));
    let mut perp = Vec::with_capacity(n);
    for (i, (row, pp)) in rows.into_iter().enumerate() {
        p.row_mut(i).assign(&ndarray::Array1::from(row));
        perp.push(pp);
    }
    Ok((p, perp))
}

fn kl<T: Scalar>(p: &Array2<T>, q: &Array2<T>) -> T {
    let floor = T::lit(1e-12);
    let mut s = T::zero();
    for (&a, &b) in p.iter().zip(q) {
        if a > T::zero() {
            s += a * (a / b.max(floor)).ln();
        }
    }
    s.max(T::zero())
}

/// Student-t kernel values num_ij = 1/(1+|y_i−y_j|²) (zero diagonal) and their sum.
fn kernel<T: Scalar>(y: &Array2<T>) -> (Array2<T>, T) {
    let n = y.nrows();
    let rows: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        return T::zero();
                    }
                    let dx = y[[i, 0]] - y[[j, 0]];
                    let dy = y[[i, 1]] - y[[j, 1]];
                    T::one() / (T::one() + dx * dx + dy * dy)
                })
                .collect()
        })
        .collect();
    let mut num = Array2::zeros((n, n));
    let mut z = T::zero();
    for (i, r) in rows.into_iter().enumerate() {
        // summed in row order so the total does not depend on scheduling
        z += r.iter().copied().sum::<T>();
        num.row_mut(i).assign(&ndarray::Array1::from(r));
    }
    (num, z)
}

pub fn tsne_embed<T: Scalar>(x: ArrayView2<'_, T>, params: &TsneParams, seed: u64) -> Result<FipsEmbedding<T>> {
    let n = x.nrows();
    if n < 3 {
        return Err(Error::param("t-SNE needs at least three rows"));
    }
    if !(params.perplexity > 0.0) || params.perplexity >= n as f64 {
        return Err(Error::param(format!("perplexity {} must lie in (0, {n})", params.perplexity)));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("input vectors must be finite"));
    }
    let (cond, _) = conditional_affinities(&squared_distances(x), params.perplexity)?;
    let mut p = &cond + &cond.t();
    let denom = T::from_count(2 * n);
    let floor = T::lit(1e-12);
    p.mapv_inplace(|v| (v / denom).max(floor));
    p.diag_mut().fill(T::zero());

    let mut rng = task_rng(seed, &[tag("tsne-init")]);
    let normal = Normal::new(0.0, params.init_scale).map_err(|e| Error::param(e.to_string()))?;
    let mut y = Array2::from_shape_simple_fn((n, 2), || T::lit(normal.sample(&mut rng)));
    let mut update = Array2::<T>::zeros((n, 2));
    let mut gains = Array2::<T>::ones((n, 2));
    let eta = T::lit(params.learning_rate.unwrap_or(n as f64 / params.exaggeration));
    let min_gain = T::lit(params.min_gain);
    let four = T::lit(4.0);
    let mut kl_after_exaggeration = None;

    for iter in 0..params.n_iter {
        let exaggerating = iter < params.exaggeration_iters;
        let exag = if exaggerating { T::lit(params.exaggeration) } else { T::one() };
        let momentum = T::lit(if exaggerating { params.momentum } else { params.final_momentum });
        let (num, z) = kernel(&y);
        let grad: Vec<[T; 2]> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut g = [T::zero(); 2];
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let w = (exag * p[[i, j]] - num[[i, j]] / z) * num[[i, j]];
                    g[0] += w * (y[[i, 0]] - y[[j, 0]]);
                    g[1] += w * (y[[i, 1]] - y[[j, 1]]);
                }
                [four * g[0], four * g[1]]
            })
            .collect();
        for (i, g) in grad.iter().enumerate() {
            for d in 0..2 {
                let gain = &mut gains[[i, d]];
                let same_sign = (g[d] > T::zero()) == (update[[i, d]] > T::zero());
                *gain = if same_sign { *gain * T::lit(0.8) } else { *gain + T::lit(0.2) };
                *gain = gain.max(min_gain);
                update[[i, d]] = momentum * update[[i, d]] - eta * *gain * g[d];
                y[[i, d]] += update[[i, d]];
            }
        }
        let mean = y.mean_axis(Axis(0)).expect("non-empty");
        y -= &mean;
        if iter + 1 == params.exaggeration_iters {
            kl_after_exaggeration = Some(kl_of(&p, &y));
        }
    }
    let kl_divergence = kl_of(&p, &y);
    Ok(FipsEmbedding {
        coords: y,
        perplexity: params.perplexity,
        seed,
        kl_divergence,
        kl_after_exaggeration: kl_after_exaggeration.unwrap_or(kl_divergence),
    })
}

fn kl_of<T: Scalar>(p: &Array2<T>, y: &Array2<T>) -> T {
    let (num, z) = kernel(y);
    kl(p, &num.mapv(|v| v / z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn affinity_rows_hit_the_perplexity() {
        let mut rng = task_rng(3, &[]);
        let x = Array2::from_shape_fn((40, 5), |_| rng.random_range(-1.0..1.0));
        let (p, perp) = conditional_affinities::<f64>(&squared_distances(x.view()), 7.0).unwrap();
        for (i, row) in p.rows().into_iter().enumerate() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
            assert_eq!(row[i], 0.0);
            assert!((perp[i] / 7.0 - 1.0).abs() < 0.01, "row {i}: {}", perp[i]);
        }
    }

    #[test]
    fn rejects_bad_perplexity() {
        let x = Array2::<f64>::zeros((5, 2));
        let p = TsneParams { perplexity: 5.0, ..Default::default() };
        assert!(matches!(tsne_embed(x.view(), &p, 0), Err(Error::Parameter(_))));
        assert!(tsne_embed(Array2::<f64>::zeros((2, 2)).view(), &TsneParams::default(), 0).is_err());
    }

    #[test]
    fn duplicates_stay_together() {
        let x = array![[0.0f64, 0.0], [0.0, 0.0], [5.0, 5.0]];
        let p = TsneParams { perplexity: 1.5, ..Default::default() };
        let e = tsne_embed(x.view(), &p, 1).unwrap();
        let d = |a: usize, b: usize| {
            let c = &e.coords;
            ((c[[a, 0]] - c[[b, 0]]).powi(2) + (c[[a, 1]] - c[[b, 1]]).powi(2)).sqrt()
        };
        assert!(d(0, 1) < d(0, 2) && d(0, 1) < d(1, 2));
    }

    #[test]
    fn seeded_runs_are_identical_and_kl_does_not_grow() {
        let mut rng = task_rng(4, &[]);
        let x = Array2::from_shape_fn((30, 4), |_| rng.random_range(0.0f64..1.0));
        let p = TsneParams { perplexity: 5.0, n_iter: 400, ..Default::default() };
        let a = tsne_embed(x.view(), &p, 9).unwrap();
        let b = tsne_embed(x.view(), &p, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.coords.iter().all(|v| v.is_finite()));
        assert!(a.kl_divergence >= 0.0);
        assert!(a.kl_divergence <= a.kl_after_exaggeration);
    }

    fn silhouette(c: &Array2<f64>, labels: &[usize]) -> f64 {
        let n = labels.len();
        let d = |a: usize, b: usize| ((c[[a, 0]] - c[[b, 0]]).powi(2) + (c[[a, 1]] - c[[b, 1]]).powi(2)).sqrt();
        let k = labels.iter().max().unwrap() + 1;
        (0..n)
            .map(|i| {
                let mut sum = vec![0.0; k];
                let mut cnt = vec![0usize; k];
                for j in (0..n).filter(|&j| j != i) {
                    sum[labels[j]] += d(i, j);
                    cnt[labels[j]] += 1;
                }
                let a = sum[labels[i]] / cnt[labels[i]] as f64;
                let b = (0..k).filter(|&g| g != labels[i]).map(|g| sum[g] / cnt[g] as f64).fold(f64::INFINITY, f64::min);
                (b - a) / a.max(b)
            })
            .sum::<f64>()
            / n as f64
    }

    #[test]
    fn planted_clusters_separate() {
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut good = 0;
        for seed in 0..10 {
            let mut rng = task_rng(seed, &[tag("clusters")]);
            let labels: Vec<usize> = (0..60).map(|i| i / 20).collect();
            let x = Array2::from_shape_fn((60, 10), |(i, j)| {
                let centre = if j == labels[i] { 10.0 } else { 0.0 };
                centre + normal.sample(&mut rng)
            });
            let e = tsne_embed(x.view(), &TsneParams::default(), seed).unwrap();
            let s = silhouette(&e.coords, &labels);
            if s > 0.5 {
                good += 1;
            }
        }
        assert!(good >= 9, "{good}/10");
    }

    #[test]
    fn single_precision_runs() {
        let mut rng = task_rng(5, &[]);
        let x = Array2::from_shape_fn((20, 3), |_| rng.random_range(0.0f32..1.0));
        let p = TsneParams { perplexity: 5.0, n_iter: 300, ..Default::default() };
        let e = tsne_embed(x.view(), &p, 1).unwrap();
        assert!(e.coords.iter().all(|v| v.is_finite()));
    }
}
