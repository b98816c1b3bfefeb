//! Binary logistic regression by iteratively reweighted least squares.

use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::linalg::{cholesky, cholesky_inverse, cholesky_solve};
use crate::error::{Error, Result};
use crate::rng::{tag, task_rng};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogitParams {
    pub max_iter: usize,
    /// Stop once the log-likelihood improves by less than this.
    pub tol: f64,
}

impl Default for LogitParams {
    fn default() -> Self {
        Self { max_iter: 100, tol: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitFit<T> {
    /// Intercept first, then one coefficient per predictor column.
    pub coefficients: Vec<T>,
    pub std_errors: Vec<T>,
    pub log_likelihood: T,
    pub null_log_likelihood: T,
    /// McFadden: 1 − ℓ/ℓ_null.
    pub pseudo_r2: T,
    pub converged: bool,
    pub iterations: usize,
    /// Log-likelihood after each accepted step, starting from the null model.
    pub trace: Vec<T>,
}

impl<T: Scalar> LogitFit<T> {
    pub fn predict(&self, x: ArrayView2<'_, T>) -> Result<Vec<T>> {
        if x.ncols() + 1 != self.coefficients.len() {
            return Err(Error::shape(format!("{} predictors, model has {}", x.ncols(), self.coefficients.len() - 1)));
        }
        Ok(x.rows().into_iter().map(|r| sigmoid(linear(&self.coefficients, r.iter().copied()))).collect())
    }

    /// Wald z statistics.
    pub fn z_scores(&self) -> Vec<T> {
        self.coefficients.iter().zip(&self.std_errors).map(|(&b, &s)| b / s).collect()
    }
}

fn linear<T: Scalar>(beta: &[T], row: impl Iterator<Item = T>) -> T {
    let mut eta = beta[0];
    for (b, x) in beta[1..].iter().zip(row) {
        eta += *b * x;
    }
    eta
}

fn sigmoid<T: Scalar>(eta: T) -> T {
    if eta >= T::zero() {
        T::one() / (T::one() + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (T::one() + e)
    }
}

/// ln(1 + e^η) without overflow.
fn softplus<T: Scalar>(eta: T) -> T {
    eta.max(T::zero()) + (-eta.abs()).exp().ln_1p()
}

fn design<T: Scalar>(x: ArrayView2<'_, T>) -> Array2<T> {
    let mut d = Array2::ones((x.nrows(), x.ncols() + 1));
    d.slice_mut(ndarray::s![.., 1..]).assign(&x);
    d
}

fn log_likelihood<T: Scalar>(d: &Array2<T>, y: &[u8], beta: &Array1<T>) -> T {
    let eta = d.dot(beta);
    eta.iter()
        .zip(y)
        .map(|(&e, &yi)| if yi == 1 { -softplus(-e) } else { -softplus(e) })
        .sum()
}

/// Cholesky of A after scaling to unit diagonal, so that the singularity
/// test does not depend on the units of the predictors.
fn scaled_cholesky<T: Scalar>(a: &Array2<T>) -> Option<(Array2<T>, Array1<T>)> {
    let s: Array1<T> = a.diag().mapv(|v| if v > T::zero() { T::one() / v.sqrt() } else { T::zero() });
    if s.iter().any(|v| *v == T::zero()) {
        return None;
    }
    let scaled = Array2::from_shape_fn(a.dim(), |(i, j)| a[[i, j]] * s[i] * s[j]);
    let tol = T::lit(1e-10).max(T::epsilon() * T::lit(1e3));
    cholesky(&scaled, tol).map(|l| (l, s))
}

fn solve<T: Scalar>(a: &Array2<T>, b: &Array1<T>) -> Option<Array1<T>> {
    let (l, s) = scaled_cholesky(a)?;
    let bs = b * &s;
    Some(cholesky_solve(&l, &bs) * &s)
}

fn information<T: Scalar>(d: &Array2<T>, beta: &Array1<T>) -> (Array2<T>, Array1<T>) {
    let mu = d.dot(beta).mapv(sigmoid);
    let w = mu.mapv(|m| m * (T::one() - m));
    let k = d.ncols();
    let mut h = Array2::zeros((k, k));
    for (row, &wi) in d.rows().into_iter().zip(&w) {
        for a in 0..k {
            for b in a..k {
                h[[a, b]] += wi * row[a] * row[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            h[[a, b]] = h[[b, a]];
        }
    }
    (h, mu)
}

/// Maximum-likelihood logit of `y` on an intercept plus the columns of `x`.
/// Newton steps are halved until the log-likelihood does not decrease.
pub fn fit_logit<T: Scalar>(x: ArrayView2<'_, T>, y: &[u8], params: &LogitParams) -> Result<LogitFit<T>> {
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::shape(format!("{n} rows for {} labels", y.len())));
    }
    if n < 3 {
        return Err(Error::param("logit needs at least three observations"));
    }
    if y.iter().any(|&v| v > 1) {
        return Err(Error::param("labels must be binary (0/1)"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("predictors must be finite"));
    }
    let n1 = y.iter().filter(|&&v| v == 1).count();
    if n1 == 0 || n1 == n {
        return Err(Error::Degenerate("logit needs both outcomes".into()));
    }
    let d = design(x);
    let k = d.ncols();
    if scaled_cholesky(&d.t().dot(&d)).is_none() {
        return Err(Error::RankDeficient);
    }

    let ybar = T::from_count(n1) / T::from_count(n);
    let null_ll = T::from_count(n) * (ybar * ybar.ln() + (T::one() - ybar) * (T::one() - ybar).ln());
    let mut beta = Array1::zeros(k);
    beta[0] = (ybar / (T::one() - ybar)).ln();
    let mut ll = log_likelihood(&d, y, &beta);
    let mut trace = vec![ll];
    let tol = T::lit(params.tol);
    let yv: Array1<T> = y.iter().map(|&v| T::from_count(v as usize)).collect();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < params.max_iter {
        iterations += 1;
        let (h, mu) = information(&d, &beta);
        let grad = d.t().dot(&(&yv - &mu));
        let Some(step) = solve(&h, &grad) else { break };
        let mut scale = T::one();
        let mut accepted = None;
        for _ in 0..40 {
            let cand = &beta + &step.mapv(|s| s * scale);
            let cll = log_likelihood(&d, y, &cand);
            if cll >= ll {
                accepted = Some((cand, cll));
                break;
            }
            scale *= T::lit(0.5);
        }
        let Some((cand, cll)) = accepted else {
            // no ascent left at machine precision
            converged = true;
            break;
        };
        let gain = cll - ll;
        beta = cand;
        ll = cll;
        trace.push(ll);
        if gain < tol {
            converged = true;
            break;
        }
    }

    let (h, mu) = information(&d, &beta);
    // complete separation: every fitted probability pinned to its label
    let separated = mu.iter().zip(y).all(|(&m, &v)| {
        let err = if v == 1 { T::one() - m } else { m };
        err < T::lit(1e-8)
    });
    let std_errors = match scaled_cholesky(&h) {
        Some((l, s)) => {
            let inv = cholesky_inverse(&l);
            (0..k).map(|i| (inv[[i, i]] * s[i] * s[i]).sqrt()).collect()
        }
        None => vec![T::infinity(); k],
    };
    let converged = converged && !separated && std_errors.iter().all(|s: &T| s.is_finite() && *s > T::zero());
    Ok(LogitFit {
        coefficients: beta.to_vec(),
        std_errors,
        log_likelihood: ll,
        null_log_likelihood: null_ll,
        pseudo_r2: T::one() - ll / null_ll,
        converged,
        iterations,
        trace,
    })
}

/// Out-of-fold probabilities: rows are split into `n_folds` seeded groups
/// and each group is scored by a model fitted on the others.
pub fn logit_cv_predict<T: Scalar>(
    x: ArrayView2<'_, T>,
    y: &[u8],
    n_folds: usize,
    params: &LogitParams,
    seed: u64,
) -> Result<Vec<T>> {
    let n = x.nrows();
    if n_folds < 2 || n_folds > n {
        return Err(Error::param(format!("cannot split {n} rows into {n_folds} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut task_rng(seed, &[tag("logit-folds")]));
    let mut out = vec![T::zero(); n];
    for k in 0..n_folds {
        let held = &order[k * n / n_folds..(k + 1) * n / n_folds];
        let mut is_held = vec![false; n];
        held.iter().for_each(|&i| is_held[i] = true);
        let train: Vec<usize> = (0..n).filter(|&i| !is_held[i]).collect();
        let xt = x.select(ndarray::Axis(0), &train);
        let yt: Vec<u8> = train.iter().map(|&i| y[i]).collect();
        let fit = fit_logit(xt.view(), &yt, params)?;
        let xh = x.select(ndarray::Axis(0), held);
        for (&i, p) in held.iter().zip(fit.predict(xh.view())?) {
            out[i] = p;
        }
    }
    Ok(out)
}
