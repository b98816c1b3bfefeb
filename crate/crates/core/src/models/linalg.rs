//! Small dense symmetric positive-definite solves for the logit fit.

use ndarray::{Array1, Array2};

use crate::scalar::Scalar;

/// Lower Cholesky factor, or `None` when a pivot falls below `rel_tol`
/// times the largest diagonal entry (numerically singular).
pub(crate) fn cholesky<T: Scalar>(a: &Array2<T>, rel_tol: T) -> Option<Array2<T>> {
    let n = a.nrows();
    let scale = a.diag().iter().copied().fold(T::zero(), T::max);
    if !(scale > T::zero()) {
        return None;
    }
    let mut l = Array2::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > rel_tol * scale) {
            return None;
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / d;
        }
    }
    Some(l)
}

/// Solve L Lᵀ x = b.
pub(crate) fn cholesky_solve<T: Scalar>(l: &Array2<T>, b: &Array1<T>) -> Array1<T> {
    let n = l.nrows();
    let mut z = b.clone();
    for i in 0..n {
        for k in 0..i {
            let v = l[[i, k]] * z[k];
            z[i] -= v;
        }
        z[i] /= l[[i, i]];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            let v = l[[k, i]] * z[k];
            z[i] -= v;
        }
        z[i] /= l[[i, i]];
    }
    z
}

pub(crate) fn cholesky_inverse<T: Scalar>(l: &Array2<T>) -> Array2<T> {
    let n = l.nrows();
    let mut inv = Array2::zeros((n, n));
    for j in 0..n {
        let mut e = Array1::zeros(n);
        e[j] = T::one();
        inv.column_mut(j).assign(&cholesky_solve(l, &e));
    }
    inv
}
