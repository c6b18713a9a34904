//! Small dense helpers shared by the update formulas.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative tolerance on the smallest LU pivot of an inner (M x M) system.
pub const PIVOT_TOL: f64 = 1e-10;

/// `B^-1 x` restricted to rows/cols given; callers build `x` sparsely so this
/// is just a gather of the columns of a symmetric inverse.
pub fn inv_times_nu(inv: &DMatrix<f64>, nu: &[(usize, f64)]) -> DVector<f64> {
    let mut out = DVector::zeros(inv.nrows());
    for &(i, v) in nu {
        out.axpy(v, &inv.column(i), 1.0);
    }
    out
}

/// `nu^T x` for a sparse terminal vector.
pub fn nu_dot(nu: &[(usize, f64)], x: &DVector<f64>) -> f64 {
    nu.iter().map(|&(i, v)| v * x[i]).sum()
}

pub fn dense_nu(n: usize, nu: &[(usize, f64)]) -> DVector<f64> {
    let mut out = DVector::zeros(n);
    for &(i, v) in nu {
        out[i] += v;
    }
    out
}

/// `inv - scale * x x^T`, in place on a copy.
pub fn rank_one(inv: &DMatrix<f64>, x: &DVector<f64>, scale: f64) -> DMatrix<f64> {
    let mut out = inv.clone();
    out.ger(-scale, x, x, 1.0);
    out
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |a, &v| a.max(v.abs()))
}

/// Maximum absolute row sum.
pub fn norm_inf(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `||a - b||_F / max(||b||_F, tiny)`.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let diff = (a - b).norm();
    diff / b.norm().max(f64::MIN_POSITIVE)
}

/// Solves a small dense system with partial pivoting, rejecting it as
/// singular when the smallest pivot falls below `PIVOT_TOL * scale`, where
/// `scale` is the larger of the biggest pivot and the caller's reference
/// magnitude. Returns the smallest pivot magnitude on failure.
pub fn solve_checked(
    a: &DMatrix<f64>,
    rhs: &DMatrix<f64>,
    reference_scale: f64,
) -> std::result::Result<DMatrix<f64>, f64> {
    if a.nrows() == 0 {
        return Ok(rhs.clone());
    }
    let lu = a.clone().lu();
    let u = lu.u();
    let pivots: Vec<f64> = (0..u.nrows()).map(|i| u[(i, i)].abs()).collect();
    let largest = pivots.iter().cloned().fold(0.0, f64::max);
    let smallest = pivots.iter().cloned().fold(f64::INFINITY, f64::min);
    let scale = largest.max(reference_scale);
    if !(smallest > PIVOT_TOL * scale) {
        return Err(smallest);
    }
    lu.solve(rhs).ok_or(smallest)
}

/// Unpivoted LDL^T pivots of a symmetric matrix. A grounded Laplacian is
/// positive definite exactly when every pivot is positive.
pub fn ldl_pivots(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut a = m.clone();
    let mut pivots = Vec::with_capacity(n);
    for k in 0..n {
        let d = a[(k, k)];
        pivots.push(d);
        if d == 0.0 {
            // Continue with the remaining block untouched; the zero pivot is
            // already recorded.
            continue;
        }
        for i in (k + 1)..n {
            let l = a[(i, k)] / d;
            if l == 0.0 {
                continue;
            }
            for j in (k + 1)..n {
                a[(i, j)] -= l * a[(k, j)];
            }
        }
    }
    pivots
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
