//! Closed-form minimizers of the alternating-minimization sub-problems.
//!
//! Each operator here solves one separable (or small linear-system) piece
//! of the augmented Lagrangian. Every closed form is validated in the test
//! suite against a brute-force or line-search oracle that knows nothing
//! about the formula.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Singular value thresholding: the unique minimizer of
/// `tau * ||X||_* + 1/2 * ||X - M||_F^2`.
pub fn svt(m: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    debug_assert!(tau >= 0.0);
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::SvdFailed);
    }
    if tau == 0.0 {
        return Ok(m.clone());
    }
    let mut svd = m.clone().svd(true, true);
    for s in svd.singular_values.iter_mut() {
        *s = (*s - tau).max(0.0);
    }
    svd.recompose().map_err(|_| Error::SvdFailed)
}

/// Nuclear norm (sum of singular values).
pub fn nuclear_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.iter().sum()
}

/// Elementwise `sign(x) * max(|x| - tau, 0)`: the minimizer of
/// `tau * ||y||_1 + 1/2 * ||y - x||^2`.
pub fn soft_threshold(x: &[f64], tau: f64) -> Vec<f64> {
    debug_assert!(tau >= 0.0);
    x.iter()
        .map(|&v| v.signum() * (v.abs() - tau).max(0.0))
        .collect()
}

/// Soft threshold with a per-element weight: minimizes
/// `tau * ||w .* y||_1 + 1/2 * ||y - x||^2`.
pub fn weighted_soft_threshold(x: &[f64], tau: f64, w: &[f64]) -> Vec<f64> {
    debug_assert_eq!(x.len(), w.len());
    x.iter()
        .zip(w)
        .map(|(&v, &we)| v.signum() * (v.abs() - tau * we).max(0.0))
        .collect()
}

/// Euclidean projection onto the nonnegative orthant.
pub fn project_nonneg(m: &mut DMatrix<f64>) {
    for v in m.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

pub fn project_nonneg_slice(x: &mut [f64]) {
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Exact minimizer of the elementwise quadratic
/// `lam2 * w_e * (d_i_e - y_e - other_e)^2 + mu/2 * (y_e - anchor_e)^2`.
///
/// `lam2_weights` carries the per-element data-term weight (the validity
/// mask in the gradient domain); `None` means weight 1 everywhere.
pub fn solve_quadratic_gradient(
    d_i: &[f64],
    other: &[f64],
    lam2: f64,
    mu: f64,
    anchor: &[f64],
    lam2_weights: Option<&[f64]>,
) -> Result<Vec<f64>> {
    if mu <= 0.0 {
        return Err(Error::NonPositiveMu(mu));
    }
    debug_assert_eq!(d_i.len(), other.len());
    debug_assert_eq!(d_i.len(), anchor.len());
    let out = (0..d_i.len())
        .map(|e| {
            let w = lam2_weights.map_or(1.0, |ws| ws[e]);
            (2.0 * lam2 * w * (d_i[e] - other[e]) + mu * anchor[e]) / (2.0 * lam2 * w + mu)
        })
        .collect();
    Ok(out)
}

/// Full B/C sub-problem: minimizes, elementwise,
/// `tau_e * |y| + lam2 * w_e * (d_i_e - y - other_e)^2 + mu/2 * (y - anchor_e)^2`.
///
/// The combined quadratic has curvature `2*lam2*w_e + mu`, so the solution
/// is the quadratic minimizer shrunk by `tau_e / (2*lam2*w_e + mu)`.
pub fn solve_coupled_l1_quadratic(
    d_i: &[f64],
    other: &[f64],
    lam2: f64,
    mu: f64,
    anchor: &[f64],
    tau: &[f64],
    lam2_weights: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let base = solve_quadratic_gradient(d_i, other, lam2, mu, anchor, lam2_weights)?;
    Ok(base
        .iter()
        .enumerate()
        .map(|(e, &y)| {
            let w = lam2_weights.map_or(1.0, |ws| ws[e]);
            let rho = 2.0 * lam2 * w + mu;
            y.signum() * (y.abs() - tau[e] / rho).max(0.0)
        })
        .collect())
}

/// Conjugate gradient for a symmetric positive definite operator.
///
/// Iterates until the residual norm drops below `tol * ||rhs||` or
/// `max_iter` passes; `x` supplies the warm start and receives the result.
pub fn cg_solve(
    op: impl Fn(&[f64]) -> Vec<f64>,
    rhs: &[f64],
    x: &mut Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> usize {
    let n = rhs.len();
    assert_eq!(x.len(), n);
    let rhs_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    if rhs_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return 0;
    }
    let ax = op(x);
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut p = r.clone();
    let mut rs_old: f64 = r.iter().map(|v| v * v).sum();
    let stop = (tol * rhs_norm) * (tol * rhs_norm);
    let mut iters = 0;
    while rs_old > stop && iters < max_iter {
        let ap = op(&p);
        let p_ap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if p_ap <= 0.0 {
            break; // operator not positive definite along p; bail out
        }
        let alpha = rs_old / p_ap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rs_new / rs_old;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rs_old = rs_new;
        iters += 1;
    }
    iters
}
