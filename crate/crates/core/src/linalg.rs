//! Small dense symmetric solves for the weighted least-squares steps.
//!
//! Matrices are row-major `q × q` slices; `q` is at most a handful of columns.

use crate::error::{ModalError, Result};

/// Relative ridge added to the equilibrated Gram matrix.
pub(crate) const RIDGE_EPS: f64 = 1e-10;
/// Largest accepted 1-norm condition number of the equilibrated Gram matrix.
pub(crate) const MAX_CONDITION: f64 = 1e12;

/// In-place Cholesky factorisation `A = L Lᵀ`; the lower triangle of `a` is
/// overwritten with `L`. Returns `false` on a non-positive pivot.
fn cholesky_in_place(a: &mut [f64], q: usize) -> bool {
    for j in 0..q {
        let mut d = a[j * q + j];
        for k in 0..j {
            d -= a[j * q + k] * a[j * q + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j * q + j] = d;
        for i in (j + 1)..q {
            let mut s = a[i * q + j];
            for k in 0..j {
                s -= a[i * q + k] * a[j * q + k];
            }
            a[i * q + j] = s / d;
        }
    }
    true
}

fn cholesky_solve(l: &[f64], q: usize, b: &mut [f64]) {
    for i in 0..q {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * q + k] * b[k];
        }
        b[i] = s / l[i * q + i];
    }
    for i in (0..q).rev() {
        let mut s = b[i];
        for k in (i + 1)..q {
            s -= l[k * q + i] * b[k];
        }
        b[i] = s / l[i * q + i];
    }
}

fn norm1(a: &[f64], q: usize) -> f64 {
    (0..q)
        .map(|j| (0..q).map(|i| a[i * q + j].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Solves `gram · b = rhs` for a symmetric positive semi-definite `gram`.
///
/// The system is equilibrated to unit diagonal, checked for conditioning,
/// factored with a ridge of `RIDGE_EPS · trace/q`, and polished by iterative
/// refinement against the unridged equations.
pub(crate) fn solve_spd(gram: &[f64], rhs: &[f64], q: usize) -> Result<Vec<f64>> {
    debug_assert_eq!(gram.len(), q * q);
    debug_assert_eq!(rhs.len(), q);
    let singular = |condition| ModalError::SingularDesign { condition };

    let mut scale = vec![0.0; q];
    for i in 0..q {
        let d = gram[i * q + i];
        if !(d > 0.0) || !d.is_finite() {
            return Err(singular(f64::INFINITY));
        }
        scale[i] = d.sqrt();
    }
    let mut eq = vec![0.0; q * q];
    for i in 0..q {
        for j in 0..q {
            eq[i * q + j] = gram[i * q + j] / (scale[i] * scale[j]);
        }
    }
    let b_eq: Vec<f64> = rhs.iter().zip(&scale).map(|(r, s)| r / s).collect();

    // conditioning of the unridged system
    let mut plain = eq.clone();
    if !cholesky_in_place(&mut plain, q) {
        return Err(singular(f64::INFINITY));
    }
    let mut inv_norm = 0.0f64;
    let mut col = vec![0.0; q];
    for j in 0..q {
        col.iter_mut().for_each(|c| *c = 0.0);
        col[j] = 1.0;
        cholesky_solve(&plain, q, &mut col);
        inv_norm = inv_norm.max(col.iter().map(|c| c.abs()).sum());
    }
    let condition = norm1(&eq, q) * inv_norm;
    if !(condition <= MAX_CONDITION) {
        return Err(singular(condition));
    }

    let trace: f64 = (0..q).map(|i| eq[i * q + i]).sum();
    let ridge = RIDGE_EPS * trace / q as f64;
    let mut ridged = eq.clone();
    for i in 0..q {
        ridged[i * q + i] += ridge;
    }
    if !cholesky_in_place(&mut ridged, q) {
        return Err(singular(condition));
    }
    let mut x = b_eq.clone();
    cholesky_solve(&ridged, q, &mut x);
    if condition * RIDGE_EPS < 0.5 {
        let mut r = vec![0.0; q];
        for _ in 0..3 {
            for i in 0..q {
                r[i] = b_eq[i] - (0..q).map(|j| eq[i * q + j] * x[j]).sum::<f64>();
            }
            cholesky_solve(&ridged, q, &mut r);
            x.iter_mut().zip(&r).for_each(|(xi, ri)| *xi += ri);
        }
    }
    Ok(x.iter().zip(&scale).map(|(xi, s)| xi / s).collect())
}

/// Accumulates the weighted Gram matrix `ZᵀWZ` and `ZᵀWy` from row-major design rows.
pub(crate) fn weighted_normal_equations(
    rows: &[f64],
    q: usize,
    weights: &[f64],
    y: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let mut gram = vec![0.0; q * q];
    let mut rhs = vec![0.0; q];
    for ((z, &w), &yi) in rows.chunks_exact(q).zip(weights).zip(y) {
        if w == 0.0 {
            continue;
        }
        for a in 0..q {
            let wz = w * z[a];
            rhs[a] += wz * yi;
            for b in 0..=a {
                gram[a * q + b] += wz * z[b];
            }
        }
    }
    for a in 0..q {
        for b in 0..a {
            gram[b * q + a] = gram[a * q + b];
        }
    }
    (gram, rhs)
}

/// Solves the weighted least-squares problem with the given design rows.
pub(crate) fn weighted_least_squares(
    rows: &[f64],
    q: usize,
    weights: &[f64],
    y: &[f64],
) -> Result<Vec<f64>> {
    let (gram, rhs) = weighted_normal_equations(rows, q, weights, y);
    solve_spd(&gram, &rhs, q)
}

/// Inverse of a small symmetric positive-definite matrix.
pub(crate) fn spd_inverse(a: &[f64], q: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; q * q];
    let mut col = vec![0.0; q];
    for j in 0..q {
        col.iter_mut().for_each(|c| *c = 0.0);
        col[j] = 1.0;
        let x = solve_spd(a, &col, q)?;
        for i in 0..q {
            out[i * q + j] = x[i];
        }
    }
    Ok(out)
}
