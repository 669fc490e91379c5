//! Linear operators built from the sparse factor, and preconditioned CG.
//!
//! With the ordering permutation `P` ((Pv)_q = v[perm[q]]) and factor `U`,
//! the precision operator is `Pᵀ U Uᵀ P ≈ Θ^{-1}` and the covariance operator
//! is `Pᵀ U^{-T} U^{-1} P ≈ Θ`, both in the original measurement indexing.

use crate::factorization::SparseUpperFactor;
use crate::geometry::Ordering;
use crate::measurements::JacobianRows;
use crate::{Error, Result};

/// A square linear map applied through matrix-vector products.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, v: &[f64]) -> Vec<f64>;
}

/// Wraps a closure as a [`LinearOperator`].
pub struct FnOperator<F: Fn(&[f64]) -> Vec<f64> + Sync> {
    pub n: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> Vec<f64> + Sync> LinearOperator for FnOperator<F> {
    fn dim(&self) -> usize {
        self.n
    }
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        (self.f)(v)
    }
}

/// Solves `U x = b` (or `Uᵀ x = b` when `transposed`) for the sparse upper
/// factor.
pub fn triangular_solve(u: &SparseUpperFactor, b: &[f64], transposed: bool) -> Result<Vec<f64>> {
    let n = u.n;
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: b.len(),
        });
    }
    let mut x = b.to_vec();
    if transposed {
        // Uᵀ is lower triangular; forward substitution, rows of Uᵀ = columns of U.
        for j in 0..n {
            let (rows, vals) = u.col(j);
            let mut s = x[j];
            for (&i, &v) in rows.iter().zip(vals).take(rows.len() - 1) {
                s -= v * x[i as usize];
            }
            let d = vals[rows.len() - 1];
            if d == 0.0 {
                return Err(Error::ZeroDiagonal(j));
            }
            x[j] = s / d;
        }
    } else {
        // Back substitution; after x[j] is final, scatter the rest of column j.
        for j in (0..n).rev() {
            let (rows, vals) = u.col(j);
            let d = vals[rows.len() - 1];
            if d == 0.0 {
                return Err(Error::ZeroDiagonal(j));
            }
            let xj = x[j] / d;
            x[j] = xj;
            for (&i, &v) in rows.iter().zip(vals).take(rows.len() - 1) {
                x[i as usize] -= v * xj;
            }
        }
    }
    Ok(x)
}

fn permute(ord: &Ordering, v: &[f64]) -> Vec<f64> {
    ord.perm.iter().map(|&i| v[i]).collect()
}

fn unpermute(ord: &Ordering, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for (q, &i) in ord.perm.iter().enumerate() {
        out[i] = v[q];
    }
    out
}

/// `u_mat · v` for the sparse upper factor (ordered indexing).
fn factor_apply(u: &SparseUpperFactor, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; u.n];
    for j in 0..u.n {
        let vj = v[j];
        if vj == 0.0 {
            continue;
        }
        let (rows, vals) = u.col(j);
        for (&i, &w) in rows.iter().zip(vals) {
            out[i as usize] += w * vj;
        }
    }
    out
}

/// `uᵀ · v` for the sparse upper factor (ordered indexing).
fn factor_apply_transpose(u: &SparseUpperFactor, v: &[f64]) -> Vec<f64> {
    (0..u.n)
        .map(|j| {
            let (rows, vals) = u.col(j);
            rows.iter().zip(vals).map(|(&i, &w)| w * v[i as usize]).sum()
        })
        .collect()
}

/// Approximate precision action `Pᵀ U Uᵀ P v ≈ Θ^{-1} v` in the original
/// measurement indexing.
pub fn apply_precision(u: &SparseUpperFactor, ord: &Ordering, v: &[f64]) -> Vec<f64> {
    let w = permute(ord, v);
    let w = factor_apply_transpose(u, &w);
    let w = factor_apply(u, &w);
    unpermute(ord, &w)
}

/// Approximate covariance action `Pᵀ U^{-T} U^{-1} P v ≈ Θ v` in the original
/// measurement indexing.
pub fn apply_covariance(u: &SparseUpperFactor, ord: &Ordering, v: &[f64]) -> Result<Vec<f64>> {
    let w = permute(ord, v);
    let w = triangular_solve(u, &w, false)?;
    let w = triangular_solve(u, &w, true)?;
    Ok(unpermute(ord, &w))
}

/// The reduced operator `DF ∘ cov ∘ DFᵀ` acting on measurement-row vectors.
pub struct ReducedOperator<'a, C: Fn(&[f64]) -> Vec<f64> + Sync> {
    pub jac: &'a JacobianRows,
    pub cov: C,
}

impl<'a, C: Fn(&[f64]) -> Vec<f64> + Sync> LinearOperator for ReducedOperator<'a, C> {
    fn dim(&self) -> usize {
        self.jac.n_rows()
    }
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.jac.apply(&(self.cov)(&self.jac.apply_transpose(v)))
    }
}

/// Convergence report of one pCG solve.
#[derive(Debug, Clone)]
pub struct PcgReport {
    pub iterations: usize,
    pub residual_norm: f64,
    pub converged: bool,
}

/// Preconditioned conjugate gradient for SPD `a` with preconditioner action
/// `m_inv ≈ a^{-1}`. Stops when `‖r‖ ≤ tol · ‖b‖`; errors on non-positive
/// curvature.
pub fn pcg(
    a: &dyn LinearOperator,
    m_inv: &dyn Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<(Vec<f64>, PcgReport)> {
    let n = a.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: b.len(),
        });
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    let b_norm = norm(b);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok((
            x,
            PcgReport {
                iterations: 0,
                residual_norm: 0.0,
                converged: true,
            },
        ));
    }
    let mut r = b.to_vec();
    let mut z = m_inv(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut r_norm = b_norm;
    let mut iters = 0;
    while r_norm > tol * b_norm && iters < max_iters {
        let ap = a.apply(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::PcgBreakdown { iteration: iters });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        z = m_inv(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rz = rz_new;
        r_norm = norm(&r);
        iters += 1;
    }
    Ok((
        x,
        PcgReport {
            iterations: iters,
            residual_norm: r_norm / b_norm,
            converged: r_norm <= tol * b_norm,
        },
    ))
}

/// Default pCG iteration cap used by the solvers.
pub fn default_max_iters(n: usize) -> usize {
    10 * (n as f64).sqrt() as usize + 100
}
