//! Preconditioned conjugate gradient method.

use std::error::Error;
use std::fmt;
use std::time::Instant;

use super::ilu::Ilu0;
use super::{dot, norm2};
use crate::assembly::SparseMatrix;

/// Outcome of a single linear solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    /// Number of iterations performed (0 if the initial guess or a zero
    /// right-hand side already satisfied the tolerance).
    pub iterations: usize,
    /// True relative residual at exit, |b - A x| / |b|.
    pub relative_residual: f64,
    /// Wall time of the solve in seconds.
    pub seconds: f64,
}

/// Failure modes of the iterative solver.
#[derive(Debug, Clone)]
pub enum SolveError {
    /// The iteration budget was exhausted before the residual dropped
    /// below the tolerance.
    NonConvergence {
        iterations: usize,
        relative_residual: f64,
    },
    /// The search direction had nonpositive curvature, so the matrix is
    /// not positive definite on the explored subspace.
    IndefiniteOperator { iteration: usize, curvature: f64 },
    /// Input dimensions do not line up.
    DimensionMismatch { expected: usize, got: usize },
}

impl fmt::Display for SolveError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolveError::NonConvergence {
                iterations,
                relative_residual,
            } => write!(
                f,
                "conjugate gradients did not converge in {} iterations \
                 (relative residual {:.3e})",
                iterations, relative_residual
            ),
            SolveError::IndefiniteOperator {
                iteration,
                curvature,
            } => write!(
                f,
                "operator is not positive definite: curvature {:.3e} at \
                 iteration {}",
                curvature, iteration
            ),
            SolveError::DimensionMismatch { expected, got } => write!(
                f,
                "dimension mismatch: expected vector of length {}, got {}",
                expected, got
            ),
        }
    }
}

impl Error for SolveError {}

/// Solves `a x = b` for a symmetric positive definite matrix with the
/// conjugate gradient method, optionally preconditioned by an ILU(0)
/// factorization.
///
/// Convergence is declared when the recurrence residual satisfies
/// `|r| <= tol * |b|` and the true residual, recomputed from scratch,
/// confirms it. If the true residual disagrees (accumulated rounding in
/// the recurrence), the iteration is restarted from the true residual
/// and continues. A zero right-hand side returns the zero vector.
pub fn cg_solve(
    a: &SparseMatrix,
    b: &[f64],
    x0: &[f64],
    tol: f64,
    max_iterations: usize,
    precond: Option<&Ilu0>,
) -> Result<(Vec<f64>, SolverReport), SolveError> {
    let start = Instant::now();
    let n = a.nrows();
    if b.len() != n {
        return Err(SolveError::DimensionMismatch {
            expected: n,
            got: b.len(),
        });
    }
    if x0.len() != n {
        return Err(SolveError::DimensionMismatch {
            expected: n,
            got: x0.len(),
        });
    }

    let b_norm = norm2(b);
    if b_norm == 0.0 {
        return Ok((
            vec![0.0; n],
            SolverReport {
                iterations: 0,
                relative_residual: 0.0,
                seconds: start.elapsed().as_secs_f64(),
            },
        ));
    }

    let mut x = x0.to_vec();
    let mut r = b.to_vec();
    let mut ax = vec![0.0; n];
    a.mul_vec_into(&x, &mut ax);
    for i in 0..n {
        r[i] -= ax[i];
    }

    let mut r_norm = norm2(&r);
    if r_norm <= tol * b_norm {
        return Ok((
            x,
            SolverReport {
                iterations: 0,
                relative_residual: r_norm / b_norm,
                seconds: start.elapsed().as_secs_f64(),
            },
        ));
    }

    let apply_precond = |r: &[f64]| -> Vec<f64> {
        match precond {
            Some(m) => m.apply(r),
            None => r.to_vec(),
        }
    };

    let curvature_floor = 1e-14 * a.inf_norm().max(1.0);

    let mut z = apply_precond(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];

    for iteration in 1..=max_iterations {
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        let pp = dot(&p, &p);
        if pap <= curvature_floor * pp {
            return Err(SolveError::IndefiniteOperator {
                iteration,
                curvature: pap,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        r_norm = norm2(&r);

        if r_norm <= tol * b_norm {
            a.mul_vec_into(&x, &mut ax);
            let mut r_true = b.to_vec();
            for i in 0..n {
                r_true[i] -= ax[i];
            }
            let true_norm = norm2(&r_true);
            if true_norm <= tol * b_norm {
                return Ok((
                    x,
                    SolverReport {
                        iterations: iteration,
                        relative_residual: true_norm / b_norm,
                        seconds: start.elapsed().as_secs_f64(),
                    },
                ));
            }
            // The recurrence drifted; restart from the true residual.
            r = r_true;
            r_norm = true_norm;
            z = apply_precond(&r);
            p = z.clone();
            rz = dot(&r, &z);
            continue;
        }

        z = apply_precond(&r);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }

    Err(SolveError::NonConvergence {
        iterations: max_iterations,
        relative_residual: r_norm / b_norm,
    })
}
