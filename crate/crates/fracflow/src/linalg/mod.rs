//! Linear solvers: preconditioned conjugate gradients for the SPD
//! time-step systems, ILU(0) as the preconditioner, and a sparse LU
//! with partial pivoting for indefinite problems (the saddle-point
//! systems of the coarse-space construction) and for small oracles.

mod cg;
mod direct;
mod ilu;

pub use cg::{cg_solve, SolveError, SolverReport};
pub use direct::{direct_solve, DirectError, SparseLu};
pub use ilu::{FactorError, Ilu0};

/// Euclidean norm.
pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Dot product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
