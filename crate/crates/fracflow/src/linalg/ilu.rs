//! Incomplete LU factorization with zero fill-in, on the sparsity
//! pattern of the input matrix.

use std::error::Error;
use std::fmt;

use crate::assembly::SparseMatrix;

/// Failure modes of the incomplete factorization.
#[derive(Debug, Clone)]
pub enum FactorError {
    /// A pivot fell below the drop threshold relative to the largest
    /// diagonal entry of the input.
    ZeroPivot { row: usize, value: f64 },
    /// The sparsity pattern has no entry on the diagonal of this row,
    /// so no pivot position exists.
    MissingDiagonal { row: usize },
    /// The matrix is not square.
    NotSquare { nrows: usize, ncols: usize },
}

impl fmt::Display for FactorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FactorError::ZeroPivot { row, value } => write!(
                f,
                "incomplete factorization hit a near-zero pivot {:.3e} in row {}",
                value, row
            ),
            FactorError::MissingDiagonal { row } => {
                write!(f, "sparsity pattern lacks a diagonal entry in row {}", row)
            }
            FactorError::NotSquare { nrows, ncols } => {
                write!(f, "matrix is not square: {} x {}", nrows, ncols)
            }
        }
    }
}

impl Error for FactorError {}

/// ILU(0) factorization. Stores L (unit lower, implicit ones) and U
/// packed into a single value array over the original pattern.
#[derive(Debug, Clone)]
pub struct Ilu0 {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    diag_pos: Vec<usize>,
}

impl Ilu0 {
    /// Computes the factorization. Pivots are compared against
    /// `1e-14 * max |diag(a)|`; anything at or below that threshold is
    /// treated as a structural breakdown.
    pub fn factor(a: &SparseMatrix) -> Result<Self, FactorError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(FactorError::NotSquare {
                nrows: n,
                ncols: a.ncols(),
            });
        }

        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..n {
            let (cols, vals) = a.row(i);
            col_idx.extend_from_slice(cols);
            values.extend_from_slice(vals);
            row_ptr.push(col_idx.len());
        }

        let mut diag_pos = vec![usize::MAX; n];
        let mut max_diag: f64 = 0.0;
        for i in 0..n {
            for p in row_ptr[i]..row_ptr[i + 1] {
                if col_idx[p] == i {
                    diag_pos[i] = p;
                    max_diag = max_diag.max(values[p].abs());
                }
            }
            if diag_pos[i] == usize::MAX {
                return Err(FactorError::MissingDiagonal { row: i });
            }
        }
        let pivot_floor = 1e-14 * max_diag.max(f64::MIN_POSITIVE);

        // Position of each column within the current row, for pattern
        // lookups during the row update.
        let mut pos_of_col = vec![usize::MAX; n];

        for i in 0..n {
            for p in row_ptr[i]..row_ptr[i + 1] {
                pos_of_col[col_idx[p]] = p;
            }

            for p in row_ptr[i]..row_ptr[i + 1] {
                let k = col_idx[p];
                if k >= i {
                    break;
                }
                let pivot = values[diag_pos[k]];
                if pivot.abs() <= pivot_floor {
                    return Err(FactorError::ZeroPivot {
                        row: k,
                        value: pivot,
                    });
                }
                let mult = values[p] / pivot;
                values[p] = mult;
                for q in (diag_pos[k] + 1)..row_ptr[k + 1] {
                    let j = col_idx[q];
                    let target = pos_of_col[j];
                    if target != usize::MAX {
                        values[target] -= mult * values[q];
                    }
                }
            }

            for p in row_ptr[i]..row_ptr[i + 1] {
                pos_of_col[col_idx[p]] = usize::MAX;
            }

            let d = values[diag_pos[i]];
            if d.abs() <= pivot_floor {
                return Err(FactorError::ZeroPivot { row: i, value: d });
            }
        }

        Ok(Ilu0 {
            n,
            row_ptr,
            col_idx,
            values,
            diag_pos,
        })
    }

    /// Applies the preconditioner: solves `L U z = r`.
    pub fn apply(&self, r: &[f64]) -> Vec<f64> {
        assert_eq!(r.len(), self.n, "preconditioner dimension mismatch");
        let mut z = r.to_vec();
        for i in 0..self.n {
            let mut s = z[i];
            for p in self.row_ptr[i]..self.diag_pos[i] {
                s -= self.values[p] * z[self.col_idx[p]];
            }
            z[i] = s;
        }
        for i in (0..self.n).rev() {
            let mut s = z[i];
            for p in (self.diag_pos[i] + 1)..self.row_ptr[i + 1] {
                s -= self.values[p] * z[self.col_idx[p]];
            }
            z[i] = s / self.values[self.diag_pos[i]];
        }
        z
    }
}
