//! Sparse LU factorization with partial pivoting, left-looking over
//! columns with a depth-first symbolic step per column. Handles the
//! indefinite saddle-point systems that arise in the coarse-space
//! construction as well as general small systems.

use std::error::Error;
use std::fmt;

use crate::assembly::SparseMatrix;

/// Failure modes of the direct factorization.
#[derive(Debug, Clone)]
pub enum DirectError {
    /// No acceptable pivot was found in this column; the matrix is
    /// singular or numerically indistinguishable from singular.
    Singular { column: usize },
    /// The matrix is not square.
    NotSquare { nrows: usize, ncols: usize },
    /// Input dimensions do not line up.
    DimensionMismatch { expected: usize, got: usize },
}

impl fmt::Display for DirectError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DirectError::Singular { column } => {
                write!(f, "matrix is singular at column {}", column)
            }
            DirectError::NotSquare { nrows, ncols } => {
                write!(f, "matrix is not square: {} x {}", nrows, ncols)
            }
            DirectError::DimensionMismatch { expected, got } => write!(
                f,
                "dimension mismatch: expected vector of length {}, got {}",
                expected, got
            ),
        }
    }
}

impl Error for DirectError {}

/// LU factors of a row-permuted matrix: `L U = P A`. L is unit lower
/// triangular (unit diagonal implicit), both factors stored by columns
/// in pivot-order row coordinates.
#[derive(Debug, Clone)]
pub struct SparseLu {
    n: usize,
    l_colptr: Vec<usize>,
    l_rows: Vec<usize>,
    l_vals: Vec<f64>,
    u_colptr: Vec<usize>,
    u_rows: Vec<usize>,
    u_vals: Vec<f64>,
    u_diag: Vec<f64>,
    /// Maps an original row index to its pivot-order position.
    row_position: Vec<usize>,
}

impl SparseLu {
    /// Factors the matrix. Pivots are chosen by absolute value within
    /// each column; a column whose candidates are all below
    /// `1e-13` times the column's own original magnitude (or that has
    /// no candidates) signals a singular matrix. The threshold is
    /// column-relative on purpose: in saddle-point systems with strong
    /// coefficient contrast the constraint block's Schur pivots are
    /// smaller than the operator entries by the contrast itself, and a
    /// global floor would misread those well-posed systems as
    /// singular.
    pub fn factor(a: &SparseMatrix) -> Result<Self, DirectError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(DirectError::NotSquare {
                nrows: n,
                ncols: a.ncols(),
            });
        }

        // Columns of A, read as rows of the transpose.
        let at = a.transpose();

        let mut l_colptr = vec![0usize; n + 1];
        let mut l_rows: Vec<usize> = Vec::new();
        let mut l_vals: Vec<f64> = Vec::new();
        let mut u_colptr = vec![0usize; n + 1];
        let mut u_rows: Vec<usize> = Vec::new();
        let mut u_vals: Vec<f64> = Vec::new();
        let mut u_diag = vec![0.0f64; n];

        let mut row_position = vec![usize::MAX; n];
        let mut x = vec![0.0f64; n];
        let mut visited = vec![usize::MAX; n];
        // Depth-first traversal state: node and next-child cursor.
        let mut dfs_stack: Vec<(usize, usize)> = Vec::new();
        let mut topo: Vec<usize> = Vec::new();

        for j in 0..n {
            let (a_rows, a_vals) = at.row(j);
            let col_scale = a_vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let pivot_floor = 1e-13 * col_scale.max(f64::MIN_POSITIVE);

            // Symbolic step: the nonzero pattern of the triangular
            // solve is the set of nodes reachable from the pattern of
            // column j through already-built columns of L.
            topo.clear();
            for &r in a_rows {
                if visited[r] == j {
                    continue;
                }
                visited[r] = j;
                dfs_stack.push((r, 0));
                while let Some(top) = dfs_stack.len().checked_sub(1) {
                    let (node, child) = dfs_stack[top];
                    let pos = row_position[node];
                    let mut pushed = false;
                    if pos != usize::MAX {
                        let start = l_colptr[pos];
                        let end = l_colptr[pos + 1];
                        let mut c = child;
                        while start + c < end {
                            let next = l_rows[start + c];
                            c += 1;
                            if visited[next] != j {
                                visited[next] = j;
                                dfs_stack[top].1 = c;
                                dfs_stack.push((next, 0));
                                pushed = true;
                                break;
                            }
                        }
                        if !pushed {
                            dfs_stack[top].1 = c;
                        }
                    }
                    if !pushed {
                        dfs_stack.pop();
                        topo.push(node);
                    }
                }
            }
            // Reverse post-order gives a topological order for the
            // dependency graph of the triangular solve.
            topo.reverse();

            // Numeric step: scatter column j and eliminate along the
            // topological order.
            for p in 0..a_rows.len() {
                x[a_rows[p]] = a_vals[p];
            }
            for &node in &topo {
                let pos = row_position[node];
                if pos == usize::MAX {
                    continue;
                }
                let xv = x[node];
                if xv == 0.0 {
                    continue;
                }
                for q in l_colptr[pos]..l_colptr[pos + 1] {
                    x[l_rows[q]] -= l_vals[q] * xv;
                }
            }

            // Pivot search among rows not yet assigned a position.
            let mut pivot_row = usize::MAX;
            let mut pivot_abs = 0.0f64;
            for &r in topo.iter() {
                if row_position[r] == usize::MAX {
                    let v = x[r].abs();
                    if v > pivot_abs {
                        pivot_abs = v;
                        pivot_row = r;
                    }
                }
            }
            if pivot_row == usize::MAX || pivot_abs <= pivot_floor {
                return Err(DirectError::Singular { column: j });
            }
            let pivot_val = x[pivot_row];
            row_position[pivot_row] = j;
            u_diag[j] = pivot_val;

            for &r in topo.iter() {
                let v = x[r];
                x[r] = 0.0;
                if r == pivot_row {
                    continue;
                }
                let pos = row_position[r];
                if pos != usize::MAX && pos < j {
                    if v != 0.0 {
                        u_rows.push(pos);
                        u_vals.push(v);
                    }
                } else if v != 0.0 {
                    l_rows.push(r);
                    l_vals.push(v / pivot_val);
                }
            }
            l_colptr[j + 1] = l_rows.len();
            u_colptr[j + 1] = u_rows.len();
        }

        // Rewrite L row indices into pivot-order positions so the
        // triangular solves work in a single coordinate system.
        for r in l_rows.iter_mut() {
            *r = row_position[*r];
        }

        Ok(SparseLu {
            n,
            l_colptr,
            l_rows,
            l_vals,
            u_colptr,
            u_rows,
            u_vals,
            u_diag,
            row_position,
        })
    }

    /// Solves `A x = b` using the stored factors.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, DirectError> {
        if b.len() != self.n {
            return Err(DirectError::DimensionMismatch {
                expected: self.n,
                got: b.len(),
            });
        }
        // Apply the row permutation.
        let mut y = vec![0.0; self.n];
        for r in 0..self.n {
            y[self.row_position[r]] = b[r];
        }
        // Forward solve with unit lower L, by columns.
        for p in 0..self.n {
            let yv = y[p];
            if yv != 0.0 {
                for q in self.l_colptr[p]..self.l_colptr[p + 1] {
                    y[self.l_rows[q]] -= self.l_vals[q] * yv;
                }
            }
        }
        // Backward solve with U, by columns.
        for j in (0..self.n).rev() {
            let xj = y[j] / self.u_diag[j];
            y[j] = xj;
            if xj != 0.0 {
                for q in self.u_colptr[j]..self.u_colptr[j + 1] {
                    y[self.u_rows[q]] -= self.u_vals[q] * xj;
                }
            }
        }
        Ok(y)
    }

    /// Matrix dimension.
    pub fn dim(&self) -> usize {
        self.n
    }
}

/// Convenience wrapper: factor and solve in one call.
pub fn direct_solve(a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>, DirectError> {
    SparseLu::factor(a)?.solve(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::TripletBuilder;
    use crate::linalg::{cg_solve, norm2};

    fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
        let n = b.len();
        let mut m = a.to_vec();
        let mut x = b.to_vec();
        for k in 0..n {
            let mut piv = k;
            for i in (k + 1)..n {
                if m[i][k].abs() > m[piv][k].abs() {
                    piv = i;
                }
            }
            if m[piv][k].abs() < 1e-13 {
                return None;
            }
            m.swap(k, piv);
            x.swap(k, piv);
            for i in (k + 1)..n {
                let f = m[i][k] / m[k][k];
                for j in k..n {
                    m[i][j] -= f * m[k][j];
                }
                x[i] -= f * x[k];
            }
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..n {
                s -= m[i][j] * x[j];
            }
            x[i] = s / m[i][i];
        }
        Some(x)
    }

    fn from_dense(d: &[Vec<f64>]) -> SparseMatrix {
        let mut t = TripletBuilder::new(d.len(), d[0].len());
        for (i, row) in d.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    t.add(i, j, v);
                }
            }
        }
        t.build()
    }

    struct XorShift(u64);
    impl XorShift {
        fn next_f64(&mut self) -> f64 {
            let mut x = self.0;
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            self.0 = x;
            (x >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        }
    }

    #[test]
    fn identity_round_trip() {
        let a = SparseMatrix::identity(5);
        let b = vec![1.0, -2.0, 3.0, 0.0, 7.0];
        let x = direct_solve(&a, &b).unwrap();
        assert_eq!(x, b);
    }

    #[test]
    fn saddle_point_with_zero_diagonal_needs_pivoting() {
        let a = from_dense(&[vec![2.0, 1.0], vec![1.0, 0.0]]);
        let x = direct_solve(&a, &[1.0, 1.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14);
        assert!((x[1] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn random_systems_match_dense_elimination() {
        let mut rng = XorShift(0x9e3779b97f4a7c15);
        for trial in 0..8 {
            let n = 5 + trial;
            let mut d = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..n {
                    if i == j || rng.next_f64() > 0.1 {
                        d[i][j] = rng.next_f64();
                    }
                }
            }
            let b: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
            let x_ref = dense_solve(&d, &b).expect("oracle should handle this matrix");
            let a = from_dense(&d);
            let x = direct_solve(&a, &b).unwrap();
            for i in 0..n {
                assert!(
                    (x[i] - x_ref[i]).abs() < 1e-9 * (1.0 + x_ref[i].abs()),
                    "trial {} component {} differs: {} vs {}",
                    trial,
                    i,
                    x[i],
                    x_ref[i]
                );
            }
        }
    }

    #[test]
    fn agrees_with_conjugate_gradients_on_spd_system() {
        let n = 30;
        let mut t = TripletBuilder::new(n, n);
        for i in 0..n {
            t.add(i, i, 4.0);
            if i > 0 {
                t.add(i, i - 1, -1.0);
                t.add(i - 1, i, -1.0);
            }
            if i >= 5 {
                t.add(i, i - 5, -0.5);
                t.add(i - 5, i, -0.5);
            }
        }
        let a = t.build();
        let b: Vec<f64> = (0..n).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
        let x_direct = direct_solve(&a, &b).unwrap();
        let (x_cg, _) = cg_solve(&a, &b, &vec![0.0; n], 1e-12, 10 * n, None).unwrap();
        for i in 0..n {
            assert!((x_direct[i] - x_cg[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn residual_is_small_on_sparse_grid_operator() {
        // 2D five-point stencil plus identity on a 12 x 12 grid.
        let nx = 12;
        let n = nx * nx;
        let mut t = TripletBuilder::new(n, n);
        for j in 0..nx {
            for i in 0..nx {
                let c = j * nx + i;
                let mut diag = 1.0;
                let link = |other: usize, t: &mut TripletBuilder| {
                    t.add(c, other, -1.0);
                };
                if i > 0 {
                    link(c - 1, &mut t);
                    diag += 1.0;
                }
                if i + 1 < nx {
                    link(c + 1, &mut t);
                    diag += 1.0;
                }
                if j > 0 {
                    link(c - nx, &mut t);
                    diag += 1.0;
                }
                if j + 1 < nx {
                    link(c + nx, &mut t);
                    diag += 1.0;
                }
                t.add(c, c, diag);
            }
        }
        let a = t.build();
        let b: Vec<f64> = (0..n).map(|i| ((i % 17) as f64) * 0.25 - 2.0).collect();
        let x = direct_solve(&a, &b).unwrap();
        let ax = a.mul_vec(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        assert!(norm2(&r) <= 1e-11 * norm2(&b));
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = from_dense(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        match direct_solve(&a, &[1.0, 2.0]) {
            Err(DirectError::Singular { .. }) => {}
            other => panic!("expected singular error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn structurally_empty_column_is_reported_as_singular() {
        let mut t = TripletBuilder::new(3, 3);
        t.add(0, 0, 1.0);
        t.add(1, 1, 1.0);
        t.add(2, 0, 1.0);
        // Column 2 has no entries at all.
        let a = t.build();
        match direct_solve(&a, &[1.0, 1.0, 1.0]) {
            Err(DirectError::Singular { column }) => assert_eq!(column, 2),
            other => panic!("expected singular error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn indefinite_bordered_system_solves_accurately() {
        // A small saddle-point system of the kind the coarse-space
        // construction produces: SPD block bordered by a constraint row.
        let d = vec![
            vec![2.0, -1.0, 0.0, 1.0],
            vec![-1.0, 2.0, -1.0, 1.0],
            vec![0.0, -1.0, 2.0, 1.0],
            vec![1.0, 1.0, 1.0, 0.0],
        ];
        let b = vec![0.0, 0.0, 0.0, 3.0];
        let x_ref = dense_solve(&d, &b).unwrap();
        let a = from_dense(&d);
        let x = direct_solve(&a, &b).unwrap();
        for i in 0..4 {
            assert!((x[i] - x_ref[i]).abs() < 1e-12);
        }
    }
}
