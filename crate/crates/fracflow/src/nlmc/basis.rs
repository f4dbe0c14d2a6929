//! Constrained local problems on oversampled regions and the basis
//! functions they produce.
//!
//! For a coarse cell, the region collects all fine cells of every
//! continuum whose coarse cell lies in the oversampling window. The
//! local operator restricts diffusion and exchange to those cells but
//! keeps each row's full diagonal, which acts as a homogeneous
//! Dirichlet condition on the cut and leaves the physical no-flow
//! boundary untouched. One average constraint per continuum per window
//! cell pins the coarse-cell means; the basis for target (cell i,
//! continuum beta) prescribes mean one there and zero elsewhere.

use rayon::prelude::*;

use super::{CoarseGrid, NlmcError};
use crate::assembly::{ContinuumMesh, MulticontinuumSystem, SparseMatrix, TripletBuilder};
use crate::linalg::{DirectError, SparseLu};

/// One multiscale basis function: the solution of a region's
/// constrained problem for a single coarse dof, stored per continuum
/// as parallel cell/value lists sorted by cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisFunction {
    pub coarse_cell: usize,
    pub continuum: usize,
    pub components: Vec<(Vec<usize>, Vec<f64>)>,
}

/// A region's assembled saddle-point problem.
pub(crate) struct LocalRegion {
    /// Fine dofs (continuum, cell) in elimination order: sorted by
    /// host grid cell, with lower-dimensional dofs right after their
    /// host, so the factorization stays banded.
    pub dofs: Vec<(usize, usize)>,
    /// Constraints (continuum, coarse cell), ordered by window cell
    /// then continuum; constraint rows sit after all fine dofs.
    pub constraints: Vec<(usize, usize)>,
    /// Per continuum: fine cell to local index (or usize::MAX).
    pub local: Vec<Vec<usize>>,
    pub kkt: SparseMatrix,
}

impl LocalRegion {
    pub fn n_fine(&self) -> usize {
        self.dofs.len()
    }

    fn constraint_index(&self, continuum: usize, cell: usize) -> Option<usize> {
        self.constraints
            .iter()
            .position(|&(a, k)| a == continuum && k == cell)
    }
}

/// Assembles the region around one coarse cell.
pub(crate) fn build_region(
    system: &MulticontinuumSystem,
    coarse: &CoarseGrid,
    coarse_cell: usize,
) -> LocalRegion {
    let l = system.n_continua();
    let window = coarse.window(coarse_cell);

    // Sort key: (host grid cell, mesh kind, continuum, cell). The host
    // of a matrix cell is itself; lower-dimensional cells follow their
    // host cell.
    let mut keyed: Vec<(usize, u8, usize, usize)> = Vec::new();
    for a in 0..l {
        match system.mesh(a) {
            ContinuumMesh::Matrix(_) => {
                for &k in &window {
                    for &c in coarse.members(a, k) {
                        keyed.push((c, 0, a, c));
                    }
                }
            }
            ContinuumMesh::Fracture(fm) => {
                for &k in &window {
                    for &c in coarse.members(a, k) {
                        keyed.push((fm.cells[c].host, 1, a, c));
                    }
                }
            }
            ContinuumMesh::Cloud(_) => {
                unreachable!("coarse partitions are built over fine meshes only")
            }
        }
    }
    keyed.sort_unstable();
    let dofs: Vec<(usize, usize)> = keyed.iter().map(|&(_, _, a, c)| (a, c)).collect();

    let mut local: Vec<Vec<usize>> = (0..l)
        .map(|a| vec![usize::MAX; system.continuum_size(a)])
        .collect();
    for (p, &(a, c)) in dofs.iter().enumerate() {
        local[a][c] = p;
    }

    let mut constraints: Vec<(usize, usize)> = Vec::new();
    for &k in &window {
        for a in 0..l {
            if coarse.dof(a, k).is_some() {
                constraints.push((a, k));
            }
        }
    }

    let nf = dofs.len();
    let n = nf + constraints.len();
    let mut b = TripletBuilder::new(n, n);
    let coupling_diag = system.coupling_diag();

    for (p, &(a, c)) in dofs.iter().enumerate() {
        // Diffusion row with the global diagonal kept; neighbors
        // outside the region are cut away.
        let (cols, vals) = system.diffusion_block(a).row(c);
        for (&j, &v) in cols.iter().zip(vals) {
            if j == c {
                b.add(p, p, v);
            } else if local[a][j] != usize::MAX {
                b.add(p, local[a][j], v);
            }
        }
        // Exchange: the full lumped diagonal plus in-region partners.
        // Partners always share the coarse cell, so none are cut.
        b.add(p, p, coupling_diag[system.offset(a) + c]);
        for cpl in system.couplings() {
            let (ca, cb) = cpl.spec.pair;
            if ca == a {
                let (cols, vals) = cpl.q.row(c);
                for (&j, &v) in cols.iter().zip(vals) {
                    let q = local[cb][j];
                    debug_assert_ne!(q, usize::MAX, "exchange partner left the region");
                    if q != usize::MAX {
                        b.add(p, q, -v);
                    }
                }
            }
            if cb == a {
                let (cols, vals) = cpl.q_t.row(c);
                for (&j, &v) in cols.iter().zip(vals) {
                    let q = local[ca][j];
                    debug_assert_ne!(q, usize::MAX, "exchange partner left the region");
                    if q != usize::MAX {
                        b.add(p, q, -v);
                    }
                }
            }
        }
    }

    for (ci, &(a, k)) in constraints.iter().enumerate() {
        let row = nf + ci;
        let inv = 1.0 / coarse.measure(a, k);
        for &c in coarse.members(a, k) {
            let p = local[a][c];
            let v = system.mesh(a).measure(c) * inv;
            b.add(row, p, v);
            b.add(p, row, v);
        }
    }

    LocalRegion {
        dofs,
        constraints,
        local,
        kkt: b.build(),
    }
}

/// Solves all basis functions of one region: one per continuum present
/// in the center cell, sharing a single factorization.
pub(crate) fn solve_region_bases(
    system: &MulticontinuumSystem,
    coarse: &CoarseGrid,
    coarse_cell: usize,
) -> Result<Vec<BasisFunction>, NlmcError> {
    let l = system.n_continua();
    let targets: Vec<usize> = (0..l)
        .filter(|&beta| coarse.dof(beta, coarse_cell).is_some())
        .collect();
    if targets.is_empty() {
        return Ok(Vec::new());
    }

    let region = build_region(system, coarse, coarse_cell);
    let lu = SparseLu::factor(&region.kkt).map_err(|e| match e {
        DirectError::Singular { column } => NlmcError::SingularLocalProblem {
            coarse_cell,
            targets: targets.clone(),
            detail: format!("factorization broke down at local column {}", column),
        },
        other => NlmcError::SingularLocalProblem {
            coarse_cell,
            targets: targets.clone(),
            detail: other.to_string(),
        },
    })?;

    let nf = region.n_fine();
    let mut out = Vec::with_capacity(targets.len());
    for &beta in &targets {
        let target_row = region
            .constraint_index(beta, coarse_cell)
            .expect("the center cell always carries its own constraint");
        let mut rhs = vec![0.0; region.kkt.nrows()];
        rhs[nf + target_row] = 1.0;
        let y = lu.solve(&rhs).map_err(|e| NlmcError::SingularLocalProblem {
            coarse_cell,
            targets: targets.clone(),
            detail: e.to_string(),
        })?;

        // Verify the defining averages before accepting the basis.
        for (ci, &(a, k)) in region.constraints.iter().enumerate() {
            let expected = if a == beta && k == coarse_cell { 1.0 } else { 0.0 };
            let mut s = 0.0;
            for &c in coarse.members(a, k) {
                s += system.mesh(a).measure(c) * y[region.local[a][c]];
            }
            s /= coarse.measure(a, k);
            if (s - expected).abs() > 1e-8 {
                return Err(NlmcError::ConstraintViolation {
                    coarse_cell,
                    continuum: beta,
                    detail: format!(
                        "average over coarse cell {} of continuum {} is {:.3e}, expected {} \
                         (constraint {})",
                        k, a, s, expected, ci
                    ),
                });
            }
        }

        let mut components: Vec<(Vec<usize>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); l];
        let mut pairs: Vec<Vec<(usize, f64)>> = vec![Vec::new(); l];
        for (p, &(a, c)) in region.dofs.iter().enumerate() {
            pairs[a].push((c, y[p]));
        }
        for (a, mut list) in pairs.into_iter().enumerate() {
            list.sort_unstable_by_key(|&(c, _)| c);
            components[a] = list.into_iter().unzip();
        }
        out.push(BasisFunction {
            coarse_cell,
            continuum: beta,
            components,
        });
    }
    Ok(out)
}

/// Solves the basis functions of every coarse cell, regions in
/// parallel, ordered by (coarse cell, continuum).
pub fn solve_all_bases(
    system: &MulticontinuumSystem,
    coarse: &CoarseGrid,
) -> Result<Vec<BasisFunction>, NlmcError> {
    let per_cell: Result<Vec<Vec<BasisFunction>>, NlmcError> = (0..coarse.n_cells())
        .into_par_iter()
        .map(|ci| solve_region_bases(system, coarse, ci))
        .collect();
    Ok(per_cell?.into_iter().flatten().collect())
}
