//! Finite-volume assembly of the multicontinuum system
//!
//!   M dp/dt + A p = F,  A = D + Q,
//!
//! with a diagonal mass matrix M (storage coefficient times cell
//! measure), per-continuum two-point flux diffusion blocks D_a, and
//! symmetric interchange blocks Q built from co-located cell overlap or
//! from embedded matrix-fracture connections. Well terms fold into the
//! diagonal of A and into F.

mod sparse;

pub use sparse::{SparseMatrix, TripletBuilder};

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::geometry::{FractureMesh, StructuredGrid2D};

#[derive(Debug, Clone, PartialEq)]
pub enum AssemblyError {
    InvalidArgument(String),
    Unsupported(String),
}

impl fmt::Display for AssemblyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AssemblyError::InvalidArgument(m) => write!(f, "invalid argument: {m}"),
            AssemblyError::Unsupported(m) => write!(f, "unsupported configuration: {m}"),
        }
    }
}

impl std::error::Error for AssemblyError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContinuumKind {
    Matrix,
    Fracture,
}

/// Physical description of one continuum. Coefficients are uniform;
/// `c = 0` (no storage) and `k = 0` (no flow) are both legal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuumSpec {
    pub kind: ContinuumKind,
    pub c: f64,
    pub k: f64,
    pub source: f64,
    pub initial: f64,
}

impl ContinuumSpec {
    pub fn new(kind: ContinuumKind, c: f64, k: f64) -> Self {
        ContinuumSpec { kind, c, k, source: 0.0, initial: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingGeometry {
    /// Both continua live on the same grid; exchange acts cell by cell.
    CoLocated,
    /// Matrix-fracture transfer through the meshed connection list.
    Embedded,
}

/// Exchange between an unordered pair of continua with coefficient
/// `sigma >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingSpec {
    pub pair: (usize, usize),
    pub sigma: f64,
    pub geometry: CouplingGeometry,
}

/// Well acting on the cells of one continuum whose midpoint falls in an
/// axis-aligned rectangle (x0, y0, x1, y1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WellSpec {
    pub continuum: usize,
    pub rect: (f64, f64, f64, f64),
    pub rate: f64,
    pub pressure: f64,
}

/// How the rate term q_w(p - p_w) enters the system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WellModel {
    /// Injection form: +q_w measure on the diagonal of A and
    /// +q_w p_w measure in F, driving p toward p_w.
    #[default]
    Injection,
    /// Literal source reading with the opposite sign on both terms.
    LiteralSource,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssemblyOptions {
    pub well_model: WellModel,
    /// Scale co-located exchange by the cell measure (sigma per unit
    /// volume). Disabled, sigma couples cell pairs directly.
    pub colocated_cell_measure: bool,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        AssemblyOptions { well_model: WellModel::Injection, colocated_cell_measure: true }
    }
}

/// Degrees of freedom with stored measures and locations but no face
/// structure. Upscaled continua whose coarse cells do not tile a grid
/// (a fracture continuum on the coarse scale) use this.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub measures: Vec<f64>,
    pub midpoints: Vec<(f64, f64)>,
}

/// The mesh backing one continuum's degrees of freedom.
#[derive(Debug, Clone)]
pub enum ContinuumMesh {
    Matrix(Arc<StructuredGrid2D>),
    Fracture(Arc<FractureMesh>),
    Cloud(Arc<PointCloud>),
}

impl ContinuumMesh {
    pub fn cell_count(&self) -> usize {
        match self {
            ContinuumMesh::Matrix(g) => g.cell_count(),
            ContinuumMesh::Fracture(m) => m.cell_count(),
            ContinuumMesh::Cloud(c) => c.measures.len(),
        }
    }

    pub fn measure(&self, cell: usize) -> f64 {
        match self {
            ContinuumMesh::Matrix(g) => g.cell_area(),
            ContinuumMesh::Fracture(m) => m.cells[cell].length,
            ContinuumMesh::Cloud(c) => c.measures[cell],
        }
    }

    pub fn midpoint(&self, cell: usize) -> (f64, f64) {
        match self {
            ContinuumMesh::Matrix(g) => g.center(cell),
            ContinuumMesh::Fracture(m) => m.cells[cell].midpoint(),
            ContinuumMesh::Cloud(c) => c.midpoints[cell],
        }
    }
}

/// One assembled exchange pair: `q` couples continuum `pair.0` rows to
/// `pair.1` columns, `q_t` is its transpose.
#[derive(Debug, Clone)]
pub struct AssembledCoupling {
    pub spec: CouplingSpec,
    pub q: SparseMatrix,
    pub q_t: SparseMatrix,
}

/// A well after cell selection.
#[derive(Debug, Clone)]
pub struct ResolvedWell {
    pub spec: WellSpec,
    pub cells: Vec<usize>,
}

/// Assembled block system. Fine-grid systems have one diffusion block
/// per continuum; upscaled systems may add off-diagonal diffusion
/// blocks, which the time-stepping splits treat together with the
/// exchange terms.
#[derive(Debug, Clone)]
pub struct MulticontinuumSystem {
    continua: Vec<ContinuumSpec>,
    meshes: Vec<ContinuumMesh>,
    offsets: Vec<usize>,
    mass: Vec<f64>,
    diffusion: Vec<SparseMatrix>,
    diffusion_off: BTreeMap<(usize, usize), SparseMatrix>,
    couplings: Vec<AssembledCoupling>,
    coupling_diag: Vec<f64>,
    well_diag: Vec<f64>,
    rhs_source: Vec<f64>,
    rhs_well: Vec<f64>,
    wells: Vec<ResolvedWell>,
    initial: Vec<f64>,
    measures: Vec<f64>,
    midpoints: Vec<(f64, f64)>,
    /// Ordering permeability per continuum (decides L/U solve order).
    k_order: Vec<f64>,
}

/// Diffusion block for one continuum: two-point flux with transmissibility
/// k |E| / d on every interior face; rows sum to zero. The full diagonal
/// is kept in the pattern even where it is zero.
pub fn assemble_diffusion(mesh: &ContinuumMesh, spec: &ContinuumSpec) -> SparseMatrix {
    let n = mesh.cell_count();
    let mut b = TripletBuilder::new(n, n);
    for i in 0..n {
        b.add(i, i, 0.0);
    }
    match mesh {
        ContinuumMesh::Matrix(grid) => {
            // |E| = d = h on a uniform grid, so T = k on every face.
            let t = spec.k;
            for (i, j) in grid.interior_faces() {
                b.add(i, i, t);
                b.add(j, j, t);
                b.add(i, j, -t);
                b.add(j, i, -t);
            }
        }
        ContinuumMesh::Fracture(mesh) => {
            for e in &mesh.edges {
                let t = spec.k * e.interface / e.dist;
                b.add(e.l, e.l, t);
                b.add(e.n, e.n, t);
                b.add(e.l, e.n, -t);
                b.add(e.n, e.l, -t);
            }
        }
        // A point cloud has no face structure, so its two-point flux
        // part is empty (the diagonal stays in the pattern).
        ContinuumMesh::Cloud(_) => {}
    }
    b.build()
}

/// Diagonal of the mass block: storage coefficient times cell measure.
pub fn assemble_mass(mesh: &ContinuumMesh, spec: &ContinuumSpec) -> Vec<f64> {
    (0..mesh.cell_count()).map(|i| spec.c * mesh.measure(i)).collect()
}

/// Exchange block for one coupling; rows index `spec.pair.0`.
pub fn assemble_coupling(
    meshes: &[ContinuumMesh],
    spec: &CouplingSpec,
    options: &AssemblyOptions,
) -> Result<SparseMatrix, AssemblyError> {
    let (a, b) = spec.pair;
    let (na, nb) = (meshes[a].cell_count(), meshes[b].cell_count());
    let mut builder = TripletBuilder::new(na, nb);
    match spec.geometry {
        CouplingGeometry::CoLocated => {
            if na != nb {
                return Err(AssemblyError::InvalidArgument(format!(
                    "co-located coupling {a}-{b} needs equal cell counts, got {na} and {nb}"
                )));
            }
            for i in 0..na {
                let w = if options.colocated_cell_measure { meshes[a].measure(i) } else { 1.0 };
                builder.add(i, i, spec.sigma * w);
            }
        }
        CouplingGeometry::Embedded => {
            let (frac, flip) = match (&meshes[a], &meshes[b]) {
                (ContinuumMesh::Matrix(_), ContinuumMesh::Fracture(f)) => (f.clone(), false),
                (ContinuumMesh::Fracture(f), ContinuumMesh::Matrix(_)) => (f.clone(), true),
                _ => {
                    return Err(AssemblyError::InvalidArgument(format!(
                        "embedded coupling {a}-{b} needs one matrix and one fracture continuum"
                    )))
                }
            };
            for conn in &frac.connections {
                let v = spec.sigma * conn.interface / conn.dist;
                if flip {
                    builder.add(conn.fracture_cell, conn.matrix_cell, v);
                } else {
                    builder.add(conn.matrix_cell, conn.fracture_cell, v);
                }
            }
        }
    }
    Ok(builder.build())
}

/// Assembles the full system over one grid and at most one fracture mesh.
pub fn assemble_system(
    grid: &Arc<StructuredGrid2D>,
    fracture_mesh: Option<&Arc<FractureMesh>>,
    continua: &[ContinuumSpec],
    couplings: &[CouplingSpec],
    wells: &[WellSpec],
    options: &AssemblyOptions,
) -> Result<MulticontinuumSystem, AssemblyError> {
    if continua.is_empty() {
        return Err(AssemblyError::InvalidArgument("at least one continuum required".into()));
    }
    for (idx, c) in continua.iter().enumerate() {
        if !(c.c >= 0.0 && c.k >= 0.0) {
            return Err(AssemblyError::InvalidArgument(format!(
                "continuum {idx} has negative coefficients (c = {}, k = {})",
                c.c, c.k
            )));
        }
    }
    let fracture_count = continua.iter().filter(|c| c.kind == ContinuumKind::Fracture).count();
    if fracture_count > 1 {
        return Err(AssemblyError::Unsupported(
            "at most one lower-dimensional continuum per fracture mesh".into(),
        ));
    }
    if fracture_count == 1 && fracture_mesh.is_none() {
        return Err(AssemblyError::InvalidArgument(
            "a fracture continuum is declared but no fracture mesh was given".into(),
        ));
    }

    let meshes: Vec<ContinuumMesh> = continua
        .iter()
        .map(|c| match c.kind {
            ContinuumKind::Matrix => ContinuumMesh::Matrix(grid.clone()),
            ContinuumKind::Fracture => ContinuumMesh::Fracture(fracture_mesh.unwrap().clone()),
        })
        .collect();

    let ncont = continua.len();
    let mut seen_pairs = BTreeMap::new();
    for cp in couplings {
        let (a, b) = cp.pair;
        if a >= ncont || b >= ncont {
            return Err(AssemblyError::InvalidArgument(format!(
                "coupling references continuum {} but only {ncont} exist",
                a.max(b)
            )));
        }
        if a == b {
            return Err(AssemblyError::InvalidArgument(format!("coupling {a}-{b} pairs a continuum with itself")));
        }
        if cp.sigma < 0.0 {
            return Err(AssemblyError::InvalidArgument(format!("coupling {a}-{b} has negative sigma")));
        }
        if continua[a].kind == ContinuumKind::Fracture && continua[b].kind == ContinuumKind::Fracture {
            return Err(AssemblyError::Unsupported(format!(
                "coupling {a}-{b} joins two fracture continua"
            )));
        }
        let key = (a.min(b), a.max(b));
        if seen_pairs.insert(key, ()).is_some() {
            return Err(AssemblyError::InvalidArgument(format!(
                "duplicate coupling for pair {}-{}",
                key.0, key.1
            )));
        }
    }

    let mut offsets = vec![0usize];
    for mesh in &meshes {
        offsets.push(offsets.last().unwrap() + mesh.cell_count());
    }
    let n = *offsets.last().unwrap();

    let mut mass = Vec::with_capacity(n);
    let mut rhs_source = Vec::with_capacity(n);
    let mut initial = Vec::with_capacity(n);
    let mut measures = Vec::with_capacity(n);
    let mut midpoints = Vec::with_capacity(n);
    for (spec, mesh) in continua.iter().zip(&meshes) {
        mass.extend(assemble_mass(mesh, spec));
        for i in 0..mesh.cell_count() {
            rhs_source.push(spec.source * mesh.measure(i));
            initial.push(spec.initial);
            measures.push(mesh.measure(i));
            midpoints.push(mesh.midpoint(i));
        }
    }

    let diffusion: Vec<SparseMatrix> =
        continua.iter().zip(&meshes).map(|(spec, mesh)| assemble_diffusion(mesh, spec)).collect();

    let mut assembled = Vec::new();
    let mut coupling_diag = vec![0.0; n];
    for cp in couplings {
        let q = assemble_coupling(&meshes, cp, options)?;
        let q_t = q.transpose();
        let (a, b) = cp.pair;
        for i in 0..q.nrows() {
            let (_, vals) = q.row(i);
            coupling_diag[offsets[a] + i] += vals.iter().sum::<f64>();
        }
        for j in 0..q_t.nrows() {
            let (_, vals) = q_t.row(j);
            coupling_diag[offsets[b] + j] += vals.iter().sum::<f64>();
        }
        assembled.push(AssembledCoupling { spec: *cp, q, q_t });
    }

    let mut well_diag = vec![0.0; n];
    let mut rhs_well = vec![0.0; n];
    let mut resolved_wells = Vec::new();
    for w in wells {
        if w.continuum >= ncont {
            return Err(AssemblyError::InvalidArgument(format!(
                "well references continuum {} but only {ncont} exist",
                w.continuum
            )));
        }
        let (x0, y0, x1, y1) = w.rect;
        if !(x1 > x0 && y1 > y0) {
            return Err(AssemblyError::InvalidArgument(format!("well rectangle {:?} is empty", w.rect)));
        }
        let mesh = &meshes[w.continuum];
        let cells: Vec<usize> = (0..mesh.cell_count())
            .filter(|&i| {
                let (mx, my) = mesh.midpoint(i);
                mx >= x0 && mx <= x1 && my >= y0 && my <= y1
            })
            .collect();
        if cells.is_empty() {
            return Err(AssemblyError::InvalidArgument(format!(
                "well rectangle {:?} selects no cells of continuum {}",
                w.rect, w.continuum
            )));
        }
        let sign = match options.well_model {
            WellModel::Injection => 1.0,
            WellModel::LiteralSource => -1.0,
        };
        for &i in &cells {
            let g = offsets[w.continuum] + i;
            let m = mesh.measure(i);
            well_diag[g] += sign * w.rate * m;
            rhs_well[g] += sign * w.rate * w.pressure * m;
        }
        resolved_wells.push(ResolvedWell { spec: *w, cells });
    }

    let k_order = continua.iter().map(|c| c.k).collect();
    Ok(MulticontinuumSystem {
        continua: continua.to_vec(),
        meshes,
        offsets,
        mass,
        diffusion,
        diffusion_off: BTreeMap::new(),
        couplings: assembled,
        coupling_diag,
        well_diag,
        rhs_source,
        rhs_well,
        wells: resolved_wells,
        initial,
        measures,
        midpoints,
        k_order,
    })
}

impl MulticontinuumSystem {
    /// Builds a system directly from already-assembled parts; the
    /// upscaling path uses this for the coarse system.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        continua: Vec<ContinuumSpec>,
        meshes: Vec<ContinuumMesh>,
        offsets: Vec<usize>,
        mass: Vec<f64>,
        diffusion: Vec<SparseMatrix>,
        diffusion_off: BTreeMap<(usize, usize), SparseMatrix>,
        couplings: Vec<AssembledCoupling>,
        well_diag: Vec<f64>,
        rhs_source: Vec<f64>,
        rhs_well: Vec<f64>,
        initial: Vec<f64>,
        measures: Vec<f64>,
        midpoints: Vec<(f64, f64)>,
    ) -> Self {
        let n = *offsets.last().unwrap();
        let mut coupling_diag = vec![0.0; n];
        for cpl in &couplings {
            let (a, b) = cpl.spec.pair;
            for i in 0..cpl.q.nrows() {
                coupling_diag[offsets[a] + i] += cpl.q.row(i).1.iter().sum::<f64>();
            }
            for j in 0..cpl.q_t.nrows() {
                coupling_diag[offsets[b] + j] += cpl.q_t.row(j).1.iter().sum::<f64>();
            }
        }
        let k_order = continua.iter().map(|c| c.k).collect();
        MulticontinuumSystem {
            continua,
            meshes,
            offsets,
            mass,
            diffusion,
            diffusion_off,
            couplings,
            coupling_diag,
            well_diag,
            rhs_source,
            rhs_well,
            wells: Vec::new(),
            initial,
            measures,
            midpoints,
            k_order,
        }
    }

    pub fn n_continua(&self) -> usize {
        self.continua.len()
    }

    pub fn n_dofs(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn continuum(&self, a: usize) -> &ContinuumSpec {
        &self.continua[a]
    }

    pub fn mesh(&self, a: usize) -> &ContinuumMesh {
        &self.meshes[a]
    }

    pub fn offset(&self, a: usize) -> usize {
        self.offsets[a]
    }

    pub fn range(&self, a: usize) -> std::ops::Range<usize> {
        self.offsets[a]..self.offsets[a + 1]
    }

    pub fn continuum_size(&self, a: usize) -> usize {
        self.offsets[a + 1] - self.offsets[a]
    }

    pub fn mass_diag(&self) -> &[f64] {
        &self.mass
    }

    pub fn well_diag(&self) -> &[f64] {
        &self.well_diag
    }

    /// Diagonal exchange lumping: row sums of all coupling blocks, by
    /// global index.
    pub fn coupling_diag(&self) -> &[f64] {
        &self.coupling_diag
    }

    pub fn diffusion_block(&self, a: usize) -> &SparseMatrix {
        &self.diffusion[a]
    }

    pub fn diffusion_off_blocks(&self) -> &BTreeMap<(usize, usize), SparseMatrix> {
        &self.diffusion_off
    }

    pub fn couplings(&self) -> &[AssembledCoupling] {
        &self.couplings
    }

    pub fn wells(&self) -> &[ResolvedWell] {
        &self.wells
    }

    pub fn initial_vector(&self) -> Vec<f64> {
        self.initial.clone()
    }

    pub fn measures(&self) -> &[f64] {
        &self.measures
    }

    pub fn midpoints(&self) -> &[(f64, f64)] {
        &self.midpoints
    }

    pub fn k_order(&self) -> &[f64] {
        &self.k_order
    }

    /// Source vector F including well contributions.
    pub fn rhs(&self) -> Vec<f64> {
        self.rhs_source.iter().zip(&self.rhs_well).map(|(s, w)| s + w).collect()
    }

    pub fn rhs_source(&self) -> &[f64] {
        &self.rhs_source
    }

    pub fn rhs_well(&self) -> &[f64] {
        &self.rhs_well
    }

    /// Drops all well terms; stability experiments use the homogeneous
    /// operator.
    pub fn without_wells(&self) -> MulticontinuumSystem {
        let mut s = self.clone();
        s.well_diag = vec![0.0; s.n_dofs()];
        s.rhs_well = vec![0.0; s.n_dofs()];
        s.wells = Vec::new();
        s
    }

    /// The (a, b) block of A. Diagonal blocks combine diffusion, the
    /// exchange row sums, and well terms; off-diagonal blocks are
    /// -Q_ab plus any off-diagonal diffusion.
    pub fn block(&self, a: usize, b: usize) -> SparseMatrix {
        if a == b {
            let r = self.range(a);
            let extra: Vec<f64> =
                r.map(|g| self.coupling_diag[g] + self.well_diag[g]).collect();
            return self.diffusion[a].add_scaled(&SparseMatrix::from_diag(&extra), 1.0);
        }
        let (na, nb) = (self.continuum_size(a), self.continuum_size(b));
        let mut block = SparseMatrix::zeros(na, nb);
        let mut any = false;
        for cpl in &self.couplings {
            if cpl.spec.pair == (a, b) {
                block = block.add_scaled(&cpl.q, -1.0);
                any = true;
            } else if cpl.spec.pair == (b, a) {
                block = block.add_scaled(&cpl.q_t, -1.0);
                any = true;
            }
        }
        if let Some(d) = self.diffusion_off.get(&(a, b)) {
            block = block.add_scaled(d, 1.0);
            any = true;
        }
        if !any {
            SparseMatrix::zeros(na, nb)
        } else {
            block
        }
    }

    /// Assembles the global matrix A = D + Q (+ well diagonal).
    pub fn full_matrix(&self) -> SparseMatrix {
        let n = self.n_dofs();
        let mut b = TripletBuilder::new(n, n);
        for a in 0..self.n_continua() {
            let off = self.offsets[a];
            let d = &self.diffusion[a];
            for i in 0..d.nrows() {
                let (cols, vals) = d.row(i);
                for (&j, &v) in cols.iter().zip(vals) {
                    b.add(off + i, off + j, v);
                }
            }
        }
        for g in 0..n {
            b.add(g, g, self.coupling_diag[g] + self.well_diag[g]);
        }
        for cpl in &self.couplings {
            let (ca, cb) = cpl.spec.pair;
            let (oa, ob) = (self.offsets[ca], self.offsets[cb]);
            for i in 0..cpl.q.nrows() {
                let (cols, vals) = cpl.q.row(i);
                for (&j, &v) in cols.iter().zip(vals) {
                    b.add(oa + i, ob + j, -v);
                    b.add(ob + j, oa + i, -v);
                }
            }
        }
        for (&(ba, bb), d) in &self.diffusion_off {
            let (oa, ob) = (self.offsets[ba], self.offsets[bb]);
            for i in 0..d.nrows() {
                let (cols, vals) = d.row(i);
                for (&j, &v) in cols.iter().zip(vals) {
                    b.add(oa + i, ob + j, v);
                }
            }
        }
        b.build()
    }
}
