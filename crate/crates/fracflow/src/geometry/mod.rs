//! Structured grids, fracture networks, and the lower-dimensional
//! fracture meshes embedded in them.
//!
//! Fracture segments are clipped against the grid: every maximal piece of
//! a segment inside one cell becomes a fracture cell, pieces are split at
//! segment intersections, and each piece is hosted by the matrix cell
//! containing its midpoint. Matrix-fracture transfer uses the piece length
//! as interface measure and an area-averaged point-to-line distance.

mod meshing;

pub use meshing::mesh_fractures;

use std::fmt;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub enum GeometryError {
    InvalidArgument(String),
    /// Parse failure in a fracture network file; line numbers are 1-based.
    Parse { line: usize, message: String },
    Io(String),
}

impl fmt::Display for GeometryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeometryError::InvalidArgument(m) => write!(f, "invalid argument: {m}"),
            GeometryError::Parse { line, message } => write!(f, "parse error at line {line}: {message}"),
            GeometryError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl std::error::Error for GeometryError {}

/// Uniform axis-aligned grid of `nx * ny` square cells of side `h`,
/// covering `[0, nx*h] x [0, ny*h]`. Cells are indexed row-major:
/// `idx = j*nx + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredGrid2D {
    nx: usize,
    ny: usize,
    h: f64,
}

/// Validated grid constructor.
pub fn build_grid(nx: usize, ny: usize, h: f64) -> Result<StructuredGrid2D, GeometryError> {
    if nx == 0 || ny == 0 {
        return Err(GeometryError::InvalidArgument(format!(
            "grid dimensions must be positive, got {nx} x {ny}"
        )));
    }
    if !(h.is_finite() && h > 0.0) {
        return Err(GeometryError::InvalidArgument(format!("cell size must be positive, got {h}")));
    }
    Ok(StructuredGrid2D { nx, ny, h })
}

impl StructuredGrid2D {
    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn cell_count(&self) -> usize {
        self.nx * self.ny
    }

    pub fn cell_area(&self) -> f64 {
        self.h * self.h
    }

    pub fn width(&self) -> f64 {
        self.nx as f64 * self.h
    }

    pub fn height(&self) -> f64 {
        self.ny as f64 * self.h
    }

    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    pub fn pos(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }

    pub fn center(&self, idx: usize) -> (f64, f64) {
        let (i, j) = self.pos(idx);
        ((i as f64 + 0.5) * self.h, (j as f64 + 0.5) * self.h)
    }

    /// Interior faces as (cell, neighbor) pairs; every pair appears once.
    /// For a uniform grid both the facet length and the center distance
    /// equal `h` on every face.
    pub fn interior_faces(&self) -> Vec<(usize, usize)> {
        let mut faces = Vec::with_capacity(2 * self.nx * self.ny);
        for j in 0..self.ny {
            for i in 0..self.nx {
                let c = self.idx(i, j);
                if i + 1 < self.nx {
                    faces.push((c, self.idx(i + 1, j)));
                }
                if j + 1 < self.ny {
                    faces.push((c, self.idx(i, j + 1)));
                }
            }
        }
        faces
    }

    /// Cell containing (x, y). Points on an interior grid line are
    /// assigned to the lower-index cell; points outside are clamped.
    pub fn host_cell(&self, x: f64, y: f64) -> usize {
        let i = axis_cell(x / self.h, self.nx);
        let j = axis_cell(y / self.h, self.ny);
        self.idx(i, j)
    }

    pub fn contains(&self, x: f64, y: f64, tol: f64) -> bool {
        x >= -tol && y >= -tol && x <= self.width() + tol && y <= self.height() + tol
    }
}

/// Tie-break for coordinates on a grid line: the lower-index cell wins.
fn axis_cell(u: f64, n: usize) -> usize {
    let r = u.round();
    let cell = if (u - r).abs() <= 1e-9 { r as i64 - 1 } else { u.floor() as i64 };
    cell.clamp(0, n as i64 - 1) as usize
}

/// Straight fracture segment with distinct endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: (f64, f64),
    pub b: (f64, f64),
}

impl Segment {
    pub fn length(&self) -> f64 {
        let (dx, dy) = (self.b.0 - self.a.0, self.b.1 - self.a.1);
        dx.hypot(dy)
    }

    pub fn point_at(&self, t: f64) -> (f64, f64) {
        (self.a.0 + t * (self.b.0 - self.a.0), self.a.1 + t * (self.b.1 - self.a.1))
    }

    /// Distance from a point to the infinite line through this segment.
    pub fn line_distance(&self, p: (f64, f64)) -> f64 {
        let (rx, ry) = (self.b.0 - self.a.0, self.b.1 - self.a.1);
        let (qx, qy) = (p.0 - self.a.0, p.1 - self.a.1);
        (rx * qy - ry * qx).abs() / self.length()
    }
}

/// A set of fracture segments, all expected to lie inside the target
/// grid's closure.
#[derive(Debug, Clone, PartialEq)]
pub struct FractureNetwork {
    pub segments: Vec<Segment>,
}

impl FractureNetwork {
    pub fn from_endpoints(points: &[((f64, f64), (f64, f64))]) -> Self {
        FractureNetwork { segments: points.iter().map(|&(a, b)| Segment { a, b }).collect() }
    }

    pub fn total_length(&self) -> f64 {
        self.segments.iter().map(Segment::length).sum()
    }
}

/// Reads a network file: one `x1 y1 x2 y2` segment per line, blank lines
/// and `#` comments ignored.
pub fn read_fracture_network(path: &Path) -> Result<FractureNetwork, GeometryError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| GeometryError::Io(format!("{}: {e}", path.display())))?;
    parse_fracture_network(&text)
}

pub fn parse_fracture_network(text: &str) -> Result<FractureNetwork, GeometryError> {
    let mut segments = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(GeometryError::Parse {
                line: lineno + 1,
                message: format!("expected 4 coordinates, got {}", fields.len()),
            });
        }
        let mut coords = [0.0f64; 4];
        for (k, field) in fields.iter().enumerate() {
            coords[k] = field.parse().map_err(|_| GeometryError::Parse {
                line: lineno + 1,
                message: format!("bad number {field:?}"),
            })?;
        }
        segments.push(Segment { a: (coords[0], coords[1]), b: (coords[2], coords[3]) });
    }
    Ok(FractureNetwork { segments })
}

pub fn write_fracture_network(path: &Path, network: &FractureNetwork) -> Result<(), GeometryError> {
    let mut out = String::from("# fracture network: x1 y1 x2 y2 per segment\n");
    for s in &network.segments {
        out.push_str(&format!("{} {} {} {}\n", s.a.0, s.a.1, s.b.0, s.b.1));
    }
    std::fs::write(path, out).map_err(|e| GeometryError::Io(format!("{}: {e}", path.display())))
}

/// One lower-dimensional cell: a maximal piece of a segment inside a
/// single matrix cell, between splits at grid lines and intersections.
#[derive(Debug, Clone, PartialEq)]
pub struct FractureCell {
    pub segment: usize,
    pub a: (f64, f64),
    pub b: (f64, f64),
    pub length: f64,
    /// Matrix cell containing the midpoint.
    pub host: usize,
}

impl FractureCell {
    pub fn midpoint(&self) -> (f64, f64) {
        (0.5 * (self.a.0 + self.b.0), 0.5 * (self.a.1 + self.b.1))
    }
}

/// Flow connection between two fracture cells sharing a junction point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FractureEdge {
    pub l: usize,
    pub n: usize,
    /// Facet measure of the shared (zero-dimensional) interface.
    pub interface: f64,
    /// Along-fracture distance between the two cell midpoints.
    pub dist: f64,
}

/// Matrix-fracture transfer geometry for one fracture cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixFractureConnection {
    pub matrix_cell: usize,
    pub fracture_cell: usize,
    /// Interface measure: the fracture cell length.
    pub interface: f64,
    /// Area-averaged distance from the host cell to the fracture line.
    pub dist: f64,
}

/// Lower-dimensional mesh of all fracture cells over one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FractureMesh {
    pub cells: Vec<FractureCell>,
    pub edges: Vec<FractureEdge>,
    pub connections: Vec<MatrixFractureConnection>,
}

impl FractureMesh {
    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn total_length(&self) -> f64 {
        self.cells.iter().map(|c| c.length).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_grid_validates_arguments() {
        assert!(build_grid(0, 3, 1.0).is_err());
        assert!(build_grid(3, 0, 1.0).is_err());
        assert!(build_grid(3, 3, 0.0).is_err());
        assert!(build_grid(3, 3, -1.0).is_err());
        assert!(build_grid(3, 3, f64::NAN).is_err());
        let g = build_grid(200, 200, 1.0 / 200.0).unwrap();
        assert_eq!(g.cell_count(), 40000);
    }

    #[test]
    fn single_cell_grid() {
        let g = build_grid(1, 1, 1.0).unwrap();
        assert_eq!(g.cell_count(), 1);
        assert_eq!(g.center(0), (0.5, 0.5));
        assert!(g.interior_faces().is_empty());
    }

    #[test]
    fn two_cell_grid_has_one_shared_face() {
        let g = build_grid(2, 1, 0.5).unwrap();
        assert_eq!(g.interior_faces(), vec![(0, 1)]);
        assert_eq!(g.center(1), (0.75, 0.25));
    }

    #[test]
    fn row_major_indexing() {
        let g = build_grid(4, 3, 0.25).unwrap();
        assert_eq!(g.idx(2, 1), 6);
        assert_eq!(g.pos(6), (2, 1));
    }

    #[test]
    fn host_cell_tie_breaks_to_lower_index() {
        let g = build_grid(2, 2, 0.5).unwrap();
        // interior: unambiguous
        assert_eq!(g.host_cell(0.2, 0.2), 0);
        assert_eq!(g.host_cell(0.7, 0.7), 3);
        // on the vertical interior line: left cell
        assert_eq!(g.host_cell(0.5, 0.2), 0);
        assert_eq!(g.host_cell(0.5, 0.7), 2);
        // on the horizontal interior line: bottom cell
        assert_eq!(g.host_cell(0.2, 0.5), 0);
        // domain corners clamp inward
        assert_eq!(g.host_cell(0.0, 0.0), 0);
        assert_eq!(g.host_cell(1.0, 1.0), 3);
    }

    #[test]
    fn network_parsing_skips_comments_and_reports_bad_lines() {
        let text = "# two segments\n0.1 0.2 0.9 0.2\n\n0.5 0.1 0.5 0.9 # vertical\n";
        let net = parse_fracture_network(text).unwrap();
        assert_eq!(net.segments.len(), 2);
        assert_eq!(net.segments[0].a, (0.1, 0.2));
        assert_eq!(net.segments[1].b, (0.5, 0.9));

        let bad = parse_fracture_network("0.1 0.2 0.9\n");
        match bad {
            Err(GeometryError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
        let bad = parse_fracture_network("0.1 0.2 0.9 0.2\n0.1 x 0.3 0.4\n");
        match bad {
            Err(GeometryError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn line_distance_is_perpendicular_distance() {
        let s = Segment { a: (0.0, 0.5), b: (1.0, 0.5) };
        assert!((s.line_distance((0.3, 0.9)) - 0.4).abs() < 1e-15);
        assert!((s.line_distance((2.0, 0.1)) - 0.4).abs() < 1e-15);
    }
}
