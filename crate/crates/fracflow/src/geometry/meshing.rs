//! Clips fracture segments against the grid and builds the fracture mesh.

use std::collections::{BTreeSet, HashMap};

use super::{
    FractureCell, FractureEdge, FractureMesh, FractureNetwork, GeometryError,
    MatrixFractureConnection, Segment, StructuredGrid2D,
};

/// Pieces shorter than this fraction of `h` are dropped.
const DEGENERATE_FRACTION: f64 = 1e-12;

/// Relative slack when accepting intersection parameters at segment ends.
const PARAM_EPS: f64 = 1e-12;

/// Meshes a fracture network into lower-dimensional cells on `grid`.
///
/// Each segment is cut at every grid line it crosses and at every
/// intersection with another segment; the surviving pieces become
/// fracture cells ordered by (segment, position along segment). Two
/// cells are adjacent when they share a cut point, which joins
/// consecutive pieces of one segment and all pieces meeting at a
/// junction of several segments.
pub fn mesh_fractures(
    grid: &StructuredGrid2D,
    network: &FractureNetwork,
) -> Result<FractureMesh, GeometryError> {
    let h = grid.h();
    let bound_tol = 1e-9 * h;
    for (s, seg) in network.segments.iter().enumerate() {
        if seg.length() <= DEGENERATE_FRACTION * h {
            return Err(GeometryError::InvalidArgument(format!("segment {s} has zero length")));
        }
        let a_in = grid.contains(seg.a.0, seg.a.1, bound_tol);
        let b_in = grid.contains(seg.b.0, seg.b.1, bound_tol);
        if !a_in && !b_in {
            return Err(GeometryError::InvalidArgument(format!(
                "segment {s} lies outside the domain"
            )));
        }
        if !(a_in && b_in) {
            return Err(GeometryError::InvalidArgument(format!(
                "segment {s} extends outside the domain"
            )));
        }
    }

    // Split parameters per segment: endpoints, grid-line crossings, and
    // pairwise intersections. Intersection points are computed once and
    // shared so junction endpoints match bitwise across segments.
    let nseg = network.segments.len();
    let mut cuts: Vec<Vec<f64>> = vec![Vec::new(); nseg];
    for (s, seg) in network.segments.iter().enumerate() {
        cuts[s].push(0.0);
        cuts[s].push(1.0);
        axis_crossings(seg.a.0, seg.b.0, h, grid.nx(), &mut cuts[s]);
        axis_crossings(seg.a.1, seg.b.1, h, grid.ny(), &mut cuts[s]);
    }
    for s1 in 0..nseg {
        for s2 in s1 + 1..nseg {
            if let Some((t1, t2)) = segment_intersection(&network.segments[s1], &network.segments[s2]) {
                cuts[s1].push(t1);
                cuts[s2].push(t2);
            }
        }
    }

    let mut cells = Vec::new();
    for (s, seg) in network.segments.iter().enumerate() {
        let ts = &mut cuts[s];
        ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ts.dedup_by(|a, b| (*a - *b).abs() <= PARAM_EPS);
        let len = seg.length();
        for w in ts.windows(2) {
            let (t0, t1) = (w[0].max(0.0), w[1].min(1.0));
            let piece_len = (t1 - t0) * len;
            if piece_len < DEGENERATE_FRACTION * h {
                continue;
            }
            let a = seg.point_at(t0);
            let b = seg.point_at(t1);
            let mid = (0.5 * (a.0 + b.0), 0.5 * (a.1 + b.1));
            let host = grid.host_cell(mid.0, mid.1);
            cells.push(FractureCell { segment: s, a, b, length: piece_len, host });
        }
    }

    let connections = cells
        .iter()
        .enumerate()
        .map(|(l, cell)| MatrixFractureConnection {
            matrix_cell: cell.host,
            fracture_cell: l,
            interface: cell.length,
            dist: average_cell_to_line_distance(grid, cell.host, &network.segments[cell.segment]),
        })
        .collect();

    let edges = junction_edges(&cells, h);

    Ok(FractureMesh { cells, edges, connections })
}

/// Adds every parameter where one coordinate crosses an interior or
/// boundary grid line strictly inside (0, 1).
fn axis_crossings(c0: f64, c1: f64, h: f64, n: usize, out: &mut Vec<f64>) {
    let d = c1 - c0;
    if d == 0.0 {
        return;
    }
    let (lo, hi) = if c0 < c1 { (c0, c1) } else { (c1, c0) };
    let first = (lo / h).ceil().max(0.0) as i64;
    let last = (hi / h).floor().min(n as f64) as i64;
    for line in first..=last {
        let t = (line as f64 * h - c0) / d;
        if t > PARAM_EPS && t < 1.0 - PARAM_EPS {
            out.push(t);
        }
    }
}

/// Intersection parameters (t on `a`, t on `b`) when the segments cross,
/// endpoint touches included. Parallel and collinear pairs return `None`.
fn segment_intersection(a: &Segment, b: &Segment) -> Option<(f64, f64)> {
    let (rx, ry) = (a.b.0 - a.a.0, a.b.1 - a.a.1);
    let (ux, uy) = (b.b.0 - b.a.0, b.b.1 - b.a.1);
    let denom = rx * uy - ry * ux;
    let scale = (rx.hypot(ry)) * (ux.hypot(uy));
    if denom.abs() <= 1e-14 * scale {
        return None;
    }
    let (wx, wy) = (b.a.0 - a.a.0, b.a.1 - a.a.1);
    let t = (wx * uy - wy * ux) / denom;
    let s = (wx * ry - wy * rx) / denom;
    let in_unit = |v: f64| v >= -PARAM_EPS && v <= 1.0 + PARAM_EPS;
    if in_unit(t) && in_unit(s) {
        Some((t.clamp(0.0, 1.0), s.clamp(0.0, 1.0)))
    } else {
        None
    }
}

/// Area-averaged distance from a matrix cell to a segment's line by
/// midpoint quadrature on a 4x4 subgrid of the cell.
pub fn average_cell_to_line_distance(grid: &StructuredGrid2D, cell: usize, segment: &Segment) -> f64 {
    let (i, j) = grid.pos(cell);
    let h = grid.h();
    let (x0, y0) = (i as f64 * h, j as f64 * h);
    let step = h / 4.0;
    let mut sum = 0.0;
    for a in 0..4 {
        for b in 0..4 {
            let p = (x0 + (a as f64 + 0.5) * step, y0 + (b as f64 + 0.5) * step);
            sum += segment.line_distance(p);
        }
    }
    sum / 16.0
}

/// Groups piece endpoints into junctions (tolerance `1e-9 h`) and emits
/// one edge per unordered pair of distinct pieces meeting at a junction.
/// The flow distance is the along-fracture midpoint distance, half the
/// length of each cell.
fn junction_edges(cells: &[FractureCell], h: f64) -> Vec<FractureEdge> {
    let tol = 1e-9 * h;
    let inv = 1.0 / tol.max(f64::MIN_POSITIVE);
    let mut bins: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    let mut junction_points: Vec<(f64, f64)> = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();

    let mut assign = |p: (f64, f64), cell: usize| {
        let (qx, qy) = ((p.0 * inv).round() as i64, (p.1 * inv).round() as i64);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(ids) = bins.get(&(qx + dx, qy + dy)) {
                    for &id in ids {
                        let jp = junction_points[id];
                        if (jp.0 - p.0).hypot(jp.1 - p.1) <= tol {
                            members[id].push(cell);
                            return;
                        }
                    }
                }
            }
        }
        let id = junction_points.len();
        junction_points.push(p);
        members.push(vec![cell]);
        bins.entry((qx, qy)).or_default().push(id);
    };

    for (l, cell) in cells.iter().enumerate() {
        assign(cell.a, l);
        assign(cell.b, l);
    }

    let mut pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
    for group in &members {
        for p in 0..group.len() {
            for q in p + 1..group.len() {
                let (l, n) = (group[p].min(group[q]), group[p].max(group[q]));
                if l != n {
                    pairs.insert((l, n));
                }
            }
        }
    }

    pairs
        .into_iter()
        .map(|(l, n)| FractureEdge {
            l,
            n,
            interface: 1.0,
            dist: 0.5 * (cells[l].length + cells[n].length),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_grid;

    fn net(points: &[((f64, f64), (f64, f64))]) -> FractureNetwork {
        FractureNetwork::from_endpoints(points)
    }

    #[test]
    fn horizontal_segment_on_two_cell_grid() {
        // Segment along the top boundary of a 2x1 grid: two pieces of
        // length 0.5, one per cell, joined by one edge.
        let grid = build_grid(2, 1, 0.5).unwrap();
        let mesh = mesh_fractures(&grid, &net(&[((0.0, 0.5), (1.0, 0.5))])).unwrap();
        assert_eq!(mesh.cell_count(), 2);
        assert!((mesh.cells[0].length - 0.5).abs() < 1e-12);
        assert!((mesh.cells[1].length - 0.5).abs() < 1e-12);
        assert_eq!(mesh.cells[0].host, 0);
        assert_eq!(mesh.cells[1].host, 1);
        assert_eq!(mesh.edges.len(), 1);
        assert_eq!((mesh.edges[0].l, mesh.edges[0].n), (0, 1));
        assert!((mesh.edges[0].dist - 0.5).abs() < 1e-12);
    }

    #[test]
    fn bisecting_fracture_distance_is_quarter_cell() {
        let grid = build_grid(1, 1, 1.0).unwrap();
        let mesh = mesh_fractures(&grid, &net(&[((0.0, 0.5), (1.0, 0.5))])).unwrap();
        assert_eq!(mesh.cell_count(), 1);
        assert_eq!(mesh.connections.len(), 1);
        let c = mesh.connections[0];
        assert_eq!(c.matrix_cell, 0);
        assert!((c.interface - 1.0).abs() < 1e-12);
        // exact area average of |y - 1/2| over the unit cell
        assert!((c.dist - 0.25).abs() < 1e-12, "got {}", c.dist);
    }

    #[test]
    fn partial_bisector_keeps_line_distance() {
        // Half-length piece: interface is the piece length, the distance
        // still averages against the infinite line.
        let grid = build_grid(1, 1, 1.0).unwrap();
        let mesh = mesh_fractures(&grid, &net(&[((0.0, 0.5), (0.5, 0.5))])).unwrap();
        let c = mesh.connections[0];
        assert!((c.interface - 0.5).abs() < 1e-12);
        assert!((c.dist - 0.25).abs() < 1e-12);
    }

    /// Brute-force clipping oracle: clips one segment against every cell
    /// rectangle independently (Liang-Barsky), splitting first at given
    /// extra parameters. Returns piece lengths keyed by host cell.
    fn oracle_pieces(
        grid: &StructuredGrid2D,
        seg: &Segment,
        extra_cuts: &[f64],
    ) -> Vec<(usize, f64)> {
        let mut bounds = vec![0.0, 1.0];
        bounds.extend_from_slice(extra_cuts);
        bounds.sort_by(|a, b| a.partial_cmp(b).unwrap());
        bounds.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        let h = grid.h();
        let mut out = Vec::new();
        for w in bounds.windows(2) {
            let sub = Segment { a: seg.point_at(w[0]), b: seg.point_at(w[1]) };
            for cell in 0..grid.cell_count() {
                let (i, j) = grid.pos(cell);
                let (x0, y0) = (i as f64 * h, j as f64 * h);
                if let Some((t0, t1)) = clip_to_rect(&sub, x0, y0, x0 + h, y0 + h) {
                    let len = (t1 - t0) * sub.length();
                    if len > 1e-9 * h {
                        let mid = sub.point_at(0.5 * (t0 + t1));
                        if grid.host_cell(mid.0, mid.1) == cell {
                            out.push((cell, len));
                        }
                    }
                }
            }
        }
        out.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.partial_cmp(&b.1).unwrap()));
        out
    }

    fn clip_to_rect(seg: &Segment, x0: f64, y0: f64, x1: f64, y1: f64) -> Option<(f64, f64)> {
        let (dx, dy) = (seg.b.0 - seg.a.0, seg.b.1 - seg.a.1);
        let mut t0 = 0.0f64;
        let mut t1 = 1.0f64;
        for (p, q) in [
            (-dx, seg.a.0 - x0),
            (dx, x1 - seg.a.0),
            (-dy, seg.a.1 - y0),
            (dy, y1 - seg.a.1),
        ] {
            if p == 0.0 {
                if q < 0.0 {
                    return None;
                }
            } else {
                let r = q / p;
                if p < 0.0 {
                    t0 = t0.max(r);
                } else {
                    t1 = t1.min(r);
                }
            }
        }
        if t0 < t1 {
            Some((t0, t1))
        } else {
            None
        }
    }

    #[test]
    fn crossing_segments_match_brute_force_clipping() {
        let grid = build_grid(4, 4, 0.25).unwrap();
        let s1 = Segment { a: (0.1, 0.35), b: (0.9, 0.65) };
        let s2 = Segment { a: (0.45, 0.1), b: (0.55, 0.9) };
        let mesh = mesh_fractures(&grid, &net(&[(s1.a, s1.b), (s2.a, s2.b)])).unwrap();

        let (tc1, tc2) = segment_intersection(&s1, &s2).expect("segments cross");
        let expected1 = oracle_pieces(&grid, &s1, &[tc1]);
        let expected2 = oracle_pieces(&grid, &s2, &[tc2]);

        for (seg_id, expected) in [(0usize, expected1), (1usize, expected2)] {
            let mut got: Vec<(usize, f64)> = mesh
                .cells
                .iter()
                .filter(|c| c.segment == seg_id)
                .map(|c| (c.host, c.length))
                .collect();
            got.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.partial_cmp(&b.1).unwrap()));
            assert_eq!(got.len(), expected.len(), "piece count for segment {seg_id}");
            for (g, e) in got.iter().zip(&expected) {
                assert_eq!(g.0, e.0, "host mismatch for segment {seg_id}");
                assert!((g.1 - e.1).abs() < 1e-10, "length mismatch: {} vs {}", g.1, e.1);
            }
        }

        // pieces meeting at the crossing are mutually adjacent: the two
        // pieces per segment incident to the junction give C(4,2) minus
        // pairs not at that junction; check each incident piece sees 3
        // neighbors through the junction point.
        let cross = s1.point_at(tc1);
        let at_junction: Vec<usize> = mesh
            .cells
            .iter()
            .enumerate()
            .filter(|(_, c)| {
                let near = |p: (f64, f64)| (p.0 - cross.0).hypot(p.1 - cross.1) < 1e-9;
                near(c.a) || near(c.b)
            })
            .map(|(l, _)| l)
            .collect();
        assert_eq!(at_junction.len(), 4, "four pieces meet at the crossing");
        for &l in &at_junction {
            let degree = mesh
                .edges
                .iter()
                .filter(|e| (e.l == l || e.n == l) && at_junction.contains(&e.l) && at_junction.contains(&e.n))
                .count();
            assert_eq!(degree, 3, "piece {l} connects to the other three at the junction");
        }
    }

    #[test]
    fn partition_preserves_total_length() {
        let grid = build_grid(8, 8, 0.125).unwrap();
        let network = net(&[
            ((0.05, 0.1), (0.95, 0.2)),
            ((0.3, 0.05), (0.35, 0.95)),
            ((0.1, 0.8), (0.9, 0.3)),
        ]);
        let mesh = mesh_fractures(&grid, &network).unwrap();
        assert!((mesh.total_length() - network.total_length()).abs() < 1e-10);
    }

    #[test]
    fn hosting_midpoints_lie_in_host_cells() {
        let grid = build_grid(6, 5, 0.2).unwrap();
        let network = net(&[((0.05, 0.15), (1.1, 0.95)), ((0.6, 0.1), (0.6, 0.9))]);
        let mesh = mesh_fractures(&grid, &network).unwrap();
        let h = grid.h();
        for cell in &mesh.cells {
            let (i, j) = grid.pos(cell.host);
            let (mx, my) = cell.midpoint();
            assert!(mx >= i as f64 * h - 1e-12 && mx <= (i + 1) as f64 * h + 1e-12);
            assert!(my >= j as f64 * h - 1e-12 && my <= (j + 1) as f64 * h + 1e-12);
        }
    }

    #[test]
    fn meshing_is_deterministic() {
        let grid = build_grid(10, 10, 0.1).unwrap();
        let network = net(&[
            ((0.11, 0.21), (0.89, 0.37)),
            ((0.42, 0.05), (0.48, 0.93)),
            ((0.2, 0.7), (0.8, 0.75)),
        ]);
        let m1 = mesh_fractures(&grid, &network).unwrap();
        let m2 = mesh_fractures(&grid, &network).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn out_of_domain_segments_are_rejected() {
        let grid = build_grid(4, 4, 0.25).unwrap();
        let fully = net(&[((1.5, 1.5), (2.0, 2.0))]);
        assert!(matches!(mesh_fractures(&grid, &fully), Err(GeometryError::InvalidArgument(_))));
        let partly = net(&[((0.5, 0.5), (1.5, 0.5))]);
        assert!(matches!(mesh_fractures(&grid, &partly), Err(GeometryError::InvalidArgument(_))));
        let degenerate = net(&[((0.5, 0.5), (0.5, 0.5))]);
        assert!(matches!(mesh_fractures(&grid, &degenerate), Err(GeometryError::InvalidArgument(_))));
    }
}
