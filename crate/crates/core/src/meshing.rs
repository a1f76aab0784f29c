//! Structured graph-domain triangulations.
//!
//! Every 2D mesh here is a column mesh: vertical fibers at increasing
//! stations, each carrying the same number of vertices at increasing heights.
//! Quad `(j, k)` between fibers `j`, `j+1` and rows `k`, `k+1` is split along
//! its shorter diagonal. Vertex `(j, k)` has index
//! `j * (rows + 1) + k`; quad `(j, k)` owns triangles `2 (j rows + k)` and
//! `2 (j rows + k) + 1`.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{GeometrySpec, Side};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum BoundaryTag {
    B0Left,
    B0Right,
    B1Top,
    B2Bottom,
    Lateral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub v: [usize; 2],
    pub tag: BoundaryTag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 2]>,
    /// Counterclockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    pub boundary: Vec<BoundaryEdge>,
    /// `(left, right)` vertex pairs identified by periodicity.
    pub periodic_pairs: Vec<(usize, usize)>,
    /// Vertex indices of each vertical line, bottom to top.
    pub fibers: Vec<Vec<usize>>,
    /// Horizontal coordinate of each fiber.
    pub stations: Vec<f64>,
    /// Layer index of each triangle (0 unless the column levels were split
    /// into layers).
    pub triangle_layer: Vec<u8>,
    rows: usize,
}

impl TriMesh {
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of quad columns (one less than the number of fibers).
    pub fn columns(&self) -> usize {
        self.stations.len() - 1
    }

    pub fn vertex_index(&self, column: usize, row: usize) -> usize {
        column * (self.rows + 1) + row
    }

    /// The two triangles of quad `(column, row)`.
    pub fn quad_triangles(&self, column: usize, row: usize) -> [usize; 2] {
        let q = 2 * (column * self.rows + row);
        [q, q + 1]
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.signed_area(t)).sum()
    }

    /// Height of the top vertex of each fiber.
    pub fn top_heights(&self) -> Vec<f64> {
        self.fibers.iter().map(|f| self.vertices[*f.last().unwrap()][1]).collect()
    }

    /// Same connectivity with every vertical coordinate multiplied by `s`.
    pub fn scaled_vertically(&self, s: f64) -> TriMesh {
        let mut m = self.clone();
        for v in &mut m.vertices {
            v[1] *= s;
        }
        m
    }

    pub fn edges_with_tag(&self, tag: BoundaryTag) -> impl Iterator<Item = &BoundaryEdge> {
        self.boundary.iter().filter(move |e| e.tag == tag)
    }

    /// Plain-text vertex and triangle tables.
    pub fn write_tables<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# vertices {}", self.vertices.len())?;
        for v in &self.vertices {
            writeln!(w, "{} {}", v[0], v[1])?;
        }
        writeln!(w, "# triangles {}", self.triangles.len())?;
        for t in &self.triangles {
            writeln!(w, "{} {} {}", t[0], t[1], t[2])?;
        }
        Ok(())
    }
}

/// Build a column mesh from fiber stations and per-fiber vertex heights.
///
/// `levels[j]` lists the heights of fiber `j` bottom to top; all fibers must
/// have the same length. Rows whose index is `≥ layer_breaks[m]` get layer
/// `m + 1`. The left and right fibers are tagged `side_tags`.
pub fn graph_mesh(
    stations: &[f64],
    levels: &[Vec<f64>],
    layer_breaks: &[usize],
    side_tags: (BoundaryTag, BoundaryTag),
) -> Result<TriMesh> {
    if stations.len() < 2 || levels.len() != stations.len() {
        return Err(Error::InvalidInput("need at least two fibers with levels".into()));
    }
    if stations.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput("fiber stations must be strictly increasing".into()));
    }
    let nv = levels[0].len();
    if nv < 2 || levels.iter().any(|l| l.len() != nv) {
        return Err(Error::InvalidInput("every fiber needs the same number (≥ 2) of levels".into()));
    }
    for (j, l) in levels.iter().enumerate() {
        if l.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput(format!(
                "degenerate column at station {}: levels not increasing",
                stations[j]
            )));
        }
    }
    let rows = nv - 1;
    let ncol = stations.len();
    let mut vertices = Vec::with_capacity(ncol * nv);
    let mut fibers = Vec::with_capacity(ncol);
    for (j, &x) in stations.iter().enumerate() {
        fibers.push((0..nv).map(|k| j * nv + k).collect());
        vertices.extend(levels[j].iter().map(|&y| [x, y]));
    }
    let mut triangles = Vec::with_capacity(2 * (ncol - 1) * rows);
    let mut triangle_layer = Vec::with_capacity(2 * (ncol - 1) * rows);
    for j in 0..ncol - 1 {
        for k in 0..rows {
            let a = j * nv + k;
            let b = (j + 1) * nv + k;
            let c = b + 1;
            let d = a + 1;
            let dist = |p: usize, q: usize| {
                let (u, v) = (vertices[p], vertices[q]);
                (u[0] - v[0]).powi(2) + (u[1] - v[1]).powi(2)
            };
            // split along the shorter diagonal
            if dist(b, d) < dist(a, c) {
                triangles.push([a, b, d]);
                triangles.push([b, c, d]);
            } else {
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            }
            let layer = layer_breaks.iter().filter(|&&br| k >= br).count() as u8;
            triangle_layer.extend([layer, layer]);
        }
    }
    let mut boundary = Vec::new();
    for j in 0..ncol - 1 {
        boundary.push(BoundaryEdge { v: [j * nv, (j + 1) * nv], tag: BoundaryTag::B2Bottom });
    }
    for j in 0..ncol - 1 {
        boundary.push(BoundaryEdge { v: [j * nv + rows, (j + 1) * nv + rows], tag: BoundaryTag::B1Top });
    }
    for k in 0..rows {
        boundary.push(BoundaryEdge { v: [k, k + 1], tag: side_tags.0 });
        let r = (ncol - 1) * nv;
        boundary.push(BoundaryEdge { v: [r + k, r + k + 1], tag: side_tags.1 });
    }
    let mesh = TriMesh {
        vertices,
        triangles,
        boundary,
        periodic_pairs: vec![],
        fibers,
        stations: stations.to_vec(),
        triangle_layer,
        rows,
    };
    if let Some((index, area)) =
        (0..mesh.triangles.len()).map(|t| (t, mesh.signed_area(t))).find(|&(_, a)| !(a > 0.0))
    {
        return Err(Error::DegenerateTriangle { index, area });
    }
    Ok(mesh)
}

/// `rows + 1` uniform levels on `(0, top)`.
pub fn uniform_levels(top: f64, rows: usize) -> Vec<f64> {
    (0..=rows).map(|k| top * k as f64 / rows as f64).collect()
}

/// Triangulation of the cell `Y*(x) = {0 < y1 < L, 0 < y2 < G(x, y1)}` with
/// `n` columns per period and uniform vertical spacing per column.
pub fn mesh_cell(spec: &GeometrySpec, x: f64, n: usize) -> Result<TriMesh> {
    mesh_cell_side(spec, x, Side::Left, n)
}

pub fn mesh_cell_side(spec: &GeometrySpec, x: f64, side: Side, n: usize) -> Result<TriMesh> {
    if n < 4 {
        return Err(Error::InvalidInput(format!("cell mesh needs n ≥ 4, got {n}")));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidInput(format!("x = {x} outside [0, 1]")));
    }
    let l = spec.period();
    let piece = spec.piece_index(x, side);
    let stations: Vec<f64> = (0..=n).map(|j| l * j as f64 / n as f64).collect();
    let mut tops: Vec<f64> = stations.iter().map(|&y| spec.eval_piece(piece, x, y).g).collect();
    // Exact periodicity of the top even if sin(2π) ≠ 0 in floating point.
    tops[n] = tops[0];
    let mean = spec.mean_height(x, side);
    let rows = cell_rows(n, mean, l);
    let levels: Vec<Vec<f64>> = tops.iter().map(|&t| uniform_levels(t, rows)).collect();
    let mut mesh = graph_mesh(&stations, &levels, &[], (BoundaryTag::B0Left, BoundaryTag::B0Right))?;
    mesh.periodic_pairs = (0..=rows).map(|k| (mesh.vertex_index(0, k), mesh.vertex_index(n, k))).collect();
    Ok(mesh)
}

/// Vertical spacing of cell meshes relative to the column width.
pub const CELL_ASPECT: f64 = 4.0;

/// Rows per cell column: elements about `CELL_ASPECT` times taller than
/// wide, which keeps the shear of steep columns (`G' h1 / h2`) moderate.
pub fn cell_rows(columns_per_period: usize, mean: f64, period: f64) -> usize {
    ((columns_per_period as f64 * mean / (CELL_ASPECT * period)).round() as usize).max(2)
}

fn square_rows(columns_per_period: usize, mean: f64, period: f64) -> usize {
    ((columns_per_period as f64 * mean / period).round() as usize).max(2)
}

/// Fiber stations for `Ω^ε`: every breakpoint is a station and each piece is
/// split uniformly with spacing at most `εL / n_per_period`.
pub fn domain_stations(spec: &GeometrySpec, epsilon: f64, n_per_period: usize) -> Result<Vec<f64>> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidInput(format!("epsilon = {epsilon} outside (0, 1]")));
    }
    if n_per_period < 4 {
        return Err(Error::InvalidInput(format!(
            "{n_per_period} columns per oscillation period is below the minimum of 4"
        )));
    }
    let h = epsilon * spec.period() / n_per_period as f64;
    let mut stations = vec![0.0];
    for i in 0..spec.pieces() {
        let (a, b) = spec.piece_bounds(i);
        let m = (((b - a) / h) - 1e-9).ceil().max(1.0) as usize;
        stations.extend((1..m).map(|k| a + (b - a) * k as f64 / m as f64));
        stations.push(b);
    }
    Ok(stations)
}

/// Triangulation of `Ω^ε = {0 < x1 < 1, 0 < x2 < G_ε(x1)}`.
pub fn mesh_domain(spec: &GeometrySpec, epsilon: f64, n_per_period: usize) -> Result<TriMesh> {
    let stations = domain_stations(spec, epsilon, n_per_period)?;
    let tops = domain_tops(spec, epsilon, &stations)?;
    let rows = domain_rows(spec, n_per_period, &stations, &tops);
    let levels: Vec<Vec<f64>> = tops.iter().map(|&t| uniform_levels(t, rows)).collect();
    graph_mesh(&stations, &levels, &[], (BoundaryTag::Lateral, BoundaryTag::Lateral))
}

/// `G_ε` at each station (smaller one-sided value at breakpoints).
pub fn domain_tops(spec: &GeometrySpec, epsilon: f64, stations: &[f64]) -> Result<Vec<f64>> {
    let profile = spec.at_epsilon(epsilon)?;
    Ok(stations.iter().map(|&x| profile.column_height(x)).collect())
}

/// Rows per column so that vertical spacing matches the cell-scale column
/// spacing `L / n_per_period` on average.
pub fn domain_rows(spec: &GeometrySpec, n_per_period: usize, stations: &[f64], tops: &[f64]) -> usize {
    let mean = stations
        .windows(2)
        .zip(tops.windows(2))
        .map(|(x, t)| 0.5 * (x[1] - x[0]) * (t[0] + t[1]))
        .sum::<f64>();
    square_rows(n_per_period, mean, spec.period())
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalMesh {
    pub nodes: Vec<f64>,
    /// Node index of each breakpoint, including the end points 0 and 1.
    pub breakpoint_nodes: Vec<usize>,
}

impl IntervalMesh {
    pub fn elements(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn node_of(&self, x: f64) -> Option<usize> {
        self.nodes.iter().position(|&n| (n - x).abs() <= 1e-12)
    }
}

/// Near-uniform mesh of `[0, 1]` with spacing about `1/n` and every
/// breakpoint inserted as a node.
pub fn mesh_interval(n: usize, breakpoints: &[f64]) -> Result<IntervalMesh> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("interval mesh needs n ≥ 2, got {n}")));
    }
    let mut cuts: Vec<f64> = breakpoints.iter().copied().filter(|&b| b > 0.0 && b < 1.0).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    cuts.insert(0, 0.0);
    cuts.push(1.0);
    let mut nodes = vec![0.0];
    let mut breakpoint_nodes = vec![0];
    for w in cuts.windows(2) {
        let m = ((w[1] - w[0]) * n as f64 - 1e-9).ceil().max(1.0) as usize;
        nodes.extend((1..m).map(|k| w[0] + (w[1] - w[0]) * k as f64 / m as f64));
        nodes.push(w[1]);
        breakpoint_nodes.push(nodes.len() - 1);
    }
    Ok(IntervalMesh { nodes, breakpoint_nodes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{FourierProfile, Poly};
    use std::collections::HashMap;

    fn sine() -> GeometrySpec {
        GeometrySpec::single(Poly::constant(2.0), FourierProfile::sine(1.0), 1.0).unwrap()
    }

    fn edge_counts(mesh: &TriMesh) -> HashMap<(usize, usize), usize> {
        let mut m = HashMap::new();
        for t in &mesh.triangles {
            for e in 0..3 {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                *m.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        m
    }

    fn check_invariants(mesh: &TriMesh) {
        for t in 0..mesh.triangles.len() {
            assert!(mesh.signed_area(t) > 0.0);
        }
        let counts = edge_counts(mesh);
        let boundary: Vec<(usize, usize)> =
            mesh.boundary.iter().map(|e| (e.v[0].min(e.v[1]), e.v[0].max(e.v[1]))).collect();
        for (e, c) in &counts {
            assert!(*c == 1 || *c == 2);
            assert_eq!(*c == 1, boundary.contains(e), "edge {e:?}");
        }
        assert_eq!(boundary.len(), counts.values().filter(|&&c| c == 1).count());
        for (f, &x) in mesh.fibers.iter().zip(&mesh.stations) {
            for w in f.windows(2) {
                assert_eq!(mesh.vertices[w[0]][0], x);
                assert!(mesh.vertices[w[1]][1] > mesh.vertices[w[0]][1]);
            }
        }
    }

    #[test]
    fn flat_cell() {
        let spec = GeometrySpec::flat(2.0, 1.0).unwrap();
        let mesh = mesh_cell(&spec, 0.5, 4).unwrap();
        check_invariants(&mesh);
        assert_eq!(mesh.columns(), 4);
        assert_eq!(mesh.rows(), 2);
        for e in mesh.edges_with_tag(BoundaryTag::B1Top) {
            assert_eq!(mesh.vertices[e.v[0]][1], 2.0);
        }
        assert!((mesh.area() - 2.0).abs() < 1e-14);
        assert!(mesh_cell(&spec, 0.5, 3).is_err());
    }

    #[test]
    fn sine_cell_area_and_pairs() {
        let spec = sine();
        let mesh = mesh_cell(&spec, 0.3, 64).unwrap();
        check_invariants(&mesh);
        // trapezoid rule on a trigonometric polynomial over a full period is exact
        assert!((mesh.area() - 2.0).abs() < 1e-12);
        let left: Vec<usize> = (0..mesh.vertices.len()).filter(|&v| mesh.vertices[v][0] == 0.0).collect();
        assert_eq!(mesh.periodic_pairs.len(), left.len());
        for &(a, b) in &mesh.periodic_pairs {
            assert_eq!(mesh.vertices[a][1], mesh.vertices[b][1]);
            assert_eq!(mesh.vertices[b][0] - mesh.vertices[a][0], 1.0);
        }
        for e in mesh.edges_with_tag(BoundaryTag::B1Top) {
            let v = mesh.vertices[e.v[0]];
            assert!((v[1] - spec.height(0.3, v[0])).abs() < 1e-14);
        }
    }

    #[test]
    fn refinement_quadruples_triangles() {
        let spec = sine();
        let a = mesh_cell(&spec, 0.0, 16).unwrap();
        let b = mesh_cell(&spec, 0.0, 32).unwrap();
        assert_eq!(b.triangles.len(), 4 * a.triangles.len());
        for tag in [BoundaryTag::B0Left, BoundaryTag::B1Top, BoundaryTag::B2Bottom] {
            assert_eq!(b.edges_with_tag(tag).count(), 2 * a.edges_with_tag(tag).count());
        }
    }

    #[test]
    fn unit_square_domain() {
        let spec = GeometrySpec::flat(1.0, 1.0).unwrap();
        for n in [4, 7, 16] {
            let mesh = mesh_domain(&spec, 0.5, n).unwrap();
            check_invariants(&mesh);
            assert!((mesh.area() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn oscillating_domain_area() {
        let spec = sine();
        let mesh = mesh_domain(&spec, 1.0 / 8.0, 16).unwrap();
        check_invariants(&mesh);
        // ∫_0^1 (2 + sin(16πx)) dx = 2 exactly; trapezoid on full periods is exact too
        assert!((mesh.area() - 2.0).abs() < 1e-10);
        assert!(mesh.edges_with_tag(BoundaryTag::Lateral).count() == 2 * mesh.rows());
        assert!(mesh_domain(&spec, 1.0 / 8.0, 3).is_err());
        assert!(mesh_domain(&spec, 0.0, 8).is_err());
    }

    #[test]
    fn curved_domain_area_converges() {
        // G(x, y) = 1.5 + x + 0.3 sin(2πy) at ε = 1/3 (non-integer periods)
        let spec = GeometrySpec::single(Poly(vec![1.5, 1.0]), FourierProfile::sine(0.3), 1.0).unwrap();
        let eps = 0.3;
        let exact = {
            let n = 200_000;
            let h = 1.0 / n as f64;
            (0..n).map(|k| spec.height((k as f64 + 0.5) * h, (k as f64 + 0.5) * h / eps)).sum::<f64>() * h
        };
        let errs: Vec<f64> =
            [8, 16, 32].iter().map(|&n| (mesh_domain(&spec, eps, n).unwrap().area() - exact).abs()).collect();
        assert!(errs[1] < errs[0] / 3.0 && errs[2] < errs[1] / 3.0, "{errs:?}");
    }

    #[test]
    fn breakpoint_column() {
        let spec = GeometrySpec::piecewise_flat(&[0.0, 0.5, 1.0], &[1.0, 2.0], 1.0).unwrap();
        let mesh = mesh_domain(&spec, 0.3, 5).unwrap();
        check_invariants(&mesh);
        let j = mesh.stations.iter().position(|&x| x == 0.5).expect("column at breakpoint");
        assert_eq!(mesh.top_heights()[j], 1.0);
    }

    #[test]
    fn interval_examples() {
        assert_eq!(mesh_interval(4, &[]).unwrap().nodes, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let m = mesh_interval(4, &[0.3]).unwrap();
        assert!(m.nodes.contains(&0.3));
        assert_eq!(m.breakpoint_nodes.len(), 3);
        assert_eq!(m.nodes[m.breakpoint_nodes[1]], 0.3);
        let m = mesh_interval(2, &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(m.nodes, vec![0.0, 0.5, 1.0]);
        assert!(mesh_interval(1, &[]).is_err());
    }

    #[test]
    fn layered_mesh_tags() {
        let stations = [0.0, 0.5, 1.0];
        let levels: Vec<Vec<f64>> = stations.iter().map(|_| vec![0.0, 0.5, 1.0, 1.2]).collect();
        let mesh = graph_mesh(&stations, &levels, &[2], (BoundaryTag::Lateral, BoundaryTag::Lateral)).unwrap();
        let upper = mesh.triangle_layer.iter().filter(|&&l| l == 1).count();
        assert_eq!(upper, 4);
        assert!((mesh.area() - 1.2).abs() < 1e-14);
    }

    #[test]
    fn table_dump() {
        let mesh = mesh_cell(&GeometrySpec::flat(1.0, 1.0).unwrap(), 0.0, 4).unwrap();
        let mut buf = Vec::new();
        mesh.write_tables(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# vertices 15\n"));
        assert_eq!(text.lines().count(), 2 + 15 + 16);
    }
}
