//! Exact intersections of P1 meshes sharing one column lattice, used to
//! integrate differences of fields that live on different graph domains.

use crate::error::{Error, Result};
use crate::meshing::TriMesh;

pub type Point = [f64; 2];

/// Keep the part of a convex polygon to the left of the directed line p → q.
pub fn clip_halfplane(poly: &[Point], p: Point, q: Point) -> Vec<Point> {
    let side = |r: Point| (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]);
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let (sa, sb) = (side(a), side(b));
        if sa >= 0.0 {
            out.push(a);
        }
        if (sa >= 0.0) != (sb >= 0.0) {
            let t = sa / (sa - sb);
            out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    }
    out
}

/// Intersection of a convex polygon with a counter-clockwise triangle.
pub fn clip_to_triangle(poly: &[Point], tri: [Point; 3]) -> Vec<Point> {
    let mut out = poly.to_vec();
    for i in 0..3 {
        if out.len() < 3 {
            return Vec::new();
        }
        out = clip_halfplane(&out, tri[i], tri[(i + 1) % 3]);
    }
    if out.len() < 3 {
        Vec::new()
    } else {
        out
    }
}

pub fn polygon_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    0.5 * (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
}

/// `∫_P f` for a convex polygon, exact when `f` is quadratic (fan of
/// triangles, edge-midpoint rule).
pub fn integrate_quadratic(poly: &[Point], f: impl Fn(Point) -> f64) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let o = poly[0];
    let mid = |a: Point, b: Point| [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
    (1..poly.len() - 1)
        .map(|i| {
            let (a, b) = (poly[i], poly[i + 1]);
            let area = polygon_area(&[o, a, b]);
            area / 3.0 * (f(mid(o, a)) + f(mid(a, b)) + f(mid(b, o)))
        })
        .sum()
}

/// The affine restriction of a P1 field to one triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub origin: Point,
    pub value: f64,
    pub grad: [f64; 2],
}

impl Affine {
    pub fn on(mesh: &TriMesh, t: usize, u: &[f64]) -> Affine {
        let v0 = mesh.triangles[t][0];
        Affine { origin: mesh.vertices[v0], value: u[v0], grad: super::triangle_gradient(mesh, t, u) }
    }

    pub fn eval(&self, p: Point) -> f64 {
        self.value + self.grad[0] * (p[0] - self.origin[0]) + self.grad[1] * (p[1] - self.origin[1])
    }

    pub fn minus(&self, other: &Affine) -> Affine {
        let shift = other.eval(self.origin);
        Affine {
            origin: self.origin,
            value: self.value - shift,
            grad: [self.grad[0] - other.grad[0], self.grad[1] - other.grad[1]],
        }
    }
}

pub fn triangle_points(mesh: &TriMesh, t: usize) -> [Point; 3] {
    mesh.triangles[t].map(|i| mesh.vertices[i])
}

/// Norm pieces of an affine function over a polygon.
pub fn affine_norm_parts(poly: &[Point], f: &Affine) -> super::NormParts {
    let area = polygon_area(poly);
    super::NormParts {
        l2_sq: integrate_quadratic(poly, |p| f.eval(p).powi(2)),
        dx1_sq: area * f.grad[0] * f.grad[0],
        dx2_sq: area * f.grad[1] * f.grad[1],
    }
}

/// One nonempty intersection of a triangle of `a` with a triangle of `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlayCell {
    pub a: usize,
    pub b: usize,
    pub polygon: Vec<Point>,
}

fn quad_span(mesh: &TriMesh, column: usize, row: usize) -> (f64, f64) {
    let y = |c: usize, r: usize| mesh.vertices[mesh.vertex_index(c, r)][1];
    (
        y(column, row).min(y(column + 1, row)),
        y(column, row + 1).max(y(column + 1, row + 1)),
    )
}

/// All intersections of triangles of two structured graph meshes built on
/// the same stations. The polygons tile the intersection of the two domains.
pub fn overlay(a: &TriMesh, b: &TriMesh) -> Result<Vec<OverlayCell>> {
    if a.stations.len() != b.stations.len() || a.stations.iter().zip(&b.stations).any(|(s, t)| s != t) {
        return Err(Error::InvalidInput("overlay requires meshes on identical stations".into()));
    }
    let mut cells = Vec::new();
    for col in 0..a.columns() {
        let b_spans: Vec<(f64, f64)> = (0..b.rows()).map(|k| quad_span(b, col, k)).collect();
        for ka in 0..a.rows() {
            let (lo, hi) = quad_span(a, col, ka);
            // spans are monotone in the row index
            let first = b_spans.partition_point(|s| s.1 <= lo);
            for (kb, span) in b_spans.iter().enumerate().skip(first) {
                if span.0 >= hi {
                    break;
                }
                for ta in a.quad_triangles(col, ka) {
                    let pa = triangle_points(a, ta);
                    for tb in b.quad_triangles(col, kb) {
                        let poly = clip_to_triangle(&pa, triangle_points(b, tb));
                        if poly.len() >= 3 && polygon_area(&poly) > 0.0 {
                            cells.push(OverlayCell { a: ta, b: tb, polygon: poly });
                        }
                    }
                }
            }
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{FourierProfile, GeometrySpec, Poly};
    use crate::meshing::mesh_domain;

    #[test]
    fn clipping_basics() {
        let sq = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        assert!((polygon_area(&sq) - 1.0).abs() < 1e-15);
        let half = clip_halfplane(&sq, [0.0, 0.5], [1.0, 0.5]);
        assert!((polygon_area(&half) - 0.5).abs() < 1e-15);
        assert!(half.iter().all(|p| p[1] >= 0.5));
        let tri = clip_to_triangle(&sq, [[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]]);
        assert!((polygon_area(&tri) - 1.0).abs() < 1e-15);
        assert!(clip_to_triangle(&sq, [[2.0, 2.0], [3.0, 2.0], [2.0, 3.0]]).is_empty());
        // ∫ x y over the unit square
        assert!((integrate_quadratic(&sq, |p| p[0] * p[1]) - 0.25).abs() < 1e-15);
        assert!((integrate_quadratic(&sq, |p| p[1] * p[1]) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn overlay_tiles_intersection() {
        let g = GeometrySpec::single(Poly::constant(2.0), FourierProfile::sine(1.0), 1.0).unwrap();
        let h = GeometrySpec::single(Poly::constant(2.0), FourierProfile::sine(1.3), 1.0).unwrap();
        let (ma, mb) = (mesh_domain(&g, 0.25, 8).unwrap(), mesh_domain(&h, 0.25, 8).unwrap());
        let cells = overlay(&ma, &mb).unwrap();
        let area: f64 = cells.iter().map(|c| polygon_area(&c.polygon)).sum();
        // exact area of the intersection of the two piecewise-linear graphs
        let (ta, tb) = (ma.top_heights(), mb.top_heights());
        let mut expected = 0.0;
        for j in 0..ma.columns() {
            let dx = ma.stations[j + 1] - ma.stations[j];
            let (a0, a1, b0, b1) = (ta[j], ta[j + 1], tb[j], tb[j + 1]);
            let (d0, d1) = (a0 - b0, a1 - b1);
            if d0 * d1 >= 0.0 {
                expected += dx * 0.5 * (a0.min(b0) + a1.min(b1));
            } else {
                let t = d0 / (d0 - d1);
                let mid = a0 + t * (a1 - a0);
                expected += t * dx * 0.5 * (a0.min(b0) + mid) + (1.0 - t) * dx * 0.5 * (mid + a1.min(b1));
            }
        }
        assert!((area - expected).abs() < 1e-12, "{area} vs {expected}");
        // self-overlay reproduces the mesh triangle by triangle
        let same = overlay(&ma, &ma).unwrap();
        let total: f64 = same.iter().map(|c| polygon_area(&c.polygon)).sum();
        assert!((total - ma.area()).abs() < 1e-12);
        assert!(same.iter().filter(|c| c.a == c.b).count() == ma.triangles.len());
    }

    #[test]
    fn affine_difference() {
        let f = Affine { origin: [0.0, 0.0], value: 1.0, grad: [2.0, 3.0] };
        let g = Affine { origin: [1.0, 1.0], value: 0.5, grad: [1.0, -1.0] };
        let d = f.minus(&g);
        for p in [[0.3, 0.7], [2.0, -1.0]] {
            assert!((d.eval(p) - (f.eval(p) - g.eval(p))).abs() < 1e-14);
        }
    }
}
