//! The periodic cell problem and the effective coefficients `r`, `p`, `q`.
//!
//! On `Y* = {0 < y1 < L, 0 < y2 < G(y1)}` the corrector `X` solves
//! `−ΔX = 0` with `∂X/∂N = 0` on the bottom, `∂X/∂N = −G'/√(1+G'²)` on the
//! top, periodicity in `y1` and `∫ X = 0`. Then
//! `r = (1/L) ∫ (1 − ∂X/∂y1)`, `p = |Y*|/L` and `q = r/p`.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fem::{self, FieldP1, Source, DEFAULT_TOL};
use crate::geometry::{GeometrySpec, Side};
use crate::meshing::{mesh_cell_side, TriMesh};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellDiagnostics {
    /// `∫ X` over the cell.
    pub mean_of_x: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// How the corrector was computed.
#[derive(Debug, Clone, PartialEq)]
pub enum CellBackend {
    Direct,
    /// Target cell pulled back onto the base cell mesh.
    Mapped { base: GeometrySpec, target: GeometrySpec },
}

#[derive(Debug, Clone)]
pub struct CellSolution {
    pub x_station: f64,
    pub side: Side,
    pub mesh: TriMesh,
    pub corrector: FieldP1,
    pub r: f64,
    pub p: f64,
    pub q: f64,
    pub diagnostics: CellDiagnostics,
    pub backend: CellBackend,
    period: f64,
}

pub fn solve_cell(spec: &GeometrySpec, x: f64, n: usize) -> Result<CellSolution> {
    solve_cell_with(spec, x, Side::Left, n, DEFAULT_TOL)
}

/// Cell solve at `x`, taking the piece on `side` of a breakpoint.
pub fn solve_cell_with(spec: &GeometrySpec, x: f64, side: Side, n: usize, tol: f64) -> Result<CellSolution> {
    check_n(n)?;
    let mesh = mesh_cell_side(spec, x, side, n)?;
    let mut system = fem::assemble_anisotropic(&mesh, 1.0, 1.0, 0.0, Source::Zero)?;
    system.rhs = fem::assemble_top_neumann_side(&mesh, spec, x, side)?;
    let masses = fem::lumped_masses(&mesh);
    let constrained = fem::constrain(&system, &mesh.periodic_pairs, Some(&masses))?;
    let (corrector, stats) = fem::solve_spd(&constrained, tol)?;
    let mut sol = CellSolution {
        x_station: x,
        side,
        mesh,
        corrector,
        r: 0.0,
        p: 0.0,
        q: 0.0,
        diagnostics: CellDiagnostics { mean_of_x: 0.0, residual: stats.residual, iterations: stats.iterations },
        backend: CellBackend::Direct,
        period: spec.period(),
    };
    finish(&mut sol);
    Ok(sol)
}

fn check_n(n: usize) -> Result<()> {
    if n < 8 {
        return Err(Error::InvalidInput(format!("cell solves need n ≥ 8, got {n}")));
    }
    Ok(())
}

fn finish(sol: &mut CellSolution) {
    let (r, p, q) = effective_coefficients(sol);
    sol.r = r;
    sol.p = p;
    sol.q = q;
    sol.diagnostics.mean_of_x = corrector_mean(sol);
}

/// Heights and slopes of the base and target profiles at `z1`, giving
/// `F = Ĝ/G` and `F'`.
fn map_factor(base: &GeometrySpec, target: &GeometrySpec, x: f64, side: Side, z1: f64) -> (f64, f64) {
    let g = base.eval_piece(base.piece_index(x, side), x, z1);
    let h = target.eval_piece(target.piece_index(x, side), x, z1);
    (h.g / g.g, (h.dy * g.g - h.g * g.dy) / (g.g * g.g))
}

/// Edge midpoints of triangle `t`, midpoint `k` opposite vertex `k`.
fn midpoints(mesh: &TriMesh, t: usize) -> [[f64; 2]; 3] {
    let [a, b, c] = mesh.triangles[t].map(|i| mesh.vertices[i]);
    let mid = |p: [f64; 2], q: [f64; 2]| [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])];
    [mid(b, c), mid(c, a), mid(a, b)]
}

/// `(r, p, q)` recomputed from the stored corrector.
pub fn effective_coefficients(sol: &CellSolution) -> (f64, f64, f64) {
    let mesh = &sol.mesh;
    let x = &sol.corrector.values;
    let l = sol.period;
    let (mut r, mut p) = (0.0, 0.0);
    match &sol.backend {
        CellBackend::Direct => {
            for t in 0..mesh.triangles.len() {
                let a = mesh.signed_area(t);
                let g = fem::triangle_gradient(mesh, t, x);
                r += a * (1.0 - g[0]);
                p += a;
            }
        }
        CellBackend::Mapped { base, target } => {
            for t in 0..mesh.triangles.len() {
                let a = mesh.signed_area(t);
                let g = fem::triangle_gradient(mesh, t, x);
                for m in midpoints(mesh, t) {
                    let (f, df) = map_factor(base, target, sol.x_station, sol.side, m[0]);
                    let dxdy1 = g[0] - df * m[1] / f * g[1];
                    r += a / 3.0 * (1.0 - dxdy1) * f;
                    p += a / 3.0 * f;
                }
            }
        }
    }
    let (r, p) = (r / l, p / l);
    (r, p, r / p)
}

fn corrector_mean(sol: &CellSolution) -> f64 {
    match &sol.backend {
        CellBackend::Direct => fem::integrate(&sol.mesh, &sol.corrector.values),
        CellBackend::Mapped { base, target } => {
            let w = mapped_masses(&sol.mesh, base, target, sol.x_station, sol.side);
            w.iter().zip(&sol.corrector.values).map(|(w, x)| w * x).sum()
        }
    }
}

/// `∫ φ_i F` by the edge-midpoint rule.
fn mapped_masses(mesh: &TriMesh, base: &GeometrySpec, target: &GeometrySpec, x: f64, side: Side) -> Vec<f64> {
    let mut w = vec![0.0; mesh.vertices.len()];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let a = mesh.signed_area(t);
        let f = midpoints(mesh, t).map(|m| map_factor(base, target, x, side, m[0]).0);
        for i in 0..3 {
            w[tri[i]] += a / 6.0 * (f[(i + 1) % 3] + f[(i + 2) % 3]);
        }
    }
    w
}

/// Solve the cell problem of `target` on the mesh of `base` through the
/// vertical map `(z1, z2) ↦ (z1, F(z1) z2)`, `F = Ĝ/G`.
pub fn solve_cell_mapped(base: &GeometrySpec, target: &GeometrySpec, x: f64, n: usize) -> Result<CellSolution> {
    solve_cell_mapped_with(base, target, x, Side::Left, n, DEFAULT_TOL)
}

pub fn solve_cell_mapped_with(
    base: &GeometrySpec,
    target: &GeometrySpec,
    x: f64,
    side: Side,
    n: usize,
    tol: f64,
) -> Result<CellSolution> {
    check_n(n)?;
    if base.period() != target.period() {
        return Err(Error::InvalidInput(format!(
            "base and target periods differ ({} vs {})",
            base.period(),
            target.period()
        )));
    }
    if !(target.g0() > 0.0) {
        return Err(Error::Inadmissible(format!("target height bound G0 = {} is not positive", target.g0())));
    }
    let base = base.frozen_at(x, side)?;
    let target = target.frozen_at(x, side)?;
    // frozen specs have one x-independent piece
    let (xs, sd) = (0.0, Side::Left);
    let mesh = mesh_cell_side(&base, xs, sd, n)?;
    let matrix = fem::assemble_tensor(&mesh, |z1, z2| {
        let (f, df) = map_factor(&base, &target, xs, sd, z1);
        let s = df * z2;
        [[f, -s], [-s, (1.0 + s * s) / f]]
    })?;
    let piece = target.piece_index(xs, sd);
    let rhs = fem::assemble_top_load(&mesh, |z1| target.eval_piece(piece, xs, z1).dy)?;
    let nv = mesh.vertices.len();
    let system = fem::SparseSystem { matrix, rhs, constraints: fem::Constraints::none(nv) };
    let weights = mapped_masses(&mesh, &base, &target, xs, sd);
    let constrained = fem::constrain(&system, &mesh.periodic_pairs, Some(&weights))?;
    let (corrector, stats) = fem::solve_spd(&constrained, tol)?;
    let period = base.period();
    let mut sol = CellSolution {
        x_station: xs,
        side: sd,
        mesh,
        corrector,
        r: 0.0,
        p: 0.0,
        q: 0.0,
        diagnostics: CellDiagnostics { mean_of_x: 0.0, residual: stats.residual, iterations: stats.iterations },
        backend: CellBackend::Mapped { base, target },
        period,
    };
    finish(&mut sol);
    sol.x_station = x;
    sol.side = side;
    Ok(sol)
}

/// Effective coefficients sampled at stations, with one-sided entries at
/// interior breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientTable {
    pub stations: Vec<f64>,
    pub sides: Vec<Side>,
    /// Piece of each entry.
    pub piece: Vec<usize>,
    pub r: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    /// Per piece: coefficients are constant because `G` does not depend on
    /// `x` there.
    pub piecewise_constant: Vec<bool>,
    pub breakpoints: Vec<f64>,
}

impl CoefficientTable {
    /// A table with prescribed constant `(r, p)` per piece.
    pub fn constant(breakpoints: &[f64], r: &[f64], p: &[f64]) -> Result<Self> {
        let pieces = breakpoints.len().saturating_sub(1);
        if pieces == 0 || r.len() != pieces || p.len() != pieces {
            return Err(Error::InvalidInput("need one (r, p) pair per piece".into()));
        }
        if r.iter().chain(p).any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidInput("coefficients must be positive".into()));
        }
        let mut t = CoefficientTable {
            stations: Vec::new(),
            sides: Vec::new(),
            piece: Vec::new(),
            r: Vec::new(),
            p: Vec::new(),
            q: Vec::new(),
            piecewise_constant: vec![true; pieces],
            breakpoints: breakpoints.to_vec(),
        };
        for i in 0..pieces {
            for (x, side) in [(breakpoints[i], Side::Right), (breakpoints[i + 1], Side::Left)] {
                t.stations.push(x);
                t.sides.push(side);
                t.piece.push(i);
                t.r.push(r[i]);
                t.p.push(p[i]);
                t.q.push(r[i] / p[i]);
            }
        }
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }

    pub fn piece_at(&self, x: f64, side: Side) -> usize {
        let n = self.breakpoints.len() - 1;
        for i in 0..n {
            let b = self.breakpoints[i + 1];
            if x < b || (x == b && (side == Side::Left || i + 1 == n)) {
                return i;
            }
        }
        n - 1
    }

    /// `(r, p, q)` at `x` by linear interpolation within the piece on `side`.
    pub fn eval(&self, x: f64, side: Side) -> (f64, f64, f64) {
        let piece = self.piece_at(x, side);
        let idx: Vec<usize> = (0..self.len()).filter(|&k| self.piece[k] == piece).collect();
        let at = |k: usize| (self.r[k], self.p[k]);
        let (r, p) = if idx.len() == 1 || x <= self.stations[idx[0]] {
            at(idx[0])
        } else if x >= self.stations[*idx.last().unwrap()] {
            at(*idx.last().unwrap())
        } else {
            let j = idx.windows(2).find(|w| x <= self.stations[w[1]]).unwrap();
            let (x0, x1) = (self.stations[j[0]], self.stations[j[1]]);
            let t = if x1 > x0 { (x - x0) / (x1 - x0) } else { 0.0 };
            let (a, b) = (at(j[0]), at(j[1]));
            (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1))
        };
        (r, p, r / p)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,piece,r,p,q")?;
        for k in 0..self.len() {
            writeln!(w, "{},{},{},{},{}", self.stations[k], self.piece[k], self.r[k], self.p[k], self.q[k])?;
        }
        Ok(())
    }
}

/// Cell solves at `stations` (breakpoints are added, one-sided). Pieces on
/// which `G` is independent of `x` are solved once.
pub fn coefficient_table(spec: &GeometrySpec, stations: &[f64], n: usize) -> Result<CoefficientTable> {
    coefficient_table_with(spec, stations, n, DEFAULT_TOL)
}

pub fn coefficient_table_with(spec: &GeometrySpec, stations: &[f64], n: usize, tol: f64) -> Result<CoefficientTable> {
    check_n(n)?;
    if let Some(&x) = stations.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::InvalidInput(format!("station {x} outside [0, 1]")));
    }
    let pieces = spec.pieces();
    let constant: Vec<bool> = (0..pieces).map(|i| spec.piece_is_x_independent(i)).collect();
    // (piece, x, side) entries in ascending order
    let mut entries = Vec::new();
    for i in 0..pieces {
        let (a, b) = spec.piece_bounds(i);
        let mut xs: Vec<f64> = stations.iter().copied().filter(|&x| x > a && x < b).collect();
        xs.push(a);
        xs.push(b);
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        for x in xs {
            let side = if x == a && i > 0 { Side::Right } else { Side::Left };
            entries.push((i, x, side));
        }
    }
    // one solve per x-dependent entry, one per x-independent piece
    let tasks: Vec<usize> = (0..entries.len())
        .filter(|&k| !constant[entries[k].0] || k == 0 || entries[k - 1].0 != entries[k].0)
        .collect();
    let solved: Vec<Result<(f64, f64, f64)>> = tasks
        .par_iter()
        .map(|&k| {
            let (_, x, side) = entries[k];
            solve_cell_with(spec, x, side, n, tol)
                .map(|s| (s.r, s.p, s.q))
                .map_err(|e| Error::Station { station: k, x, source: Box::new(e) })
        })
        .collect();
    let mut by_entry = vec![None; entries.len()];
    for (&k, res) in tasks.iter().zip(solved) {
        by_entry[k] = Some(res?);
    }
    let mut table = CoefficientTable {
        stations: Vec::new(),
        sides: Vec::new(),
        piece: Vec::new(),
        r: Vec::new(),
        p: Vec::new(),
        q: Vec::new(),
        piecewise_constant: constant.clone(),
        breakpoints: spec.breakpoints().to_vec(),
    };
    let mut last = None;
    for (k, &(i, x, side)) in entries.iter().enumerate() {
        let v = match by_entry[k] {
            Some(v) => v,
            None => last.expect("first entry of a piece is always solved"),
        };
        last = Some(v);
        table.stations.push(x);
        table.sides.push(side);
        table.piece.push(i);
        table.r.push(v.0);
        table.p.push(v.1);
        table.q.push(v.2);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{FourierProfile, GeometryConfig, Piece, Poly, ProfileTerm};

    fn sine(c: f64, amp: f64) -> GeometrySpec {
        GeometrySpec::single(Poly::constant(c), FourierProfile::sine(amp), 1.0).unwrap()
    }

    #[test]
    fn flat_cell_is_trivial() {
        let sol = solve_cell(&GeometrySpec::flat(2.0, 1.0).unwrap(), 0.3, 16).unwrap();
        assert_eq!(sol.corrector.max_abs(), 0.0);
        assert!((sol.r - 2.0).abs() < 1e-12);
        assert!((sol.p - 2.0).abs() < 1e-12);
        assert!((sol.q - 1.0).abs() < 1e-12);
        assert_eq!(effective_coefficients(&sol), (sol.r, sol.p, sol.q));
    }

    #[test]
    fn sine_cell_invariants() {
        let sol = solve_cell(&sine(2.0, 1.0), 0.0, 32).unwrap();
        assert!(sol.q > 0.0 && sol.q < 1.0);
        assert!(sol.diagnostics.mean_of_x.abs() <= 1e-8 * sol.mesh.area());
        assert!((sol.p - sol.mesh.area()).abs() < 1e-10);
        assert!((sol.p - 2.0).abs() < 1e-2);
        assert!(sol.diagnostics.residual <= DEFAULT_TOL);
        let (r, p, q) = effective_coefficients(&sol);
        assert_eq!((r, p, q), (sol.r, sol.p, sol.q));
        assert!(solve_cell(&sine(2.0, 1.0), 0.0, 4).is_err());
    }

    #[test]
    fn translated_profile_has_same_coefficients() {
        // sin(2π(y − 1/4)) = −cos(2πy); shifting by a whole mesh column keeps
        // the triangulation identical
        let base = sine(2.0, 1.0);
        let shifted = GeometrySpec::single(
            Poly::constant(2.0),
            FourierProfile { c0: 0.0, cos: vec![-1.0], sin: vec![] },
            1.0,
        )
        .unwrap();
        let a = solve_cell(&base, 0.0, 32).unwrap();
        let b = solve_cell(&shifted, 0.0, 32).unwrap();
        assert!((a.q - b.q).abs() < 1e-6, "{} vs {}", a.q, b.q);
        assert!((a.r - b.r).abs() < 1e-6);
    }

    #[test]
    fn mapped_identity_matches_direct() {
        let g = sine(2.0, 1.0);
        let a = solve_cell(&g, 0.0, 16).unwrap();
        let b = solve_cell_mapped(&g, &g, 0.0, 16).unwrap();
        assert!((a.q - b.q).abs() < 1e-8);
        assert!((a.r - b.r).abs() < 1e-8);
        let flat = solve_cell_mapped(&GeometrySpec::flat(2.0, 1.0).unwrap(), &GeometrySpec::flat(3.0, 1.0).unwrap(), 0.5, 16)
            .unwrap();
        assert!((flat.q - 1.0).abs() < 1e-12);
        assert!((flat.r - 3.0).abs() < 1e-12);
        assert_eq!(effective_coefficients(&flat), (flat.r, flat.p, flat.q));
    }

    #[test]
    fn mapped_backend_tracks_direct() {
        let base = sine(2.0, 1.0);
        let target = sine(2.0, 1.05);
        let direct = solve_cell(&target, 0.0, 32).unwrap();
        let mapped = solve_cell_mapped(&base, &target, 0.0, 32).unwrap();
        assert!((direct.q - mapped.q).abs() < 5e-3, "{} vs {}", direct.q, mapped.q);
        assert!(mapped.diagnostics.mean_of_x.abs() < 1e-10);
    }

    #[test]
    fn table_examples() {
        let two = GeometrySpec::piecewise_flat(&[0.0, 0.5, 1.0], &[1.0, 2.0], 1.0).unwrap();
        let t = coefficient_table(&two, &[0.25, 0.75], 8).unwrap();
        assert_eq!(t.piecewise_constant, vec![true, true]);
        for k in 0..t.len() {
            let expect = if t.piece[k] == 0 { 1.0 } else { 2.0 };
            assert!((t.r[k] - expect).abs() < 1e-12 && (t.p[k] - expect).abs() < 1e-12);
            assert!((t.q[k] - 1.0).abs() < 1e-12);
        }
        // one-sided values at the breakpoint
        assert_eq!(t.eval(0.5, Side::Left).0, 1.0);
        assert_eq!(t.eval(0.5, Side::Right).0, 2.0);

        let linear = GeometrySpec::new(GeometryConfig {
            period: 1.0,
            breakpoints: vec![0.0, 1.0],
            profiles: vec![FourierProfile::sine(1.0)],
            pieces: vec![Piece {
                a_poly: Poly(vec![2.0, 1.0]),
                b_terms: vec![ProfileTerm { poly: Poly::constant(1.0), profile: 0 }],
            }],
        })
        .unwrap();
        let t = coefficient_table(&linear, &[0.5], 16).unwrap();
        assert_eq!(t.piecewise_constant, vec![false]);
        for k in 0..t.len() {
            assert!((t.p[k] - (2.0 + t.stations[k])).abs() < 5e-3);
        }
        let mut csv = Vec::new();
        t.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), t.len() + 1);
    }

    #[test]
    fn x_independent_table_reuses_one_solve() {
        let t = coefficient_table(&sine(2.0, 1.0), &[0.1, 0.2, 0.7], 16).unwrap();
        assert_eq!(t.piecewise_constant, vec![true]);
        assert_eq!(t.len(), 5);
        assert!(t.r.iter().all(|&r| r == t.r[0]));
    }

    #[test]
    fn constant_table() {
        let t = CoefficientTable::constant(&[0.0, 1.0], &[0.5], &[2.0]).unwrap();
        assert_eq!(t.eval(0.3, Side::Left), (0.5, 2.0, 0.25));
        assert!(CoefficientTable::constant(&[0.0, 1.0], &[0.0], &[1.0]).is_err());
    }
}
