//! The rescaled ε-problem on `Ω^ε = {0 < x1 < 1, 0 < x2 < G_ε(x1)}`:
//! `∫ ∂₁u ∂₁φ + ε⁻² ∂₂u ∂₂φ + u φ = ∫ f φ` with natural boundary conditions,
//! and the operators acting on its solution.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fem::{self, FieldP1, NormParts, SolveStats, Source, DEFAULT_TOL};
use crate::geometry::GeometrySpec;
use crate::meshing::{mesh_domain, TriMesh};

/// Smallest ε accepted by [`solve_direct`].
pub const MIN_EPSILON: f64 = 1.0 / 64.0;
/// Fewest mesh columns per oscillation period accepted by [`solve_direct`].
pub const MIN_COLUMNS_PER_PERIOD: usize = 8;

pub type Forcing<'a> = &'a (dyn Fn(f64, f64) -> f64 + Sync);

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DirectNorms {
    pub l2: f64,
    pub dx1: f64,
    /// `ε⁻¹ ‖∂₂u‖`.
    pub dx2_scaled: f64,
}

#[derive(Debug, Clone)]
pub struct DirectSolution {
    pub epsilon: f64,
    pub mesh: TriMesh,
    pub u: FieldP1,
    /// `V_ε(u) = ½ a(u, u) − ∫ f u`.
    pub energy: f64,
    /// `∫ f u`.
    pub load_work: f64,
    pub norms: DirectNorms,
    /// `‖f‖_{L²(Ω^ε)}` with the quadrature used for the load.
    pub f_norm: f64,
    pub stats: SolveStats,
    /// Lower height bound of the domain.
    pub g0: f64,
}

pub fn solve_direct(spec: &GeometrySpec, epsilon: f64, f: Forcing<'_>, n: usize) -> Result<DirectSolution> {
    solve_direct_with(spec, epsilon, f, n, DEFAULT_TOL)
}

pub fn solve_direct_with(spec: &GeometrySpec, epsilon: f64, f: Forcing<'_>, n: usize, tol: f64) -> Result<DirectSolution> {
    if n < MIN_COLUMNS_PER_PERIOD {
        return Err(Error::InvalidInput(format!(
            "{n} columns per period is below the minimum of {MIN_COLUMNS_PER_PERIOD}"
        )));
    }
    if !(epsilon >= MIN_EPSILON && epsilon <= 1.0) {
        return Err(Error::InvalidInput(format!("epsilon = {epsilon} outside [1/64, 1]")));
    }
    let mesh = mesh_domain(spec, epsilon, n)?;
    solve_direct_on(mesh, epsilon, f, tol, spec.g0())
}

/// Solve on a prepared mesh of the domain.
pub fn solve_direct_on(mesh: TriMesh, epsilon: f64, f: Forcing<'_>, tol: f64, g0: f64) -> Result<DirectSolution> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidInput(format!("epsilon = {epsilon} must be positive")));
    }
    let system = fem::assemble_anisotropic(&mesh, 1.0, 1.0 / (epsilon * epsilon), 1.0, Source::Function(f))?;
    let (u, stats) = fem::solve_spd_fibers(&system, &mesh, tol)?;
    let energy_form = system.matrix.quadratic_form(&u.values);
    let load_work = fem::sparse::dot(&system.rhs, &u.values);
    let parts = fem::norm_parts(&mesh, &u.values, None);
    let norms = DirectNorms {
        l2: parts.l2_sq.sqrt(),
        dx1: parts.dx1_sq.sqrt(),
        dx2_scaled: parts.dx2_sq.sqrt() / epsilon,
    };
    let f_norm = fem::quadrature_l2_sq(&mesh, f).sqrt();
    Ok(DirectSolution {
        epsilon,
        mesh,
        u,
        energy: 0.5 * energy_form - load_work,
        load_work,
        norms,
        f_norm,
        stats,
        g0,
    })
}

impl DirectSolution {
    pub fn norm_parts(&self) -> NormParts {
        fem::norm_parts(&self.mesh, &self.u.values, None)
    }

    pub fn h1_eps_norm(&self) -> f64 {
        self.norm_parts().h1_eps_sq(self.epsilon).sqrt()
    }

    /// `|V + ½ ∫ f u|`, zero for the exact discrete solution.
    pub fn energy_defect(&self) -> f64 {
        (self.energy + 0.5 * self.load_work).abs()
    }

    /// Largest excess of `‖u‖`, `‖∂₁u‖`, `ε⁻¹‖∂₂u‖` over `‖f‖`.
    pub fn a_priori_excess(&self) -> f64 {
        let n = &self.norms;
        n.l2.max(n.dx1).max(n.dx2_scaled) - self.f_norm
    }

    /// Vertex table `x1,x2,u`.
    pub fn write_field_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x1,x2,u")?;
        for (v, u) in self.mesh.vertices.iter().zip(&self.u.values) {
            writeln!(w, "{},{},{}", v[0], v[1], u)?;
        }
        Ok(())
    }
}

/// A field on the original thin domain `R^ε = {0 < x2 < ε G_ε(x1)}`.
#[derive(Debug, Clone)]
pub struct ThinField {
    pub mesh: TriMesh,
    pub u: FieldP1,
}

/// `w(x1, ε x2) = u(x1, x2)`: relabel the vertical coordinate.
pub fn rescale_thin(sol: &DirectSolution) -> ThinField {
    ThinField { mesh: sol.mesh.scaled_vertically(sol.epsilon), u: sol.u.clone() }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiberAverage {
    pub stations: Vec<f64>,
    pub values: Vec<f64>,
    pub depth: f64,
}

impl FiberAverage {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x1,mean_u")?;
        for (x, v) in self.stations.iter().zip(&self.values) {
            writeln!(w, "{x},{v}")?;
        }
        Ok(())
    }
}

/// `(1/depth) ∫_0^depth u(x1, x2) dx2` on every fiber.
pub fn fiber_average(sol: &DirectSolution, depth: f64) -> Result<FiberAverage> {
    if !(depth > 0.0) || depth > sol.g0 * (1.0 + 1e-12) {
        return Err(Error::InvalidInput(format!("depth {depth} outside (0, G0 = {}]", sol.g0)));
    }
    let mesh = &sol.mesh;
    let u = &sol.u.values;
    let mut values = Vec::with_capacity(mesh.fibers.len());
    for fiber in &mesh.fibers {
        let top = mesh.vertices[*fiber.last().unwrap()][1];
        if depth > top * (1.0 + 1e-12) {
            return Err(Error::InvalidInput(format!("depth {depth} exceeds a fiber of height {top}")));
        }
        let mut s = 0.0;
        for w in fiber.windows(2) {
            let (y0, y1) = (mesh.vertices[w[0]][1], mesh.vertices[w[1]][1]);
            if y0 >= depth {
                break;
            }
            let (u0, mut u1, mut y1c) = (u[w[0]], u[w[1]], y1);
            if y1 > depth {
                u1 = u0 + (u1 - u0) * (depth - y0) / (y1 - y0);
                y1c = depth;
            }
            s += 0.5 * (y1c - y0) * (u0 + u1);
        }
        values.push(s / depth);
    }
    Ok(FiberAverage { stations: mesh.stations.clone(), values, depth })
}

/// Values of the reflection extension on the rectangle `I × (0, G1)`,
/// sampled on each fiber at `levels`.
#[derive(Debug, Clone, PartialEq)]
pub struct Extension {
    pub stations: Vec<f64>,
    pub levels: Vec<f64>,
    /// `values[j][k]` at `(stations[j], levels[k])`.
    pub values: Vec<Vec<f64>>,
    /// Number of reflected copies needed to cover the rectangle.
    pub reflections: usize,
}

/// Fold `y ≥ 0` into `[0, top]` by successive reflections across `top`
/// and `0`.
fn fold(y: f64, top: f64) -> f64 {
    let t = y.rem_euclid(2.0 * top);
    if t > top {
        2.0 * top - t
    } else {
        t
    }
}

fn fiber_value(mesh: &TriMesh, u: &[f64], fiber: &[usize], y: f64) -> f64 {
    let k = fiber.partition_point(|&v| mesh.vertices[v][1] < y).clamp(1, fiber.len() - 1);
    let (a, b) = (fiber[k - 1], fiber[k]);
    let (y0, y1) = (mesh.vertices[a][1], mesh.vertices[b][1]);
    u[a] + (u[b] - u[a]) * (y - y0) / (y1 - y0)
}

/// Extend `u` above the oscillating top to `(0, G1)` by reflecting each
/// fiber across its top (and, when `G1` exceeds twice the fiber height,
/// back across the bottom, repeatedly).
pub fn extend_reflect(sol: &DirectSolution) -> Extension {
    let mesh = &sol.mesh;
    let tops = mesh.top_heights();
    let g1 = tops.iter().copied().fold(0.0, f64::max);
    let gmin = tops.iter().copied().fold(f64::INFINITY, f64::min);
    let m = mesh.rows().max(2) * ((g1 / gmin).ceil() as usize).max(1);
    let levels: Vec<f64> = (0..=m).map(|k| g1 * k as f64 / m as f64).collect();
    let values = mesh
        .fibers
        .iter()
        .zip(&tops)
        .map(|(fiber, &top)| levels.iter().map(|&y| fiber_value(mesh, &sol.u.values, fiber, fold(y, top))).collect())
        .collect();
    Extension { stations: mesh.stations.clone(), levels, values, reflections: (g1 / gmin).ceil() as usize }
}

impl Extension {
    /// Fiber-wise `∫∫ (∂₂ ext)²` over the rectangle, trapezoid in `x1`.
    pub fn vertical_energy(&self) -> f64 {
        let per_fiber: Vec<f64> = self
            .values
            .iter()
            .map(|v| {
                v.windows(2)
                    .zip(self.levels.windows(2))
                    .map(|(u, y)| (u[1] - u[0]).powi(2) / (y[1] - y[0]))
                    .sum()
            })
            .collect();
        trapezoid(&self.stations, &per_fiber)
    }
}

fn trapezoid(x: &[f64], v: &[f64]) -> f64 {
    x.windows(2).zip(v.windows(2)).map(|(x, v)| 0.5 * (x[1] - x[0]) * (v[0] + v[1])).sum()
}

/// Fiber-wise `∫∫ (∂₂u)²` over `Ω^ε`, comparable with
/// [`Extension::vertical_energy`].
pub fn fiber_vertical_energy(sol: &DirectSolution) -> f64 {
    let mesh = &sol.mesh;
    let u = &sol.u.values;
    let per_fiber: Vec<f64> = mesh
        .fibers
        .iter()
        .map(|f| {
            f.windows(2)
                .map(|w| (u[w[1]] - u[w[0]]).powi(2) / (mesh.vertices[w[1]][1] - mesh.vertices[w[0]][1]))
                .sum()
        })
        .collect();
    trapezoid(&mesh.stations, &per_fiber)
}

/// `(P_{1+η} u)(x1, x2) = u(x1, x2/(1+η))` on the stretched domain.
#[derive(Debug, Clone)]
pub struct ScaledField {
    pub eta: f64,
    pub mesh: TriMesh,
    pub u: FieldP1,
}

pub fn vertical_scale(sol: &DirectSolution, eta: f64) -> Result<ScaledField> {
    vertical_scale_field(&sol.mesh, &sol.u, eta)
}

pub fn vertical_scale_field(mesh: &TriMesh, u: &FieldP1, eta: f64) -> Result<ScaledField> {
    if !(eta > 0.0) {
        return Err(Error::InvalidInput(format!("eta = {eta} must be positive")));
    }
    Ok(ScaledField { eta, mesh: mesh.scaled_vertically(1.0 + eta), u: u.clone() })
}

impl ScaledField {
    /// Squared `(1+η)`-weighted norm on the stretched domain.
    pub fn weighted_norm_sq(&self, epsilon: f64) -> f64 {
        fem::norm_parts(&self.mesh, &self.u.values, None).h1_eps_eta_sq(epsilon, self.eta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{FourierProfile, Poly};
    use crate::meshing::{graph_mesh, uniform_levels, BoundaryTag};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn sine() -> GeometrySpec {
        GeometrySpec::single(Poly::constant(2.0), FourierProfile::sine(1.0), 1.0).unwrap()
    }

    fn square(n: usize, top: f64) -> TriMesh {
        let st: Vec<f64> = (0..=n).map(|j| j as f64 / n as f64).collect();
        let lv: Vec<Vec<f64>> = st.iter().map(|_| uniform_levels(top, n)).collect();
        graph_mesh(&st, &lv, &[], (BoundaryTag::Lateral, BoundaryTag::Lateral)).unwrap()
    }

    fn with_field(mesh: TriMesh, u: impl Fn(f64, f64) -> f64, eps: f64) -> DirectSolution {
        let u = FieldP1::from_fn(&mesh, u);
        let g0 = mesh.top_heights().into_iter().fold(f64::INFINITY, f64::min);
        DirectSolution {
            epsilon: eps,
            mesh,
            u,
            energy: 0.0,
            load_work: 0.0,
            norms: DirectNorms { l2: 0.0, dx1: 0.0, dx2_scaled: 0.0 },
            f_norm: 0.0,
            stats: SolveStats { iterations: 0, residual: 0.0 },
            g0,
        }
    }

    #[test]
    fn flat_constant_forcing() {
        let flat = GeometrySpec::flat(1.0, 1.0).unwrap();
        for eps in [0.5, 0.125] {
            let sol = solve_direct(&flat, eps, &|_, _| 1.0, 8).unwrap();
            assert!(sol.u.values.iter().all(|v| (v - 1.0).abs() < 1e-9));
        }
    }

    #[test]
    fn flat_cosine_forcing() {
        let flat = GeometrySpec::flat(1.0, 1.0).unwrap();
        let exact = |x: f64| (PI * x).cos() / (1.0 + PI * PI);
        let err = |n: usize| {
            let sol = solve_direct(&flat, 0.25, &|x, _| (PI * x).cos(), n).unwrap();
            sol.mesh.vertices.iter().zip(&sol.u.values).map(|(v, u)| (u - exact(v[0])).abs()).fold(0.0, f64::max)
        };
        let (a, b) = (err(8), err(16));
        assert!(b < 2e-3 && a / b > 3.0, "{a} {b}");
    }

    #[test]
    fn energy_identity_and_a_priori_bounds() {
        let f = |x: f64, _: f64| (PI * x).cos();
        let sol = solve_direct(&sine(), 0.125, &f, 16).unwrap();
        assert!(sol.energy_defect() <= 1e-8 * (1.0 + sol.energy.abs()));
        assert!(sol.a_priori_excess() <= 1e-8);
        let system = fem::assemble_anisotropic(&sol.mesh, 1.0, 64.0, 1.0, Source::Function(&f)).unwrap();
        let floor = fem::krylov::rounding_floor(&system.matrix, &sol.u.values, &system.rhs);
        assert!(sol.stats.residual <= DEFAULT_TOL.max(floor), "{} vs floor {floor}", sol.stats.residual);
    }

    #[test]
    fn energy_is_minimal() {
        let f = |x: f64, y: f64| (PI * x).cos() + 0.3 * y;
        let sol = solve_direct(&sine(), 0.25, &f, 8).unwrap();
        let system = fem::assemble_anisotropic(&sol.mesh, 1.0, 16.0, 1.0, Source::Function(&f)).unwrap();
        let v = |w: &[f64]| 0.5 * system.matrix.quadratic_form(w) - fem::sparse::dot(&system.rhs, w);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let w: Vec<f64> = sol.u.values.iter().map(|u| u + 1e-3 * rng.gen_range(-1.0..1.0)).collect();
            assert!(v(&w) >= sol.energy - 1e-12);
        }
    }

    #[test]
    fn guards() {
        let s = sine();
        assert!(solve_direct(&s, 1.0 / 128.0, &|_, _| 1.0, 16).is_err());
        assert!(solve_direct(&s, 0.25, &|_, _| 1.0, 4).is_err());
    }

    #[test]
    fn rescale_examples() {
        let sol = with_field(square(4, 1.0), |_, _| 2.0, 0.25);
        let thin = rescale_thin(&sol);
        assert_eq!(thin.u, sol.u);
        let top = thin.mesh.top_heights().into_iter().fold(0.0, f64::max);
        assert!((top - 0.25).abs() < 1e-15);
        let l2 = |m: &TriMesh, u: &FieldP1| fem::norm_parts(m, &u.values, None).l2_sq.sqrt();
        assert!((l2(&thin.mesh, &thin.u) - 0.5 * l2(&sol.mesh, &sol.u)).abs() < 1e-14);
    }

    #[test]
    fn fiber_average_examples() {
        let one = with_field(square(4, 1.0), |_, _| 1.0, 1.0);
        assert!(fiber_average(&one, 1.0).unwrap().values.iter().all(|v| (v - 1.0).abs() < 1e-15));
        let x2 = with_field(square(4, 1.0), |_, y| y, 1.0);
        assert!(fiber_average(&x2, 1.0).unwrap().values.iter().all(|v| (v - 0.5).abs() < 1e-15));
        let x1 = with_field(square(4, 1.0), |x, _| x * x, 1.0);
        let avg = fiber_average(&x1, 0.7).unwrap();
        for (x, v) in avg.stations.iter().zip(&avg.values) {
            assert!((v - x * x).abs() < 1e-15);
        }
        assert!(fiber_average(&x2, 1.5).is_err());
        assert!(fiber_average(&x2, 0.0).is_err());
    }

    #[test]
    fn reflection_examples() {
        let c = with_field(square(4, 1.0), |_, _| 3.0, 1.0);
        let e = extend_reflect(&c);
        assert!(e.values.iter().flatten().all(|&v| v == 3.0));
        let x2 = with_field(square(4, 1.0), |_, y| y, 1.0);
        let e = extend_reflect(&x2);
        assert_eq!(e.reflections, 1);
        for (k, &y) in e.levels.iter().enumerate() {
            assert!((e.values[2][k] - y).abs() < 1e-14);
        }
        // doubled height: fold above the top
        assert!((fold(1.25, 1.0) - 0.75).abs() < 1e-15);
        assert!((fold(2.5, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn reflection_bounds_vertical_energy() {
        let sol = solve_direct(&sine(), 0.25, &|x, y| (PI * x).cos() + y, 8).unwrap();
        let e = extend_reflect(&sol);
        let ratio = e.vertical_energy() / fiber_vertical_energy(&sol);
        // each reflected copy carries at most the fiber's own energy
        assert!(ratio >= 1.0 - 1e-2 && ratio <= e.reflections as f64 + 1e-12, "{ratio}");
        // agrees with u at the fiber vertices below the top
        for (j, fiber) in sol.mesh.fibers.iter().enumerate() {
            let top = sol.mesh.vertices[*fiber.last().unwrap()][1];
            for (k, &y) in e.levels.iter().enumerate().filter(|(_, &y)| y <= top) {
                let v = fiber_value(&sol.mesh, &sol.u.values, fiber, y);
                assert_eq!(e.values[j][k], v);
            }
        }
    }

    #[test]
    fn vertical_scale_examples() {
        let c = with_field(square(4, 1.0), |_, _| 2.0, 1.0);
        let p = vertical_scale(&c, 0.7).unwrap();
        assert!(p.u.values.iter().all(|&v| v == 2.0));
        let x2 = with_field(square(4, 1.0), |_, y| y, 1.0);
        let p = vertical_scale(&x2, 1.0).unwrap();
        for (v, u) in p.mesh.vertices.iter().zip(&p.u.values) {
            assert!((u - v[1] / 2.0).abs() < 1e-15);
        }
        assert!(vertical_scale(&x2, 0.0).is_err());
    }

    #[test]
    fn weighted_norm_identity() {
        let x2 = with_field(square(6, 1.0), |_, y| y, 1.0);
        let p = vertical_scale(&x2, 0.5).unwrap();
        let lhs = x2.norm_parts().h1_eps_sq(1.0);
        assert!((lhs - 4.0 / 3.0).abs() < 1e-13);
        assert!((p.weighted_norm_sq(1.0) - 4.0 / 3.0).abs() < 1e-13);
        // the weighted norm of u itself (not of P u) on the unit square
        let unscaled = x2.norm_parts().h1_eps_eta_sq(1.0, 0.5);
        assert!((unscaled - (1.0 / 4.5 + 1.5)).abs() < 1e-13);
        for eps in [0.3, 0.1] {
            let f = with_field(square(6, 1.0), |x, y| x * y + y * y, eps);
            let p = vertical_scale(&f, 0.25).unwrap();
            let lhs = f.norm_parts().h1_eps_sq(eps);
            assert!((lhs - p.weighted_norm_sq(eps)).abs() < 1e-12 * lhs);
        }
    }
}
