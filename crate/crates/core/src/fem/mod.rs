//! P1 finite elements on [`TriMesh`]: assembly of anisotropic
//! diffusion–reaction forms, periodic and zero-mean constraints, Krylov
//! solves and ε-weighted norms.

pub mod fiber;
pub mod krylov;
pub mod overlay;
pub mod sparse;

use crate::error::{Error, Result};
use crate::geometry::{GeometrySpec, Side};
use crate::meshing::{BoundaryTag, TriMesh};

pub use krylov::SolveStats;
pub use sparse::CsrMatrix;

/// Default relative residual for every linear solve.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Right-hand side data for [`assemble_anisotropic`].
#[derive(Clone, Copy)]
pub enum Source<'a> {
    Zero,
    /// Integrated with the three-point edge-midpoint rule.
    Function(&'a (dyn Fn(f64, f64) -> f64 + Sync)),
    /// Nodal values of a P1 field, integrated exactly.
    Nodal(&'a [f64]),
}

/// How mesh vertices map onto unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraints {
    pub dof_of_vertex: Vec<usize>,
    pub n_dofs: usize,
    /// Per-dof weights of the mean constraint; when present the last unknown
    /// is its Lagrange multiplier.
    pub zero_mean: Option<Vec<f64>>,
}

impl Constraints {
    pub fn none(n_vertices: usize) -> Self {
        Constraints { dof_of_vertex: (0..n_vertices).collect(), n_dofs: n_vertices, zero_mean: None }
    }

    pub fn is_identity(&self) -> bool {
        self.zero_mean.is_none() && self.n_dofs == self.dof_of_vertex.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub constraints: Constraints,
}

impl SparseSystem {
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }
}

/// Nodal P1 coefficients, one per mesh vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldP1 {
    pub values: Vec<f64>,
}

impl FieldP1 {
    pub fn new(values: Vec<f64>) -> Self {
        FieldP1 { values }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        FieldP1 { values: vec![c; n] }
    }

    pub fn from_fn(mesh: &TriMesh, f: impl Fn(f64, f64) -> f64) -> Self {
        FieldP1 { values: mesh.vertices.iter().map(|v| f(v[0], v[1])).collect() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Area and the scaled gradient coefficients `(b_i, c_i)` with
/// `∇φ_i = (b_i, c_i) / (2A)`.
pub(crate) fn element_geometry(mesh: &TriMesh, t: usize) -> Result<(f64, [f64; 3], [f64; 3])> {
    let [p0, p1, p2] = mesh.triangles[t].map(|i| mesh.vertices[i]);
    let b = [p1[1] - p2[1], p2[1] - p0[1], p0[1] - p1[1]];
    let c = [p2[0] - p1[0], p0[0] - p2[0], p1[0] - p0[0]];
    let area = 0.5 * (c[2] * b[1] - c[1] * b[2]);
    if !(area > 0.0) {
        return Err(Error::DegenerateTriangle { index: t, area });
    }
    Ok((area, b, c))
}

/// Constant gradient of the P1 field `u` on triangle `t`.
pub fn triangle_gradient(mesh: &TriMesh, t: usize, u: &[f64]) -> [f64; 2] {
    let [p0, p1, p2] = mesh.triangles[t].map(|i| mesh.vertices[i]);
    let [u0, u1, u2] = mesh.triangles[t].map(|i| u[i]);
    let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
    let du1 = u1 - u0;
    let du2 = u2 - u0;
    [
        (du1 * (p2[1] - p0[1]) - du2 * (p1[1] - p0[1])) / det,
        (du2 * (p1[0] - p0[0]) - du1 * (p2[0] - p0[0])) / det,
    ]
}

fn midpoints(mesh: &TriMesh, t: usize) -> [[f64; 2]; 3] {
    let [p0, p1, p2] = mesh.triangles[t].map(|i| mesh.vertices[i]);
    let mid = |a: [f64; 2], b: [f64; 2]| [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
    // midpoint k is opposite vertex k
    [mid(p1, p2), mid(p2, p0), mid(p0, p1)]
}

/// `∫ w1 ∂₁u ∂₁φ + w2 ∂₂u ∂₂φ + mass · u φ` and `∫ source · φ`, element by
/// element in ascending triangle order.
pub fn assemble_anisotropic(mesh: &TriMesh, w1: f64, w2: f64, mass: f64, source: Source<'_>) -> Result<SparseSystem> {
    if !(w1 > 0.0 && w2 > 0.0) || !(mass >= 0.0) {
        return Err(Error::InvalidInput(format!("weights must satisfy w1, w2 > 0, mass ≥ 0 (got {w1}, {w2}, {mass})")));
    }
    let nv = mesh.vertices.len();
    let mut triplets = Vec::with_capacity(9 * mesh.triangles.len());
    let mut rhs = vec![0.0; nv];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let (area, b, c) = element_geometry(mesh, t)?;
        for i in 0..3 {
            for j in 0..3 {
                let mut k = (w1 * b[i] * b[j] + w2 * c[i] * c[j]) / (4.0 * area);
                if mass > 0.0 {
                    k += mass * area / 12.0 * if i == j { 2.0 } else { 1.0 };
                }
                triplets.push((tri[i], tri[j], k));
            }
        }
        match source {
            Source::Zero => {}
            Source::Function(f) => {
                let fm = midpoints(mesh, t).map(|m| f(m[0], m[1]));
                for i in 0..3 {
                    // φ_i = 1/2 at the two midpoints adjacent to vertex i
                    rhs[tri[i]] += area / 6.0 * (fm[(i + 1) % 3] + fm[(i + 2) % 3]);
                }
            }
            Source::Nodal(v) => {
                let fv = tri.map(|i| v[i]);
                let s = fv[0] + fv[1] + fv[2];
                for i in 0..3 {
                    rhs[tri[i]] += area / 12.0 * (s + fv[i]);
                }
            }
        }
    }
    Ok(SparseSystem {
        matrix: CsrMatrix::from_triplets(nv, &triplets),
        rhs,
        constraints: Constraints::none(nv),
    })
}

/// Stiffness matrix `∫ ∇φ_j · T(x) ∇φ_i` for a symmetric tensor field `T`,
/// integrated with the edge-midpoint rule.
pub fn assemble_tensor(mesh: &TriMesh, tensor: impl Fn(f64, f64) -> [[f64; 2]; 2]) -> Result<CsrMatrix> {
    let nv = mesh.vertices.len();
    let mut triplets = Vec::with_capacity(9 * mesh.triangles.len());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let (area, b, c) = element_geometry(mesh, t)?;
        let mut avg = [[0.0; 2]; 2];
        for m in midpoints(mesh, t) {
            let tm = tensor(m[0], m[1]);
            for r in 0..2 {
                for s in 0..2 {
                    avg[r][s] += tm[r][s] / 3.0;
                }
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                let k = b[i] * (avg[0][0] * b[j] + avg[0][1] * c[j]) + c[i] * (avg[1][0] * b[j] + avg[1][1] * c[j]);
                triplets.push((tri[i], tri[j], k / (4.0 * area)));
            }
        }
    }
    Ok(CsrMatrix::from_triplets(nv, &triplets))
}

/// `∫_{B1} −s(y1) φ dy1` on the top edges, with `s` sampled at edge
/// midpoints.
pub fn assemble_top_load(mesh: &TriMesh, slope: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
    let mut load = vec![0.0; mesh.vertices.len()];
    let mut found = false;
    for e in mesh.edges_with_tag(BoundaryTag::B1Top) {
        found = true;
        let [a, b] = e.v.map(|i| mesh.vertices[i]);
        let dy1 = b[0] - a[0];
        let s = slope(0.5 * (a[0] + b[0]));
        load[e.v[0]] -= 0.5 * s * dy1;
        load[e.v[1]] -= 0.5 * s * dy1;
    }
    if !found {
        return Err(Error::InvalidInput("mesh has no B1 (top) edges".into()));
    }
    Ok(load)
}

/// Load of the cell problem's top Neumann datum `N1 = −G'/√(1+G'²)`
/// integrated against the surface measure `√(1+G'²) dy1`, i.e.
/// `∫ −∂_y G(x, y1) φ dy1`.
pub fn assemble_top_neumann(mesh: &TriMesh, spec: &GeometrySpec, x_station: f64) -> Result<Vec<f64>> {
    assemble_top_neumann_side(mesh, spec, x_station, Side::Left)
}

pub fn assemble_top_neumann_side(mesh: &TriMesh, spec: &GeometrySpec, x_station: f64, side: Side) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&x_station) {
        return Err(Error::InvalidInput(format!("x = {x_station} outside [0, 1]")));
    }
    let piece = spec.piece_index(x_station, side);
    assemble_top_load(mesh, |y1| spec.eval_piece(piece, x_station, y1).dy)
}

/// `∫ φ_i` for every vertex.
pub fn lumped_masses(mesh: &TriMesh) -> Vec<f64> {
    let mut m = vec![0.0; mesh.vertices.len()];
    for t in 0..mesh.triangles.len() {
        let a = mesh.signed_area(t) / 3.0;
        for &i in &mesh.triangles[t] {
            m[i] += a;
        }
    }
    m
}

/// Merge periodic vertex pairs into single unknowns and optionally add the
/// mean constraint `Σ w_i X_i = 0` through a Lagrange multiplier row.
pub fn constrain(system: &SparseSystem, periodic: &[(usize, usize)], zero_mean: Option<&[f64]>) -> Result<SparseSystem> {
    if !system.constraints.is_identity() {
        return Err(Error::InvalidInput("system is already constrained".into()));
    }
    let nv = system.matrix.dim();
    let mut target: Vec<usize> = (0..nv).collect();
    let mut is_slave = vec![false; nv];
    for &(keep, drop) in periodic {
        if keep >= nv || drop >= nv || keep == drop {
            return Err(Error::Pairing(format!("pair ({keep}, {drop}) is out of range or trivial")));
        }
        if is_slave[drop] || is_slave[keep] || target[drop] != drop {
            return Err(Error::Pairing(format!("vertex in pair ({keep}, {drop}) is already identified")));
        }
        is_slave[drop] = true;
        target[drop] = keep;
    }
    if periodic.iter().any(|&(keep, _)| is_slave[keep]) {
        return Err(Error::Pairing("chained periodic identification".into()));
    }
    let mut dof_of_vertex = vec![usize::MAX; nv];
    let mut n_dofs = 0;
    for v in 0..nv {
        if !is_slave[v] {
            dof_of_vertex[v] = n_dofs;
            n_dofs += 1;
        }
    }
    for v in 0..nv {
        if is_slave[v] {
            dof_of_vertex[v] = dof_of_vertex[target[v]];
        }
    }
    let mut triplets: Vec<(usize, usize, f64)> = system
        .matrix
        .triplets()
        .into_iter()
        .map(|(i, j, v)| (dof_of_vertex[i], dof_of_vertex[j], v))
        .collect();
    let mut rhs = vec![0.0; n_dofs];
    for v in 0..nv {
        rhs[dof_of_vertex[v]] += system.rhs[v];
    }
    let weights = match zero_mean {
        None => None,
        Some(w) => {
            if w.len() != nv || w.iter().any(|&x| !(x > 0.0)) {
                return Err(Error::InvalidInput("mean-constraint weights must be positive, one per vertex".into()));
            }
            let mut dw = vec![0.0; n_dofs];
            for v in 0..nv {
                dw[dof_of_vertex[v]] += w[v];
            }
            for (d, &wd) in dw.iter().enumerate() {
                triplets.push((d, n_dofs, wd));
                triplets.push((n_dofs, d, wd));
            }
            rhs.push(0.0);
            Some(dw)
        }
    };
    let dim = n_dofs + usize::from(weights.is_some());
    Ok(SparseSystem {
        matrix: CsrMatrix::from_triplets(dim, &triplets),
        rhs,
        constraints: Constraints { dof_of_vertex, n_dofs, zero_mean: weights },
    })
}

/// Solve a constrained system with Jacobi-preconditioned CG (or MINRES when
/// a multiplier row makes it a saddle-point system) and expand the result
/// back to one value per vertex.
pub fn solve_spd(system: &SparseSystem, tol: f64) -> Result<(FieldP1, SolveStats)> {
    if !(tol > 0.0 && tol <= 1e-6) {
        return Err(Error::InvalidInput(format!("tolerance {tol} outside (0, 1e-6]")));
    }
    let c = &system.constraints;
    let max_iter = (10 * system.dim()).max(1000);
    let mut diag = system.matrix.diagonal();
    let (sol, stats) = match &c.zero_mean {
        None => krylov::pcg(&system.matrix, &system.rhs, &krylov::Jacobi::new(&diag)?, tol, max_iter)?,
        Some(w) => {
            let schur: f64 = w.iter().zip(&diag).map(|(w, d)| w * w / d).sum();
            diag[c.n_dofs] = schur;
            krylov::minres(&system.matrix, &system.rhs, &diag, tol, max_iter)?
        }
    };
    let values = c.dof_of_vertex.iter().map(|&d| sol[d]).collect();
    Ok((FieldP1 { values }, stats))
}

/// CG with the fiber preconditioner for unconstrained systems on a graph
/// mesh; the right choice when vertical coupling dominates. Strong vertical
/// stiffness can put `tol` below what any double-precision iterate attains;
/// the solve then stops at the rounding floor of `A x` (see
/// [`krylov::rounding_floor`]) and reports the residual it reached.
pub fn solve_spd_fibers(system: &SparseSystem, mesh: &TriMesh, tol: f64) -> Result<(FieldP1, SolveStats)> {
    if !(tol > 0.0 && tol <= 1e-6) {
        return Err(Error::InvalidInput(format!("tolerance {tol} outside (0, 1e-6]")));
    }
    if !system.constraints.is_identity() || system.dim() != mesh.vertices.len() {
        return Err(Error::InvalidInput("fiber preconditioning needs an unconstrained system".into()));
    }
    let precond = fiber::FiberPreconditioner::new(&system.matrix, &mesh.fibers)?;
    let max_iter = (10 * system.dim()).max(1000);
    let (values, stats) = krylov::pcg_floored(&system.matrix, &system.rhs, &precond, tol, max_iter, true)?;
    Ok((FieldP1 { values }, stats))
}

/// Squared pieces of the H¹_ε norm: `‖u‖²`, `‖∂₁u‖²`, `‖∂₂u‖²` (the last
/// without the `1/ε²` weight).
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize)]
pub struct NormParts {
    pub l2_sq: f64,
    pub dx1_sq: f64,
    pub dx2_sq: f64,
}

impl NormParts {
    /// `‖u‖² + ‖∂₁u‖² + ε⁻²‖∂₂u‖²`.
    pub fn h1_eps_sq(&self, epsilon: f64) -> f64 {
        self.l2_sq + self.dx1_sq + self.dx2_sq / (epsilon * epsilon)
    }

    /// The `(1+η)`-weighted variant used with the vertical scaling operator:
    /// `(‖u‖² + ‖∂₁u‖²)/(1+η) + (1+η) ε⁻² ‖∂₂u‖²`.
    pub fn h1_eps_eta_sq(&self, epsilon: f64, eta: f64) -> f64 {
        (self.l2_sq + self.dx1_sq) / (1.0 + eta) + (1.0 + eta) * self.dx2_sq / (epsilon * epsilon)
    }
}

impl std::ops::Add for NormParts {
    type Output = NormParts;
    fn add(self, o: NormParts) -> NormParts {
        NormParts { l2_sq: self.l2_sq + o.l2_sq, dx1_sq: self.dx1_sq + o.dx1_sq, dx2_sq: self.dx2_sq + o.dx2_sq }
    }
}

/// Exact elementwise norm pieces over the triangles selected by `region`
/// (all triangles when `None`).
pub fn norm_parts(mesh: &TriMesh, u: &[f64], region: Option<&dyn Fn(usize) -> bool>) -> NormParts {
    let mut parts = NormParts::default();
    for (t, tri) in mesh.triangles.iter().enumerate() {
        if region.is_some_and(|r| !r(t)) {
            continue;
        }
        let area = mesh.signed_area(t);
        let [a, b, c] = tri.map(|i| u[i]);
        parts.l2_sq += area / 6.0 * (a * a + b * b + c * c + a * b + b * c + c * a);
        let g = triangle_gradient(mesh, t, u);
        parts.dx1_sq += area * g[0] * g[0];
        parts.dx2_sq += area * g[1] * g[1];
    }
    parts
}

/// `‖u‖_{H¹_ε}` restricted to `region`.
pub fn h1_eps_norm(mesh: &TriMesh, u: &FieldP1, epsilon: f64, region: Option<&dyn Fn(usize) -> bool>) -> f64 {
    if let Some(r) = region {
        if !(0..mesh.triangles.len()).any(r) {
            log::warn!("h1_eps_norm: empty region");
            return 0.0;
        }
    }
    norm_parts(mesh, &u.values, region).h1_eps_sq(epsilon).sqrt()
}

/// `∫ u` over the mesh.
pub fn integrate(mesh: &TriMesh, u: &[f64]) -> f64 {
    mesh.triangles
        .iter()
        .enumerate()
        .map(|(t, tri)| mesh.signed_area(t) / 3.0 * tri.iter().map(|&i| u[i]).sum::<f64>())
        .sum()
}

/// `∫ f²` with the same edge-midpoint rule used for source loads.
pub fn quadrature_l2_sq(mesh: &TriMesh, f: &dyn Fn(f64, f64) -> f64) -> f64 {
    (0..mesh.triangles.len())
        .map(|t| {
            let a = mesh.signed_area(t);
            a / 3.0 * midpoints(mesh, t).iter().map(|m| f(m[0], m[1]).powi(2)).sum::<f64>()
        })
        .sum()
}
