//! Numerical studies: homogenization convergence, domain perturbation,
//! boundary-layer decay and coefficient continuity.
//!
//! Every study returns a [`StudyReport`]: a table, log-log rate fits and
//! pass/fail checks computed from the table alone.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::{coefficient_table_with, solve_cell_with, CoefficientTable};
use crate::direct::{fiber_average, solve_direct_on, DirectSolution, Forcing};
use crate::error::{Error, Result};
use crate::fem::overlay::{self, Affine};
use crate::fem::{self, NormParts, DEFAULT_TOL};
use crate::geometry::{c1_distance, GeometrySpec, Side};
use crate::limit::{hat_f_from_f0, p1_l2_distance, solve_limit, LimitSolution};
use crate::meshing::{graph_mesh, mesh_domain, mesh_interval, BoundaryTag, TriMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyKind {
    Cell,
    Limit,
    Direct,
    Converge,
    Perturb,
    Layer,
    Coeffcont,
}

impl StudyKind {
    pub fn name(self) -> &'static str {
        match self {
            StudyKind::Cell => "cell",
            StudyKind::Limit => "limit",
            StudyKind::Direct => "direct",
            StudyKind::Converge => "converge",
            StudyKind::Perturb => "perturb",
            StudyKind::Layer => "layer",
            StudyKind::Coeffcont => "coeffcont",
        }
    }
}

/// Least-squares line through `(log x, log y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub name: String,
    pub x_label: String,
    pub y_label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Check { name: name.to_string(), passed, detail }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub kind: StudyKind,
    /// Parameter ladders.
    pub grid: BTreeMap<String, Vec<f64>>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub fits: Vec<RateFit>,
    pub checks: Vec<Check>,
    /// Study-level numbers that are not per grid point.
    pub scalars: BTreeMap<String, f64>,
}

impl StudyReport {
    pub fn new(kind: StudyKind, columns: &[&str]) -> Self {
        StudyReport {
            kind,
            grid: BTreeMap::new(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            fits: Vec::new(),
            checks: Vec::new(),
            scalars: BTreeMap::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn fit(&self, name: &str) -> Option<&RateFit> {
        self.fits.iter().find(|f| f.name == name)
    }

    /// CSV with a leading comment line naming the columns.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# {} study; columns: {}", self.kind.name(), self.columns.join(", "))?;
        writeln!(w, "{}", self.columns.join(","))?;
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }

    /// Whitespace-separated `x y` data for one fitted curve.
    pub fn write_plotdata<W: Write>(fit: &RateFit, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# {} {} (log-log slope {:.6})", fit.x_label, fit.y_label, fit.slope)?;
        for (x, y) in fit.x.iter().zip(&fit.y) {
            writeln!(w, "{x:e} {y:e}")?;
        }
        Ok(())
    }
}

/// Log-log least-squares fit; needs at least three positive points.
pub fn fit_loglog(name: &str, x_label: &str, y_label: &str, x: &[f64], y: &[f64]) -> Result<RateFit> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::InvalidInput(format!("rate fit '{name}' needs at least 3 points, got {}", x.len())));
    }
    if x.iter().chain(y).any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput(format!("rate fit '{name}' needs positive finite data")));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidInput(format!("rate fit '{name}' has no spread in x")));
    }
    let slope = sxy / sxx;
    Ok(RateFit {
        name: name.to_string(),
        x_label: x_label.to_string(),
        y_label: y_label.to_string(),
        x: x.to_vec(),
        y: y.to_vec(),
        slope,
        intercept: my - slope * mx,
    })
}

fn spread(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    max / min
}

fn check_ladder(name: &str, ladder: &[f64], lo: f64, hi: f64) -> Result<()> {
    if ladder.is_empty() {
        return Err(Error::Config(format!("{name} ladder is empty")));
    }
    if ladder.iter().any(|&v| !(v >= lo && v <= hi)) {
        return Err(Error::Config(format!("{name} ladder entries must lie in [{lo}, {hi}]")));
    }
    if ladder.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Config(format!("{name} ladder must be strictly descending")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Convergence

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePolicy {
    /// Mesh columns per oscillation period of the direct solves.
    pub columns_per_period: usize,
    /// Cell resolution for the coefficient table.
    pub cell_n: usize,
    /// Elements of the limit mesh.
    pub limit_n: usize,
    /// Coefficient stations per unit length on x-dependent pieces.
    pub table_stations: usize,
    pub tol: f64,
}

impl Default for ConvergencePolicy {
    fn default() -> Self {
        ConvergencePolicy { columns_per_period: 16, cell_n: 128, limit_n: 2048, table_stations: 16, tol: DEFAULT_TOL }
    }
}

/// Everything computed by [`convergence_study`].
pub struct Convergence {
    pub report: StudyReport,
    pub table: CoefficientTable,
    pub limit: LimitSolution,
}

pub type Forcing1d<'a> = &'a (dyn Fn(f64) -> f64 + Sync);

/// For each ε: solve the direct problem with `f(x1, x2) = f₀(x1)`, average
/// over fibers on `(0, G0)` and compare with the limit solution.
pub fn convergence_study(spec: &GeometrySpec, f0: Forcing1d<'_>, eps_ladder: &[f64], policy: &ConvergencePolicy) -> Result<Convergence> {
    check_ladder("epsilon", eps_ladder, 1.0 / 64.0, 1.0)?;
    let stations: Vec<f64> = if spec.is_x_independent() {
        Vec::new()
    } else {
        (0..=policy.table_stations).map(|k| k as f64 / policy.table_stations as f64).collect()
    };
    let table = coefficient_table_with(spec, &stations, policy.cell_n, policy.tol)?;
    let mesh = mesh_interval(policy.limit_n, spec.breakpoints())?;
    let limit = {
        let fhat = hat_f_from_f0(&table, f0);
        solve_limit(&table, &fhat, &mesh)?
    };
    let depth = spec.g0();
    let f2 = |x: f64, _y: f64| f0(x);
    let solved: Vec<Result<(DirectSolution, f64)>> = eps_ladder
        .par_iter()
        .map(|&eps| {
            let mesh = mesh_domain(spec, eps, policy.columns_per_period)?;
            let sol = solve_direct_on(mesh, eps, &f2, policy.tol, spec.g0())?;
            let avg = fiber_average(&sol, depth)?;
            let e = p1_l2_distance(&avg.stations, &avg.values, &limit.mesh.nodes, &limit.u);
            Ok((sol, e))
        })
        .collect();
    let mut report = StudyReport::new(
        StudyKind::Converge,
        &["epsilon", "error", "fhat_gap", "energy_defect", "apriori_excess", "dx2_scaled", "vertices", "iterations"],
    );
    report.grid.insert("epsilon".into(), eps_ladder.to_vec());
    for (&eps, res) in eps_ladder.iter().zip(solved) {
        let (sol, e) = res?;
        let gap = fhat_gap(spec, &table, f0, eps)?;
        report.rows.push(vec![
            eps,
            e,
            gap,
            sol.energy_defect() / (1.0 + sol.energy.abs()),
            sol.a_priori_excess(),
            sol.norms.dx2_scaled,
            sol.mesh.vertices.len() as f64,
            sol.stats.iterations as f64,
        ]);
    }
    let errors = report.column("error").unwrap();
    let decreasing = errors.windows(2).all(|w| w[1] < w[0]);
    report.checks.push(Check::new("error_decreasing", decreasing, format!("{errors:?}")));
    let (first, last) = (errors[0], *errors.last().unwrap());
    report.checks.push(Check::new("error_halved", last <= 0.5 * first, format!("e_last / e_first = {:.4}", last / first)));
    let energy = report.column("energy_defect").unwrap().into_iter().fold(0.0, f64::max);
    report.checks.push(Check::new("energy_identity", energy <= 1e-8, format!("max relative defect {energy:e}")));
    let excess = report.column("apriori_excess").unwrap().into_iter().fold(f64::NEG_INFINITY, f64::max);
    report.checks.push(Check::new("apriori_bounds", excess <= 1e-8, format!("max excess {excess:e}")));
    if eps_ladder.len() >= 3 && errors.iter().all(|&e| e > 0.0) {
        report.fits.push(fit_loglog("error_vs_epsilon", "epsilon", "error", eps_ladder, &errors)?);
    }
    report.scalars.insert("limit_elements".into(), limit.mesh.elements() as f64);
    report.scalars.insert("cell_n".into(), policy.cell_n as f64);
    Ok(Convergence { report, table, limit })
}

/// `max_φ |∫ (f̂^ε − p f₀) φ|` over `φ ∈ {1, cos πx, cos 2πx}`, where
/// `f̂^ε(x) = G_ε(x) f₀(x)` is the fiber integral of the forcing.
pub fn fhat_gap(spec: &GeometrySpec, table: &CoefficientTable, f0: Forcing1d<'_>, eps: f64) -> Result<f64> {
    const X: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
    const W: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
    let profile = spec.at_epsilon(eps)?;
    let tests: [fn(f64) -> f64; 3] = [|_| 1.0, |x| (std::f64::consts::PI * x).cos(), |x| (2.0 * std::f64::consts::PI * x).cos()];
    let mut sums = [0.0; 3];
    for i in 0..spec.pieces() {
        let (a, b) = spec.piece_bounds(i);
        let m = (((b - a) / (eps * spec.period())) * 64.0).ceil().max(1.0) as usize;
        let h = (b - a) / m as f64;
        for k in 0..m {
            let c = a + (k as f64 + 0.5) * h;
            for g in 0..3 {
                let x = c + 0.5 * h * X[g];
                let side = if x <= a { Side::Right } else { Side::Left };
                let d = (profile.height(x, side) - table.eval(x, side).1) * f0(x);
                for (s, phi) in sums.iter_mut().zip(&tests) {
                    *s += 0.5 * h * W[g] * d * phi(x);
                }
            }
        }
    }
    Ok(sums.iter().fold(0.0, |m, s| m.max(s.abs())))
}

// ---------------------------------------------------------------------------
// Domain perturbation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbationMode {
    /// `Ĝ = G + δ`.
    #[default]
    Shift,
    /// Oscillating terms scaled by `1 + δ`.
    Amplitude,
}

pub fn perturbed(spec: &GeometrySpec, mode: PerturbationMode, delta: f64) -> Result<GeometrySpec> {
    let p = match mode {
        PerturbationMode::Shift => spec.shifted(delta)?,
        PerturbationMode::Amplitude => spec.amplitude_scaled(1.0 + delta)?,
    };
    if !(p.g0() > 0.0) {
        return Err(Error::Inadmissible(format!("perturbed profile has G0 = {} ≤ 0", p.g0())));
    }
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyPolicy {
    pub columns_per_period: usize,
    pub tol: f64,
}

impl Default for StudyPolicy {
    fn default() -> Self {
        StudyPolicy { columns_per_period: 16, tol: DEFAULT_TOL }
    }
}

/// The mesh of `{0 < x2 < G_ε + δ}` that contains `base` row for row and
/// adds layer-1 rows on `(G_ε, G_ε + δ)`.
pub fn shifted_mesh(base: &TriMesh, delta: f64) -> Result<TriMesh> {
    if delta == 0.0 {
        return Ok(base.clone());
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidInput(format!("shift {delta} must be nonnegative")));
    }
    let rows = base.rows();
    let mean = base.area() / (base.stations[base.stations.len() - 1] - base.stations[0]);
    let extra = ((delta * rows as f64 / mean).ceil() as usize).max(1);
    let levels: Vec<Vec<f64>> = base
        .fibers
        .iter()
        .map(|f| {
            let mut l: Vec<f64> = f.iter().map(|&v| base.vertices[v][1]).collect();
            let top = *l.last().unwrap();
            l.extend((1..=extra).map(|i| top + delta * i as f64 / extra as f64));
            l
        })
        .collect();
    graph_mesh(&base.stations, &levels, &[rows], (BoundaryTag::Lateral, BoundaryTag::Lateral))
}

/// `D = ‖u − û‖²(Ω ∩ Ω̂) + ‖u‖²(Ω ∖ Ω̂) + ‖û‖²(Ω̂ ∖ Ω)` in the squared `H¹_ε`
/// norm, returned as (common, outside) parts.
pub fn domain_difference(a: &DirectSolution, b: &DirectSolution, nested: bool) -> Result<(NormParts, NormParts)> {
    if nested {
        // b's mesh extends a's mesh with extra rows on top
        let (ra, rb) = (a.mesh.rows(), b.mesh.rows());
        let cols = a.mesh.fibers.len();
        if b.mesh.fibers.len() != cols || rb < ra {
            return Err(Error::InvalidInput("meshes are not nested".into()));
        }
        let mut diff = vec![0.0; a.mesh.vertices.len()];
        for j in 0..cols {
            for k in 0..=ra {
                diff[a.mesh.vertex_index(j, k)] =
                    a.u.values[a.mesh.vertex_index(j, k)] - b.u.values[b.mesh.vertex_index(j, k)];
            }
        }
        let common = fem::norm_parts(&a.mesh, &diff, None);
        let layer = |t: usize| b.mesh.triangle_layer[t] == 1;
        let outside = fem::norm_parts(&b.mesh, &b.u.values, Some(&layer));
        return Ok((common, outside));
    }
    let cells = overlay::overlay(&a.mesh, &b.mesh)?;
    let mut common = NormParts::default();
    let mut in_a = NormParts::default();
    let mut in_b = NormParts::default();
    for c in &cells {
        let fa = Affine::on(&a.mesh, c.a, &a.u.values);
        let fb = Affine::on(&b.mesh, c.b, &b.u.values);
        common = common + overlay::affine_norm_parts(&c.polygon, &fa.minus(&fb));
        in_a = in_a + overlay::affine_norm_parts(&c.polygon, &fa);
        in_b = in_b + overlay::affine_norm_parts(&c.polygon, &fb);
    }
    let rest = |total: NormParts, part: NormParts| NormParts {
        l2_sq: (total.l2_sq - part.l2_sq).max(0.0),
        dx1_sq: (total.dx1_sq - part.dx1_sq).max(0.0),
        dx2_sq: (total.dx2_sq - part.dx2_sq).max(0.0),
    };
    let outside = rest(a.norm_parts(), in_a) + rest(b.norm_parts(), in_b);
    Ok((common, outside))
}

/// `D(ε, δ)` over the grid. The δ ladder is descending and may end in 0.
pub fn perturbation_study(
    spec: &GeometrySpec,
    delta_ladder: &[f64],
    eps_ladder: &[f64],
    f: Forcing<'_>,
    mode: PerturbationMode,
    policy: &StudyPolicy,
) -> Result<StudyReport> {
    check_ladder("delta", delta_ladder, 0.0, 1.0)?;
    check_ladder("epsilon", eps_ladder, 1.0 / 64.0, 1.0)?;
    let targets: Vec<GeometrySpec> = delta_ladder.iter().map(|&d| perturbed(spec, mode, d)).collect::<Result<_>>()?;
    let per_eps: Vec<Result<Vec<[f64; 4]>>> = eps_ladder
        .par_iter()
        .map(|&eps| {
            let base_mesh = mesh_domain(spec, eps, policy.columns_per_period)?;
            let base = solve_direct_on(base_mesh, eps, f, policy.tol, spec.g0())?;
            check_forcing_norm(&base)?;
            let mut out = Vec::new();
            for (&delta, target) in delta_ladder.iter().zip(&targets) {
                let (mesh, nested) = match mode {
                    PerturbationMode::Shift => (shifted_mesh(&base.mesh, delta)?, true),
                    PerturbationMode::Amplitude => (mesh_domain(target, eps, policy.columns_per_period)?, false),
                };
                let other = solve_direct_on(mesh, eps, f, policy.tol, target.g0())?;
                check_forcing_norm(&other)?;
                let (common, outside) = domain_difference(&base, &other, nested)?;
                let (dc, dout) = (common.h1_eps_sq(eps), outside.h1_eps_sq(eps));
                out.push([eps, delta, dc + dout, dc]);
            }
            Ok(out)
        })
        .collect();
    let mut report = StudyReport::new(StudyKind::Perturb, &["epsilon", "delta", "D", "D_common", "D_outside"]);
    report.grid.insert("epsilon".into(), eps_ladder.to_vec());
    report.grid.insert("delta".into(), delta_ladder.to_vec());
    for res in per_eps {
        for [eps, delta, d, dc] in res? {
            report.rows.push(vec![eps, delta, d, dc, d - dc]);
        }
    }
    perturbation_checks(&mut report, eps_ladder, delta_ladder)?;
    Ok(report)
}

fn check_forcing_norm(sol: &DirectSolution) -> Result<()> {
    if sol.f_norm > 1.0 + 1e-9 {
        return Err(Error::InvalidInput(format!("forcing norm {} exceeds 1", sol.f_norm)));
    }
    Ok(())
}

fn value_at(report: &StudyReport, a: (&str, f64), b: (&str, f64), col: &str) -> f64 {
    let (ia, ib) = (
        report.columns.iter().position(|c| c == a.0).unwrap(),
        report.columns.iter().position(|c| c == b.0).unwrap(),
    );
    let ic = report.columns.iter().position(|c| c == col).unwrap();
    report.rows.iter().find(|r| r[ia] == a.1 && r[ib] == b.1).map(|r| r[ic]).unwrap_or(f64::NAN)
}

fn perturbation_checks(report: &mut StudyReport, eps_ladder: &[f64], deltas: &[f64]) -> Result<()> {
    let table = report.clone();
    let d = |e: f64, dl: f64| value_at(&table, ("epsilon", e), ("delta", dl), "D");
    let mut decreasing = true;
    for &e in eps_ladder {
        for w in deltas.windows(2) {
            decreasing &= d(e, w[1]) < d(e, w[0]);
        }
    }
    let positive: Vec<f64> = deltas.iter().copied().filter(|&x| x > 0.0).collect();
    let mut worst_spread: f64 = 1.0;
    let mut maxima = Vec::new();
    for &dl in &positive {
        let values: Vec<f64> = eps_ladder.iter().map(|&e| d(e, dl)).collect();
        worst_spread = worst_spread.max(spread(&values));
        maxima.push(values.iter().copied().fold(0.0, f64::max));
    }
    let zero_ok = deltas.iter().filter(|&&x| x == 0.0).all(|&z| eps_ladder.iter().all(|&e| d(e, z) == 0.0));
    let checks = vec![
        Check::new("decreasing_in_delta", decreasing, "D(ε, δ) strictly decreasing along the δ ladder".into()),
        Check::new("uniform_in_epsilon", worst_spread <= 3.0, format!("worst max/min over ε = {worst_spread:.4}")),
        Check::new("zero_shift", zero_ok, "D = 0 at δ = 0".into()),
    ];
    report.checks.extend(checks);
    if positive.len() >= 3 && maxima.iter().all(|&m| m > 0.0) {
        let fit = fit_loglog("D_max_vs_delta", "delta", "max_eps_D", &positive, &maxima)?;
        report.checks.push(Check::new("delta_rate", fit.slope >= 0.15, format!("slope {:.4}", fit.slope)));
        report.fits.push(fit);
    }
    if eps_ladder.len() >= 3 {
        for &e in eps_ladder {
            let vals: Vec<f64> = positive.iter().map(|&dl| d(e, dl)).collect();
            if positive.len() >= 3 && vals.iter().all(|&v| v > 0.0) {
                report.fits.push(fit_loglog(&format!("D_vs_delta_eps_{e}"), "delta", "D", &positive, &vals)?);
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Boundary layer

/// `‖u‖²(Ω ∖ Ω(1/(1+η)))` where `Ω(s) = {x2 < s G_ε(x1)}`, split into norm
/// parts, integrated exactly on the clipped triangles.
pub fn upper_strip_parts(sol: &DirectSolution, eta: f64) -> NormParts {
    let mesh = &sol.mesh;
    let rows = mesh.rows();
    let tops = mesh.top_heights();
    let s = 1.0 / (1.0 + eta);
    let mut parts = NormParts::default();
    for t in 0..mesh.triangles.len() {
        let col = t / 2 / rows;
        let p = [mesh.stations[col], s * tops[col]];
        let q = [mesh.stations[col + 1], s * tops[col + 1]];
        let pts = overlay::triangle_points(mesh, t);
        let line = |x: f64| p[1] + (q[1] - p[1]) * (x - p[0]) / (q[0] - p[0]);
        if pts.iter().all(|v| v[1] <= line(v[0])) {
            continue;
        }
        let f = Affine::on(mesh, t, &sol.u.values);
        let poly = if pts.iter().all(|v| v[1] >= line(v[0])) {
            pts.to_vec()
        } else {
            overlay::clip_halfplane(&pts, p, q)
        };
        if poly.len() >= 3 {
            parts = parts + overlay::affine_norm_parts(&poly, &f);
        }
    }
    parts
}

/// `‖u − P_{1+η} u‖²` over `Ω`, split into norm parts.
pub fn scaling_defect_parts(sol: &DirectSolution, eta: f64) -> Result<NormParts> {
    let stretched = sol.mesh.scaled_vertically(1.0 + eta);
    let cells = overlay::overlay(&sol.mesh, &stretched)?;
    let mut parts = NormParts::default();
    for c in &cells {
        let fa = Affine::on(&sol.mesh, c.a, &sol.u.values);
        let fb = Affine::on(&stretched, c.b, &sol.u.values);
        parts = parts + overlay::affine_norm_parts(&c.polygon, &fa.minus(&fb));
    }
    Ok(parts)
}

pub fn boundary_layer_study(
    spec: &GeometrySpec,
    eps_ladder: &[f64],
    eta_ladder: &[f64],
    f: Forcing<'_>,
    policy: &StudyPolicy,
) -> Result<StudyReport> {
    check_ladder("epsilon", eps_ladder, 1.0 / 64.0, 1.0)?;
    check_ladder("eta", eta_ladder, f64::MIN_POSITIVE, 0.5)?;
    let per_eps: Vec<Result<Vec<Vec<f64>>>> = eps_ladder
        .par_iter()
        .map(|&eps| {
            let mesh = mesh_domain(spec, eps, policy.columns_per_period)?;
            let sol = solve_direct_on(mesh, eps, f, policy.tol, spec.g0())?;
            eta_ladder
                .iter()
                .map(|&eta| {
                    let strip = upper_strip_parts(&sol, eta).h1_eps_sq(eps);
                    let scale = scaling_defect_parts(&sol, eta)?.h1_eps_sq(eps);
                    Ok(vec![eps, eta, strip + scale, strip, scale])
                })
                .collect()
        })
        .collect();
    let mut report = StudyReport::new(StudyKind::Layer, &["epsilon", "eta", "T", "T_strip", "T_scaling"]);
    report.grid.insert("epsilon".into(), eps_ladder.to_vec());
    report.grid.insert("eta".into(), eta_ladder.to_vec());
    for res in per_eps {
        report.rows.extend(res?);
    }
    let table = report.clone();
    let t = |e: f64, h: f64| value_at(&table, ("epsilon", e), ("eta", h), "T");
    let mut decreasing = true;
    let mut quarter = true;
    let mut worst_ratio: f64 = 0.0;
    for &e in eps_ladder {
        for w in eta_ladder.windows(2) {
            decreasing &= t(e, w[1]) < t(e, w[0]);
            if (w[0] / w[1] - 4.0).abs() < 1e-9 {
                let ratio = t(e, w[1]) / t(e, w[0]);
                worst_ratio = worst_ratio.max(ratio);
                quarter &= ratio <= 0.75;
            }
        }
    }
    let mut worst_spread: f64 = 1.0;
    for &h in eta_ladder {
        let v: Vec<f64> = eps_ladder.iter().map(|&e| t(e, h)).collect();
        worst_spread = worst_spread.max(spread(&v));
    }
    report.checks.push(Check::new("decreasing_in_eta", decreasing, "T(ε, η) strictly decreasing along the η ladder".into()));
    report.checks.push(Check::new("quarter_eta", quarter, format!("worst T(η/4)/T(η) = {worst_ratio:.4}")));
    report.checks.push(Check::new("uniform_in_epsilon", worst_spread <= 3.0, format!("worst max/min over ε = {worst_spread:.4}")));
    if eta_ladder.len() >= 3 {
        for &e in eps_ladder {
            let v: Vec<f64> = eta_ladder.iter().map(|&h| t(e, h)).collect();
            if v.iter().all(|&x| x > 0.0) {
                report.fits.push(fit_loglog(&format!("T_vs_eta_eps_{e}"), "eta", "T", eta_ladder, &v)?);
            }
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Coefficient continuity

/// `|r(G) − r(Ĝ)|` and `|q(G) − q(Ĝ)|` against `‖G − Ĝ‖_{C¹}` at station
/// `x` along a δ ladder.
pub fn coefficient_continuity_study(
    spec: &GeometrySpec,
    delta_ladder: &[f64],
    n: usize,
    x: f64,
    mode: PerturbationMode,
    tol: f64,
) -> Result<StudyReport> {
    check_ladder("delta", delta_ladder, 0.0, 1.0)?;
    let base = solve_cell_with(spec, x, Side::Left, n, tol)?;
    let targets: Vec<GeometrySpec> = delta_ladder.iter().map(|&d| perturbed(spec, mode, d)).collect::<Result<_>>()?;
    let solved: Vec<Result<(f64, f64, f64)>> = targets
        .par_iter()
        .map(|t| {
            let s = solve_cell_with(t, x, Side::Left, n, tol)?;
            Ok((s.r, s.q, c1_distance(spec, t, x)?))
        })
        .collect();
    let mut report = StudyReport::new(StudyKind::Coeffcont, &["delta", "c1_distance", "dr", "dq", "ratio_r", "ratio_q"]);
    report.grid.insert("delta".into(), delta_ladder.to_vec());
    report.scalars.insert("r".into(), base.r);
    report.scalars.insert("q".into(), base.q);
    for (&delta, res) in delta_ladder.iter().zip(solved) {
        let (r, q, c1) = res?;
        let (dr, dq) = ((r - base.r).abs(), (q - base.q).abs());
        if delta > 0.0 && c1 == 0.0 {
            return Err(Error::Config(format!("perturbation δ = {delta} leaves the profile unchanged")));
        }
        // ratios are undefined for Ĝ = G and reported as 0
        let (rr, rq) = if c1 > 0.0 { (dr / c1, dq / c1) } else { (0.0, 0.0) };
        report.rows.push(vec![delta, c1, dr, dq, rr, rq]);
    }
    let ratios: Vec<f64> = report.rows.iter().filter(|r| r[1] > 0.0).map(|r| r[4]).collect();
    let mean = ratios.iter().sum::<f64>() / ratios.len().max(1) as f64;
    let stable = !ratios.is_empty() && ratios.iter().all(|&r| (r - mean).abs() <= 0.5 * mean);
    report.scalars.insert("mean_ratio_r".into(), mean);
    report.checks.push(Check::new("ratio_stable", stable, format!("ratios {ratios:?}, mean {mean:.6}")));
    let zero_ok = report.rows.iter().filter(|r| r[0] == 0.0).all(|r| r[2] == 0.0 && r[3] == 0.0);
    report.checks.push(Check::new("identity", zero_ok, "r(Ĝ) = r(G) at δ = 0".into()));
    let pts: Vec<(f64, f64)> = report.rows.iter().filter(|r| r[1] > 0.0 && r[2] > 0.0).map(|r| (r[1], r[2])).collect();
    if pts.len() >= 3 {
        let (cx, dy): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        report.fits.push(fit_loglog("dr_vs_c1", "c1_distance", "dr", &cx, &dy)?);
    }
    Ok(report)
}
