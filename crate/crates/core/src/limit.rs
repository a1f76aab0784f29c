//! The 1D homogenized problem `∫ r u'φ' + p u φ = ∫ f̂ φ` on `(0, 1)` with
//! natural (Neumann) ends.

use std::io::Write;

use crate::cell::CoefficientTable;
use crate::error::{Error, Result};
use crate::geometry::Side;
use crate::meshing::IntervalMesh;

const GAUSS2: f64 = 0.288_675_134_594_812_9; // 1 / (2√3)

#[derive(Debug, Clone, PartialEq)]
pub struct LimitSolution {
    pub mesh: IntervalMesh,
    pub u: Vec<f64>,
    /// `r` and `p` at the two Gauss points of every element.
    pub r_qp: Vec<[f64; 2]>,
    pub p_qp: Vec<[f64; 2]>,
    pub fhat_qp: Vec<[f64; 2]>,
    /// Relative residual of the tridiagonal solve.
    pub residual: f64,
}

/// `f̂ = p f₀` with `p` read from the table.
pub fn hat_f_from_f0<'a>(table: &'a CoefficientTable, f0: impl Fn(f64) -> f64 + Sync + 'a) -> impl Fn(f64) -> f64 + Sync + 'a {
    move |x| table.eval(x, Side::Left).1 * f0(x)
}

fn gauss_points(a: f64, b: f64) -> [f64; 2] {
    let (m, h) = (0.5 * (a + b), b - a);
    [m - GAUSS2 * h, m + GAUSS2 * h]
}

/// P1 Galerkin solution with two-point Gauss quadrature per element.
pub fn solve_limit(table: &CoefficientTable, fhat: &dyn Fn(f64) -> f64, mesh: &IntervalMesh) -> Result<LimitSolution> {
    for &b in &table.breakpoints[1..table.breakpoints.len() - 1] {
        if mesh.node_of(b).is_none() {
            return Err(Error::InvalidInput(format!("interval mesh misses coefficient breakpoint {b}")));
        }
    }
    let n = mesh.nodes.len();
    let (mut diag, mut off, mut rhs) = (vec![0.0; n], vec![0.0; n - 1], vec![0.0; n]);
    let (mut r_qp, mut p_qp, mut f_qp) = (Vec::new(), Vec::new(), Vec::new());
    for e in 0..mesh.elements() {
        let (a, b) = (mesh.nodes[e], mesh.nodes[e + 1]);
        let h = b - a;
        let xs = gauss_points(a, b);
        let mut rs = [0.0; 2];
        let mut ps = [0.0; 2];
        let mut fs = [0.0; 2];
        for g in 0..2 {
            // Gauss points are interior, so the element's own piece is used
            let (r, p, _) = table.eval(xs[g], Side::Left);
            if !(r > 0.0 && p > 0.0) {
                return Err(Error::InvalidInput(format!("non-positive coefficient at x = {}", xs[g])));
            }
            rs[g] = r;
            ps[g] = p;
            fs[g] = fhat(xs[g]);
        }
        let rbar = 0.5 * (rs[0] + rs[1]);
        diag[e] += rbar / h;
        diag[e + 1] += rbar / h;
        off[e] -= rbar / h;
        for g in 0..2 {
            let w = 0.5 * h;
            let phi = [(b - xs[g]) / h, (xs[g] - a) / h];
            diag[e] += w * ps[g] * phi[0] * phi[0];
            diag[e + 1] += w * ps[g] * phi[1] * phi[1];
            off[e] += w * ps[g] * phi[0] * phi[1];
            rhs[e] += w * fs[g] * phi[0];
            rhs[e + 1] += w * fs[g] * phi[1];
        }
        r_qp.push(rs);
        p_qp.push(ps);
        f_qp.push(fs);
    }
    let u = thomas(&diag, &off, &rhs)?;
    let residual = tridiagonal_residual(&diag, &off, &rhs, &u);
    Ok(LimitSolution { mesh: mesh.clone(), u, r_qp, p_qp, fhat_qp: f_qp, residual })
}

/// Symmetric tridiagonal solve; `off[i]` couples `i` and `i + 1`.
fn thomas(diag: &[f64], off: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut piv = diag[0];
    for i in 0..n {
        if i > 0 {
            piv = diag[i] - off[i - 1] * c[i - 1];
        }
        if !(piv.abs() > 0.0) {
            return Err(Error::InvalidInput("singular limit system".into()));
        }
        c[i] = if i + 1 < n { off[i] / piv } else { 0.0 };
        d[i] = (rhs[i] - if i > 0 { off[i - 1] * d[i - 1] } else { 0.0 }) / piv;
    }
    let mut u = d;
    for i in (0..n - 1).rev() {
        u[i] -= c[i] * u[i + 1];
    }
    Ok(u)
}

fn tridiagonal_residual(diag: &[f64], off: &[f64], rhs: &[f64], u: &[f64]) -> f64 {
    let n = diag.len();
    let mut r2 = 0.0;
    for i in 0..n {
        let mut au = diag[i] * u[i];
        if i > 0 {
            au += off[i - 1] * u[i - 1];
        }
        if i + 1 < n {
            au += off[i] * u[i + 1];
        }
        r2 += (au - rhs[i]).powi(2);
    }
    let bn = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    if bn == 0.0 {
        r2.sqrt()
    } else {
        r2.sqrt() / bn
    }
}

impl LimitSolution {
    pub fn slope(&self, e: usize) -> f64 {
        (self.u[e + 1] - self.u[e]) / (self.mesh.nodes[e + 1] - self.mesh.nodes[e])
    }

    /// `r u'` on element `e` with `r` averaged over its Gauss points.
    pub fn flux(&self, e: usize) -> f64 {
        0.5 * (self.r_qp[e][0] + self.r_qp[e][1]) * self.slope(e)
    }

    pub fn max_flux(&self) -> f64 {
        (0..self.mesh.elements()).map(|e| self.flux(e).abs()).fold(0.0, f64::max)
    }

    /// Value of the P1 solution at `x`.
    pub fn eval(&self, x: f64) -> f64 {
        let nodes = &self.mesh.nodes;
        let k = nodes.partition_point(|&n| n < x).clamp(1, nodes.len() - 1);
        let t = (x - nodes[k - 1]) / (nodes[k] - nodes[k - 1]);
        self.u[k - 1] + t * (self.u[k] - self.u[k - 1])
    }

    /// `‖u_h − exact‖_{L²(0,1)}` with three-point Gauss quadrature.
    pub fn l2_error(&self, exact: impl Fn(f64) -> f64) -> f64 {
        const X: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
        const W: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
        let mut s = 0.0;
        for e in 0..self.mesh.elements() {
            let (a, b) = (self.mesh.nodes[e], self.mesh.nodes[e + 1]);
            let (m, h) = (0.5 * (a + b), 0.5 * (b - a));
            for g in 0..3 {
                let x = m + h * X[g];
                let t = (x - a) / (b - a);
                let uh = self.u[e] + t * (self.u[e + 1] - self.u[e]);
                s += h * W[g] * (uh - exact(x)).powi(2);
            }
        }
        s.sqrt()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,u")?;
        for (x, u) in self.mesh.nodes.iter().zip(&self.u) {
            writeln!(w, "{x},{u}")?;
        }
        Ok(())
    }
}

/// `r₋ u'(ξ−) − r₊ u'(ξ+)` from the two elements adjacent to the interior
/// node at `xi`.
pub fn interface_flux_jump(sol: &LimitSolution, xi: f64) -> Result<f64> {
    let k = sol
        .mesh
        .node_of(xi)
        .ok_or_else(|| Error::InvalidInput(format!("{xi} is not a mesh node")))?;
    if k == 0 || k + 1 == sol.mesh.nodes.len() {
        return Err(Error::InvalidInput(format!("{xi} is not an interior node")));
    }
    Ok(sol.flux(k - 1) - sol.flux(k))
}

/// Exact `L²(0, 1)` distance between two piecewise-linear functions given by
/// nodes and values.
pub fn p1_l2_distance(xa: &[f64], ua: &[f64], xb: &[f64], ub: &[f64]) -> f64 {
    let interp = |xs: &[f64], us: &[f64], x: f64| {
        let k = xs.partition_point(|&n| n < x).clamp(1, xs.len() - 1);
        let t = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
        us[k - 1] + t * (us[k] - us[k - 1])
    };
    let mut nodes: Vec<f64> = xa.iter().chain(xb).copied().collect();
    nodes.sort_by(f64::total_cmp);
    nodes.dedup_by(|a, b| (*a - *b).abs() <= 1e-14);
    let mut s = 0.0;
    for w in nodes.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        // both functions are continuous and linear on [a, b]
        let da = interp(xa, ua, a) - interp(xb, ub, a);
        let db = interp(xa, ua, b) - interp(xb, ub, b);
        s += (b - a) / 3.0 * (da * da + da * db + db * db);
    }
    s.sqrt()
}
