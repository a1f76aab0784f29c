//! Jacobi-preconditioned conjugate gradients and MINRES.

use super::sparse::{dot, norm, CsrMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SolveStats {
    pub iterations: usize,
    /// `‖A x − b‖ / ‖b‖`, recomputed from the returned iterate.
    pub residual: f64,
}

fn relative_residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> f64 {
    let bn = norm(b);
    let ax = a.mul_vec(x);
    let r: f64 = ax.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
    if bn == 0.0 {
        r
    } else {
        r / bn
    }
}

fn inverse_diagonal(d: &[f64]) -> Result<Vec<f64>> {
    d.iter()
        .map(|&v| {
            if v > 0.0 {
                Ok(1.0 / v)
            } else {
                Err(Error::InvalidInput(format!("preconditioner entry {v} is not positive")))
            }
        })
        .collect()
}

/// Symmetric positive definite approximation of `A⁻¹`.
pub trait Preconditioner: Sync {
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

pub struct Jacobi {
    inverse: Vec<f64>,
}

impl Jacobi {
    pub fn new(diag: &[f64]) -> Result<Self> {
        Ok(Jacobi { inverse: inverse_diagonal(diag)? })
    }
}

impl Preconditioner for Jacobi {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for ((z, r), m) in z.iter_mut().zip(r).zip(&self.inverse) {
            *z = r * m;
        }
    }
}

/// `8 u ‖|A| |x|‖ / ‖b‖`: the relative residual below which the computed
/// residual of `x` is dominated by rounding in the product `A x`.
pub fn rounding_floor(a: &CsrMatrix, x: &[f64], b: &[f64]) -> f64 {
    let abs: f64 = (0..a.dim())
        .map(|i| {
            let s: f64 = a.row(i).map(|(j, v)| (v * x[j]).abs()).sum();
            s * s
        })
        .sum::<f64>()
        .sqrt();
    8.0 * f64::EPSILON * abs / norm(b)
}

/// Preconditioned CG for SPD `a`. Converged when the true relative residual
/// is at most `tol`.
pub fn pcg(a: &CsrMatrix, b: &[f64], precond: &dyn Preconditioner, tol: f64, max_iter: usize) -> Result<(Vec<f64>, SolveStats)> {
    pcg_floored(a, b, precond, tol, max_iter, false)
}

/// [`pcg`], optionally accepting a true residual at the rounding floor of
/// the matrix-vector product when that floor exceeds `tol`.
pub fn pcg_floored(
    a: &CsrMatrix,
    b: &[f64],
    precond: &dyn Preconditioner,
    tol: f64,
    max_iter: usize,
    accept_floor: bool,
) -> Result<(Vec<f64>, SolveStats)> {
    let n = a.dim();
    let bn = norm(b);
    let mut x = vec![0.0; n];
    if bn == 0.0 {
        return Ok((x, SolveStats { iterations: 0, residual: 0.0 }));
    }
    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    precond.apply(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut target = tol;
    for it in 1..=max_iter {
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if norm(&r) <= target * bn {
            let res = relative_residual(a, &x, b);
            if res <= tol || (accept_floor && res <= rounding_floor(a, &x, b)) {
                return Ok((x, SolveStats { iterations: it, residual: res }));
            }
            // recurrence drifted from the true residual; restart from it
            target *= 0.1;
            let ax = a.mul_vec(&x);
            for i in 0..n {
                r[i] = b[i] - ax[i];
            }
            precond.apply(&r, &mut z);
            p.copy_from_slice(&z);
            rz = dot(&r, &z);
            continue;
        }
        precond.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let residual = relative_residual(a, &x, b);
    if residual <= tol {
        return Ok((x, SolveStats { iterations: max_iter, residual }));
    }
    Err(Error::NotConverged { iterations: max_iter, residual })
}

/// Preconditioned MINRES for symmetric (possibly indefinite) `a` with an SPD
/// diagonal preconditioner. Converged when the true relative residual is at
/// most `tol`.
pub fn minres(a: &CsrMatrix, b: &[f64], precond_diag: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, SolveStats)> {
    let n = a.dim();
    let minv = inverse_diagonal(precond_diag)?;
    let bn = norm(b);
    let mut x = vec![0.0; n];
    if bn == 0.0 {
        return Ok((x, SolveStats { iterations: 0, residual: 0.0 }));
    }
    let mut total = 0;
    let mut target = tol;
    // Restart loop: each pass runs MINRES on the current true residual.
    while total < max_iter {
        let ax = a.mul_vec(&x);
        let r0: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        if norm(&r0) <= tol * bn {
            return Ok((x, SolveStats { iterations: total, residual: norm(&r0) / bn }));
        }
        let (dx, used) = minres_pass(a, &r0, &minv, target * bn / norm(&r0), max_iter - total);
        total += used;
        for i in 0..n {
            x[i] += dx[i];
        }
        let res = relative_residual(a, &x, b);
        if res <= tol {
            return Ok((x, SolveStats { iterations: total, residual: res }));
        }
        target *= 0.1;
        if used == 0 {
            break;
        }
    }
    let residual = relative_residual(a, &x, b);
    Err(Error::NotConverged { iterations: total, residual })
}

/// One MINRES run from a zero initial guess; stops when the preconditioned
/// residual estimate drops by `rtol`.
fn minres_pass(a: &CsrMatrix, b: &[f64], minv: &[f64], rtol: f64, max_iter: usize) -> (Vec<f64>, usize) {
    let n = a.dim();
    let mut x = vec![0.0; n];
    let mut r1 = b.to_vec();
    let mut y: Vec<f64> = r1.iter().zip(minv).map(|(r, m)| r * m).collect();
    let beta1 = dot(&r1, &y).sqrt();
    if beta1 == 0.0 {
        return (x, 0);
    }
    let mut r2 = r1.clone();
    let mut oldb = 0.0;
    let mut beta = beta1;
    let mut dbar = 0.0;
    let mut epsln = 0.0;
    let mut phibar = beta1;
    let mut cs = -1.0;
    let mut sn = 0.0;
    let mut w = vec![0.0; n];
    let mut w1 = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let mut v = vec![0.0; n];
    for itn in 1..=max_iter {
        let s = 1.0 / beta;
        for i in 0..n {
            v[i] = s * y[i];
        }
        a.mul_vec_into(&v, &mut y);
        if itn >= 2 {
            let f = beta / oldb;
            for i in 0..n {
                y[i] -= f * r1[i];
            }
        }
        let alfa = dot(&v, &y);
        let f = alfa / beta;
        for i in 0..n {
            y[i] -= f * r2[i];
        }
        std::mem::swap(&mut r1, &mut r2);
        r2.copy_from_slice(&y);
        for i in 0..n {
            y[i] = r2[i] * minv[i];
        }
        oldb = beta;
        beta = dot(&r2, &y).max(0.0).sqrt();
        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;
        let denom = 1.0 / gamma;
        std::mem::swap(&mut w1, &mut w2);
        std::mem::swap(&mut w2, &mut w);
        for i in 0..n {
            w[i] = (v[i] - oldeps * w1[i] - delta * w2[i]) * denom;
            x[i] += phi * w[i];
        }
        if phibar <= rtol * beta1 || beta == 0.0 {
            return (x, itn);
        }
    }
    (x, max_iter)
}
