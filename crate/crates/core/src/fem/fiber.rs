//! Two-level preconditioner for thin-domain problems on graph meshes.
//!
//! The `1/ε²` vertical stiffness couples each fiber much more strongly than
//! neighbouring fibers, so the fine level solves every fiber's tridiagonal
//! block exactly and the coarse level corrects with one unknown per fiber
//! (the Galerkin projection onto fiberwise constants). Both parts are added.

use super::krylov::Preconditioner;
use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

struct Tridiagonal {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

impl Tridiagonal {
    /// LU factors without pivoting; the matrices here are SPD.
    fn factor(lower: &[f64], diag: &[f64], upper: &[f64]) -> Result<Self> {
        let n = diag.len();
        let mut d = diag.to_vec();
        let mut l = vec![0.0; n];
        for i in 1..n {
            l[i] = lower[i] / d[i - 1];
            d[i] -= l[i] * upper[i - 1];
        }
        if d.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidInput("fiber block is not positive definite".into()));
        }
        Ok(Tridiagonal { lower: l, diag: d, upper: upper.to_vec() })
    }

    fn solve(&self, x: &mut [f64]) {
        let n = x.len();
        for i in 1..n {
            x[i] -= self.lower[i] * x[i - 1];
        }
        x[n - 1] /= self.diag[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = (x[i] - self.upper[i] * x[i + 1]) / self.diag[i];
        }
    }
}

pub struct FiberPreconditioner {
    fibers: Vec<Vec<usize>>,
    blocks: Vec<Tridiagonal>,
    coarse: Tridiagonal,
}

impl FiberPreconditioner {
    /// `fibers` must partition the unknowns, bottom to top, with adjacent
    /// fibers coupled only to each other.
    pub fn new(a: &CsrMatrix, fibers: &[Vec<usize>]) -> Result<Self> {
        let n = a.dim();
        let mut fiber_of = vec![usize::MAX; n];
        for (j, f) in fibers.iter().enumerate() {
            for &v in f {
                fiber_of[v] = j;
            }
        }
        if fiber_of.iter().any(|&j| j == usize::MAX) {
            return Err(Error::InvalidInput("fibers do not cover every unknown".into()));
        }
        let blocks = fibers
            .iter()
            .map(|f| {
                let diag: Vec<f64> = f.iter().map(|&v| a.get(v, v)).collect();
                let mut lower = vec![0.0; f.len()];
                let mut upper = vec![0.0; f.len()];
                for k in 0..f.len().saturating_sub(1) {
                    upper[k] = a.get(f[k], f[k + 1]);
                    lower[k + 1] = a.get(f[k + 1], f[k]);
                }
                Tridiagonal::factor(&lower, &diag, &upper)
            })
            .collect::<Result<Vec<_>>>()?;
        let m = fibers.len();
        let (mut lo, mut di, mut up) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
        for i in 0..n {
            let fi = fiber_of[i];
            for (j, v) in a.row(i) {
                let fj = fiber_of[j];
                if fj == fi {
                    di[fi] += v;
                } else if fj == fi + 1 {
                    up[fi] += v;
                } else if fj + 1 == fi {
                    lo[fi] += v;
                } else {
                    return Err(Error::InvalidInput("non-adjacent fibers are coupled".into()));
                }
            }
        }
        Ok(FiberPreconditioner { fibers: fibers.to_vec(), blocks, coarse: Tridiagonal::factor(&lo, &di, &up)? })
    }
}

impl Preconditioner for FiberPreconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let mut sums: Vec<f64> = self.fibers.iter().map(|f| f.iter().map(|&v| r[v]).sum()).collect();
        self.coarse.solve(&mut sums);
        let mut local = Vec::new();
        for ((f, block), c) in self.fibers.iter().zip(&self.blocks).zip(&sums) {
            local.clear();
            local.extend(f.iter().map(|&v| r[v]));
            block.solve(&mut local);
            for (&v, x) in f.iter().zip(&local) {
                z[v] = x + c;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tridiagonal_solve() {
        let t = Tridiagonal::factor(&[0.0, -1.0, -1.0], &[2.0, 2.0, 2.0], &[-1.0, -1.0, 0.0]).unwrap();
        let mut x = vec![1.0, 0.0, 1.0];
        t.solve(&mut x);
        assert!(x.iter().all(|v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn exact_on_one_fiber() {
        // a single fiber: block solve plus coarse sum is A⁻¹ + 1ᵀ-projection;
        // check positivity of the preconditioned form instead of exactness
        let a = CsrMatrix::from_triplets(3, &[(0, 0, 2.0), (1, 1, 2.0), (2, 2, 2.0), (0, 1, -1.0), (1, 0, -1.0), (1, 2, -1.0), (2, 1, -1.0)]);
        let p = FiberPreconditioner::new(&a, &[vec![0, 1, 2]]).unwrap();
        let r = [1.0, -2.0, 0.5];
        let mut z = [0.0; 3];
        p.apply(&r, &mut z);
        assert!(r.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() > 0.0);
        assert!(FiberPreconditioner::new(&a, &[vec![0, 1]]).is_err());
    }
}
