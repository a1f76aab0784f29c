//! Numerical homogenization of the Laplace–Neumann problem on thin domains
//! with oscillating top boundaries.
//!
//! The crate is organized bottom-up:
//!
//! * [`geometry`]: closed-form height profiles `G(x, y)` (piecewise cubic in
//!   `x`, trigonometric and `L`-periodic in `y`).
//! * [`meshing`]: structured graph-domain triangulations of cells, oscillating
//!   domains and 1D interval meshes.
//! * [`fem`]: P1 assembly, periodic/zero-mean constraints, Krylov solvers and
//!   ε-weighted norms.
//! * [`cell`]: the periodic corrector problem and the effective coefficients
//!   `r`, `p`, `q`, plus a mapped-domain backend.
//! * [`limit`]: the 1D homogenized Neumann problem.
//! * [`direct`]: the full 2D ε-problem and the operators acting on its
//!   solution (fiber averages, reflection extension, vertical scaling).
//! * [`analysis`]: convergence, perturbation, boundary-layer and
//!   coefficient-continuity studies.
//! * [`cli`]: the batch front-end used by the `thinhom` binary.

pub mod analysis;
pub mod cell;
pub mod cli;
pub mod direct;
pub mod error;
pub mod fem;
pub mod geometry;
pub mod limit;
pub mod meshing;

pub use error::{Error, Result};
