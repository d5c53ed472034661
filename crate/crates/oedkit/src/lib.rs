//! # oedkit
//!
//! Goal-oriented A- and D-optimal sensor placement for linear Gaussian
//! Bayesian inverse problems whose observation errors may be correlated in
//! space and time.
//!
//! The observation precision matrix is weighted entrywise (a Hadamard/Schur
//! product) by a symmetric kernel of per-sensor design variables, which makes
//! the same relaxed optimization problem cover uncorrelated, spatially
//! correlated, and spatiotemporally correlated observation errors. The crate
//! provides:
//!
//! - [`linalg`]: dense symmetric-matrix substrate (Cholesky, block-diagonal
//!   algebra, two-pass randomized eigendecomposition, Rademacher probes);
//! - [`bayes`]: linear Gaussian inverse-problem machinery (forward/adjoint,
//!   weighted Hessian, MAP estimate, goal-oriented posterior covariance);
//! - [`kernels`]: design weighting kernels (SQRT, EXP, SIGMOID), temporal
//!   decorrelation (Gaussian-like and Gaspari-Cohn), weighting-matrix
//!   assembly, and all analytic derivatives;
//! - [`criteria`]: exact and randomized A/D criteria, analytic gradients for
//!   space and space-time correlation structure, the sparsity penalty, and
//!   finite-difference gradient checking;
//! - [`optimize`]: projected L-BFGS solver for the relaxed design problem,
//!   thresholding to a sensor budget, brute-force enumeration, random-design
//!   baselines, and a sigmoid continuation procedure;
//! - [`testbed`]: a self-contained advection-diffusion testbed on the unit
//!   square (implicit Euler finite differences) with correlated observation
//!   covariances, a smoothing prior, synthetic data, and error metrics;
//! - [`config`] / [`driver`]: a JSON-configured front end behind the `oedkit`
//!   binary with `solve`, `invert`, `check`, `enumerate`, `baseline`, and
//!   `sweep` subcommands.
//!
//! Runnable examples live in `examples/`, one per major capability; start
//! with `cargo run --example solve_oed`.

pub mod bayes;
pub mod config;
pub mod criteria;
pub mod driver;
pub mod error;
pub mod kernels;
pub mod linalg;
pub mod optimize;
pub mod rng;
pub mod testbed;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{OedError, Result};
