//! Large-scale 3D magnetic-field mapping with curl-free Gaussian-process
//! regression.
//!
//! Magnetometer measurements are modelled as the negative gradient of a
//! latent scalar potential with a squared-exponential prior, which makes
//! every predicted field curl-free by construction. Exact inference costs
//! O((3N)^3); this crate accelerates it by interpolating the kernel from a
//! Cartesian grid of inducing points (structured kernel interpolation with
//! derivatives), so that the training covariance becomes
//!
//! ```text
//!     A = (dW) K_uu (dW)^T + sigma_y^2 I
//! ```
//!
//! with `dW` a row-sparse cubic-interpolation derivative matrix and `K_uu` a
//! Kronecker product of three small per-dimension kernels. Mean estimates
//! come from a preconditioned conjugate-gradient solve against `A`, variance
//! estimates from a Lanczos low-rank factorization cached at fit time, and
//! both scale linearly in the number of measurements.
//!
//! Module map:
//! - [`kernels`]: squared-exponential kernel, its 3x3 curl-free derivative
//!   blocks, and per-dimension factor kernels.
//! - [`grid`]: inducing grids and the Kronecker-factored `K_uu`.
//! - [`interp`]: sparse cubic-convolution interpolation matrices `W`/`dW`.
//! - [`krylov`]: Kronecker MVMs, the `A`-operator, PCG, Lanczos, and
//!   tridiagonal solves.
//! - [`dense`]: dense curl-free covariance assembly and LAPACK-backed
//!   factorizations, used by the exact path and as test oracles.
//! - [`exact`]: cubic-cost reference GP (exact posterior, subset-of-regressors
//!   posterior, marginal-likelihood hyperparameter search, downsampling).
//! - [`data`]: synthetic data generation, splits, metrics, budget matching.
//! - [`dski`]: the fast path; fitting and constant-time-per-query prediction.
//! - [`io`], [`model_io`], [`config`]: text and binary interchange formats.
//! - [`eval`]: the grid-refinement evaluation protocol and scaling benchmark.

// Index loops here typically walk several arrays in lockstep along a fixed
// small axis; iterator rewrites obscure that.
#![allow(clippy::needless_range_loop)]

pub mod config;
pub mod data;
pub mod dense;
pub mod dski;
pub mod error;
pub mod eval;
pub mod exact;
pub mod grid;
pub mod interp;
pub mod io;
pub mod kernels;
pub mod krylov;
pub mod model_io;

pub use error::{Error, Result};
pub use kernels::Hyperparameters;
