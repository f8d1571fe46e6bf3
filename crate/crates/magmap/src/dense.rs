//! Dense curl-free covariance assembly and LAPACK-backed factorizations.
//!
//! Everything cubic-cost lives here: the exact GP, the subset-of-regressors
//! path, the synthetic-data sampler, and the test oracles all assemble
//! block covariance matrices with [`assemble_field_covariance`] and factor
//! them with [`SymmetricFactor`]. The fast path never calls into this
//! module.
//!
//! Block layout: row 3i + c is component c of point i, matching the
//! vec(Y^T) stacking used everywhere else.

use crate::error::{Error, Result};
use crate::grid::JITTER_SCALE;
use crate::kernels::{curlfree_block, Hyperparameters};
use ndarray::{Array1, Array2, ArrayView2};
use ndarray_linalg::cholesky::{Cholesky, CholeskyInto};
use ndarray_linalg::eigh::Eigh;
use ndarray_linalg::triangular::{Diag, SolveTriangular};
use ndarray_linalg::UPLO;
use std::sync::Once;

static BLAS_PIN: Once = Once::new();

/// Pin the BLAS kernel set before the first LAPACK call.
///
/// OpenBLAS picks its kernels by runtime CPUID, which some virtualized CPUs
/// misreport badly enough that it falls back to generic pre-SSE kernels (an
/// order of magnitude slower). When the hardware advertises AVX-512 and the
/// user has not chosen a core type, select the AVX-512 kernel set
/// explicitly. Harmless where detection already works.
pub fn pin_blas_kernels() {
    BLAS_PIN.call_once(|| {
        #[cfg(target_arch = "x86_64")]
        {
            if std::env::var_os("OPENBLAS_CORETYPE").is_none()
                && is_x86_feature_detected!("avx512f")
            {
                std::env::set_var("OPENBLAS_CORETYPE", "SKYLAKEX");
            }
        }
    });
}

/// Diagonal jitter added before factorizing a kernel matrix.
pub fn default_jitter(hyp: &Hyperparameters) -> f64 {
    JITTER_SCALE * hyp.signal_variance
}

/// Dense cross-covariance of the curl-free field between two point sets:
/// shape (3 Na) x (3 Nb), block (i, j) = curlfree_block(a_i, b_j).
pub fn assemble_field_covariance(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    hyp: &Hyperparameters,
) -> Array2<f64> {
    let na = a.nrows();
    let nb = b.nrows();
    let mut out = Array2::zeros((3 * na, 3 * nb));
    for i in 0..na {
        let p = [a[[i, 0]], a[[i, 1]], a[[i, 2]]];
        for j in 0..nb {
            let q = [b[[j, 0]], b[[j, 1]], b[[j, 2]]];
            let blk = curlfree_block(p, q, hyp);
            for r in 0..3 {
                for c in 0..3 {
                    out[[3 * i + r, 3 * j + c]] = blk[r][c];
                }
            }
        }
    }
    out
}

/// Symmetric field covariance over one point set plus `diagonal_add` on the
/// diagonal (noise variance, jitter, or both).
pub fn assemble_field_gram(
    positions: ArrayView2<f64>,
    hyp: &Hyperparameters,
    diagonal_add: f64,
) -> Array2<f64> {
    let mut m = assemble_field_covariance(positions, positions, hyp);
    for i in 0..m.nrows() {
        m[[i, i]] += diagonal_add;
    }
    m
}

/// Cholesky factor of a symmetric positive-definite matrix, kept for
/// repeated solves, determinant evaluation, and sampling.
#[derive(Debug, Clone)]
pub struct SymmetricFactor {
    lower: Array2<f64>,
}

impl SymmetricFactor {
    pub fn cholesky(m: &Array2<f64>) -> Result<Self> {
        pin_blas_kernels();
        let lower = m.cholesky(UPLO::Lower).map_err(|e| {
            Error::Numerical(format!(
                "cholesky factorization failed ({e}); the matrix is not positive \
                 definite to working precision, consider increasing jitter"
            ))
        })?;
        Ok(Self { lower })
    }

    /// Factor an owned matrix in place. Same result as [`Self::cholesky`]
    /// without the internal copy — for Gram matrices near the memory budget.
    pub fn cholesky_into(m: Array2<f64>) -> Result<Self> {
        pin_blas_kernels();
        let lower = m.cholesky_into(UPLO::Lower).map_err(|e| {
            Error::Numerical(format!(
                "cholesky factorization failed ({e}); the matrix is not positive \
                 definite to working precision, consider increasing jitter"
            ))
        })?;
        Ok(Self { lower })
    }

    pub fn size(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &Array2<f64> {
        &self.lower
    }

    /// Solve A x = b.
    pub fn solve_vec(&self, b: &[f64]) -> Result<Vec<f64>> {
        let b = Array2::from_shape_vec((b.len(), 1), b.to_vec())
            .map_err(|e| Error::Data(e.to_string()))?;
        let x = self.solve_mat(&b)?;
        Ok(x.column(0).to_vec())
    }

    /// Solve A X = B columnwise.
    pub fn solve_mat(&self, b: &Array2<f64>) -> Result<Array2<f64>> {
        let y = self.forward_mat(b)?;
        self.lower
            .t()
            .solve_triangular(UPLO::Upper, Diag::NonUnit, &y)
            .map_err(|e| Error::Numerical(format!("triangular solve failed: {e}")))
    }

    /// Solve L Y = B (forward substitution only), so that
    /// A^-1 = Y^T Y when B is a cross-covariance block.
    pub fn forward_mat(&self, b: &Array2<f64>) -> Result<Array2<f64>> {
        self.lower
            .solve_triangular(UPLO::Lower, Diag::NonUnit, b)
            .map_err(|e| Error::Numerical(format!("triangular solve failed: {e}")))
    }

    /// log det A = 2 sum log diag(L).
    pub fn log_det(&self) -> f64 {
        self.lower.diag().iter().map(|d| d.ln()).sum::<f64>() * 2.0
    }

    /// L z, mapping standard normal draws to the factored covariance.
    pub fn lower_times(&self, z: &[f64]) -> Vec<f64> {
        self.lower.dot(&Array1::from_vec(z.to_vec())).to_vec()
    }
}

/// Symmetric eigendecomposition (ascending eigenvalues), for oracle checks.
pub fn eigh_oracle(m: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    pin_blas_kernels();
    m.eigh(UPLO::Lower)
        .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e}")))
}
