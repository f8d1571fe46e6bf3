//! Squared-exponential kernel and its curl-free derivative blocks.
//!
//! The field model places a GP prior on a scalar potential phi and observes
//! its negative gradient. Covariances between field components are therefore
//! second derivatives of the scalar kernel: for positions p and p' the 3x3
//! cross-covariance block is
//!
//! ```text
//!     B(p, p') = grad_p kappa(p, p') grad_{p'}^T
//!              = kappa(p, p') / l^2 * (I - tau tau^T / l^2),   tau = p - p',
//! ```
//!
//! which is what [`curlfree_block`] evaluates in closed form. The sign of the
//! observed field (-grad phi) squares away here, so the same block covers the
//! potential-gradient and field views.
//!
//! [`factor_kernel_1d`] is the one-dimensional factor used to build the
//! inducing covariance as a Kronecker product: each of the D per-dimension
//! factors carries signal variance sigma_f^(2/D) so their product restores
//! the full kernel.

use crate::error::{Error, Result};

/// Kernel and noise hyperparameters. All fields strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparameters {
    /// Length scale l, in meters.
    pub length_scale: f64,
    /// Signal variance sigma_f^2 of the scalar potential, in squared field
    /// units times squared meters.
    pub signal_variance: f64,
    /// Measurement noise variance sigma_y^2, in squared field units.
    pub noise_variance: f64,
}

impl Hyperparameters {
    pub fn new(length_scale: f64, signal_variance: f64, noise_variance: f64) -> Result<Self> {
        let fields = [
            ("length_scale", length_scale),
            ("signal_variance", signal_variance),
            ("noise_variance", noise_variance),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be strictly positive and finite, got {v}"
                )));
            }
        }
        Ok(Self {
            length_scale,
            signal_variance,
            noise_variance,
        })
    }
}

/// Squared-exponential kernel of the scalar potential:
/// sigma_f^2 * exp(-|p - p'|^2 / (2 l^2)).
pub fn se_kernel(p: [f64; 3], p_prime: [f64; 3], hyp: &Hyperparameters) -> f64 {
    let l2 = hyp.length_scale * hyp.length_scale;
    let mut sq = 0.0;
    for d in 0..3 {
        let t = p[d] - p_prime[d];
        sq += t * t;
    }
    hyp.signal_variance * (-sq / (2.0 * l2)).exp()
}

/// 3x3 cross-covariance block of the curl-free field kernel,
/// grad_p kappa grad_{p'}^T evaluated in closed form.
///
/// Entry (i, j) is the covariance between field component i at `p` and
/// component j at `p_prime`. Satisfies block(p, p') = block(p', p)^T and is
/// (sigma_f^2 / l^2) I at p = p'.
pub fn curlfree_block(p: [f64; 3], p_prime: [f64; 3], hyp: &Hyperparameters) -> [[f64; 3]; 3] {
    let l2 = hyp.length_scale * hyp.length_scale;
    let k = se_kernel(p, p_prime, hyp) / l2;
    let tau = [p[0] - p_prime[0], p[1] - p_prime[1], p[2] - p_prime[2]];
    let mut block = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let delta = if i == j { 1.0 } else { 0.0 };
            block[i][j] = k * (delta - tau[i] * tau[j] / l2);
        }
    }
    block
}

/// One-dimensional kernel factor with scaled signal variance:
/// sigma_f^(2/D) * exp(-(x - x')^2 / (2 l^2)).
///
/// The product of the D per-dimension factors equals [`se_kernel`] on the
/// full vectors, which is what makes the grid covariance Kronecker-factored.
pub fn factor_kernel_1d(x: f64, x_prime: f64, dims: usize, hyp: &Hyperparameters) -> f64 {
    debug_assert!(dims >= 1);
    let l2 = hyp.length_scale * hyp.length_scale;
    let t = x - x_prime;
    hyp.signal_variance.powf(1.0 / dims as f64) * (-t * t / (2.0 * l2)).exp()
}
