//! Cartesian inducing grids and the Kronecker-factored inducing covariance.
//!
//! Inducing points live on an equispaced 3D grid, so the inducing covariance
//! factors as K_uu = K1 (x) K2 (x) K3 with one small matrix per dimension
//! (each built from the scaled one-dimensional kernel). Nothing in this
//! module ever forms the dense Kronecker product except [`KroneckerKernel::dense`],
//! which exists for small-scale oracles and the subset-of-regressors path.
//!
//! Grid node (i1, i2, i3) maps to the linear index (i1 * M2 + i2) * M3 + i3;
//! every vector indexed by inducing nodes uses this ordering.

use crate::error::{Error, Result};
use crate::kernels::{factor_kernel_1d, Hyperparameters};
use ndarray::Array2;

/// Relative scale of the diagonal jitter added before factorizing kernel
/// matrices: the absolute jitter is this times the matrix's own diagonal
/// scale (signal variance for full kernels, sigma_f^(2/3) for factors).
pub const JITTER_SCALE: f64 = 1e-8;

/// Default absolute jitter for one Kronecker factor.
pub fn default_factor_jitter(hyp: &Hyperparameters) -> f64 {
    JITTER_SCALE * hyp.signal_variance.powf(1.0 / 3.0)
}

/// Equispaced Cartesian grid of inducing positions.
#[derive(Debug, Clone, PartialEq)]
pub struct InducingGrid {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
    pub counts: [usize; 3],
    /// Node spacing per dimension; 0.0 for single-node dimensions.
    pub spacing: [f64; 3],
}

impl InducingGrid {
    /// Grid with the given exact bounds and node counts per dimension.
    ///
    /// A dimension with a single node must have coincident bounds; any other
    /// dimension must have strictly increasing bounds.
    pub fn from_axes(bounds: [[f64; 2]; 3], counts: [usize; 3]) -> Result<Self> {
        let mut spacing = [0.0; 3];
        for d in 0..3 {
            let [lo, hi] = bounds[d];
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Config(format!(
                    "grid bounds in dimension {d} must be finite, got [{lo}, {hi}]"
                )));
            }
            if counts[d] == 0 {
                return Err(Error::Config(format!(
                    "grid needs at least one node in dimension {d}"
                )));
            }
            if counts[d] == 1 {
                if lo != hi {
                    return Err(Error::Config(format!(
                        "single-node dimension {d} needs coincident bounds, got [{lo}, {hi}]"
                    )));
                }
            } else {
                if hi <= lo {
                    return Err(Error::Config(format!(
                        "degenerate grid bounds in dimension {d}: [{lo}, {hi}]"
                    )));
                }
                spacing[d] = (hi - lo) / (counts[d] - 1) as f64;
            }
        }
        Ok(Self {
            lower: [bounds[0][0], bounds[1][0], bounds[2][0]],
            upper: [bounds[0][1], bounds[1][1], bounds[2][1]],
            counts,
            spacing,
        })
    }

    /// Grid covering `data_bounds` expanded by `padding` whole cells on every
    /// side of every dimension, so that points on the data boundary still
    /// have a full interior 4-point interpolation stencil (padding >= 2).
    ///
    /// The spacing solves (hi - lo) = (count - 1 - 2 padding) cells, so each
    /// count must exceed 2 padding + 1.
    pub fn covering(
        data_bounds: [[f64; 2]; 3],
        counts: [usize; 3],
        padding: usize,
    ) -> Result<Self> {
        let mut bounds = [[0.0; 2]; 3];
        for d in 0..3 {
            let [lo, hi] = data_bounds[d];
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::Config(format!(
                    "degenerate data bounds in dimension {d}: [{lo}, {hi}]; \
                     use explicit grid bounds for planar data"
                )));
            }
            if counts[d] < 4 {
                return Err(Error::Config(format!(
                    "cubic interpolation needs at least 4 nodes per dimension, \
                     got {} in dimension {d}",
                    counts[d]
                )));
            }
            if counts[d] < 2 * padding + 2 {
                return Err(Error::Config(format!(
                    "count {} in dimension {d} cannot accommodate padding {padding}",
                    counts[d]
                )));
            }
            let h = (hi - lo) / (counts[d] - 1 - 2 * padding) as f64;
            bounds[d] = [lo - padding as f64 * h, hi + padding as f64 * h];
        }
        Self::from_axes(bounds, counts)
    }

    /// Total number of inducing nodes, prod_d counts[d].
    pub fn num_nodes(&self) -> usize {
        self.counts.iter().product()
    }

    /// Node coordinates along dimension `d`.
    pub fn axis_nodes(&self, d: usize) -> Vec<f64> {
        (0..self.counts[d])
            .map(|i| self.lower[d] + i as f64 * self.spacing[d])
            .collect()
    }

    pub fn node_position(&self, idx: [usize; 3]) -> [f64; 3] {
        [
            self.lower[0] + idx[0] as f64 * self.spacing[0],
            self.lower[1] + idx[1] as f64 * self.spacing[1],
            self.lower[2] + idx[2] as f64 * self.spacing[2],
        ]
    }

    /// Bounds of the interpolable interior: one cell in from each face,
    /// where a full cubic stencil exists.
    pub fn interior_bounds(&self) -> Result<[[f64; 2]; 3]> {
        let mut out = [[0.0; 2]; 3];
        for d in 0..3 {
            if self.counts[d] < 4 {
                return Err(Error::Config(format!(
                    "cubic interpolation needs at least 4 nodes per dimension, got {} \
                     in dimension {d}",
                    self.counts[d]
                )));
            }
            out[d] = [
                self.lower[d] + self.spacing[d],
                self.upper[d] - self.spacing[d],
            ];
        }
        Ok(out)
    }

    pub fn linear_index(&self, idx: [usize; 3]) -> usize {
        (idx[0] * self.counts[1] + idx[1]) * self.counts[2] + idx[2]
    }
}

/// Inducing covariance held as three per-dimension factors,
/// K_uu = factors[0] (x) factors[1] (x) factors[2].
#[derive(Debug, Clone)]
pub struct KroneckerKernel {
    pub factors: [Array2<f64>; 3],
}

impl KroneckerKernel {
    /// Factor sizes (M1, M2, M3).
    pub fn dims(&self) -> [usize; 3] {
        [
            self.factors[0].nrows(),
            self.factors[1].nrows(),
            self.factors[2].nrows(),
        ]
    }

    pub fn num_nodes(&self) -> usize {
        self.dims().iter().product()
    }

    /// First four entries of factor d's first row: the kernel values at node
    /// distances {0, 1, 2, 3} cells (factors are Toeplitz by equispacing).
    /// These cover every index pair inside one 4-point interpolation stencil.
    pub fn stencil_toeplitz(&self, d: usize) -> [f64; 4] {
        let f = &self.factors[d];
        assert!(f.nrows() >= 4, "stencil values need at least 4 nodes");
        [f[[0, 0]], f[[0, 1]], f[[0, 2]], f[[0, 3]]]
    }

    /// Dense Kronecker product of the three factors. Small grids only: the
    /// result has num_nodes()^2 entries.
    pub fn dense(&self) -> Array2<f64> {
        let m = self.num_nodes();
        let [m1, m2, m3] = self.dims();
        let mut out = Array2::zeros((m, m));
        for i1 in 0..m1 {
            for j1 in 0..m1 {
                let f1 = self.factors[0][[i1, j1]];
                for i2 in 0..m2 {
                    for j2 in 0..m2 {
                        let f12 = f1 * self.factors[1][[i2, j2]];
                        for i3 in 0..m3 {
                            for j3 in 0..m3 {
                                let row = (i1 * m2 + i2) * m3 + i3;
                                let col = (j1 * m2 + j2) * m3 + j3;
                                out[[row, col]] = f12 * self.factors[2][[i3, j3]];
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Build the Kronecker factors of K_uu over the grid nodes. Factor d is the
/// one-dimensional kernel (signal variance scaled to sigma_f^(2/3)) over the
/// d-th axis nodes, plus `jitter` on the diagonal.
///
/// Pass jitter 0.0 for exact-identity comparisons; production callers use
/// [`default_factor_jitter`].
pub fn kron_kuu(grid: &InducingGrid, hyp: &Hyperparameters, jitter: f64) -> KroneckerKernel {
    let factors: [Array2<f64>; 3] = [0, 1, 2].map(|d| {
        let nodes = grid.axis_nodes(d);
        let m = nodes.len();
        let mut f = Array2::zeros((m, m));
        for i in 0..m {
            for j in 0..=i {
                let v = factor_kernel_1d(nodes[i], nodes[j], 3, hyp);
                f[[i, j]] = v;
                f[[j, i]] = v;
            }
        }
        for i in 0..m {
            f[[i, i]] += jitter;
        }
        f
    });
    KroneckerKernel { factors }
}
