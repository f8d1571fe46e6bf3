//! Sparse cubic-convolution interpolation matrices.
//!
//! Values on the inducing grid are interpolated to arbitrary interior points
//! with the Keys cubic-convolution kernel (a = -1/2), separable per
//! dimension. Each point touches a 4x4x4 stencil of grid nodes, so every
//! interpolation row has exactly 64 structural nonzeros whose weights are
//! tensor products of per-dimension weight vectors.
//!
//! Two matrices are built from the same stencils:
//!
//! - `W` (one row per point): plain value interpolation; rows sum to 1.
//! - `dW` (three rows per point): spatial derivatives of the interpolant.
//!   The rows carry the NEGATIVE gradient, matching the field model
//!   f = -grad phi, so that downstream formulas use `dW` verbatim; rows sum
//!   to 0.
//!
//! Row ordering of `dW` is measurement-major, component-minor: point n's
//! x/y/z rows are 3n, 3n+1, 3n+2, matching the vec(Y^T) stacking of
//! measurements.
//!
//! Storage is row-grouped: the 64 column indices of a point are stored
//! contiguously and shared by its three derivative rows.

use crate::error::{Error, Result};
use crate::grid::InducingGrid;
use ndarray::ArrayView2;

/// Keys cubic-convolution weights (a = -1/2) at normalized offset `s` within
/// a cell, over stencil nodes at offsets {-1, 0, 1, 2} cells, together with
/// their analytic s-derivatives.
///
/// Weights sum to 1 and derivative weights sum to 0 (up to rounding in the
/// last place). To convert derivative weights to spatial units divide by the
/// grid spacing.
pub fn cubic_weights_1d(s: f64) -> Result<([f64; 4], [f64; 4])> {
    if !(0.0..1.0).contains(&s) {
        return Err(Error::Domain(format!(
            "normalized offset must lie in [0, 1), got {s}"
        )));
    }
    Ok(raw_cubic_weights(s))
}

/// Unchecked variant also accepting s = 1 exactly (used when a point sits on
/// the last interior node and the cell index is clamped left).
fn raw_cubic_weights(s: f64) -> ([f64; 4], [f64; 4]) {
    let s2 = s * s;
    let s3 = s2 * s;
    let w = [
        -0.5 * s3 + s2 - 0.5 * s,
        1.5 * s3 - 2.5 * s2 + 1.0,
        -1.5 * s3 + 2.0 * s2 + 0.5 * s,
        0.5 * s3 - 0.5 * s2,
    ];
    let dw = [
        -1.5 * s2 + 2.0 * s - 0.5,
        4.5 * s2 - 5.0 * s,
        -4.5 * s2 + 4.0 * s + 0.5,
        1.5 * s2 - s,
    ];
    (w, dw)
}

/// Per-dimension stencil of one point: index of the leftmost of the four
/// nodes, interpolation weights, and spatial-derivative weights (already
/// divided by the grid spacing, NOT yet negated).
#[derive(Debug, Clone, Copy)]
struct AxisStencil {
    base: usize,
    w: [f64; 4],
    dw_dx: [f64; 4],
}

/// Slack for points sitting on the boundary of the interpolable region up to
/// rounding of the normalized coordinate.
const EDGE_TOL: f64 = 1e-9;

fn axis_stencil(grid: &InducingGrid, d: usize, x: f64, what: &str) -> Result<AxisStencil> {
    let m = grid.counts[d];
    if m < 4 {
        return Err(Error::Config(format!(
            "cubic interpolation needs at least 4 nodes per dimension, got {m} in dimension {d}"
        )));
    }
    if !x.is_finite() {
        return Err(Error::Data(format!(
            "{what}: non-finite coordinate in dimension {d}"
        )));
    }
    let t = (x - grid.lower[d]) / grid.spacing[d];
    // full stencil requires t in [1, m-2]
    if t < 1.0 - EDGE_TOL || t > (m - 2) as f64 + EDGE_TOL {
        return Err(Error::Domain(format!(
            "{what}: coordinate {x} in dimension {d} lies outside the interpolable \
             interior [{}, {}]",
            grid.lower[d] + grid.spacing[d],
            grid.lower[d] + (m - 2) as f64 * grid.spacing[d],
        )));
    }
    let cell = (t.floor() as usize).clamp(1, m - 3);
    let s = (t - cell as f64).clamp(0.0, 1.0);
    let (w, dw) = raw_cubic_weights(s);
    let inv_h = 1.0 / grid.spacing[d];
    Ok(AxisStencil {
        base: cell - 1,
        w,
        dw_dx: dw.map(|v| v * inv_h),
    })
}

/// Full 4x4x4 stencil of one point: per-dimension bases, interpolation
/// weights, and negated spatial-derivative weights (field convention).
#[derive(Debug, Clone)]
pub(crate) struct PointStencil {
    pub base: [usize; 3],
    pub w: [[f64; 4]; 3],
    /// -d/dx of the per-axis weights, in spatial units.
    pub neg_dw: [[f64; 4]; 3],
}

impl PointStencil {
    pub fn build(grid: &InducingGrid, p: [f64; 3], what: &str) -> Result<Self> {
        let sx = axis_stencil(grid, 0, p[0], what)?;
        let sy = axis_stencil(grid, 1, p[1], what)?;
        let sz = axis_stencil(grid, 2, p[2], what)?;
        Ok(Self {
            base: [sx.base, sy.base, sz.base],
            w: [sx.w, sy.w, sz.w],
            neg_dw: [
                sx.dw_dx.map(|v| -v),
                sy.dw_dx.map(|v| -v),
                sz.dw_dx.map(|v| -v),
            ],
        })
    }

    /// Linear grid indices of the 64 stencil nodes, in tensor order
    /// k = (k1 * 4 + k2) * 4 + k3.
    pub fn columns(&self, grid: &InducingGrid) -> [u32; 64] {
        let mut cols = [0u32; 64];
        let mut k = 0;
        for k1 in 0..4 {
            for k2 in 0..4 {
                for k3 in 0..4 {
                    let idx = [self.base[0] + k1, self.base[1] + k2, self.base[2] + k3];
                    cols[k] = grid.linear_index(idx) as u32;
                    k += 1;
                }
            }
        }
        cols
    }

    /// Row of W: tensor product of the three weight vectors.
    pub fn value_row(&self) -> [f64; 64] {
        let mut vals = [0.0; 64];
        let mut k = 0;
        for k1 in 0..4 {
            for k2 in 0..4 {
                let w12 = self.w[0][k1] * self.w[1][k2];
                for k3 in 0..4 {
                    vals[k] = w12 * self.w[2][k3];
                    k += 1;
                }
            }
        }
        vals
    }

    /// Row of dW for field component `c`: the weight vector of dimension `c`
    /// is replaced by its negated spatial derivative.
    pub fn derivative_row(&self, c: usize) -> [f64; 64] {
        let g1 = if c == 0 { &self.neg_dw[0] } else { &self.w[0] };
        let g2 = if c == 1 { &self.neg_dw[1] } else { &self.w[1] };
        let g3 = if c == 2 { &self.neg_dw[2] } else { &self.w[2] };
        let mut vals = [0.0; 64];
        let mut k = 0;
        for k1 in 0..4 {
            for k2 in 0..4 {
                let g12 = g1[k1] * g2[k2];
                for k3 in 0..4 {
                    vals[k] = g12 * g3[k3];
                    k += 1;
                }
            }
        }
        vals
    }
}

/// Row-sparse value-interpolation matrix W of shape num_points x num_cols,
/// 64 nonzeros per row.
#[derive(Debug, Clone)]
pub struct SparseInterpolation {
    pub num_points: usize,
    pub num_cols: usize,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl SparseInterpolation {
    /// W v.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.num_cols);
        let mut out = vec![0.0; self.num_points];
        for n in 0..self.num_points {
            let cols = &self.cols[n * 64..(n + 1) * 64];
            let vals = &self.vals[n * 64..(n + 1) * 64];
            let mut acc = 0.0;
            for k in 0..64 {
                acc += vals[k] * v[cols[k] as usize];
            }
            out[n] = acc;
        }
        out
    }

    /// Structural row view (column indices and weights) for tests.
    pub fn row(&self, n: usize) -> (&[u32], &[f64]) {
        (
            &self.cols[n * 64..(n + 1) * 64],
            &self.vals[n * 64..(n + 1) * 64],
        )
    }
}

/// Row-sparse derivative-interpolation matrix dW of shape
/// 3 num_points x num_cols. The three rows of one point share their 64
/// column indices; values are laid out [point][component][stencil].
#[derive(Debug, Clone)]
pub struct SparseDerivativeInterpolation {
    pub num_points: usize,
    pub num_cols: usize,
    cols: Vec<u32>,
    vals: Vec<f64>,
    /// Per-point per-axis weight factors, 24 values each: for every axis the
    /// 4 interpolation weights followed by the 4 negated derivative weights.
    /// Each row of the matrix is the tensor product of three of these
    /// vectors, which is what lets quadratic forms against the Toeplitz
    /// kernel factors collapse to per-axis 4x4 contractions.
    axis_factors: Vec<f64>,
}

impl SparseDerivativeInterpolation {
    pub fn num_rows(&self) -> usize {
        3 * self.num_points
    }

    /// dW v, of length 3 num_points, ordered point-major, component-minor.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.num_cols);
        let mut out = vec![0.0; self.num_rows()];
        let mut gathered = [0.0; 64];
        for n in 0..self.num_points {
            let cols = &self.cols[n * 64..(n + 1) * 64];
            for k in 0..64 {
                gathered[k] = v[cols[k] as usize];
            }
            for c in 0..3 {
                let vals = self.point_vals(n, c);
                let mut acc = 0.0;
                for k in 0..64 {
                    acc += vals[k] * gathered[k];
                }
                out[3 * n + c] = acc;
            }
        }
        out
    }

    /// dW^T u for u of length 3 num_points.
    pub fn apply_transpose(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.num_rows());
        let mut out = vec![0.0; self.num_cols];
        for n in 0..self.num_points {
            let cols = &self.cols[n * 64..(n + 1) * 64];
            let ux = u[3 * n];
            let uy = u[3 * n + 1];
            let uz = u[3 * n + 2];
            let vx = self.point_vals(n, 0);
            let vy = self.point_vals(n, 1);
            let vz = self.point_vals(n, 2);
            for k in 0..64 {
                out[cols[k] as usize] += ux * vx[k] + uy * vy[k] + uz * vz[k];
            }
        }
        out
    }

    pub fn point_cols(&self, n: usize) -> &[u32] {
        &self.cols[n * 64..(n + 1) * 64]
    }

    pub fn point_vals(&self, n: usize, c: usize) -> &[f64] {
        let start = (n * 3 + c) * 64;
        &self.vals[start..start + 64]
    }

    /// Interpolation weights and negated derivative weights of point `n`
    /// along axis `d`.
    pub fn point_axis_factors(&self, n: usize, d: usize) -> ([f64; 4], [f64; 4]) {
        let start = n * 24 + d * 8;
        let w: [f64; 4] = self.axis_factors[start..start + 4].try_into().unwrap();
        let ndw: [f64; 4] = self.axis_factors[start + 4..start + 8].try_into().unwrap();
        (w, ndw)
    }

    /// Materialize the full matrix — reference checks only, the whole point
    /// of the sparse form is never doing this at scale.
    pub fn to_dense(&self) -> ndarray::Array2<f64> {
        let mut out = ndarray::Array2::zeros((self.num_rows(), self.num_cols));
        for n in 0..self.num_points {
            let cols = self.point_cols(n);
            for c in 0..3 {
                let vals = self.point_vals(n, c);
                for k in 0..64 {
                    out[[3 * n + c, cols[k] as usize]] += vals[k];
                }
            }
        }
        out
    }
}

fn check_column_width(positions: &ArrayView2<f64>) -> Result<usize> {
    if positions.ncols() != 3 {
        return Err(Error::Data(format!(
            "positions must have 3 columns, got {}",
            positions.ncols()
        )));
    }
    Ok(positions.nrows())
}

/// Build the value-interpolation matrix W over the given points.
pub fn build_w(grid: &InducingGrid, positions: ArrayView2<f64>) -> Result<SparseInterpolation> {
    let n = check_column_width(&positions)?;
    let num_cols = grid.num_nodes();
    assert!(num_cols <= u32::MAX as usize);
    let mut cols = Vec::with_capacity(n * 64);
    let mut vals = Vec::with_capacity(n * 64);
    for i in 0..n {
        let p = [positions[[i, 0]], positions[[i, 1]], positions[[i, 2]]];
        let st = PointStencil::build(grid, p, &format!("point {i}"))?;
        cols.extend_from_slice(&st.columns(grid));
        vals.extend_from_slice(&st.value_row());
    }
    Ok(SparseInterpolation {
        num_points: n,
        num_cols,
        cols,
        vals,
    })
}

/// Build the derivative-interpolation matrix dW over the given points.
pub fn build_dw(
    grid: &InducingGrid,
    positions: ArrayView2<f64>,
) -> Result<SparseDerivativeInterpolation> {
    let n = check_column_width(&positions)?;
    let num_cols = grid.num_nodes();
    assert!(num_cols <= u32::MAX as usize);
    let mut cols = Vec::with_capacity(n * 64);
    let mut vals = Vec::with_capacity(n * 3 * 64);
    let mut axis_factors = Vec::with_capacity(n * 24);
    for i in 0..n {
        let p = [positions[[i, 0]], positions[[i, 1]], positions[[i, 2]]];
        let st = PointStencil::build(grid, p, &format!("point {i}"))?;
        cols.extend_from_slice(&st.columns(grid));
        for c in 0..3 {
            vals.extend_from_slice(&st.derivative_row(c));
        }
        for d in 0..3 {
            axis_factors.extend_from_slice(&st.w[d]);
            axis_factors.extend_from_slice(&st.neg_dw[d]);
        }
    }
    Ok(SparseDerivativeInterpolation {
        num_points: n,
        num_cols,
        cols,
        vals,
        axis_factors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    fn test_grid() -> InducingGrid {
        InducingGrid::from_axes([[-1.0, 5.0], [0.0, 4.0], [-2.0, 2.0]], [8, 7, 6]).unwrap()
    }

    /// Random points with a full interior stencil.
    fn interior_points(grid: &InducingGrid, n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Array2::zeros((n, 3));
        for i in 0..n {
            for d in 0..3 {
                let lo = grid.lower[d] + grid.spacing[d];
                let hi = grid.lower[d] + (grid.counts[d] - 2) as f64 * grid.spacing[d];
                pts[[i, d]] = rng.gen_range(lo..hi);
            }
        }
        pts
    }

    #[test]
    fn weights_at_node_are_a_unit_vector() {
        let (w, dw) = cubic_weights_1d(0.0).unwrap();
        assert_eq!(w, [0.0, 1.0, 0.0, 0.0]);
        // central difference across the two neighbors
        assert_eq!(dw, [-0.5, 0.0, 0.5, 0.0]);
    }

    #[test]
    fn weights_reject_out_of_range_offsets() {
        assert!(cubic_weights_1d(-0.1).is_err());
        assert!(cubic_weights_1d(1.0).is_err());
        assert!(cubic_weights_1d(f64::NAN).is_err());
    }

    #[test]
    fn derivative_weights_match_finite_differences() {
        let e = 1e-6;
        for s in [0.01, 0.2, 0.5, 0.77, 0.99] {
            let (_, dw) = cubic_weights_1d(s).unwrap();
            let (wp, _) = raw_cubic_weights(s + e);
            let (wm, _) = raw_cubic_weights(s - e);
            for k in 0..4 {
                let fd = (wp[k] - wm[k]) / (2.0 * e);
                assert_relative_eq!(dw[k], fd, max_relative = 1e-6, epsilon = 1e-6);
            }
        }
    }

    proptest! {
        #[test]
        fn weights_partition_unity(s in 0.0..1.0f64) {
            let (w, dw) = cubic_weights_1d(s).unwrap();
            let ws: f64 = w.iter().sum();
            let dws: f64 = dw.iter().sum();
            prop_assert!((ws - 1.0).abs() <= 1e-12);
            prop_assert!(dws.abs() <= 1e-12);
        }
    }

    #[test]
    fn w_row_at_grid_node_is_unit_coordinate_vector() {
        let grid = test_grid();
        let node = grid.node_position([3, 2, 2]);
        let target = grid.linear_index([3, 2, 2]);
        let pts = Array2::from_shape_vec((1, 3), node.to_vec()).unwrap();
        let w = build_w(&grid, pts.view()).unwrap();
        let (cols, vals) = w.row(0);
        for (c, v) in cols.iter().zip(vals) {
            let expect = if *c as usize == target { 1.0 } else { 0.0 };
            assert_relative_eq!(*v, expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn w_rows_sum_to_one() {
        let grid = test_grid();
        let pts = interior_points(&grid, 50, 7);
        let w = build_w(&grid, pts.view()).unwrap();
        let ones = vec![1.0; grid.num_nodes()];
        for v in w.apply(&ones) {
            assert_relative_eq!(v, 1.0, epsilon = 1e-12);
        }
    }

    fn quadratic(p: [f64; 3]) -> f64 {
        1.3 - 0.7 * p[0] + 0.4 * p[1] + 0.9 * p[2] + 0.31 * p[0] * p[0] - 0.21 * p[1] * p[1]
            + 0.11 * p[2] * p[2]
            + 0.17 * p[0] * p[1]
            - 0.23 * p[1] * p[2]
            + 0.08 * p[0] * p[2]
    }

    fn quadratic_grad(p: [f64; 3]) -> [f64; 3] {
        [
            -0.7 + 0.62 * p[0] + 0.17 * p[1] + 0.08 * p[2],
            0.4 - 0.42 * p[1] + 0.17 * p[0] - 0.23 * p[2],
            0.9 + 0.22 * p[2] - 0.23 * p[1] + 0.08 * p[0],
        ]
    }

    fn node_values(grid: &InducingGrid, f: impl Fn([f64; 3]) -> f64) -> Vec<f64> {
        let mut v = vec![0.0; grid.num_nodes()];
        for i1 in 0..grid.counts[0] {
            for i2 in 0..grid.counts[1] {
                for i3 in 0..grid.counts[2] {
                    v[grid.linear_index([i1, i2, i3])] = f(grid.node_position([i1, i2, i3]));
                }
            }
        }
        v
    }

    #[test]
    fn interpolation_is_exact_on_quadratics() {
        let grid = test_grid();
        let nodes = node_values(&grid, quadratic);
        let pts = interior_points(&grid, 100, 11);
        let w = build_w(&grid, pts.view()).unwrap();
        let approx_vals = w.apply(&nodes);
        for (i, got) in approx_vals.iter().enumerate() {
            let p = [pts[[i, 0]], pts[[i, 1]], pts[[i, 2]]];
            assert_relative_eq!(*got, quadratic(p), max_relative = 1e-10);
        }
    }

    #[test]
    fn derivative_rows_reproduce_quadratic_gradients() {
        let grid = test_grid();
        let nodes = node_values(&grid, quadratic);
        let pts = interior_points(&grid, 100, 13);
        let dw = build_dw(&grid, pts.view()).unwrap();
        let out = dw.apply(&nodes);
        for i in 0..pts.nrows() {
            let p = [pts[[i, 0]], pts[[i, 1]], pts[[i, 2]]];
            let g = quadratic_grad(p);
            for c in 0..3 {
                // rows carry the negative gradient (field convention)
                assert_relative_eq!(out[3 * i + c], -g[c], max_relative = 1e-9, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn derivative_rows_sum_to_zero() {
        let grid = test_grid();
        let pts = interior_points(&grid, 50, 17);
        let dw = build_dw(&grid, pts.view()).unwrap();
        let ones = vec![1.0; grid.num_nodes()];
        // constant grid function: output vanishes up to rounding of the
        // analytic weight cancellation
        for v in dw.apply(&ones) {
            assert!(v.abs() <= 1e-13);
        }
        // and per-row sums (weights themselves) match
        for n in 0..pts.nrows() {
            for c in 0..3 {
                let sum: f64 = dw.point_vals(n, c).iter().sum();
                assert!(sum.abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn derivative_rows_match_finite_differences_of_w_rows() {
        let grid = test_grid();
        let pts = interior_points(&grid, 20, 19);
        let dw = build_dw(&grid, pts.view()).unwrap();
        let nodes = node_values(&grid, |p| {
            (p[0] * 0.9).sin() * (p[1] * 0.7).cos() + p[2] * p[2]
        });
        for i in 0..pts.nrows() {
            let p = [pts[[i, 0]], pts[[i, 1]], pts[[i, 2]]];
            for c in 0..3 {
                let e = 1e-5 * grid.spacing[c];
                let mut pp = p;
                let mut pm = p;
                pp[c] += e;
                pm[c] -= e;
                let shifted =
                    Array2::from_shape_vec((2, 3), pp.iter().chain(pm.iter()).copied().collect())
                        .unwrap();
                let w = build_w(&grid, shifted.view()).unwrap();
                let vals = w.apply(&nodes);
                let fd = (vals[0] - vals[1]) / (2.0 * e);
                let row = {
                    let out = dw.apply(&nodes);
                    out[3 * i + c]
                };
                // dW holds the negative spatial derivative
                assert_relative_eq!(row, -fd, max_relative = 1e-7, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn out_of_interior_points_are_rejected_with_location() {
        let grid = test_grid();
        // inside the grid box but within the outermost cell ring: no full stencil
        let bad = [grid.lower[0] + 0.5 * grid.spacing[0], 1.0, 0.0];
        let pts = Array2::from_shape_vec((1, 3), bad.to_vec()).unwrap();
        let err = build_w(&grid, pts.view()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("point 0"), "{msg}");
        assert!(msg.contains("dimension 0"), "{msg}");
        let err = build_dw(&grid, pts.view()).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn boundary_of_interpolable_interior_is_accepted() {
        let grid = test_grid();
        let mut p = grid.node_position([1, 1, 1]);
        let pts = Array2::from_shape_vec((1, 3), p.to_vec()).unwrap();
        assert!(build_w(&grid, pts.view()).is_ok());
        // last interior node in every dimension, cell index clamps left
        p = grid.node_position([grid.counts[0] - 2, grid.counts[1] - 2, grid.counts[2] - 2]);
        let pts = Array2::from_shape_vec((1, 3), p.to_vec()).unwrap();
        let w = build_w(&grid, pts.view()).unwrap();
        let ones = vec![1.0; grid.num_nodes()];
        assert_relative_eq!(w.apply(&ones)[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn transpose_apply_adjoint_identity() {
        let grid = test_grid();
        let pts = interior_points(&grid, 30, 23);
        let dw = build_dw(&grid, pts.view()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let v: Vec<f64> = (0..grid.num_nodes())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let u: Vec<f64> = (0..dw.num_rows())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let av = dw.apply(&v);
        let atu = dw.apply_transpose(&u);
        let lhs: f64 = av.iter().zip(&u).map(|(a, b)| a * b).sum();
        let rhs: f64 = v.iter().zip(&atu).map(|(a, b)| a * b).sum();
        assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
    }

    #[test]
    fn row_ordering_is_point_major_component_minor() {
        // Feeding the interpolant the potential phi = x makes exactly the x
        // rows respond (with -1, the negative gradient); likewise y and z.
        // Output slot 3n + c must therefore be component c of point n.
        let grid = test_grid();
        let pts = interior_points(&grid, 4, 31);
        let dw = build_dw(&grid, pts.view()).unwrap();
        for c in 0..3 {
            let v = node_values(&grid, |p| p[c]);
            let out = dw.apply(&v);
            for n in 0..pts.nrows() {
                for cc in 0..3 {
                    let expect = if cc == c { -1.0 } else { 0.0 };
                    assert_relative_eq!(out[3 * n + cc], expect, epsilon = 1e-10);
                }
            }
        }
    }
}
