//! Grid-interpolated curl-free inference — fit and predict in time linear
//! in the number of measurements.
//!
//! Fitting solves A alpha = vec(Y^T), A = dW K_uu dW^T + sigma_y^2 I, with
//! Jacobi-preconditioned conjugate gradients, then caches
//! c = K_uu dW^T alpha so a mean query is one sparse row product.
//!
//! Variances use a low-rank surrogate of A^-1: a rank-T Lanczos run on A
//! (started from the fit right-hand side) gives A ~ Q T_T Q^T, and with
//! R = K_uu dW^T Q the posterior covariance block of a query point is
//! prior(x*) - (dw* R) T_T^-1 (dw* R)^T.
//!
//! The prior term collapses into per-axis 4x4 Toeplitz forms against the
//! kernel factors, so a full block costs O(T) after the fit. T = 0 skips
//! the variance machinery; predictions then report the prior variance.

use crate::data::{check_n_by_3, FieldPrediction, LatticeSpec, MapTable, TrainingSet};
use crate::error::{Error, Result};
use crate::grid::{default_factor_jitter, kron_kuu, InducingGrid};
use crate::interp::{build_dw, SparseDerivativeInterpolation};
use crate::kernels::Hyperparameters;
use crate::krylov::{kron_mvm, lanczos, pcg, toeplitz_quadratic_form, AOperator, TridiagonalLdl};
use ndarray::{Array2, ArrayView2};

/// Knobs for [`fit_dski`]; the defaults are the intended production values.
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    /// Relative residual at which the conjugate-gradient solve stops.
    pub cg_tolerance: f64,
    pub max_cg_iterations: usize,
    /// Lanczos rank T for the variance cache; 0 disables variances.
    pub lanczos_rank: usize,
    /// Per-factor diagonal jitter; None picks the scale-aware default.
    pub jitter: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            cg_tolerance: 1e-4,
            max_cg_iterations: 1000,
            lanczos_rank: 100,
            jitter: None,
        }
    }
}

/// What the iterative solves actually did, kept with the fitted map.
#[derive(Debug, Clone, Copy)]
pub struct FitDiagnostics {
    pub cg_iterations: usize,
    pub cg_converged: bool,
    pub cg_relative_residual: f64,
    /// Achieved Lanczos rank (0 when variances are disabled).
    pub lanczos_rank: usize,
    pub lanczos_breakdown: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct VarianceCache {
    /// R = K_uu dW^T Q, num_nodes x T.
    pub(crate) r: Array2<f64>,
    /// Raw tridiagonal of the Lanczos factorization (kept for
    /// serialization; `ldl` is derived from it).
    pub(crate) diag: Vec<f64>,
    pub(crate) off: Vec<f64>,
    pub(crate) ldl: TridiagonalLdl,
}

/// A fitted field map: everything needed to answer mean and variance
/// queries without the training data.
#[derive(Debug, Clone)]
pub struct FittedMap {
    pub(crate) grid: InducingGrid,
    pub(crate) hyp: Hyperparameters,
    pub(crate) jitter: f64,
    pub(crate) component_means: [f64; 3],
    /// c = K_uu dW^T alpha, one entry per grid node.
    pub(crate) mean_cache: Vec<f64>,
    pub(crate) variance: Option<VarianceCache>,
    /// First stencil rows of the kernel factors: the constant-time prior.
    t4: [[f64; 4]; 3],
    pub diagnostics: FitDiagnostics,
}

/// Fit the grid-interpolated model. Training positions must lie in the
/// grid's interpolable interior. A conjugate-gradient solve that hits the
/// iteration cap is reported in the diagnostics, not an error.
pub fn fit_dski(
    data: &TrainingSet,
    grid: &InducingGrid,
    hyp: &Hyperparameters,
    opts: &FitOptions,
) -> Result<FittedMap> {
    if data.is_empty() {
        return Err(Error::Data("cannot fit on an empty training set".into()));
    }
    if !(opts.cg_tolerance.is_finite() && opts.cg_tolerance > 0.0 && opts.cg_tolerance < 1.0) {
        return Err(Error::Config(format!(
            "cg tolerance must lie in (0, 1), got {}",
            opts.cg_tolerance
        )));
    }
    if opts.max_cg_iterations == 0 {
        return Err(Error::Config("cg iteration cap must be at least 1".into()));
    }
    let jitter = opts.jitter.unwrap_or_else(|| default_factor_jitter(hyp));
    let dw = build_dw(grid, data.positions.view())?;
    let kuu = kron_kuu(grid, hyp, jitter);
    let op = AOperator::new(&dw, &kuu, hyp.noise_variance)?;
    let b = data.stacked_measurements();
    let jacobi = op.diagonal();
    let sol = pcg(
        &op,
        &b,
        opts.cg_tolerance,
        opts.max_cg_iterations,
        Some(&jacobi),
    )?;
    let mean_cache = kron_mvm(&kuu, &dw.apply_transpose(&sol.x))?;

    let mut diagnostics = FitDiagnostics {
        cg_iterations: sol.iterations,
        cg_converged: sol.converged,
        cg_relative_residual: sol.relative_residual(),
        lanczos_rank: 0,
        lanczos_breakdown: false,
    };

    let variance = if opts.lanczos_rank > 0 {
        let lz = lanczos(&op, &b, opts.lanczos_rank)?;
        diagnostics.lanczos_rank = lz.rank();
        diagnostics.lanczos_breakdown = lz.breakdown;
        let t = lz.rank();
        let mut r = Array2::zeros((grid.num_nodes(), t));
        for j in 0..t {
            let col = lz.q.column(j).to_vec();
            let kq = kron_mvm(&kuu, &dw.apply_transpose(&col))?;
            for (i, v) in kq.into_iter().enumerate() {
                r[[i, j]] = v;
            }
        }
        let ldl = TridiagonalLdl::factor(&lz.alpha, &lz.beta)?;
        Some(VarianceCache {
            r,
            diag: lz.alpha,
            off: lz.beta,
            ldl,
        })
    } else {
        None
    };

    Ok(FittedMap {
        grid: grid.clone(),
        hyp: *hyp,
        jitter,
        component_means: data.component_means,
        mean_cache,
        variance,
        t4: stencil_rows(grid, hyp, jitter),
        diagnostics,
    })
}

fn stencil_rows(grid: &InducingGrid, hyp: &Hyperparameters, jitter: f64) -> [[f64; 4]; 3] {
    let kuu = kron_kuu(grid, hyp, jitter);
    [0, 1, 2].map(|d| kuu.stencil_toeplitz(d))
}

impl FittedMap {
    /// Reassemble a map from stored parts (the model container format).
    /// `variance` carries the Lanczos tridiagonal and R factor.
    pub fn from_parts(
        grid: InducingGrid,
        hyp: Hyperparameters,
        jitter: f64,
        component_means: [f64; 3],
        mean_cache: Vec<f64>,
        variance: Option<(Vec<f64>, Vec<f64>, Array2<f64>)>,
        diagnostics: FitDiagnostics,
    ) -> Result<Self> {
        if mean_cache.len() != grid.num_nodes() {
            return Err(Error::Data(format!(
                "mean cache holds {} entries but the grid has {} nodes",
                mean_cache.len(),
                grid.num_nodes()
            )));
        }
        if !(jitter.is_finite() && jitter >= 0.0) {
            return Err(Error::Data(format!("invalid stored jitter {jitter}")));
        }
        let variance = match variance {
            Some((diag, off, r)) => {
                if diag.is_empty() || off.len() + 1 != diag.len() {
                    return Err(Error::Data(
                        "stored tridiagonal has inconsistent lengths".into(),
                    ));
                }
                if r.nrows() != grid.num_nodes() || r.ncols() != diag.len() {
                    return Err(Error::Data(format!(
                        "stored variance factor is {} x {}, expected {} x {}",
                        r.nrows(),
                        r.ncols(),
                        grid.num_nodes(),
                        diag.len()
                    )));
                }
                let ldl = TridiagonalLdl::factor(&diag, &off)?;
                Some(VarianceCache { r, diag, off, ldl })
            }
            None => None,
        };
        let t4 = stencil_rows(&grid, &hyp, jitter);
        Ok(Self {
            grid,
            hyp,
            jitter,
            component_means,
            mean_cache,
            variance,
            t4,
            diagnostics,
        })
    }

    pub fn grid(&self) -> &InducingGrid {
        &self.grid
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hyp
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn component_means(&self) -> [f64; 3] {
        self.component_means
    }

    /// Rank of the variance cache; 0 means prior-only variances.
    pub fn variance_rank(&self) -> usize {
        self.variance.as_ref().map_or(0, |v| v.ldl.size())
    }

    /// Predictive means only — one sparse row product per query point.
    pub fn predict_means(&self, query: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_n_by_3("query positions", &query)?;
        let dwq = build_dw(&self.grid, query)?;
        let v = dwq.apply(&self.mean_cache);
        let nq = query.nrows();
        let mut out = Array2::from_shape_vec((nq, 3), v).expect("length 3q");
        for mut row in out.rows_mut() {
            for c in 0..3 {
                row[c] += self.component_means[c];
            }
        }
        Ok(out)
    }

    /// Means and covariance blocks; negative variance diagonals (possible
    /// because the low-rank data term is subtracted) are clamped to zero
    /// and counted in the second return value.
    pub fn predict(&self, query: ArrayView2<f64>) -> Result<(FieldPrediction, usize)> {
        let mean = self.predict_means(query)?;
        let dwq = build_dw(&self.grid, query)?;
        let covariance = (0..query.nrows())
            .map(|n| self.covariance_block(&dwq, n))
            .collect();
        let mut pred = FieldPrediction { mean, covariance };
        let clamped = pred.clamp_negative_variances();
        Ok((pred, clamped))
    }

    /// Predict over every lattice node in linear node order.
    pub fn predict_grid(&self, lattice: &LatticeSpec) -> Result<(MapTable, usize)> {
        let m = lattice.num_nodes();
        let mut positions = Array2::zeros((m, 3));
        for i in 0..lattice.counts[0] {
            for j in 0..lattice.counts[1] {
                for k in 0..lattice.counts[2] {
                    let p = lattice.node_position([i, j, k]);
                    let li = lattice.linear_index([i, j, k]);
                    for c in 0..3 {
                        positions[[li, c]] = p[c];
                    }
                }
            }
        }
        let (pred, clamped) = self.predict(positions.view())?;
        Ok((pred.into_map_table(lattice.clone())?, clamped))
    }

    /// A query lattice spanning the model's interpolable interior. A
    /// dimension with a single requested node collapses to the interior
    /// mid-plane slice.
    pub fn interior_lattice(&self, counts: [usize; 3]) -> Result<LatticeSpec> {
        let interior = self.grid.interior_bounds()?;
        let mut bounds = [[0.0; 2]; 3];
        for d in 0..3 {
            bounds[d] = if counts[d] == 1 {
                let mid = 0.5 * (interior[d][0] + interior[d][1]);
                [mid, mid]
            } else {
                interior[d]
            };
        }
        LatticeSpec::new(bounds, counts)
    }

    /// prior(x*) minus the low-rank data term, for query point `n` of `dwq`.
    fn covariance_block(&self, dwq: &SparseDerivativeInterpolation, n: usize) -> [[f64; 3]; 3] {
        let factors = [0, 1, 2].map(|d| dwq.point_axis_factors(n, d));
        let mut block = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in r..3 {
                // dim d of component r uses the derivative weights iff d == r
                let mut prior = 1.0;
                for d in 0..3 {
                    let (w, ndw) = &factors[d];
                    let u = if d == r { ndw } else { w };
                    let v = if d == c { ndw } else { w };
                    prior *= toeplitz_quadratic_form(&self.t4[d], u, v);
                }
                block[r][c] = prior;
                block[c][r] = prior;
            }
        }
        if let Some(vc) = &self.variance {
            let t = vc.ldl.size();
            let cols = dwq.point_cols(n);
            let mut dwr = [vec![0.0; t], vec![0.0; t], vec![0.0; t]];
            for c in 0..3 {
                let vals = dwq.point_vals(n, c);
                for k in 0..64 {
                    let w = vals[k];
                    if w != 0.0 {
                        let row = cols[k] as usize;
                        for j in 0..t {
                            dwr[c][j] += w * vc.r[[row, j]];
                        }
                    }
                }
            }
            for r in 0..3 {
                let solved = vc.ldl.solve(&dwr[r]);
                for c in 0..3 {
                    let dot: f64 = solved.iter().zip(&dwr[c]).map(|(a, b)| a * b).sum();
                    block[r][c] -= dot;
                }
            }
        }
        block
    }
}
