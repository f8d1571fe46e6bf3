//! Dense exact inference — the cubic-cost reference implementation.
//!
//! Fits factor the full 3N x 3N system A = K + sigma_y^2 I once; predictions
//! and the marginal likelihood reuse the factorization. Everything here is
//! capped (default [`DEFAULT_FIT_CAP`] rows) because cost and memory grow
//! with (3N)^3 and (3N)^2; past the cap the grid-interpolated path is the
//! intended tool and the error says so.

use crate::data::{check_n_by_3, downsample, FieldPrediction, TrainingSet};
use crate::dense::{assemble_field_covariance, assemble_field_gram, SymmetricFactor};
use crate::error::{Error, Result};
use crate::grid::JITTER_SCALE;
use crate::kernels::{curlfree_block, se_kernel, Hyperparameters};
use ndarray::{Array1, Array2, ArrayView2};

/// Default cap on the system size 3N for dense fits.
pub const DEFAULT_FIT_CAP: usize = 6000;

/// Dense posterior: training positions, the Cholesky factor of A, and the
/// weight vector alpha = A^-1 vec(Y^T).
#[derive(Debug, Clone)]
pub struct ExactModel {
    positions: Array2<f64>,
    hyp: Hyperparameters,
    component_means: [f64; 3],
    factor: SymmetricFactor,
    alpha: Array1<f64>,
    /// Negative log marginal likelihood of the training data under `hyp`.
    pub nlml: f64,
}

/// Fit the dense model. `cap` bounds the system size 3N (default
/// [`DEFAULT_FIT_CAP`]).
pub fn fit_exact(
    data: &TrainingSet,
    hyp: &Hyperparameters,
    cap: Option<usize>,
) -> Result<ExactModel> {
    let cap = cap.unwrap_or(DEFAULT_FIT_CAP);
    if data.is_empty() {
        return Err(Error::Data("cannot fit on an empty training set".into()));
    }
    let n = data.len();
    if 3 * n > cap {
        return Err(Error::Capacity(format!(
            "dense fit over {n} points needs a {0} x {0} factorization (cap {cap}); \
             use the grid-interpolated fit or downsample",
            3 * n
        )));
    }
    let gram = assemble_field_gram(data.positions.view(), hyp, hyp.noise_variance);
    let factor = SymmetricFactor::cholesky_into(gram)?;
    let y = data.stacked_measurements();
    let alpha = Array1::from_vec(factor.solve_vec(&y)?);
    let fit_term: f64 = y.iter().zip(alpha.iter()).map(|(a, b)| a * b).sum();
    let nlml =
        0.5 * fit_term + 0.5 * factor.log_det() + (3 * n) as f64 / 2.0 * std::f64::consts::TAU.ln();
    Ok(ExactModel {
        positions: data.positions.clone(),
        hyp: *hyp,
        component_means: data.component_means,
        factor,
        alpha,
        nlml,
    })
}

impl ExactModel {
    pub fn len(&self) -> usize {
        self.positions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hyp
    }

    /// Predictive means only — skips the covariance solve, which dominates
    /// when only an error metric is needed.
    pub fn predict_means(&self, query: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_n_by_3("query positions", &query)?;
        let cross = assemble_field_covariance(self.positions.view(), query, &self.hyp);
        let mean = cross.t().dot(&self.alpha);
        let nq = query.nrows();
        let mut out = Array2::from_shape_vec((nq, 3), mean.to_vec()).expect("length 3q");
        for mut row in out.rows_mut() {
            for c in 0..3 {
                row[c] += self.component_means[c];
            }
        }
        Ok(out)
    }

    /// Full predictions: means and per-query covariance blocks
    /// K** - K*^T A^-1 K*.
    pub fn predict(&self, query: ArrayView2<f64>) -> Result<FieldPrediction> {
        let mean = self.predict_means(query)?;
        let cross = assemble_field_covariance(self.positions.view(), query, &self.hyp);
        // V = L^-1 K*; the data term of each block is V_q^T V_q
        let v = self.factor.forward_mat(&cross)?;
        let nq = query.nrows();
        let mut covariance = Vec::with_capacity(nq);
        for q in 0..nq {
            let p = [query[[q, 0]], query[[q, 1]], query[[q, 2]]];
            let mut block = curlfree_block(p, p, &self.hyp);
            for r in 0..3 {
                for c in 0..3 {
                    let mut dot = 0.0;
                    for k in 0..v.nrows() {
                        dot += v[[k, 3 * q + r]] * v[[k, 3 * q + c]];
                    }
                    block[r][c] -= dot;
                }
            }
            covariance.push(block);
        }
        Ok(FieldPrediction { mean, covariance })
    }
}

/// Negative log marginal likelihood of the data under the given
/// hyperparameters (fits internally).
pub fn nlml_exact(data: &TrainingSet, hyp: &Hyperparameters, cap: Option<usize>) -> Result<f64> {
    Ok(fit_exact(data, hyp, cap)?.nlml)
}

/// Options for [`train_hyperparameters`].
#[derive(Debug, Clone, Copy)]
pub struct TrainOptions {
    /// Hard budget of NLML evaluations.
    pub max_evaluations: usize,
    /// Train on a seeded subset when the data is larger than this.
    pub subset: usize,
    pub seed: u64,
    /// Cap for the internal dense fits.
    pub cap: Option<usize>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            max_evaluations: 200,
            subset: 500,
            seed: 0,
            cap: None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrainReport {
    pub hyperparameters: Hyperparameters,
    /// NLML at the returned hyperparameters (on the training subset).
    pub nlml: f64,
    /// NLML at the initial hyperparameters (on the same subset).
    pub initial_nlml: f64,
    pub evaluations: usize,
}

/// Maximize the marginal likelihood with Nelder-Mead over
/// (ln l, ln sigma_f^2, ln sigma_y^2). The initial point is a simplex
/// vertex and the best vertex is never discarded, so the result is never
/// worse than the start. Deterministic; stops at the evaluation budget or
/// when the simplex has collapsed.
pub fn train_hyperparameters(
    data: &TrainingSet,
    init: &Hyperparameters,
    opts: &TrainOptions,
) -> Result<TrainReport> {
    if opts.max_evaluations < 4 {
        return Err(Error::Config(
            "hyperparameter training needs at least 4 evaluations for the initial simplex".into(),
        ));
    }
    let subset;
    let train_data = if data.len() > opts.subset {
        subset = downsample(data, opts.subset, opts.seed)?;
        &subset
    } else {
        data
    };

    let mut evaluations = 0usize;
    let eval = |theta: [f64; 3], evaluations: &mut usize| -> f64 {
        *evaluations += 1;
        Hyperparameters::new(theta[0].exp(), theta[1].exp(), theta[2].exp())
            .and_then(|h| nlml_exact(train_data, &h, opts.cap))
            .ok()
            .filter(|v| v.is_finite())
            .unwrap_or(f64::INFINITY)
    };

    let theta0 = [
        init.length_scale.ln(),
        init.signal_variance.ln(),
        init.noise_variance.ln(),
    ];
    const STEP: f64 = 0.25;
    let mut simplex: Vec<([f64; 3], f64)> = Vec::with_capacity(4);
    let f0 = eval(theta0, &mut evaluations);
    let initial_nlml = f0;
    simplex.push((theta0, f0));
    for d in 0..3 {
        let mut t = theta0;
        t[d] += STEP;
        let f = eval(t, &mut evaluations);
        simplex.push((t, f));
    }

    let add = |a: [f64; 3], b: [f64; 3], s: f64| -> [f64; 3] {
        [
            a[0] + s * (b[0] - a[0]),
            a[1] + s * (b[1] - a[1]),
            a[2] + s * (b[2] - a[2]),
        ]
    };

    while evaluations < opts.max_evaluations {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[3].1 - simplex[0].1;
        let diam: f64 = (1..4)
            .map(|i| {
                (0..3)
                    .map(|d| (simplex[i].0[d] - simplex[0].0[d]).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max);
        if spread <= 1e-9 * (1.0 + simplex[0].1.abs()) || diam <= 1e-7 {
            break;
        }
        let mut centroid = [0.0; 3];
        for v in &simplex[..3] {
            for d in 0..3 {
                centroid[d] += v.0[d] / 3.0;
            }
        }
        let worst = simplex[3];
        // reflection
        let xr = add(worst.0, centroid, 2.0);
        let fr = eval(xr, &mut evaluations);
        if fr < simplex[0].1 {
            // expansion
            if evaluations < opts.max_evaluations {
                let xe = add(worst.0, centroid, 3.0);
                let fe = eval(xe, &mut evaluations);
                simplex[3] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else {
                simplex[3] = (xr, fr);
            }
        } else if fr < simplex[2].1 {
            simplex[3] = (xr, fr);
        } else if evaluations < opts.max_evaluations {
            // contraction: outside toward the reflection if it helped at
            // all, inside toward the worst vertex otherwise
            let (xc, against) = if fr < worst.1 {
                (add(centroid, xr, 0.5), fr)
            } else {
                (add(centroid, worst.0, 0.5), worst.1)
            };
            let fc = eval(xc, &mut evaluations);
            if fc < against {
                simplex[3] = (xc, fc);
            } else {
                // shrink toward the best vertex
                for i in 1..4 {
                    if evaluations >= opts.max_evaluations {
                        break;
                    }
                    let xs = add(simplex[0].0, simplex[i].0, 0.5);
                    let fs = eval(xs, &mut evaluations);
                    simplex[i] = (xs, fs);
                }
            }
        }
    }

    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (best, nlml) = simplex[0];
    if !nlml.is_finite() {
        return Err(Error::Numerical(
            "marginal likelihood was not finite at any probed hyperparameters".into(),
        ));
    }
    Ok(TrainReport {
        hyperparameters: Hyperparameters::new(best[0].exp(), best[1].exp(), best[2].exp())?,
        nlml,
        initial_nlml,
        evaluations,
    })
}

/// Fit a dense model on a seeded uniform subset — the budget-matched
/// downsampling baseline.
pub fn downsampled_fit(
    data: &TrainingSet,
    n_dwn: usize,
    seed: u64,
    hyp: &Hyperparameters,
    cap: Option<usize>,
) -> Result<ExactModel> {
    fit_exact(&downsample(data, n_dwn, seed)?, hyp, cap)
}

/// Cross-covariance between field components at `points` and the latent
/// potential at `centers`: entry (3i+c, j) = (tau_c / l^2) k(tau) with
/// tau = points_i - centers_j.
fn field_potential_cross(
    points: ArrayView2<f64>,
    centers: ArrayView2<f64>,
    hyp: &Hyperparameters,
) -> Array2<f64> {
    let n = points.nrows();
    let m = centers.nrows();
    let l2 = hyp.length_scale * hyp.length_scale;
    let mut g = Array2::zeros((3 * n, m));
    for i in 0..n {
        let p = [points[[i, 0]], points[[i, 1]], points[[i, 2]]];
        for j in 0..m {
            let q = [centers[[j, 0]], centers[[j, 1]], centers[[j, 2]]];
            let k = se_kernel(p, q, hyp);
            for c in 0..3 {
                g[[3 * i + c, j]] = (p[c] - q[c]) / l2 * k;
            }
        }
    }
    g
}

/// Basis-expansion baseline: project the field onto M latent potential
/// centers (subset-of-regressors form). With G the field-potential
/// cross-covariance and Q = G^T G + sigma_y^2 K_uu,
/// mean = G* Q^-1 G^T y and covariance = sigma_y^2 G* Q^-1 G*^T.
/// Cost is M^2 (3N + M) — linear in N.
pub fn predict_sor(
    data: &TrainingSet,
    centers: ArrayView2<f64>,
    hyp: &Hyperparameters,
    query: ArrayView2<f64>,
) -> Result<FieldPrediction> {
    check_n_by_3("basis centers", &centers)?;
    check_n_by_3("query positions", &query)?;
    if data.is_empty() || centers.nrows() == 0 {
        return Err(Error::Data(
            "basis-expansion prediction needs data and at least one center".into(),
        ));
    }
    let m = centers.nrows();
    let g = field_potential_cross(data.positions.view(), centers, hyp);
    let mut q_mat = g.t().dot(&g);
    // potential kernel over the centers, jittered like every dense factor
    let jitter = JITTER_SCALE * hyp.signal_variance;
    for i in 0..m {
        for j in 0..m {
            let a = [centers[[i, 0]], centers[[i, 1]], centers[[i, 2]]];
            let b = [centers[[j, 0]], centers[[j, 1]], centers[[j, 2]]];
            let mut k = se_kernel(a, b, hyp);
            if i == j {
                k += jitter;
            }
            q_mat[[i, j]] += hyp.noise_variance * k;
        }
    }
    let factor = SymmetricFactor::cholesky_into(q_mat)?;
    let y = data.stacked_measurements();
    let gty = g.t().dot(&Array1::from_vec(y));
    let w = Array1::from_vec(factor.solve_vec(gty.as_slice().expect("contiguous"))?);

    let g_star = field_potential_cross(query, centers, hyp);
    let mean_vec = g_star.dot(&w);
    let nq = query.nrows();
    let mut mean = Array2::from_shape_vec((nq, 3), mean_vec.to_vec()).expect("length 3q");
    for mut row in mean.rows_mut() {
        for c in 0..3 {
            row[c] += data.component_means[c];
        }
    }

    // V = L^-1 G*^T, covariance block = sigma_y^2 V_q^T V_q
    let v = factor.forward_mat(&g_star.t().to_owned())?;
    let mut covariance = Vec::with_capacity(nq);
    for qi in 0..nq {
        let mut block = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                let mut dot = 0.0;
                for k in 0..m {
                    dot += v[[k, 3 * qi + r]] * v[[k, 3 * qi + c]];
                }
                block[r][c] = hyp.noise_variance * dot;
            }
        }
        covariance.push(block);
    }
    Ok(FieldPrediction { mean, covariance })
}
