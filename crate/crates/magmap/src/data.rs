//! Datasets, synthetic generation, splits, metrics, and budget matching.
//!
//! Synthetic data is drawn from the model's own prior: the latent field F at
//! the sampled positions comes from the dense curl-free covariance, and the
//! observed Y adds white noise. Both are kept, so that evaluation can score
//! predictions against the noise-free field (scoring against noisy
//! measurements would floor every method at the noise level and hide the
//! differences the grid-refinement protocol is after).
//!
//! Mean handling: file loaders subtract per-component means and record them
//! ([`TrainingSet::from_raw`]); synthetic sets are draws from a zero-mean
//! prior and skip the subtraction so that the stored latent field stays
//! aligned with the measurements.

use crate::dense::{assemble_field_gram, default_jitter, SymmetricFactor};
use crate::error::{Error, Result};
use crate::grid::{default_factor_jitter, kron_kuu, InducingGrid, KroneckerKernel};
use crate::interp::build_dw;
use crate::kernels::Hyperparameters;
use crate::krylov::kron_mvm;
use ndarray::{Array2, ArrayView2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Largest 3N the dense samplers and the exact path will factor by default.
/// 3N = 18000 covers the synthetic protocol's N = 6000 with the Gram matrix
/// still fitting comfortably in memory.
pub const DENSE_CAP: usize = 18_000;

/// Positions with their (possibly centered) measurements.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    /// N x 3 positions in meters.
    pub positions: Array2<f64>,
    /// N x 3 field measurements, centered when produced by a loader.
    pub measurements: Array2<f64>,
    /// Per-component means subtracted during preprocessing (zero for
    /// synthetic sets).
    pub component_means: [f64; 3],
    /// Noise-free field at the same positions, when known (synthetic data).
    pub noise_free: Option<Array2<f64>>,
}

pub(crate) fn check_n_by_3(name: &str, m: &ArrayView2<f64>) -> Result<()> {
    if m.ncols() != 3 {
        return Err(Error::Data(format!(
            "{name} must have 3 columns, got {}",
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data(format!("{name} contain non-finite entries")));
    }
    Ok(())
}

impl TrainingSet {
    /// Wrap raw (uncentered) data: validates shapes and finiteness, subtracts
    /// the per-component measurement means and records them.
    pub fn from_raw(positions: Array2<f64>, measurements: Array2<f64>) -> Result<Self> {
        check_n_by_3("positions", &positions.view())?;
        check_n_by_3("measurements", &measurements.view())?;
        if positions.nrows() != measurements.nrows() {
            return Err(Error::Data(format!(
                "{} positions but {} measurements",
                positions.nrows(),
                measurements.nrows()
            )));
        }
        let mut measurements = measurements;
        let mut component_means = [0.0; 3];
        if measurements.nrows() > 0 {
            let means = measurements.mean_axis(Axis(0)).unwrap();
            for c in 0..3 {
                component_means[c] = means[c];
            }
            for mut row in measurements.rows_mut() {
                for c in 0..3 {
                    row[c] -= component_means[c];
                }
            }
        }
        Ok(Self {
            positions,
            measurements,
            component_means,
            noise_free: None,
        })
    }

    /// Wrap already-centered data (synthetic draws from the zero-mean prior):
    /// validates, records zero means.
    pub fn from_centered_parts(
        positions: Array2<f64>,
        measurements: Array2<f64>,
        noise_free: Option<Array2<f64>>,
    ) -> Result<Self> {
        check_n_by_3("positions", &positions.view())?;
        check_n_by_3("measurements", &measurements.view())?;
        if positions.nrows() != measurements.nrows() {
            return Err(Error::Data(format!(
                "{} positions but {} measurements",
                positions.nrows(),
                measurements.nrows()
            )));
        }
        if let Some(f) = &noise_free {
            check_n_by_3("noise-free values", &f.view())?;
            if f.nrows() != positions.nrows() {
                return Err(Error::Data(
                    "noise-free values must match the number of positions".into(),
                ));
            }
        }
        Ok(Self {
            positions,
            measurements,
            component_means: [0.0; 3],
            noise_free,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Measurements stacked measurement-major, component-minor:
    /// (y1x, y1y, y1z, y2x, ...). This is the right-hand-side ordering of
    /// every block system in the crate.
    pub fn stacked_measurements(&self) -> Vec<f64> {
        self.measurements.iter().copied().collect()
    }

    /// Undo the preprocessing: measurements with the component means added
    /// back.
    pub fn raw_measurements(&self) -> Array2<f64> {
        let mut out = self.measurements.clone();
        for mut row in out.rows_mut() {
            for c in 0..3 {
                row[c] += self.component_means[c];
            }
        }
        out
    }

    /// Per-dimension [min, max] over the measurement positions.
    pub fn bounds(&self) -> Result<[[f64; 2]; 3]> {
        if self.is_empty() {
            return Err(Error::Data("empty set has no bounds".into()));
        }
        let mut bounds = [[f64::INFINITY, f64::NEG_INFINITY]; 3];
        for row in self.positions.rows() {
            for d in 0..3 {
                bounds[d][0] = bounds[d][0].min(row[d]);
                bounds[d][1] = bounds[d][1].max(row[d]);
            }
        }
        Ok(bounds)
    }

    /// Keep only the rows whose x and y coordinates lie within
    /// `half_width` of the origin (the inner survey square).
    pub fn restrict_to_square(&self, half_width: f64) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::Config(format!(
                "square half-width must be positive, got {half_width}"
            )));
        }
        let keep: Vec<usize> = self
            .positions
            .rows()
            .into_iter()
            .enumerate()
            .filter(|(_, p)| p[0].abs() <= half_width && p[1].abs() <= half_width)
            .map(|(i, _)| i)
            .collect();
        Ok(self.take_rows(&keep))
    }

    /// Keep only the given rows (used by splits and downsampling).
    fn take_rows(&self, idx: &[usize]) -> Self {
        let gather = |m: &Array2<f64>| {
            let mut out = Array2::zeros((idx.len(), 3));
            for (r, &i) in idx.iter().enumerate() {
                for c in 0..3 {
                    out[[r, c]] = m[[i, c]];
                }
            }
            out
        };
        Self {
            positions: gather(&self.positions),
            measurements: gather(&self.measurements),
            component_means: self.component_means,
            noise_free: self.noise_free.as_ref().map(gather),
        }
    }
}

/// One standard normal draw (Marsaglia polar method). rand itself only
/// ships uniform distributions.
fn standard_normal<R: Rng>(rng: &mut R, spare: &mut Option<f64>) -> f64 {
    if let Some(v) = spare.take() {
        return v;
    }
    loop {
        let u = rng.gen_range(-1.0..1.0f64);
        let v = rng.gen_range(-1.0..1.0f64);
        let s = u * u + v * v;
        if s > 0.0 && s < 1.0 {
            let f = (-2.0 * s.ln() / s).sqrt();
            *spare = Some(v * f);
            return u * f;
        }
    }
}

fn normal_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut spare = None;
    (0..n).map(|_| standard_normal(rng, &mut spare)).collect()
}

/// Draw the latent field F ~ N(0, K) and measurements Y = F + noise at the
/// given positions, with K the dense curl-free covariance (plus jitter for
/// the factorization). Deterministic under the seed.
pub fn sample_curlfree_prior_with_latent(
    positions: ArrayView2<f64>,
    hyp: &Hyperparameters,
    seed: u64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_curlfree_prior_with_rng(positions, hyp, &mut rng)
}

fn sample_curlfree_prior_with_rng(
    positions: ArrayView2<f64>,
    hyp: &Hyperparameters,
    rng: &mut ChaCha8Rng,
) -> Result<(Array2<f64>, Array2<f64>)> {
    check_n_by_3("positions", &positions)?;
    let n = positions.nrows();
    if 3 * n > DENSE_CAP {
        return Err(Error::Capacity(format!(
            "dense prior sampling over {n} points needs a {0} x {0} factorization \
             (cap {DENSE_CAP}); use the grid-interpolated sampler for benchmark-scale data",
            3 * n
        )));
    }
    let sigma_y = hyp.noise_variance.sqrt();
    if n == 0 {
        return Ok((Array2::zeros((0, 3)), Array2::zeros((0, 3))));
    }
    let gram = assemble_field_gram(positions, hyp, default_jitter(hyp));
    let factor = SymmetricFactor::cholesky_into(gram)?;
    let z = normal_vec(rng, 3 * n);
    let f = factor.lower_times(&z);
    let eps = normal_vec(rng, 3 * n);
    let latent = Array2::from_shape_vec((n, 3), f).expect("length 3n");
    let mut noisy = latent.clone();
    for (y, e) in noisy.iter_mut().zip(&eps) {
        *y += sigma_y * e;
    }
    Ok((latent, noisy))
}

/// Measurement draw from the curl-free prior, Y ~ N(0, K + sigma_y^2 I).
pub fn sample_curlfree_prior(
    positions: ArrayView2<f64>,
    hyp: &Hyperparameters,
    seed: u64,
) -> Result<Array2<f64>> {
    sample_curlfree_prior_with_latent(positions, hyp, seed).map(|(_, y)| y)
}

/// Draw latent field and measurements from the grid-interpolated prior
/// dW K_uu dW^T, whose cost is linear in N. Used to produce benchmark-scale
/// datasets that the dense sampler cannot reach.
pub fn sample_interpolated_prior(
    positions: ArrayView2<f64>,
    grid: &InducingGrid,
    hyp: &Hyperparameters,
    seed: u64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    check_n_by_3("positions", &positions)?;
    let n = positions.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dw = build_dw(grid, positions)?;
    let kuu = kron_kuu(grid, hyp, default_factor_jitter(hyp));
    // per-factor Cholesky: chol(K1) (x) chol(K2) (x) chol(K3) factors K_uu
    let l1 = SymmetricFactor::cholesky(&kuu.factors[0])?;
    let l2 = SymmetricFactor::cholesky(&kuu.factors[1])?;
    let l3 = SymmetricFactor::cholesky(&kuu.factors[2])?;
    let lower = KroneckerKernel {
        factors: [l1.lower().clone(), l2.lower().clone(), l3.lower().clone()],
    };
    let z = normal_vec(&mut rng, grid.num_nodes());
    let u = kron_mvm(&lower, &z)?;
    let f = dw.apply(&u);
    let eps = normal_vec(&mut rng, 3 * n);
    let sigma_y = hyp.noise_variance.sqrt();
    let latent = Array2::from_shape_vec((n, 3), f).expect("length 3n");
    let mut noisy = latent.clone();
    for (y, e) in noisy.iter_mut().zip(&eps) {
        *y += sigma_y * e;
    }
    Ok((latent, noisy))
}

/// Synthetic protocol dataset: `n_points` positions uniform in the square
/// [-w, w] x [-w, w] at fixed height z = 0.01 m, measurements drawn from the
/// curl-free prior. The returned set carries the noise-free field.
pub fn make_simulation_dataset(
    area_half_width: f64,
    n_points: usize,
    hyp: &Hyperparameters,
    seed: u64,
) -> Result<TrainingSet> {
    if !(area_half_width.is_finite() && area_half_width > 0.0) {
        return Err(Error::Config(format!(
            "area half-width must be positive, got {area_half_width}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = Array2::zeros((n_points, 3));
    for i in 0..n_points {
        positions[[i, 0]] = rng.gen_range(-area_half_width..area_half_width);
        positions[[i, 1]] = rng.gen_range(-area_half_width..area_half_width);
        positions[[i, 2]] = 0.01;
    }
    let (latent, noisy) = sample_curlfree_prior_with_rng(positions.view(), hyp, &mut rng)?;
    TrainingSet::from_centered_parts(positions, noisy, Some(latent))
}

/// Seeded shuffle split into train and test parts; disjoint and exhaustive.
pub fn split_train_test(
    data: &TrainingSet,
    train_fraction: f64,
    seed: u64,
) -> Result<(TrainingSet, TrainingSet)> {
    if data.is_empty() {
        return Err(Error::Data("cannot split an empty dataset".into()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie strictly between 0 and 1, got {train_fraction}"
        )));
    }
    let n = data.len();
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_train = ((n as f64) * train_fraction).round() as usize;
    let (train_idx, test_idx) = idx.split_at(n_train.min(n));
    Ok((data.take_rows(train_idx), data.take_rows(test_idx)))
}

/// Uniform subset without replacement, deterministic under the seed.
pub fn downsample(data: &TrainingSet, n_dwn: usize, seed: u64) -> Result<TrainingSet> {
    if n_dwn > data.len() {
        return Err(Error::Data(format!(
            "cannot downsample {} points to {n_dwn}",
            data.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = rand::seq::index::sample(&mut rng, data.len(), n_dwn).into_vec();
    Ok(data.take_rows(&idx))
}

/// Root mean square error over all 3N scalar components jointly.
pub fn rmse(predicted: ArrayView2<f64>, truth: ArrayView2<f64>) -> Result<f64> {
    if predicted.shape() != truth.shape() {
        return Err(Error::Data(format!(
            "shape mismatch: predicted {:?} vs truth {:?}",
            predicted.shape(),
            truth.shape()
        )));
    }
    let n = predicted.len();
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = predicted
        .iter()
        .zip(truth.iter())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok((sum / n as f64).sqrt())
}

/// Matched compute budgets: the grid method spends roughly
/// O_ind = J (3N + M_ind sum_d M_d) operations; a cubic-cost GP gets the
/// same budget with N_dwn = O_ind^(1/3) points, a basis-function expansion
/// with M_bf = sqrt(O_ind / 3N) terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BudgetReport {
    pub o_ind: u64,
    pub n_dwn: usize,
    pub m_bf: usize,
}

pub fn budget_match(n: usize, grid: &InducingGrid, j: usize) -> Result<BudgetReport> {
    if j == 0 {
        return Err(Error::Config("iteration count must be at least 1".into()));
    }
    if n == 0 {
        return Err(Error::Config(
            "budget matching needs a nonempty training set".into(),
        ));
    }
    let m_ind = grid.num_nodes() as u64;
    let m_sum: u64 = grid.counts.iter().map(|&c| c as u64).sum();
    let o_ind = j as u64 * (3 * n as u64 + m_ind * m_sum);
    let n_dwn = (o_ind as f64).cbrt().round() as usize;
    let m_bf = (o_ind as f64 / (3.0 * n as f64)).sqrt().round() as usize;
    Ok(BudgetReport { o_ind, n_dwn, m_bf })
}

/// Predictive means with per-query 3 x 3 covariance blocks, shared by the
/// dense and grid-interpolated inference paths.
#[derive(Debug, Clone)]
pub struct FieldPrediction {
    /// Q x 3 predictive means (component means added back).
    pub mean: Array2<f64>,
    /// One field covariance block per query point.
    pub covariance: Vec<[[f64; 3]; 3]>,
}

impl FieldPrediction {
    pub fn len(&self) -> usize {
        self.mean.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Q x 3 marginal variances (covariance block diagonals).
    pub fn variance_diag(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.covariance.len(), 3), |(q, c)| {
            self.covariance[q][c][c]
        })
    }

    /// Euclidean norm of each mean vector.
    pub fn magnitude(&self) -> Vec<f64> {
        self.mean
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    }

    /// Clamp negative variance diagonals (roundoff from the subtracted
    /// data term) to zero; returns how many entries were clamped.
    pub fn clamp_negative_variances(&mut self) -> usize {
        let mut clamped = 0;
        for block in &mut self.covariance {
            for c in 0..3 {
                if block[c][c] < 0.0 {
                    block[c][c] = 0.0;
                    clamped += 1;
                }
            }
        }
        clamped
    }

    /// Package as a batch table over the lattice that produced the queries
    /// (row q of the prediction must correspond to linear node index q).
    pub fn into_map_table(self, lattice: LatticeSpec) -> Result<MapTable> {
        let magnitude = self.magnitude();
        let variance_diag = self.variance_diag();
        MapTable::new(lattice, self.mean, variance_diag, magnitude)
    }
}

/// Regular query lattice; dimensions with a single node are slices.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeSpec {
    pub lower: [f64; 3],
    pub spacing: [f64; 3],
    pub counts: [usize; 3],
}

impl LatticeSpec {
    pub fn new(bounds: [[f64; 2]; 3], counts: [usize; 3]) -> Result<Self> {
        let mut spacing = [0.0; 3];
        for d in 0..3 {
            let [lo, hi] = bounds[d];
            if counts[d] == 0 {
                return Err(Error::Config(format!(
                    "lattice needs at least one node in dimension {d}"
                )));
            }
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Config(format!(
                    "lattice bounds in dimension {d} must be finite"
                )));
            }
            if counts[d] == 1 {
                if lo != hi {
                    return Err(Error::Config(format!(
                        "single-node lattice dimension {d} needs coincident bounds"
                    )));
                }
            } else if hi <= lo {
                return Err(Error::Config(format!(
                    "degenerate lattice bounds in dimension {d}: [{lo}, {hi}]"
                )));
            } else {
                spacing[d] = (hi - lo) / (counts[d] - 1) as f64;
            }
        }
        Ok(Self {
            lower: [bounds[0][0], bounds[1][0], bounds[2][0]],
            spacing,
            counts,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn node_position(&self, idx: [usize; 3]) -> [f64; 3] {
        [
            self.lower[0] + idx[0] as f64 * self.spacing[0],
            self.lower[1] + idx[1] as f64 * self.spacing[1],
            self.lower[2] + idx[2] as f64 * self.spacing[2],
        ]
    }

    pub fn linear_index(&self, idx: [usize; 3]) -> usize {
        (idx[0] * self.counts[1] + idx[1]) * self.counts[2] + idx[2]
    }
}

/// Batch prediction table over a lattice: per node the mean field vector,
/// the variance diagonal, and the mean magnitude. Node order follows
/// [`LatticeSpec::linear_index`].
#[derive(Debug, Clone)]
pub struct MapTable {
    pub lattice: LatticeSpec,
    /// M x 3 predictive means.
    pub means: Array2<f64>,
    /// M x 3 predictive variance diagonals.
    pub variance_diag: Array2<f64>,
    /// Euclidean norm of each mean vector.
    pub magnitude: Vec<f64>,
}

impl MapTable {
    pub fn new(
        lattice: LatticeSpec,
        means: Array2<f64>,
        variance_diag: Array2<f64>,
        magnitude: Vec<f64>,
    ) -> Result<Self> {
        let m = lattice.num_nodes();
        check_n_by_3("means", &means.view())?;
        check_n_by_3("variance diagonals", &variance_diag.view())?;
        if means.nrows() != m || variance_diag.nrows() != m || magnitude.len() != m {
            return Err(Error::Data(format!(
                "table rows must match the {m}-node lattice"
            )));
        }
        if magnitude.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("magnitudes contain non-finite entries".into()));
        }
        Ok(Self {
            lattice,
            means,
            variance_diag,
            magnitude,
        })
    }
}
