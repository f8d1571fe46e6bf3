//! Grid-refinement evaluation protocol and the data-size scaling benchmark.
//!
//! One protocol run synthesizes a survey per repetition, splits it, and for
//! every horizontal grid size fits the grid-interpolated model, a
//! budget-matched downsampled exact model, and (data size permitting) the
//! full exact model as reference. RMSE is measured on the held-out split
//! against the noise-free latent field, jointly over all 3N components.
//! Failures are recorded per (setting, repetition) cell and the run
//! continues, so one oversized reference fit cannot sink a whole table.

use std::time::Instant;

use crate::config::RunConfig;
use crate::data::{
    budget_match, downsample, make_simulation_dataset, rmse, sample_interpolated_prior,
    split_train_test, TrainingSet,
};
use crate::dski::{fit_dski, FitOptions, FittedMap};
use crate::error::{Error, Result};
use crate::exact::fit_exact;
use crate::grid::InducingGrid;
use crate::kernels::Hyperparameters;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Decorrelate the streams that share one repetition seed: the sampler, the
/// split shuffle, and the downsampling draw must not consume the same
/// ChaCha stream.
const SPLIT_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const DOWNSAMPLE_SALT: u64 = 0x6a09_e667_f3bc_c909;

#[derive(Debug, Clone)]
pub struct ProtocolOptions {
    pub area_half_width: f64,
    pub n_points: usize,
    pub hyp: Hyperparameters,
    /// Horizontal node counts M^(1) = M^(2), one per setting.
    pub settings: Vec<usize>,
    /// Vertical node count shared by all settings.
    pub vertical_count: usize,
    /// Half-width of the vertical data band the grid must cover; the grid
    /// adds `grid_padding` cells beyond it like any other dimension.
    pub vertical_half_width: f64,
    pub repetitions: usize,
    pub train_fraction: f64,
    pub seed: u64,
    pub grid_padding: usize,
    pub fit: FitOptions,
    /// Size cap (in 3N) for the full-GP reference; None takes the module
    /// default. Oversized repetitions record a failure and continue.
    pub reference_cap: Option<usize>,
    /// Size cap (in 3N) for the downsampled baseline fits.
    pub downsample_cap: Option<usize>,
}

impl ProtocolOptions {
    /// Protocol settings as the configuration file describes them. The
    /// variance cache is disabled: the protocol measures mean RMSE only.
    pub fn from_config(config: &RunConfig) -> Result<Self> {
        Ok(Self {
            area_half_width: config.area_half_width,
            n_points: config.n_points,
            hyp: config.hyperparameters()?,
            settings: config.eval_settings.clone(),
            vertical_count: config.eval_vertical_count,
            vertical_half_width: config.eval_vertical_half_width,
            repetitions: config.eval_repetitions,
            train_fraction: config.train_fraction,
            seed: config.seed,
            grid_padding: config.grid_padding,
            fit: FitOptions {
                cg_tolerance: config.cg_tolerance,
                max_cg_iterations: config.max_cg_iterations,
                lanczos_rank: 0,
                jitter: config.jitter,
            },
            reference_cap: None,
            downsample_cap: None,
        })
    }
}

/// One successful fit-and-score: held-out RMSE plus what it cost.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub rmse: f64,
    pub wall_seconds: f64,
    /// Conjugate-gradient iterations (0 for the direct fits).
    pub cg_iterations: usize,
    /// Points the model was actually fitted on.
    pub n_fit: usize,
}

/// Failures carry the error text and leave the table hole visible.
pub type CellResult = std::result::Result<RunOutcome, String>;

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub settings: Vec<usize>,
    pub vertical_count: usize,
    pub repetitions: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Indexed [setting][repetition].
    pub dski: Vec<Vec<CellResult>>,
    pub downsampled: Vec<Vec<CellResult>>,
    /// Indexed [repetition]; the reference does not depend on the setting.
    pub reference: Vec<CellResult>,
}

/// Inducing grid for a model fit: explicit bounds when the configuration
/// gives them, otherwise grown from the data with padding. Near-planar data
/// (vertical span below the configured band half-width) gets its vertical
/// bounds widened to the band, since a degenerate dimension cannot anchor a
/// grid on its own.
pub fn fit_grid(data: &TrainingSet, config: &RunConfig) -> Result<InducingGrid> {
    if let (Some(lo), Some(hi)) = (config.grid_lower, config.grid_upper) {
        return InducingGrid::from_axes(
            [[lo[0], hi[0]], [lo[1], hi[1]], [lo[2], hi[2]]],
            config.grid_counts,
        );
    }
    let mut bounds = data.bounds()?;
    let z_span = bounds[2][1] - bounds[2][0];
    if z_span <= config.eval_vertical_half_width {
        let mid = 0.5 * (bounds[2][0] + bounds[2][1]);
        bounds[2] = [
            mid - config.eval_vertical_half_width,
            mid + config.eval_vertical_half_width,
        ];
    }
    InducingGrid::covering(bounds, config.grid_counts, config.grid_padding)
}

/// Inducing grid for one protocol setting: horizontal bounds grown from the
/// data like [`InducingGrid::covering`], vertical bounds from the explicit
/// band around the (planar) data's mid-plane.
pub fn protocol_grid(
    data: &TrainingSet,
    horizontal: usize,
    vertical: usize,
    vertical_half_width: f64,
    padding: usize,
) -> Result<InducingGrid> {
    let bounds = data.bounds()?;
    let z_mid = 0.5 * (bounds[2][0] + bounds[2][1]);
    let z_span = bounds[2][1] - bounds[2][0];
    if z_span > vertical_half_width {
        return Err(Error::Config(format!(
            "data spans {z_span} vertically but the grid band half-width is \
             only {vertical_half_width}"
        )));
    }
    InducingGrid::covering(
        [
            bounds[0],
            bounds[1],
            [z_mid - vertical_half_width, z_mid + vertical_half_width],
        ],
        [horizontal, horizontal, vertical],
        padding,
    )
}

fn score(
    prediction: Result<ndarray::Array2<f64>>,
    truth: &ndarray::Array2<f64>,
    started: Instant,
    cg_iterations: usize,
    n_fit: usize,
) -> CellResult {
    match prediction.and_then(|p| rmse(p.view(), truth.view())) {
        Ok(value) => Ok(RunOutcome {
            rmse: value,
            wall_seconds: started.elapsed().as_secs_f64(),
            cg_iterations,
            n_fit,
        }),
        Err(e) => Err(e.to_string()),
    }
}

/// Run the full protocol. `log` receives one line per completed cell.
pub fn run_protocol(options: &ProtocolOptions, mut log: impl FnMut(&str)) -> Result<EvalReport> {
    if options.settings.is_empty() {
        return Err(Error::Config("protocol needs at least one setting".into()));
    }
    if options.repetitions == 0 {
        return Err(Error::Config(
            "protocol needs at least one repetition".into(),
        ));
    }
    let n_settings = options.settings.len();
    let mut dski: Vec<Vec<CellResult>> = vec![Vec::new(); n_settings];
    let mut downsampled: Vec<Vec<CellResult>> = vec![Vec::new(); n_settings];
    let mut reference: Vec<CellResult> = Vec::new();
    let mut n_train = 0;
    let mut n_test = 0;

    for rep in 0..options.repetitions {
        let seed = options.seed.wrapping_add(rep as u64);
        let data = make_simulation_dataset(
            options.area_half_width,
            options.n_points,
            &options.hyp,
            seed,
        )?;
        let (train, test) = split_train_test(&data, options.train_fraction, seed ^ SPLIT_SALT)?;
        let truth = test
            .noise_free
            .clone()
            .ok_or_else(|| Error::Data("protocol data carries no latent truth".into()))?;
        n_train = train.len();
        n_test = test.len();

        let started = Instant::now();
        let prediction = fit_exact(&train, &options.hyp, options.reference_cap)
            .and_then(|model| model.predict_means(test.positions.view()));
        let cell = score(prediction, &truth, started, 0, train.len());
        log(&format!("rep {rep} reference: {}", describe(&cell)));
        reference.push(cell);

        for (s, &m) in options.settings.iter().enumerate() {
            let started = Instant::now();
            let fitted: std::result::Result<(FittedMap, InducingGrid), Error> = protocol_grid(
                &data,
                m,
                options.vertical_count,
                options.vertical_half_width,
                options.grid_padding,
            )
            .and_then(|grid| {
                fit_dski(&train, &grid, &options.hyp, &options.fit).map(|map| (map, grid))
            });
            let (cell, measured_j, grid) = match fitted {
                Ok((map, grid)) => {
                    let j = map.diagnostics.cg_iterations;
                    let prediction = map.predict_means(test.positions.view());
                    (
                        score(prediction, &truth, started, j, train.len()),
                        Some(j),
                        Some(grid),
                    )
                }
                Err(e) => (Err(e.to_string()), None, None),
            };
            log(&format!(
                "rep {rep} setting {} ({m}x{m}x{}): grid-interpolated {}",
                s + 1,
                options.vertical_count,
                describe(&cell)
            ));
            dski[s].push(cell);

            // Budget-matched baseline: J comes from the measured run above,
            // so a failed grid fit leaves this cell without a budget.
            let started = Instant::now();
            let cell = match (measured_j, grid) {
                (Some(j), Some(grid)) => match budget_match(j.max(1), &grid, train.len()) {
                    Ok(budget) => {
                        let n_dwn = budget.n_dwn.clamp(1, train.len());
                        let prediction =
                            downsample(&train, n_dwn, seed ^ DOWNSAMPLE_SALT ^ ((s as u64) << 32))
                                .and_then(|subset| {
                                    fit_exact(&subset, &options.hyp, options.downsample_cap)
                                })
                                .and_then(|model| model.predict_means(test.positions.view()));
                        score(prediction, &truth, started, 0, n_dwn)
                    }
                    Err(e) => Err(e.to_string()),
                },
                _ => Err("no measured iteration budget (grid fit failed)".into()),
            };
            log(&format!(
                "rep {rep} setting {}: downsampled {}",
                s + 1,
                describe(&cell)
            ));
            downsampled[s].push(cell);
        }
    }

    Ok(EvalReport {
        settings: options.settings.clone(),
        vertical_count: options.vertical_count,
        repetitions: options.repetitions,
        n_train,
        n_test,
        dski,
        downsampled,
        reference,
    })
}

fn describe(cell: &CellResult) -> String {
    match cell {
        Ok(outcome) => format!("rmse {:.6} ({:.2} s)", outcome.rmse, outcome.wall_seconds),
        Err(e) => format!("failed: {e}"),
    }
}

/// Mean and sample standard deviation of the successful cells.
pub fn mean_std(cells: &[CellResult]) -> Option<(f64, f64, usize)> {
    let values: Vec<f64> = cells
        .iter()
        .filter_map(|c| c.as_ref().ok().map(|o| o.rmse))
        .collect();
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some((mean, std, n))
}

fn mean_of(cells: &[CellResult], pick: impl Fn(&RunOutcome) -> f64) -> Option<f64> {
    let values: Vec<f64> = cells
        .iter()
        .filter_map(|c| c.as_ref().ok().map(&pick))
        .collect();
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

fn cell_stats(cells: &[CellResult]) -> String {
    match mean_std(cells) {
        Some((mean, std, n)) if n == cells.len() => format!("{mean:.6} ± {std:.6}"),
        Some((mean, std, n)) => {
            format!(
                "{mean:.6} ± {std:.6} ({}/{} failed)",
                cells.len() - n,
                cells.len()
            )
        }
        None => format!("all {} failed", cells.len()),
    }
}

impl EvalReport {
    /// RMSE per method and setting, mean ± std over repetitions, one row
    /// per setting from coarsest to finest grid.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "held-out RMSE over {} repetitions ({} train / {} test points)\n",
            self.repetitions, self.n_train, self.n_test
        ));
        out.push_str(
            "setting  grid          grid-interpolated      J       downsampled            \
             N_dwn   full GP\n",
        );
        let reference = cell_stats(&self.reference);
        for (s, &m) in self.settings.iter().enumerate() {
            let grid = format!("{m}x{m}x{}", self.vertical_count);
            let j = mean_of(&self.dski[s], |o| o.cg_iterations as f64)
                .map_or("-".to_string(), |v| format!("{v:.1}"));
            let n_dwn = mean_of(&self.downsampled[s], |o| o.n_fit as f64)
                .map_or("-".to_string(), |v| format!("{v:.1}"));
            out.push_str(&format!(
                "{:<8} {:<13} {:<22} {:<7} {:<22} {:<7} {}\n",
                s + 1,
                grid,
                cell_stats(&self.dski[s]),
                j,
                cell_stats(&self.downsampled[s]),
                n_dwn,
                reference,
            ));
        }
        let failures: usize = self
            .dski
            .iter()
            .chain(self.downsampled.iter())
            .flatten()
            .chain(self.reference.iter())
            .filter(|c| c.is_err())
            .count();
        if failures > 0 {
            out.push_str(&format!("failed cells: {failures}\n"));
            for (label, rows) in [
                ("grid-interpolated", &self.dski),
                ("downsampled", &self.downsampled),
            ] {
                for (s, cells) in rows.iter().enumerate() {
                    for (rep, cell) in cells.iter().enumerate() {
                        if let Err(e) = cell {
                            out.push_str(&format!("  {label} setting {} rep {rep}: {e}\n", s + 1));
                        }
                    }
                }
            }
            for (rep, cell) in self.reference.iter().enumerate() {
                if let Err(e) = cell {
                    out.push_str(&format!("  full GP rep {rep}: {e}\n"));
                }
            }
        }
        out
    }

    /// Mean RMSE of the successful grid-interpolated cells per setting.
    pub fn dski_means(&self) -> Vec<Option<f64>> {
        self.dski.iter().map(|c| mean_std(c).map(|s| s.0)).collect()
    }

    pub fn downsampled_means(&self) -> Vec<Option<f64>> {
        self.downsampled
            .iter()
            .map(|c| mean_std(c).map(|s| s.0))
            .collect()
    }

    pub fn reference_mean(&self) -> Option<f64> {
        mean_std(&self.reference).map(|s| s.0)
    }
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    /// Data sizes to time, in order.
    pub sizes: Vec<usize>,
    pub grid_counts: [usize; 3],
    pub hyp: Hyperparameters,
    pub fit: FitOptions,
    pub seed: u64,
}

impl BenchOptions {
    /// The benchmark the configuration describes: the base size doubled
    /// twice on the configured grid.
    pub fn from_config(config: &RunConfig) -> Result<Self> {
        Ok(Self {
            sizes: vec![
                config.bench_base_n,
                config.bench_base_n * 2,
                config.bench_base_n * 4,
            ],
            grid_counts: config.bench_grid_counts,
            hyp: config.hyperparameters()?,
            fit: FitOptions {
                cg_tolerance: config.cg_tolerance,
                max_cg_iterations: config.max_cg_iterations,
                lanczos_rank: config.lanczos_rank,
                jitter: config.jitter,
            },
            seed: config.seed,
        })
    }
}

#[derive(Debug, Clone)]
pub struct BenchCase {
    pub n: usize,
    pub fit_seconds: f64,
    pub cg_iterations: usize,
    pub lanczos_rank: usize,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub grid_counts: [usize; 3],
    pub cases: Vec<BenchCase>,
}

impl BenchReport {
    /// fit-time ratios between consecutive sizes.
    pub fn ratios(&self) -> Vec<f64> {
        self.cases
            .windows(2)
            .map(|w| w[1].fit_seconds / w[0].fit_seconds)
            .collect()
    }

    pub fn summary(&self) -> String {
        let [c1, c2, c3] = self.grid_counts;
        let mut out = format!("fit timing on a {c1}x{c2}x{c3} grid\n");
        out.push_str("N        fit seconds   J     T     ratio\n");
        let mut previous: Option<f64> = None;
        for case in &self.cases {
            let ratio =
                previous.map_or("-".to_string(), |p| format!("{:.2}", case.fit_seconds / p));
            out.push_str(&format!(
                "{:<8} {:<13.3} {:<5} {:<5} {ratio}\n",
                case.n, case.fit_seconds, case.cg_iterations, case.lanczos_rank
            ));
            previous = Some(case.fit_seconds);
        }
        out
    }
}

/// Time grid fits over growing synthetic data on a fixed grid. The data is
/// drawn from the grid-interpolated prior, so generation stays linear in N
/// and never becomes the bottleneck it would be with a dense factor.
pub fn run_bench(options: &BenchOptions, mut log: impl FnMut(&str)) -> Result<BenchReport> {
    if options.sizes.is_empty() {
        return Err(Error::Config("benchmark needs at least one size".into()));
    }
    if options.sizes.contains(&0) {
        return Err(Error::Config("benchmark sizes must be at least 1".into()));
    }
    // Node spacing tied to the kernel so the grid resolves the field.
    let spacing = options.hyp.length_scale / 4.0;
    let mut bounds = [[0.0; 2]; 3];
    for d in 0..3 {
        bounds[d][1] = spacing * (options.grid_counts[d] - 1) as f64;
    }
    let grid = InducingGrid::from_axes(bounds, options.grid_counts)?;
    let interior = grid.interior_bounds()?;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut cases = Vec::new();
    for (i, &n) in options.sizes.iter().enumerate() {
        let positions = ndarray::Array2::from_shape_fn((n, 3), |(_, d)| {
            rng.gen_range(interior[d][0]..interior[d][1])
        });
        let (latent, noisy) = sample_interpolated_prior(
            positions.view(),
            &grid,
            &options.hyp,
            options.seed.wrapping_add(i as u64),
        )?;
        let data = TrainingSet::from_centered_parts(positions, noisy, Some(latent))?;
        let started = Instant::now();
        let map = fit_dski(&data, &grid, &options.hyp, &options.fit)?;
        let fit_seconds = started.elapsed().as_secs_f64();
        log(&format!(
            "N = {n}: fit {fit_seconds:.3} s, J = {}, T = {}",
            map.diagnostics.cg_iterations,
            map.variance_rank()
        ));
        cases.push(BenchCase {
            n,
            fit_seconds,
            cg_iterations: map.diagnostics.cg_iterations,
            lanczos_rank: map.variance_rank(),
        });
    }
    Ok(BenchReport {
        grid_counts: options.grid_counts,
        cases,
    })
}
