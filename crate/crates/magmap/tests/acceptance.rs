//! Acceptance gate: nine end-to-end criteria covering accuracy against the
//! dense reference, budget-matched baselines, runtime scaling, solver
//! correctness, interpolation order, curl-freeness, and sampler fidelity.
//!
//! Each test prints exactly one machine-greppable line
//! `criterion N: PASS — ...` / `criterion N: FAIL — ...` on the raw process
//! stdout (bypassing libtest capture) and then asserts, so a failed
//! criterion is visible both in the line and in the test outcome. Progress
//! of the long protocol runs goes to raw stderr.

use std::io::Write as _;
use std::time::Instant;

use ndarray::{array, Array1, Array2};
use once_cell::sync::Lazy;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use magmap::data::{make_simulation_dataset, sample_curlfree_prior, TrainingSet, DENSE_CAP};
use magmap::dense::{eigh_oracle, SymmetricFactor};
use magmap::dski::{fit_dski, FitOptions};
use magmap::eval::{protocol_grid, run_bench, run_protocol, BenchOptions, ProtocolOptions};
use magmap::grid::{default_factor_jitter, kron_kuu, InducingGrid, KroneckerKernel};
use magmap::interp::{build_dw, build_w};
use magmap::kernels::{curlfree_block, Hyperparameters};
use magmap::krylov::{kron_mvm, lanczos, pcg, LinearOp};

fn emit(line: &str) {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}").ok();
    out.flush().ok();
}

fn progress(line: &str) {
    let mut err = std::io::stderr().lock();
    writeln!(err, "[acceptance] {line}").ok();
}

fn conclude(criterion: usize, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("criterion {criterion}: {verdict} — {detail}");
    emit(&line);
    assert!(pass, "{line}");
}

fn hyp() -> Hyperparameters {
    Hyperparameters::new(2.0, 1.0, 0.01).unwrap()
}

fn mean_fit() -> FitOptions {
    FitOptions {
        cg_tolerance: 1e-4,
        max_cg_iterations: 1000,
        lanczos_rank: 0,
        jitter: None,
    }
}

/// Small-area protocol: 20 m x 20 m survey, ~1500 points, three grid
/// refinements, ten repetitions. Shared by criteria 1 and 2.
static SMALL_AREA: Lazy<(magmap::eval::EvalReport, f64)> = Lazy::new(|| {
    let options = ProtocolOptions {
        area_half_width: 10.0,
        n_points: 1500,
        hyp: hyp(),
        settings: vec![10, 20, 40],
        vertical_count: 5,
        vertical_half_width: 1.0,
        repetitions: 10,
        train_fraction: 0.8,
        seed: 0,
        grid_padding: 1,
        fit: mean_fit(),
        reference_cap: None,
        downsample_cap: None,
    };
    let started = Instant::now();
    let report = run_protocol(&options, |line| progress(&format!("area 1: {line}"))).unwrap();
    (report, started.elapsed().as_secs_f64())
});

/// Large-area protocol: 40 m x 40 m survey, 6000 points, all six grid
/// refinements, ten repetitions. Shared by criteria 2 and 3.
static LARGE_AREA: Lazy<magmap::eval::EvalReport> = Lazy::new(|| {
    let options = ProtocolOptions {
        area_half_width: 20.0,
        n_points: 6000,
        hyp: hyp(),
        settings: vec![10, 20, 40, 80, 100, 200],
        vertical_count: 5,
        vertical_half_width: 1.0,
        repetitions: 10,
        train_fraction: 0.8,
        seed: 0,
        grid_padding: 1,
        fit: mean_fit(),
        // 4800 training points give a 14400-size dense system; raise the
        // caps so the reference and the budget-matched baselines all fit.
        reference_cap: Some(DENSE_CAP),
        downsample_cap: Some(DENSE_CAP),
    };
    run_protocol(&options, |line| progress(&format!("area 2: {line}"))).unwrap()
});

fn complete_mean(cells: &[magmap::eval::CellResult], what: &str) -> f64 {
    let (mean, _, count) = magmap::eval::mean_std(cells).unwrap_or_else(|| {
        panic!("{what}: every repetition failed");
    });
    assert_eq!(
        count,
        cells.len(),
        "{what}: only {count} of {} repetitions succeeded",
        cells.len()
    );
    mean
}

#[test]
fn criterion_1_grid_refinement_approaches_the_dense_reference() {
    let (report, wall) = &*SMALL_AREA;
    let reference = complete_mean(&report.reference, "area 1 reference");
    let coarse = complete_mean(&report.dski[0], "area 1 setting 1");
    let fine = complete_mean(&report.dski[2], "area 1 setting 3");
    let ratio_coarse = coarse / reference;
    let ratio_fine = fine / reference;
    let pass = ratio_coarse >= 2.0 && (1.0..=1.10).contains(&ratio_fine) && *wall <= 600.0;
    conclude(
        1,
        pass,
        &format!(
            "rmse ratio vs dense reference: 10x10x5 grid {ratio_coarse:.2} (need >= 2.0), \
             40x40x5 grid {ratio_fine:.3} (need 1.0..=1.10), protocol wall {wall:.0} s \
             (limit 600); rmse dense {reference:.5}, coarse {coarse:.5}, fine {fine:.5}"
        ),
    );
}

#[test]
fn criterion_2_error_grows_with_area_at_fixed_coarse_grid() {
    let (small, _) = &*SMALL_AREA;
    let large = &*LARGE_AREA;
    let small_coarse = complete_mean(&small.dski[0], "area 1 setting 1");
    let large_coarse = complete_mean(&large.dski[0], "area 2 setting 1");
    let ratio = large_coarse / small_coarse;
    let pass = ratio >= 2.0;
    conclude(
        2,
        pass,
        &format!(
            "coarse-grid rmse grows from {small_coarse:.5} (20 m survey) to \
             {large_coarse:.5} (40 m survey), ratio {ratio:.2} (need >= 2.0)"
        ),
    );
}

#[test]
fn criterion_3_beats_budget_matched_downsampling() {
    let report = &*LARGE_AREA;
    let mut wins = 0;
    let mut parts = Vec::new();
    for (s, &m) in report.settings.iter().enumerate() {
        let grid = complete_mean(&report.dski[s], "area 2 grid fit");
        let down = complete_mean(&report.downsampled[s], "area 2 downsampled fit");
        let won = grid <= down;
        wins += won as usize;
        parts.push(format!(
            "M={m}: {grid:.4} vs {down:.4} {}",
            if won { "<=" } else { ">" }
        ));
    }
    let pass = wins >= 5;
    conclude(
        3,
        pass,
        &format!(
            "grid fit beats equal-budget downsampled dense fit on {wins}/6 settings \
             (need >= 5): {}",
            parts.join("; ")
        ),
    );
}

#[test]
fn criterion_4_fit_time_scales_linearly_in_n() {
    let options = BenchOptions {
        sizes: vec![20_000, 40_000],
        grid_counts: [200, 40, 4],
        hyp: hyp(),
        fit: FitOptions::default(),
        seed: 0,
    };
    let report = run_bench(&options, |line| progress(&format!("bench: {line}"))).unwrap();
    let ratio = report.ratios()[0];
    let small = report.cases[0].fit_seconds;
    let large = report.cases[1].fit_seconds;
    let pass = (1.5..=3.0).contains(&ratio) && large <= 600.0;
    conclude(
        4,
        pass,
        &format!(
            "doubling N = 20000 -> 40000 on a 200x40x4 grid scales the fit time \
             {small:.1} s -> {large:.1} s, ratio {ratio:.2} (need 1.5..=3.0, \
             absolute limit 600 s)"
        ),
    );
}

/// Fixture for the dense-vs-iterative comparison: 20 points in the interior
/// of a 6x6x4 grid, fitted with tight tolerances and a full-rank variance
/// factorization.
fn dense_comparison_fixture() -> (
    InducingGrid,
    TrainingSet,
    magmap::dski::FittedMap,
    Array2<f64>,
    f64,
) {
    let grid = InducingGrid::from_axes([[-1.5, 1.5], [-1.5, 1.5], [-0.9, 0.9]], [6, 6, 4]).unwrap();
    let interior = grid.interior_bounds().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let positions = Array2::from_shape_fn((20, 3), |(_, d)| {
        rng.gen_range(interior[d][0]..interior[d][1])
    });
    let measurements = sample_curlfree_prior(positions.view(), &hyp(), 56).unwrap();
    let data = TrainingSet::from_raw(positions, measurements).unwrap();
    let jitter = default_factor_jitter(&hyp());
    let options = FitOptions {
        cg_tolerance: 1e-12,
        max_cg_iterations: 5000,
        lanczos_rank: 3 * data.len(),
        jitter: Some(jitter),
    };
    let map = fit_dski(&data, &grid, &hyp(), &options).unwrap();
    let queries = Array2::from_shape_fn((30, 3), |(_, d)| {
        rng.gen_range(interior[d][0]..interior[d][1])
    });
    (grid, data, map, queries, jitter)
}

#[test]
fn criterion_5_iterative_fit_matches_a_dense_solve_of_the_same_system() {
    let (grid, data, map, queries, jitter) = dense_comparison_fixture();
    let h = hyp();
    let n3 = 3 * data.len();

    // Dense assembly of the same interpolated system the iterative fit
    // solves: A = dW K_uu dW^T + sigma_y^2 I.
    let dw = build_dw(&grid, data.positions.view()).unwrap().to_dense();
    let kuu = kron_kuu(&grid, &h, jitter).dense();
    let mut a = dw.dot(&kuu).dot(&dw.t());
    for i in 0..n3 {
        a[[i, i]] += h.noise_variance;
    }
    let factor = SymmetricFactor::cholesky(&a).unwrap();
    let alpha = Array1::from_vec(factor.solve_vec(&data.stacked_measurements()).unwrap());

    // Means against the dense solve.
    let dwq = build_dw(&grid, queries.view()).unwrap().to_dense();
    let cache = kuu.dot(&dw.t().dot(&alpha));
    let mean_flat = dwq.dot(&cache);
    let iterative = map.predict_means(queries.view()).unwrap();
    let mut num = 0.0;
    let mut den = 0.0;
    for q in 0..queries.nrows() {
        for c in 0..3 {
            let dense = mean_flat[3 * q + c] + data.component_means[c];
            let diff = iterative[[q, c]] - dense;
            num += diff * diff;
            den += dense * dense;
        }
    }
    let mean_err = (num / den).sqrt();

    // Covariance blocks against the dense posterior of the same system.
    let (prediction, _) = map.predict(queries.view()).unwrap();
    let u = dwq.dot(&kuu).dot(&dw.t());
    let prior = dwq.dot(&kuu).dot(&dwq.t());
    let correction = u.dot(&factor.solve_mat(&u.t().to_owned()).unwrap());
    let mut num = 0.0;
    let mut den = 0.0;
    for q in 0..queries.nrows() {
        for i in 0..3 {
            for j in 0..3 {
                let dense = prior[[3 * q + i, 3 * q + j]] - correction[[3 * q + i, 3 * q + j]];
                let diff = prediction.covariance[q][i][j] - dense;
                num += diff * diff;
                den += dense * dense;
            }
        }
    }
    let var_err = (num / den).sqrt();

    let full_rank = map.diagnostics.lanczos_rank == n3;
    let pass = mean_err <= 1e-6 && var_err <= 1e-6 && full_rank;
    conclude(
        5,
        pass,
        &format!(
            "against a dense solve of the same interpolated system (20 points, \
             6x6x4 grid): mean relative error {mean_err:.2e}, full-rank (T = {}) \
             variance relative error {var_err:.2e} (both need <= 1e-6)",
            map.diagnostics.lanczos_rank
        ),
    );
}

#[test]
fn criterion_6_stencils_reproduce_quadratic_gradients_and_partition_unity() {
    let grid = InducingGrid::from_axes([[0.0, 2.1], [-1.0, 1.4], [0.5, 2.0]], [8, 7, 6]).unwrap();
    let interior = grid.interior_bounds().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let probes = Array2::from_shape_fn((100, 3), |(_, d)| {
        rng.gen_range(interior[d][0]..interior[d][1])
    });

    // An arbitrary quadratic and its gradient; cubic convolution is exact on
    // quadratics, so the only error left is roundoff.
    let a = [0.3, -1.1, 0.8];
    let b = [[0.5, 0.2, -0.3], [0.2, -0.4, 0.1], [-0.3, 0.1, 0.25]];
    let f = |p: [f64; 3]| -> f64 {
        let mut v = 0.7;
        for i in 0..3 {
            v += a[i] * p[i];
            for j in 0..3 {
                v += p[i] * b[i][j] * p[j];
            }
        }
        v
    };
    let gradient = |p: [f64; 3]| -> [f64; 3] {
        let mut g = a;
        for i in 0..3 {
            for j in 0..3 {
                g[i] += 2.0 * b[i][j] * p[j];
            }
        }
        g
    };
    let mut nodal = vec![0.0; grid.num_nodes()];
    for i in 0..grid.counts[0] {
        for j in 0..grid.counts[1] {
            for k in 0..grid.counts[2] {
                nodal[grid.linear_index([i, j, k])] = f(grid.node_position([i, j, k]));
            }
        }
    }

    let w = build_w(&grid, probes.view()).unwrap();
    let dw = build_dw(&grid, probes.view()).unwrap();
    let mut worst_gradient = 0.0f64;
    let mut worst_w_sum = 0.0f64;
    let mut worst_dw_sum = 0.0f64;
    for n in 0..probes.nrows() {
        let p = [probes[[n, 0]], probes[[n, 1]], probes[[n, 2]]];
        let g = gradient(p);
        let (_cols, vals) = w.row(n);
        worst_w_sum = worst_w_sum.max((vals.iter().sum::<f64>() - 1.0).abs());
        for (c, &gc) in g.iter().enumerate() {
            // Derivative rows carry the field sign convention (negated
            // spatial derivative).
            let est: f64 = dw
                .point_cols(n)
                .iter()
                .zip(dw.point_vals(n, c))
                .map(|(&col, &v)| v * nodal[col as usize])
                .sum();
            worst_gradient = worst_gradient.max((est + gc).abs());
            worst_dw_sum = worst_dw_sum.max(dw.point_vals(n, c).iter().sum::<f64>().abs());
        }
    }
    let pass = worst_gradient <= 1e-9 && worst_w_sum <= 1e-12 && worst_dw_sum <= 1e-12;
    conclude(
        6,
        pass,
        &format!(
            "over 100 interior probes: worst quadratic-gradient error \
             {worst_gradient:.2e} (need <= 1e-9), interpolation row sums off unity \
             by {worst_w_sum:.2e} and derivative row sums off zero by \
             {worst_dw_sum:.2e} (both need <= 1e-12)"
        ),
    );
}

struct DenseOp(Array2<f64>);

impl LinearOp for DenseOp {
    fn dim(&self) -> usize {
        self.0.nrows()
    }
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.0.dot(&Array1::from_vec(v.to_vec())).to_vec()
    }
}

#[test]
fn criterion_7_krylov_building_blocks_match_dense_linear_algebra() {
    // Kronecker MVM against the dense product, with non-symmetric factors.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let factors = [
        Array2::from_shape_fn((2, 2), |_| rng.gen_range(-1.0..1.0)),
        Array2::from_shape_fn((3, 3), |_| rng.gen_range(-1.0..1.0)),
        Array2::from_shape_fn((2, 2), |_| rng.gen_range(-1.0..1.0)),
    ];
    let kron = KroneckerKernel { factors };
    let v: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let fast = kron_mvm(&kron, &v).unwrap();
    let dense = kron.dense().dot(&Array1::from_vec(v.clone()));
    let kron_err = fast
        .iter()
        .zip(dense.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);

    // PCG against a Cholesky solve on a random SPD system.
    let r = Array2::from_shape_fn((30, 30), |_| rng.gen_range(-1.0..1.0));
    let mut spd = r.t().dot(&r);
    for i in 0..30 {
        spd[[i, i]] += 30.0;
    }
    let b: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let solution = pcg(&DenseOp(spd.clone()), &b, 1e-12, 1000, None).unwrap();
    let direct = SymmetricFactor::cholesky(&spd)
        .unwrap()
        .solve_vec(&b)
        .unwrap();
    let num: f64 = solution
        .x
        .iter()
        .zip(&direct)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let den: f64 = direct.iter().map(|x| x * x).sum();
    let pcg_err = (num / den).sqrt();

    // Full-rank Lanczos on diag(1..10): eigenvalues and orthonormality.
    let mut diag = Array2::zeros((10, 10));
    for i in 0..10 {
        diag[[i, i]] = (i + 1) as f64;
    }
    let start = vec![1.0; 10];
    let factors = lanczos(&DenseOp(diag), &start, 10).unwrap();
    let (eigenvalues, _) = eigh_oracle(&factors.tridiagonal_dense()).unwrap();
    let eig_err = eigenvalues
        .iter()
        .enumerate()
        .map(|(i, &v)| (v - (i + 1) as f64).abs())
        .fold(0.0f64, f64::max);
    let qtq = factors.q.t().dot(&factors.q);
    let mut ortho_err = 0.0f64;
    for i in 0..qtq.nrows() {
        for j in 0..qtq.ncols() {
            let expected = if i == j { 1.0 } else { 0.0 };
            ortho_err = ortho_err.max((qtq[[i, j]] - expected).abs());
        }
    }

    let pass = kron_err <= 1e-12
        && pcg_err <= 1e-8
        && factors.rank() == 10
        && eig_err <= 1e-8
        && ortho_err <= 1e-8;
    conclude(
        7,
        pass,
        &format!(
            "kronecker mvm max error {kron_err:.2e} (need <= 1e-12); pcg vs \
             cholesky relative error {pcg_err:.2e} (need <= 1e-8); lanczos on \
             diag(1..10): eigenvalue error {eig_err:.2e}, orthonormality defect \
             {ortho_err:.2e} (both need <= 1e-8)"
        ),
    );
}

#[test]
fn criterion_8_predicted_field_is_curl_free_and_variances_are_clamped() {
    let h = hyp();
    let data = make_simulation_dataset(4.0, 300, &h, 91).unwrap();
    let grid = protocol_grid(&data, 14, 5, 1.0, 1).unwrap();
    let options = FitOptions {
        cg_tolerance: 1e-8,
        max_cg_iterations: 2000,
        lanczos_rank: 60,
        jitter: None,
    };
    let map = fit_dski(&data, &grid, &h, &options).unwrap();

    // Probes strictly inside grid cells (the interpolant is a polynomial
    // there), away from the cell faces by far more than the step.
    let offsets = [0.37, 0.41, 0.29];
    let mut probes = Vec::new();
    for (i, j, k) in [
        (3, 3, 1),
        (5, 8, 2),
        (9, 4, 1),
        (11, 10, 2),
        (7, 6, 1),
        (4, 11, 2),
    ] {
        let p = grid.node_position([i, j, k]);
        probes.push([
            p[0] + offsets[0] * grid.spacing[0],
            p[1] + offsets[1] * grid.spacing[1],
            p[2] + offsets[2] * grid.spacing[2],
        ]);
    }
    let step = 1e-3;
    let field = |p: [f64; 3]| -> [f64; 3] {
        let q = Array2::from_shape_vec((1, 3), p.to_vec()).unwrap();
        let m = map.predict_means(q.view()).unwrap();
        [m[[0, 0]], m[[0, 1]], m[[0, 2]]]
    };
    let mut worst_curl = 0.0f64;
    for p in &probes {
        let mut partial = [[0.0; 3]; 3]; // partial[c][d] = dB_c / dx_d
        for d in 0..3 {
            let mut hi = *p;
            let mut lo = *p;
            hi[d] += step;
            lo[d] -= step;
            let fh = field(hi);
            let fl = field(lo);
            for c in 0..3 {
                partial[c][d] = (fh[c] - fl[c]) / (2.0 * step);
            }
        }
        let curl = [
            partial[2][1] - partial[1][2],
            partial[0][2] - partial[2][0],
            partial[1][0] - partial[0][1],
        ];
        for c in curl {
            worst_curl = worst_curl.max(c.abs());
        }
    }
    let tolerance = 1e-5 * h.signal_variance.sqrt() / h.length_scale;

    // Variance diagonals over a query lattice are nonnegative after the
    // clamp, and clamp events are counted.
    let lattice = map.interior_lattice([12, 12, 3]).unwrap();
    let (table, clamped) = map.predict_grid(&lattice).unwrap();
    let nonnegative = table.variance_diag.iter().all(|&v| v >= 0.0);

    let pass = worst_curl <= tolerance && nonnegative;
    conclude(
        8,
        pass,
        &format!(
            "worst finite-difference curl component over {} cell-interior probes \
             {worst_curl:.2e} (need <= {tolerance:.1e}); variance diagonals over \
             {} lattice nodes all nonnegative after clamping, {clamped} clamp \
             events",
            probes.len(),
            table.variance_diag.nrows(),
        ),
    );
}

#[test]
fn criterion_9_sampler_covariance_matches_the_analytic_kernel() {
    let h = hyp();
    let pair = array![[0.3, -0.2, 0.5], [-0.4, 0.1, 0.2]];
    let points = [[0.3, -0.2, 0.5], [-0.4, 0.1, 0.2]];

    // Expected covariance of the stacked noisy draw: the curl-free blocks
    // plus observation noise on the diagonal.
    let mut expected = Array2::zeros((6, 6));
    for a in 0..2 {
        for b in 0..2 {
            let block = curlfree_block(points[a], points[b], &h);
            for i in 0..3 {
                for j in 0..3 {
                    expected[[3 * a + i, 3 * b + j]] = block[i][j];
                }
            }
        }
    }
    for i in 0..6 {
        expected[[i, i]] += h.noise_variance;
    }

    let draws = 2000;
    let mut second_moment = Array2::<f64>::zeros((6, 6));
    for seed in 0..draws {
        let y = sample_curlfree_prior(pair.view(), &h, seed).unwrap();
        let flat = [
            y[[0, 0]],
            y[[0, 1]],
            y[[0, 2]],
            y[[1, 0]],
            y[[1, 1]],
            y[[1, 2]],
        ];
        for i in 0..6 {
            for j in 0..6 {
                second_moment[[i, j]] += flat[i] * flat[j];
            }
        }
    }
    second_moment /= draws as f64;

    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..6 {
        for j in 0..6 {
            let diff = second_moment[[i, j]] - expected[[i, j]];
            num += diff * diff;
            den += expected[[i, j]] * expected[[i, j]];
        }
    }
    let rel = (num / den).sqrt();
    let pass = rel <= 0.10;
    conclude(
        9,
        pass,
        &format!(
            "monte-carlo covariance of {draws} prior draws at a fixed point pair \
             is within {rel:.3} relative Frobenius distance of the analytic \
             curl-free blocks (need <= 0.10)"
        ),
    );
}
