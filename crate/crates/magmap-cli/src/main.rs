//! Command-line front end: synthesize surveys, fit field maps, predict map
//! tables, run the evaluation protocol, benchmark scaling, and render
//! magnitude heatmaps.
//!
//! Every command prints one machine-parsable JSON diagnostics line to
//! stdout as its final output. Progress goes to stderr. Exit codes: 0
//! success, 2 configuration error, 3 data/domain error, 4 numerical
//! failure (including an unconverged mean solve).

mod render;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use magmap::config::RunConfig;
use magmap::data::{make_simulation_dataset, LatticeSpec};
use magmap::dski::{fit_dski, FitOptions};
use magmap::error::{Error, Result};
use magmap::eval::{fit_grid, run_bench, run_protocol, BenchOptions, ProtocolOptions};
use magmap::io::{load_map_table, load_measurements, save_map_table, save_measurements};
use magmap::model_io::{load_model, save_model};

#[derive(Parser)]
#[command(
    name = "magmap",
    about = "Fit and query 3D magnetic-field maps from magnetometer surveys"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic survey from the curl-free field prior
    Synth(SynthArgs),
    /// Fit a grid-interpolated field map to a measurement file
    Fit(FitArgs),
    /// Predict a map table over a query lattice from a fitted model
    Predict(PredictArgs),
    /// Compare grid sizes against downsampled and full exact fits
    Eval(EvalArgs),
    /// Time fits over doubling data sizes
    Bench(BenchArgs),
    /// Render a map table to grayscale rasters
    Render(RenderArgs),
}

/// Configuration file plus repeatable one-key overrides; overrides win.
#[derive(Args)]
struct ConfigArgs {
    /// Configuration file of `key = value` lines
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. --set seed=7 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Shorthand for --set seed=N
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut config = RunConfig::default();
        if let Some(path) = &self.config {
            config.apply_text(&std::fs::read_to_string(path)?)?;
        }
        for pair in &self.set {
            let Some((key, value)) = pair.split_once('=') else {
                return Err(Error::Config(format!(
                    "--set needs KEY=VALUE, got '{pair}'"
                )));
            };
            config.set(key.trim(), value)?;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Measurement CSV to write
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Measurement CSV to fit
    #[arg(long)]
    data: PathBuf,
    /// Model file to write
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Fitted model file
    #[arg(long)]
    model: PathBuf,
    /// Map table to write
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Also write the summary table to this file
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Smallest data size (doubled twice); overrides the configuration
    #[arg(long)]
    n0: Option<usize>,
}

#[derive(Args)]
struct RenderArgs {
    /// Map table file to render
    #[arg(long)]
    map: PathBuf,
    /// Magnitude graymap (PGM) to write; darker pixels mean higher magnitude
    #[arg(long)]
    out: PathBuf,
    /// Also write a certainty graymap (PGM): white where the prediction is
    /// most certain, black where it is least
    #[arg(long)]
    certainty: Option<PathBuf>,
    /// Vertical node index to slice a 3D table at (required when the
    /// lattice has more than one vertical node)
    #[arg(long)]
    slice: Option<usize>,
}

/// JSON string escaping for error messages embedded in diagnostics lines.
fn json_str(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let config = args.config.load()?;
    let hyp = config.hyperparameters()?;
    let started = Instant::now();
    let data = make_simulation_dataset(config.area_half_width, config.n_points, &hyp, config.seed)?;
    save_measurements(&args.out, &data)?;
    println!(
        "{{\"command\":\"synth\",\"n\":{},\"area_half_width\":{},\"seed\":{},\"out\":{},\"wall_seconds\":{:.3}}}",
        data.len(),
        config.area_half_width,
        config.seed,
        json_str(&args.out.display().to_string()),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    let config = args.config.load()?;
    let hyp = config.hyperparameters()?;
    let data = load_measurements(&args.data)?;
    let grid = fit_grid(&data, &config)?;
    let options = FitOptions {
        cg_tolerance: config.cg_tolerance,
        max_cg_iterations: config.max_cg_iterations,
        lanczos_rank: config.lanczos_rank,
        jitter: config.jitter,
    };
    let started = Instant::now();
    let map = fit_dski(&data, &grid, &hyp, &options)?;
    save_model(&args.out, &map)?;
    let d = &map.diagnostics;
    println!(
        "{{\"command\":\"fit\",\"n\":{},\"grid\":[{},{},{}],\"cg_iterations\":{},\"cg_converged\":{},\"cg_relative_residual\":{:e},\"lanczos_rank\":{},\"lanczos_breakdown\":{},\"wall_seconds\":{:.3}}}",
        data.len(),
        grid.counts[0],
        grid.counts[1],
        grid.counts[2],
        d.cg_iterations,
        d.cg_converged,
        d.cg_relative_residual,
        map.variance_rank(),
        d.lanczos_breakdown,
        started.elapsed().as_secs_f64()
    );
    if !d.cg_converged {
        return Err(Error::Numerical(format!(
            "mean solve stopped at relative residual {:.3e} after {} iterations \
             (tolerance {}); the model file was still written",
            d.cg_relative_residual, d.cg_iterations, config.cg_tolerance
        )));
    }
    Ok(())
}

fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let config = args.config.load()?;
    let map = load_model(&args.model)?;
    let lattice = match (config.lattice_lower, config.lattice_upper) {
        (Some(lo), Some(hi)) => LatticeSpec::new(
            [[lo[0], hi[0]], [lo[1], hi[1]], [lo[2], hi[2]]],
            config.lattice_counts,
        )?,
        _ => map.interior_lattice(config.lattice_counts)?,
    };
    let started = Instant::now();
    let (table, clamped) = map.predict_grid(&lattice)?;
    save_map_table(&args.out, &table)?;
    println!(
        "{{\"command\":\"predict\",\"nodes\":{},\"lattice\":[{},{},{}],\"variance_rank\":{},\"clamped_variances\":{},\"wall_seconds\":{:.3}}}",
        lattice.num_nodes(),
        lattice.counts[0],
        lattice.counts[1],
        lattice.counts[2],
        map.variance_rank(),
        clamped,
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let config = args.config.load()?;
    let options = ProtocolOptions::from_config(&config)?;
    let started = Instant::now();
    let report = run_protocol(&options, |line| eprintln!("{line}"))?;
    let summary = report.summary();
    print!("{summary}");
    if let Some(path) = &args.out {
        std::fs::write(path, &summary)?;
    }
    let failed = report
        .dski
        .iter()
        .chain(report.downsampled.iter())
        .flatten()
        .chain(report.reference.iter())
        .filter(|c| c.is_err())
        .count();
    println!(
        "{{\"command\":\"eval\",\"settings\":{},\"repetitions\":{},\"failed_cells\":{},\"wall_seconds\":{:.3}}}",
        report.settings.len(),
        report.repetitions,
        failed,
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let mut config = args.config.load()?;
    if let Some(n0) = args.n0 {
        config.bench_base_n = n0;
        config.validate()?;
    }
    let options = BenchOptions::from_config(&config)?;
    let started = Instant::now();
    let report = run_bench(&options, |line| eprintln!("{line}"))?;
    print!("{}", report.summary());
    let ratios: Vec<String> = report.ratios().iter().map(|r| format!("{r:.3}")).collect();
    println!(
        "{{\"command\":\"bench\",\"sizes\":[{}],\"ratios\":[{}],\"wall_seconds\":{:.3}}}",
        report
            .cases
            .iter()
            .map(|c| c.n.to_string())
            .collect::<Vec<_>>()
            .join(","),
        ratios.join(","),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn cmd_render(args: &RenderArgs) -> Result<()> {
    let table = load_map_table(&args.map)?;
    let started = Instant::now();
    let rendered = render::render_slice(&table, args.slice)?;
    std::fs::write(&args.out, &rendered.magnitude)?;
    if let Some(path) = &args.certainty {
        std::fs::write(path, &rendered.certainty)?;
    }
    println!(
        "{{\"command\":\"render\",\"width\":{},\"height\":{},\"slice\":{},\"wall_seconds\":{:.3}}}",
        rendered.width,
        rendered.height,
        rendered.slice,
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Render(args) => cmd_render(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
