//! Run configuration: a flat key-value text format plus one-key overrides.
//!
//! ```text
//! # lines starting with '#' are comments; blank lines are skipped
//! seed = 3
//! n_points = 6000
//! grid_counts = 40,40,5
//! ```
//!
//! Every key is typed and checked on assignment; unknown keys are errors.
//! [`RunConfig::validate`] then checks the assembled schema as a whole, and
//! runs before any command touches data, so a bad configuration never costs
//! a partial computation. Command-line overrides reuse [`RunConfig::set`],
//! so they pass through exactly the same checks as file values.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kernels::Hyperparameters;

/// All tunables understood by the command-line tools, with their defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Seed for every stochastic step (synthesis, splits, downsampling).
    pub seed: u64,
    pub length_scale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
    /// Half-width of the synthetic survey square.
    pub area_half_width: f64,
    /// Number of synthetic measurements.
    pub n_points: usize,
    /// Inducing-grid node counts per dimension.
    pub grid_counts: [usize; 3],
    /// Explicit grid bounds; both present or both absent. When absent the
    /// grid is grown from the data bounds plus `grid_padding` cells.
    pub grid_lower: Option<[f64; 3]>,
    pub grid_upper: Option<[f64; 3]>,
    pub grid_padding: usize,
    pub cg_tolerance: f64,
    pub max_cg_iterations: usize,
    /// Variance cache rank; 0 fits means only.
    pub lanczos_rank: usize,
    /// Per-factor grid jitter; unset picks the scale-aware default.
    pub jitter: Option<f64>,
    /// Query lattice node counts for map prediction.
    pub lattice_counts: [usize; 3],
    /// Explicit lattice bounds; both present or both absent. When absent
    /// the lattice spans the fitted grid's interpolable interior.
    pub lattice_lower: Option<[f64; 3]>,
    pub lattice_upper: Option<[f64; 3]>,
    /// Horizontal grid sizes tried by the evaluation protocol.
    pub eval_settings: Vec<usize>,
    /// Vertical grid size shared by all evaluation settings.
    pub eval_vertical_count: usize,
    /// Half-width of the grid's vertical band around the sensor plane.
    pub eval_vertical_half_width: f64,
    /// Seeded repetitions per evaluation cell.
    pub eval_repetitions: usize,
    pub train_fraction: f64,
    /// Smallest data size in the scaling benchmark (doubled twice).
    pub bench_base_n: usize,
    pub bench_grid_counts: [usize; 3],
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            length_scale: 2.0,
            signal_variance: 1.0,
            noise_variance: 0.01,
            area_half_width: 20.0,
            n_points: 6000,
            grid_counts: [20, 20, 5],
            grid_lower: None,
            grid_upper: None,
            grid_padding: 1,
            cg_tolerance: 1e-4,
            max_cg_iterations: 1000,
            lanczos_rank: 100,
            jitter: None,
            lattice_counts: [40, 40, 1],
            lattice_lower: None,
            lattice_upper: None,
            eval_settings: vec![10, 20, 40, 80, 100, 200],
            eval_vertical_count: 5,
            eval_vertical_half_width: 1.0,
            eval_repetitions: 10,
            train_fraction: 0.8,
            bench_base_n: 10_000,
            bench_grid_counts: [200, 40, 4],
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{}'", value.trim())))
}

fn parse_triple<T: std::str::FromStr + Copy>(key: &str, value: &str) -> Result<[T; 3]> {
    let parts: Vec<&str> = value.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!(
            "{key}: expected three comma-separated values, got {}",
            parts.len()
        )));
    }
    Ok([
        parse_num(key, parts[0])?,
        parse_num(key, parts[1])?,
        parse_num(key, parts[2])?,
    ])
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    let list: Result<Vec<usize>> = value.split(',').map(|v| parse_num(key, v)).collect();
    let list = list?;
    if list.is_empty() {
        return Err(Error::Config(format!("{key}: list must not be empty")));
    }
    Ok(list)
}

impl RunConfig {
    /// Assign one key. Typed parse errors and unknown keys fail here;
    /// cross-field rules wait for [`RunConfig::validate`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, value)?,
            "length_scale" => self.length_scale = parse_num(key, value)?,
            "signal_variance" => self.signal_variance = parse_num(key, value)?,
            "noise_variance" => self.noise_variance = parse_num(key, value)?,
            "area_half_width" => self.area_half_width = parse_num(key, value)?,
            "n_points" => self.n_points = parse_num(key, value)?,
            "grid_counts" => self.grid_counts = parse_triple(key, value)?,
            "grid_lower" => self.grid_lower = Some(parse_triple(key, value)?),
            "grid_upper" => self.grid_upper = Some(parse_triple(key, value)?),
            "grid_padding" => self.grid_padding = parse_num(key, value)?,
            "cg_tolerance" => self.cg_tolerance = parse_num(key, value)?,
            "max_cg_iterations" => self.max_cg_iterations = parse_num(key, value)?,
            "lanczos_rank" => self.lanczos_rank = parse_num(key, value)?,
            "jitter" => self.jitter = Some(parse_num(key, value)?),
            "lattice_counts" => self.lattice_counts = parse_triple(key, value)?,
            "lattice_lower" => self.lattice_lower = Some(parse_triple(key, value)?),
            "lattice_upper" => self.lattice_upper = Some(parse_triple(key, value)?),
            "eval_settings" => self.eval_settings = parse_list(key, value)?,
            "eval_vertical_count" => self.eval_vertical_count = parse_num(key, value)?,
            "eval_vertical_half_width" => self.eval_vertical_half_width = parse_num(key, value)?,
            "eval_repetitions" => self.eval_repetitions = parse_num(key, value)?,
            "train_fraction" => self.train_fraction = parse_num(key, value)?,
            "bench_base_n" => self.bench_base_n = parse_num(key, value)?,
            "bench_grid_counts" => self.bench_grid_counts = parse_triple(key, value)?,
            _ => return Err(Error::Config(format!("unknown configuration key '{key}'"))),
        }
        Ok(())
    }

    /// Apply a `key = value` file on top of the current values. Repeating a
    /// key within one file is rejected as a likely mistake.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {lineno}: expected 'key = value', got '{line}'"
                )));
            };
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!(
                    "line {lineno}: key '{key}' is set twice"
                )));
            }
            self.set(key, value)
                .map_err(|e| Error::Config(format!("line {lineno}: {e}")))?;
        }
        Ok(())
    }

    /// Defaults, file values, then validation in one step.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        config.apply_text(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// The kernel hyperparameters this configuration describes.
    pub fn hyperparameters(&self) -> Result<Hyperparameters> {
        Hyperparameters::new(self.length_scale, self.signal_variance, self.noise_variance)
    }

    /// Whole-schema check; run before any compute.
    pub fn validate(&self) -> Result<()> {
        self.hyperparameters()?;
        if !(self.area_half_width.is_finite() && self.area_half_width > 0.0) {
            return Err(Error::Config(format!(
                "area_half_width must be positive, got {}",
                self.area_half_width
            )));
        }
        if self.n_points == 0 {
            return Err(Error::Config("n_points must be at least 1".into()));
        }
        for (name, counts) in [
            ("grid_counts", &self.grid_counts),
            ("bench_grid_counts", &self.bench_grid_counts),
        ] {
            if counts.iter().any(|&c| c < 4) {
                return Err(Error::Config(format!(
                    "{name}: interpolation needs at least 4 nodes per dimension"
                )));
            }
        }
        Self::check_bounds_pair(
            "grid_lower/grid_upper",
            &self.grid_lower,
            &self.grid_upper,
            &self.grid_counts,
        )?;
        if !(self.cg_tolerance > 0.0 && self.cg_tolerance < 1.0) {
            return Err(Error::Config(format!(
                "cg_tolerance must lie strictly between 0 and 1, got {}",
                self.cg_tolerance
            )));
        }
        if self.max_cg_iterations == 0 {
            return Err(Error::Config("max_cg_iterations must be at least 1".into()));
        }
        if let Some(j) = self.jitter {
            if !(j.is_finite() && j >= 0.0) {
                return Err(Error::Config(format!(
                    "jitter must be non-negative, got {j}"
                )));
            }
        }
        if self.lattice_counts.contains(&0) {
            return Err(Error::Config(
                "lattice_counts needs at least one node per dimension".into(),
            ));
        }
        Self::check_bounds_pair(
            "lattice_lower/lattice_upper",
            &self.lattice_lower,
            &self.lattice_upper,
            &self.lattice_counts,
        )?;
        if self.eval_settings.is_empty() {
            return Err(Error::Config("eval_settings must not be empty".into()));
        }
        if self.eval_settings.iter().any(|&m| m < 4) || self.eval_vertical_count < 4 {
            return Err(Error::Config(
                "evaluation grids need at least 4 nodes per dimension".into(),
            ));
        }
        if !(self.eval_vertical_half_width.is_finite() && self.eval_vertical_half_width > 0.0) {
            return Err(Error::Config(format!(
                "eval_vertical_half_width must be positive, got {}",
                self.eval_vertical_half_width
            )));
        }
        if self.eval_repetitions == 0 {
            return Err(Error::Config("eval_repetitions must be at least 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must lie strictly between 0 and 1, got {}",
                self.train_fraction
            )));
        }
        if self.bench_base_n == 0 {
            return Err(Error::Config("bench_base_n must be at least 1".into()));
        }
        Ok(())
    }

    fn check_bounds_pair(
        name: &str,
        lower: &Option<[f64; 3]>,
        upper: &Option<[f64; 3]>,
        counts: &[usize; 3],
    ) -> Result<()> {
        match (lower, upper) {
            (None, None) => Ok(()),
            (Some(lo), Some(hi)) => {
                for d in 0..3 {
                    if !(lo[d].is_finite() && hi[d].is_finite()) {
                        return Err(Error::Config(format!(
                            "{name}: bounds must be finite in dimension {d}"
                        )));
                    }
                    if counts[d] == 1 {
                        if lo[d] != hi[d] {
                            return Err(Error::Config(format!(
                                "{name}: single-node dimension {d} needs coincident bounds"
                            )));
                        }
                    } else if hi[d] <= lo[d] {
                        return Err(Error::Config(format!(
                            "{name}: bounds must increase in dimension {d}, got [{}, {}]",
                            lo[d], hi[d]
                        )));
                    }
                }
                Ok(())
            }
            _ => Err(Error::Config(format!(
                "{name}: give both bounds or neither"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_validate_and_match_documented_values() {
        let config = RunConfig::default();
        config.validate().unwrap();
        assert_eq!(config.n_points, 6000);
        assert_eq!(config.area_half_width, 20.0);
        assert_eq!(config.length_scale, 2.0);
        assert_eq!(config.signal_variance, 1.0);
        assert_eq!(config.noise_variance, 0.01);
        assert_eq!(config.cg_tolerance, 1e-4);
        assert_eq!(config.lanczos_rank, 100);
        assert_eq!(config.eval_vertical_count, 5);
        assert_eq!(config.eval_settings, vec![10, 20, 40, 80, 100, 200]);
    }

    #[test]
    fn parses_a_realistic_file() {
        let text = "\
# survey synthesis
seed = 7
n_points = 1500            # inner area only
area_half_width = 10
length_scale = 2.0
noise_variance = 1e-2

grid_counts = 40,40,5
grid_lower = -11,-11,-1
grid_upper = 11,11,1
cg_tolerance = 1e-5
eval_settings = 10,20,40
";
        let config = RunConfig::parse(text).unwrap();
        assert_eq!(config.seed, 7);
        assert_eq!(config.n_points, 1500);
        assert_eq!(config.area_half_width, 10.0);
        assert_eq!(config.grid_counts, [40, 40, 5]);
        assert_eq!(config.grid_lower, Some([-11.0, -11.0, -1.0]));
        assert_eq!(config.grid_upper, Some([11.0, 11.0, 1.0]));
        assert_eq!(config.cg_tolerance, 1e-5);
        assert_eq!(config.eval_settings, vec![10, 20, 40]);
        // Untouched keys keep their defaults.
        assert_eq!(config.train_fraction, 0.8);
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        let err = RunConfig::parse("n_pints = 6000\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("unknown configuration key 'n_pints'"), "{err}");
        assert!(err.contains("line 1"), "{err}");

        let err = RunConfig::parse("seed = 1\nseed = 2\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("set twice"), "{err}");
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn rejects_malformed_lines_and_values() {
        let err = RunConfig::parse("seed\n").unwrap_err().to_string();
        assert!(err.contains("expected 'key = value'"), "{err}");

        let err = RunConfig::parse("seed = banana\n").unwrap_err().to_string();
        assert!(err.contains("cannot parse 'banana'"), "{err}");

        let err = RunConfig::parse("grid_counts = 4,4\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("three comma-separated values"), "{err}");

        let err = RunConfig::parse("eval_settings =\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("cannot parse"), "{err}");
    }

    #[test]
    fn validation_covers_each_rule_class() {
        let cases = [
            ("length_scale = 0", "length_scale"),
            ("noise_variance = -1", "noise_variance"),
            ("area_half_width = 0", "area_half_width"),
            ("n_points = 0", "n_points"),
            ("grid_counts = 3,10,10", "at least 4 nodes"),
            ("cg_tolerance = 1", "cg_tolerance"),
            ("max_cg_iterations = 0", "max_cg_iterations"),
            ("jitter = -1e-9", "jitter"),
            ("lattice_counts = 0,5,5", "lattice_counts"),
            ("eval_vertical_count = 3", "at least 4 nodes"),
            ("eval_vertical_half_width = 0", "eval_vertical_half_width"),
            ("eval_repetitions = 0", "eval_repetitions"),
            ("train_fraction = 1", "train_fraction"),
            ("bench_base_n = 0", "bench_base_n"),
            ("grid_lower = 0,0,0", "both bounds or neither"),
        ];
        for (line, needle) in cases {
            let err = RunConfig::parse(line).unwrap_err().to_string();
            assert!(err.contains(needle), "'{line}' gave: {err}");
        }
    }

    #[test]
    fn bounds_pairs_are_checked_per_dimension() {
        let text = "grid_lower = 0,0,0\ngrid_upper = 1,0,1\n";
        let err = RunConfig::parse(text).unwrap_err().to_string();
        assert!(err.contains("dimension 1"), "{err}");

        // Single-node lattice dimensions may (and must) have equal bounds.
        let text = "lattice_counts = 5,5,1\nlattice_lower = 0,0,0.5\nlattice_upper = 1,1,0.5\n";
        RunConfig::parse(text).unwrap();
        let text = "lattice_counts = 5,5,1\nlattice_lower = 0,0,0\nlattice_upper = 1,1,1\n";
        let err = RunConfig::parse(text).unwrap_err().to_string();
        assert!(err.contains("coincident"), "{err}");
    }

    #[test]
    fn set_overrides_file_values_with_the_same_checks() {
        let mut config = RunConfig::parse("seed = 1\n").unwrap();
        config.set("seed", "9").unwrap();
        assert_eq!(config.seed, 9);
        let err = config.set("sneed", "9").unwrap_err().to_string();
        assert!(err.contains("unknown configuration key"), "{err}");
        // Overrides can break cross-field rules until validate reruns.
        config.set("train_fraction", "2").unwrap();
        assert!(config.validate().is_err());
    }

    proptest! {
        /// The parser must reject or accept, never panic, whatever the file
        /// contents.
        #[test]
        fn parser_never_panics(text in ".{0,200}") {
            let _ = RunConfig::parse(&text);
        }

        #[test]
        fn parser_never_panics_on_liney_input(
            lines in proptest::collection::vec("[a-z_]{0,20}=[-0-9e.,x]{0,20}", 0..8)
        ) {
            let _ = RunConfig::parse(&lines.join("\n"));
        }
    }
}
