//! Command-line flags and the JSON run configuration they override.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use catenary_core::filters::{FilterMethod, FilterSpecs};
use catenary_core::simulator::{ObservationMode, Scenario};
use catenary_core::solver::EstimatorSettings;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

#[derive(Debug, Parser)]
#[command(name = "catenary", version, about = "Estimate overhead conductor arrays from point clouds")]
pub struct Cli {
    /// JSON run configuration; flags given on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config_file: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a simulated frame sequence to a run directory.
    Simulate(SimulateArgs),
    /// Track the frames of a run directory and write results.csv.
    Estimate(EstimateArgs),
    /// Outlier sensitivity study over simulated sequences.
    Benchmark(BenchmarkArgs),
    /// Apply a pre-filter to every frame of a run directory.
    Filter(FilterArgs),
    /// Sample the curves of a parameter vector.
    ExportCurves(ExportArgs),
}

/// Contents of `--config-file`. Every section is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Conductor layout name.
    pub config: Option<String>,
    pub seed: Option<u64>,
    /// Base scenario for `simulate` and `benchmark`.
    pub scenario: Option<Scenario>,
    pub estimator: Option<EstimatorSettings>,
    pub filters: Option<FilterSpecs>,
    pub simulate: SimulateArgs,
    pub estimate: EstimateArgs,
    pub benchmark: BenchmarkArgs,
    pub filter: FilterArgs,
    pub export_curves: ExportArgs,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        // Flattened sections cannot deny unknown fields through serde.
        check_keys::<SimulateArgs>(&value, "simulate")?;
        check_keys::<BenchmarkArgs>(&value, "benchmark")?;
        serde_json::from_value(value).with_context(|| format!("parsing {}", path.display()))
    }
}

fn check_keys<T: Args>(value: &serde_json::Value, section: &'static str) -> Result<()> {
    let Some(map) = value.get(section).and_then(|v| v.as_object()) else {
        return Ok(());
    };
    let cmd = T::augment_args(clap::Command::new(section));
    let known: Vec<String> = cmd.get_arguments().map(|a| a.get_id().to_string()).collect();
    for key in map.keys() {
        if !known.contains(key) {
            anyhow::bail!("unknown key {section}.{key}");
        }
    }
    Ok(())
}

/// Fill every `None` field of `$dst` from `$src`.
macro_rules! fill {
    ($dst:expr, $src:expr; $($field:ident),+ $(,)?) => {
        $( if $dst.$field.is_none() { $dst.$field = $src.$field.take(); } )+
    };
}

/// Scenario flags shared by `simulate` and `benchmark`.
#[derive(Debug, Default, Clone, Args, Deserialize)]
#[serde(default)]
pub struct ScenarioArgs {
    /// Conductor layout: 1, 32 or 222.
    #[arg(long)]
    pub config: Option<String>,
    #[arg(long)]
    pub mode: Option<ObservationMode>,
    /// Ground truth x_o,y_o,z_o,psi,a,delta_1..delta_l.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub truth: Option<Vec<f64>>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub pts_per_line: Option<usize>,
    /// Measurement noise deviation, meters.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub span: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub slice_center: Option<f64>,
    #[arg(long)]
    pub slice_width: Option<f64>,
    /// Add the default ground plane and pylon clutter.
    #[arg(long, num_args = 0, default_missing_value = "true")]
    pub clutter: Option<bool>,
}

impl ScenarioArgs {
    fn fill_from(&mut self, other: &mut Self) {
        fill!(self, other; config, mode, truth, frames, pts_per_line, noise, span, slice_center, slice_width, clutter);
    }
}

/// Unknown keys are rejected by [`RunConfig::load`].
#[derive(Debug, Default, Clone, Args, Deserialize)]
#[serde(default)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub scenario: ScenarioArgs,
    /// Outlier points per frame.
    #[arg(long)]
    pub outliers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory to create.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl SimulateArgs {
    pub fn merge(&mut self, file: &mut RunConfig) {
        self.scenario.fill_from(&mut file.simulate.scenario);
        fill!(self, file.simulate; outliers, seed, out);
        fill!(self.scenario, file; config);
        fill!(self, file; seed);
    }
}

#[derive(Debug, Default, Clone, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateArgs {
    /// Run directory holding frame_*.csv.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Conductor layout; defaults to the one recorded in the run.
    #[arg(long)]
    pub config: Option<String>,
    /// Initial prior x_o,y_o,z_o,psi,a,delta_1..delta_l.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub prior: Option<Vec<f64>>,
    /// Draw the initial prior around truth.csv.
    #[arg(long, num_args = 0, default_missing_value = "true")]
    pub perturb_truth: Option<bool>,
    /// Deviation of the truth perturbation, per parameter.
    #[arg(long, value_delimiter = ',')]
    pub prior_sigma: Option<Vec<f64>>,
    #[arg(long)]
    pub n_search: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Pre-filter applied to every frame.
    #[arg(long)]
    pub filter: Option<FilterMethod>,
    #[command(flatten)]
    #[serde(skip)]
    pub filter_flags: FilterFlags,
    /// Distance below which a point counts as explained, meters.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Run the starts of each frame in parallel.
    #[arg(long, num_args = 0, default_missing_value = "true")]
    pub parallel_starts: Option<bool>,
    /// Leave the timing column empty so reruns are byte-identical.
    #[arg(long, num_args = 0, default_missing_value = "true")]
    pub omit_timing: Option<bool>,
    /// Output path; defaults to results.csv inside the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl EstimateArgs {
    pub fn merge(&mut self, file: &mut RunConfig) {
        fill!(self, file.estimate; run, config, prior, perturb_truth, prior_sigma, n_search, seed,
              filter, threshold, parallel_starts, omit_timing, out);
        fill!(self, file; config, seed);
    }
}

/// Unknown keys are rejected by [`RunConfig::load`].
#[derive(Debug, Default, Clone, Args, Deserialize)]
#[serde(default)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub scenario: ScenarioArgs,
    /// Outlier counts, one table row each.
    #[arg(long, value_delimiter = ',')]
    pub outliers: Option<Vec<usize>>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Trailing frames aggregated per run.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub n_search: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub prior_sigma: Option<Vec<f64>>,
    /// Leave the timing columns empty so reruns are byte-identical.
    #[arg(long, num_args = 0, default_missing_value = "true")]
    pub omit_timing: Option<bool>,
    /// Table output; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write every run's per-frame metrics as JSON.
    #[arg(long)]
    pub runs_json: Option<PathBuf>,
}

impl BenchmarkArgs {
    pub fn merge(&mut self, file: &mut RunConfig) {
        self.scenario.fill_from(&mut file.benchmark.scenario);
        fill!(self, file.benchmark; outliers, repeats, seed, window, threshold, n_search, prior_sigma,
              omit_timing, out, runs_json);
        fill!(self.scenario, file; config);
        fill!(self, file; seed);
    }
}

/// Filter parameters; unset values come from the config file or the defaults.
#[derive(Debug, Default, Clone, Args)]
pub struct FilterFlags {
    /// Corridor anchors x_a,y_a,z_a,x_b,y_b,z_b.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub anchors: Option<Vec<f64>>,
    #[arg(long)]
    pub half_width: Option<f64>,
    #[arg(long)]
    pub bin_size: Option<f64>,
    #[arg(long)]
    pub ground_fraction: Option<f64>,
    #[arg(long)]
    pub ransac_iterations: Option<usize>,
    #[arg(long)]
    pub ransac_threshold: Option<f64>,
    #[arg(long)]
    pub ransac_min_fraction: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub min_points: Option<usize>,
    #[arg(long)]
    pub linearity_ratio: Option<f64>,
}

#[derive(Debug, Default, Clone, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterArgs {
    #[arg(long)]
    pub run: Option<PathBuf>,
    #[arg(long)]
    pub method: Option<FilterMethod>,
    #[command(flatten)]
    #[serde(skip)]
    pub flags: FilterFlags,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for the filtered run.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl FilterArgs {
    pub fn merge(&mut self, file: &mut RunConfig) {
        fill!(self, file.filter; run, method, seed, out);
        fill!(self, file; seed);
    }
}

#[derive(Debug, Default, Clone, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportArgs {
    #[arg(long)]
    pub config: Option<String>,
    /// Parameters x_o,y_o,z_o,psi,a,delta_1..delta_l.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub params: Option<Vec<f64>>,
    /// Take the parameters from a results.csv written by `estimate`.
    #[arg(long)]
    pub results: Option<PathBuf>,
    /// Frame index of the results row; the last row by default.
    #[arg(long)]
    pub frame: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub x_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub x_max: Option<f64>,
    /// Samples per conductor.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl ExportArgs {
    pub fn merge(&mut self, file: &mut RunConfig) {
        fill!(self, file.export_curves; config, params, results, frame, x_min, x_max, n, out);
        fill!(self, file; config);
    }
}
