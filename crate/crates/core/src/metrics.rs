//! Accuracy, parameter errors and the outlier sensitivity study.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{argument, Result};
use crate::geometry::{ArrayModel, ConductorConfig, ParamVector, PointCloud};
use crate::simulator::{generate_sequence, random_prior, Scenario};
use crate::solver::{frame_seed, track_sequence, EstimationResult, EstimatorSettings};

/// Points closer than this to a curve count as explained, meters.
pub const DEFAULT_THRESHOLD: f64 = 1.0;
/// Number of trailing frames a study aggregates.
pub const DEFAULT_WINDOW: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub explained_est: usize,
    pub explained_truth: usize,
    /// `100 * explained_est / explained_truth`; `None` when the truth explains
    /// nothing. Not capped at 100.
    pub accuracy_pct: Option<f64>,
}

impl Accuracy {
    /// The estimate explains more points than the truth.
    pub fn exceeds_truth(&self) -> bool {
        self.accuracy_pct.is_some_and(|a| a > 100.0)
    }
}

fn explained(p: &ParamVector, cloud: &PointCloud, config: &ConductorConfig, threshold: f64) -> Result<usize> {
    let model = ArrayModel::new(p, config)?;
    let mut n = 0;
    for pt in &cloud.points {
        if model.distance(pt)?.d <= threshold {
            n += 1;
        }
    }
    Ok(n)
}

/// Share of the points explained by the truth that the estimate also explains,
/// counted independently under each parameter set.
pub fn accuracy(
    p_est: &ParamVector,
    p_truth: &ParamVector,
    cloud: &PointCloud,
    config: &ConductorConfig,
    threshold: f64,
) -> Result<Accuracy> {
    if !(threshold >= 0.0) {
        return Err(argument("accuracy threshold must be non-negative"));
    }
    let explained_est = explained(p_est, cloud, config, threshold)?;
    let explained_truth = explained(p_truth, cloud, config, threshold)?;
    let accuracy_pct = (explained_truth > 0).then(|| 100.0 * explained_est as f64 / explained_truth as f64);
    Ok(Accuracy {
        explained_est,
        explained_truth,
        accuracy_pct,
    })
}

/// Wrap an angle to `(-pi, pi]`.
pub fn wrap_angle(x: f64) -> f64 {
    let r = x.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Signed estimate-minus-truth errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterErrors {
    /// Radians, wrapped to `(-pi, pi]`.
    pub psi_error: f64,
    pub a_error: f64,
    pub translation_error: [f64; 3],
    pub delta_errors: Vec<f64>,
}

pub fn parameter_errors(p_est: &ParamVector, p_truth: &ParamVector) -> Result<ParameterErrors> {
    if p_est.deltas.len() != p_truth.deltas.len() {
        return Err(argument("estimate and truth have different offset counts"));
    }
    Ok(ParameterErrors {
        psi_error: wrap_angle(p_est.psi - p_truth.psi),
        a_error: p_est.a - p_truth.a,
        translation_error: [p_est.x_o - p_truth.x_o, p_est.y_o - p_truth.y_o, p_est.z_o - p_truth.z_o],
        delta_errors: p_est.deltas.iter().zip(&p_truth.deltas).map(|(e, t)| e - t).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame_index: usize,
    pub accuracy: Accuracy,
    pub errors: ParameterErrors,
    /// Wall-clock time of the whole frame estimate, milliseconds.
    pub solve_time_ms: f64,
    /// Mean wall-clock time of one solver start, milliseconds.
    pub start_time_ms: f64,
    pub n_pts: usize,
}

/// Metrics of one estimated frame against its truth.
pub fn frame_metrics(
    result: &EstimationResult,
    truth: &ParamVector,
    cloud: &PointCloud,
    config: &ConductorConfig,
    threshold: f64,
) -> Result<FrameMetrics> {
    Ok(FrameMetrics {
        frame_index: cloud.frame_index,
        accuracy: accuracy(&result.p_hat_new, truth, cloud, config, threshold)?,
        errors: parameter_errors(&result.p_hat_new, truth)?,
        solve_time_ms: result.solve_time.as_secs_f64() * 1e3,
        start_time_ms: result.mean_start_time().as_secs_f64() * 1e3,
        n_pts: cloud.len(),
    })
}

/// Mean and sample standard deviation; `(NaN, NaN)` for no values and a zero
/// deviation for a single value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySettings {
    /// Used as is for every run, except for the seed.
    pub estimator: EstimatorSettings,
    /// Deviation of the random initial prior around the truth.
    pub prior_sigma: Vec<f64>,
    pub window: usize,
    pub threshold: f64,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub parallel: bool,
}

fn default_true() -> bool {
    true
}

impl StudySettings {
    /// Bounds around the scenario truth and a prior deviation of
    /// 2 m, 0.05 rad, 500 m on `a` and 0.3 m on offsets.
    pub fn default_for(scenario: &Scenario) -> Self {
        let l = scenario.config.l();
        let mut prior_sigma = vec![2.0, 2.0, 2.0, 0.05, 500.0];
        prior_sigma.extend(std::iter::repeat_n(0.3, l));
        Self {
            estimator: EstimatorSettings::default_for(&scenario.config, &scenario.truth),
            prior_sigma,
            window: DEFAULT_WINDOW,
            threshold: DEFAULT_THRESHOLD,
            seed: 0,
            parallel: true,
        }
    }
}

/// One simulated sequence of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRun {
    pub n_outliers: usize,
    pub repeat: usize,
    pub seed: u64,
    pub initial_prior: Option<ParamVector>,
    /// Metrics of every frame, in order; empty if the run failed.
    pub frames: Vec<FrameMetrics>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    fn of(values: &[f64]) -> Self {
        let (mean, std) = mean_std(values);
        Self { mean, std }
    }
}

/// Aggregate over the trailing window of every successful run at one outlier count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub n_outliers: usize,
    pub n_pts: MeanStd,
    pub dt_ms: MeanStd,
    pub start_ms: MeanStd,
    pub accuracy: MeanStd,
    pub psi_e: MeanStd,
    pub a_e: MeanStd,
    /// Mean of `|a_e|` over the window records.
    pub abs_a_e_mean: f64,
    /// Per-run window means of the accuracy, in repeat order.
    pub run_accuracy_means: Vec<f64>,
    pub n_runs: usize,
    pub n_failed_runs: usize,
    pub n_records: usize,
    /// Window records whose accuracy is undefined.
    pub n_accuracy_missing: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyOutput {
    pub rows: Vec<StudyRow>,
    pub runs: Vec<StudyRun>,
}

/// Seed of repeat `repeat` at outlier count `n_outliers`.
pub fn run_seed(seed: u64, n_outliers: usize, repeat: usize) -> u64 {
    frame_seed(frame_seed(seed, n_outliers), repeat)
}

fn run_once(
    template: &Scenario,
    n_outliers: usize,
    repeat: usize,
    settings: &StudySettings,
) -> StudyRun {
    let seed = run_seed(settings.seed, n_outliers, repeat);
    let mut run = StudyRun {
        n_outliers,
        repeat,
        seed,
        initial_prior: None,
        frames: Vec::new(),
        failure: None,
    };
    let outcome = (|| -> Result<Vec<FrameMetrics>> {
        let scenario = Scenario {
            n_outliers,
            seed,
            ..template.clone()
        };
        let frames = generate_sequence(&scenario)?;
        let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(seed, usize::MAX));
        let est = &settings.estimator;
        let prior = random_prior(&scenario.truth, &settings.prior_sigma, &est.bounds_lower, &est.bounds_upper, &mut rng)?;
        run.initial_prior = Some(prior.clone());
        let clouds: Vec<PointCloud> = frames.iter().map(|f| f.cloud.clone()).collect();
        let estimator = EstimatorSettings {
            seed,
            ..est.clone()
        };
        let results = track_sequence(&clouds, &prior, &estimator, &scenario.config)?;
        results
            .iter()
            .zip(&frames)
            .map(|(r, f)| frame_metrics(r, &f.truth, &f.cloud, &scenario.config, settings.threshold))
            .collect()
    })();
    match outcome {
        Ok(frames) => run.frames = frames,
        Err(e) => run.failure = Some(e.to_string()),
    }
    run
}

/// Aggregate the trailing `window` frames of the runs at `n_outliers`.
pub fn aggregate(runs: &[StudyRun], n_outliers: usize, window: usize) -> StudyRow {
    let selected: Vec<&StudyRun> = runs.iter().filter(|r| r.n_outliers == n_outliers).collect();
    let mut records: Vec<&FrameMetrics> = Vec::new();
    let mut run_accuracy_means = Vec::new();
    for run in selected.iter().filter(|r| r.failure.is_none()) {
        let tail = &run.frames[run.frames.len().saturating_sub(window)..];
        let accs: Vec<f64> = tail.iter().filter_map(|m| m.accuracy.accuracy_pct).collect();
        if !accs.is_empty() {
            run_accuracy_means.push(mean_std(&accs).0);
        }
        records.extend(tail);
    }
    let collect = |f: &dyn Fn(&FrameMetrics) -> f64| records.iter().map(|m| f(m)).collect::<Vec<f64>>();
    let accs: Vec<f64> = records.iter().filter_map(|m| m.accuracy.accuracy_pct).collect();
    let abs_a = collect(&|m| m.errors.a_error.abs());
    StudyRow {
        n_outliers,
        n_pts: MeanStd::of(&collect(&|m| m.n_pts as f64)),
        dt_ms: MeanStd::of(&collect(&|m| m.solve_time_ms)),
        start_ms: MeanStd::of(&collect(&|m| m.start_time_ms)),
        accuracy: MeanStd::of(&accs),
        psi_e: MeanStd::of(&collect(&|m| m.errors.psi_error)),
        a_e: MeanStd::of(&collect(&|m| m.errors.a_error)),
        abs_a_e_mean: mean_std(&abs_a).0,
        run_accuracy_means,
        n_runs: selected.len(),
        n_failed_runs: selected.iter().filter(|r| r.failure.is_some()).count(),
        n_records: records.len(),
        n_accuracy_missing: records.len() - accs.len(),
    }
}

/// Track `n_repeats` simulated sequences per outlier count, each from a
/// random initial prior, and aggregate the trailing window of frames.
pub fn sensitivity_study(
    template: &Scenario,
    outlier_counts: &[usize],
    n_repeats: usize,
    settings: &StudySettings,
) -> Result<StudyOutput> {
    if n_repeats == 0 {
        return Err(argument("a study needs at least one repeat"));
    }
    if settings.window == 0 {
        return Err(argument("the aggregation window must hold at least one frame"));
    }
    template.validate()?;
    settings.estimator.validate(&template.config)?;
    let jobs: Vec<(usize, usize)> = outlier_counts
        .iter()
        .flat_map(|&n| (0..n_repeats).map(move |r| (n, r)))
        .collect();
    let runs: Vec<StudyRun> = if settings.parallel {
        jobs.par_iter().map(|&(n, r)| run_once(template, n, r, settings)).collect()
    } else {
        jobs.iter().map(|&(n, r)| run_once(template, n, r, settings)).collect()
    };
    let rows = outlier_counts
        .iter()
        .map(|&n| aggregate(&runs, n, settings.window))
        .collect();
    Ok(StudyOutput { rows, runs })
}
