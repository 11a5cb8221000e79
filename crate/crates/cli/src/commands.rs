use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use catenary_core::filters::{apply_filter, CorridorSpec, FilterMethod, FilterSpecs};
use catenary_core::geometry::sample_curves;
use catenary_core::metrics::{accuracy, parameter_errors, sensitivity_study, StudyRow, StudySettings, DEFAULT_THRESHOLD};
use catenary_core::simulator::{default_truth_for, generate_sequence, random_prior, Clutter, Scenario};
use catenary_core::solver::{frame_seed, track_sequence, EstimatorSettings};
use catenary_core::{ConductorConfig, ParamVector, Point3, PointCloud};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::args::{BenchmarkArgs, EstimateArgs, ExportArgs, FilterArgs, FilterFlags, RunConfig, ScenarioArgs, SimulateArgs};
use crate::frames::{self, RunInfo};
use crate::UsageError;

pub const BENCHMARK_HEADER: &str =
    "n_o,n_pts_mean,n_pts_std,dt_ms_mean,dt_ms_std,acc_mean,acc_std,psi_e_mean,psi_e_std,a_e_mean,a_e_std";

fn required<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.ok_or_else(|| UsageError(format!("missing --{flag} (flag or config file)")).into())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .with_context(|| format!("creating {}", path.display()))
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn build_scenario(args: &ScenarioArgs, base: Option<Scenario>) -> Result<Scenario> {
    let mut s = match base {
        Some(s) => s,
        None => {
            let config = ConductorConfig::builtin(args.config.as_deref().unwrap_or("222"))?;
            let truth = default_truth_for(&config);
            Scenario::new(config, truth, args.mode.unwrap_or_default())?
        }
    };
    if let Some(name) = &args.config {
        if name != s.config.name() {
            s.config = ConductorConfig::builtin(name)?;
            if args.truth.is_none() {
                s.truth = default_truth_for(&s.config);
            }
        }
    }
    if let Some(mode) = args.mode {
        s.mode = mode;
    }
    if let Some(t) = &args.truth {
        s.truth = ParamVector::from_slice(t)?;
    }
    if let Some(v) = args.frames {
        s.n_frames = v;
    }
    if let Some(v) = args.pts_per_line {
        s.pts_per_line_max = v;
    }
    if let Some(v) = args.noise {
        s.noise_sigma = v;
    }
    if let Some(v) = args.span {
        s.span = v;
    }
    if let Some(v) = args.slice_center {
        s.slice_center = v;
    }
    if let Some(v) = args.slice_width {
        s.slice_width = v;
    }
    match args.clutter {
        Some(true) => s = s.with_default_clutter()?,
        Some(false) => s.clutter = Clutter::default(),
        None => {}
    }
    s.validate()?;
    Ok(s)
}

pub fn simulate(mut args: SimulateArgs, mut file: RunConfig) -> Result<()> {
    args.merge(&mut file);
    let out = required(args.out, "out")?;
    let mut scenario = build_scenario(&args.scenario, file.scenario.take())?;
    if let Some(n) = args.outliers {
        scenario.n_outliers = n;
    }
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let frames = generate_sequence(&scenario)?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut n_conductor = 0;
    let mut n_other = 0;
    for f in &frames {
        let codes: Vec<i64> = f.labels.iter().map(|l| l.code()).collect();
        n_conductor += codes.iter().filter(|c| **c >= 0).count();
        n_other += codes.iter().filter(|c| **c < 0).count();
        frames::write_frame(&out, &f.cloud, Some(&codes))?;
    }
    frames::write_truth(&out, &scenario.truth)?;
    frames::write_run_info(
        &out,
        &RunInfo {
            config: scenario.config.name().to_owned(),
            scenario: Some(scenario.clone()),
        },
    )?;
    println!(
        "wrote {} frames to {} ({n_conductor} conductor points, {n_other} other points)",
        frames.len(),
        out.display()
    );
    Ok(())
}

fn filter_specs(flags: &FilterFlags, base: Option<FilterSpecs>, run: Option<&RunInfo>) -> Result<FilterSpecs> {
    let mut specs = base.unwrap_or_default();
    if let Some(a) = &flags.anchors {
        if a.len() != 6 {
            bail!(UsageError(format!("--anchors needs 6 values, got {}", a.len())));
        }
        let half_width = specs.corridor.map_or(10.0, |c| c.half_width);
        specs.corridor = Some(CorridorSpec::new(
            Point3::new(a[0], a[1], a[2]),
            Point3::new(a[3], a[4], a[5]),
            half_width,
        ));
    }
    if specs.corridor.is_none() {
        // Simulated runs know where their pylons are.
        if let Some(scenario) = run.and_then(|r| r.scenario.as_ref()) {
            let (a, b) = scenario.corridor_anchors(50.0)?;
            specs.corridor = Some(CorridorSpec::new(a, b, 10.0));
        }
    }
    if let Some(c) = specs.corridor.as_mut() {
        if let Some(v) = flags.half_width {
            c.half_width = v;
        }
        if let Some(v) = flags.bin_size {
            c.bin_size = v;
        }
        if let Some(v) = flags.ground_fraction {
            c.ground_fraction = v;
        }
    }
    if let Some(v) = flags.ransac_iterations {
        specs.ransac.iterations = v;
    }
    if let Some(v) = flags.ransac_threshold {
        specs.ransac.threshold = v;
    }
    if let Some(v) = flags.ransac_min_fraction {
        specs.ransac.min_inlier_fraction = v;
    }
    if let Some(v) = flags.eps {
        specs.cluster.epsilon = v;
    }
    if let Some(v) = flags.min_points {
        specs.cluster.min_points = v;
    }
    if let Some(v) = flags.linearity_ratio {
        specs.cluster.linearity_ratio = v;
    }
    Ok(specs)
}

/// Random stream of the filters for frame `t`, disjoint from the solver's.
fn filter_rng(seed: u64, t: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(frame_seed(!seed, t))
}

pub fn estimate(mut args: EstimateArgs, mut file: RunConfig) -> Result<()> {
    args.merge(&mut file);
    let run = required(args.run.clone(), "run")?;
    let info = frames::read_run_info(&run)?;
    let name = args
        .config
        .clone()
        .or_else(|| info.as_ref().map(|i| i.config.clone()))
        .ok_or_else(|| UsageError("missing --config and the run records none".into()))?;
    let config = ConductorConfig::builtin(&name)?;
    let truth = frames::read_truth(&run)?;
    if let Some(t) = &truth {
        if t.deltas.len() != config.l() {
            bail!(
                "config mismatch: truth.csv has {} offsets, configuration {name} has {}",
                t.deltas.len(),
                config.l()
            );
        }
    }
    let input = frames::read_frames(&run)?;
    let seed = args.seed.unwrap_or(0);

    let prior = match (&args.prior, args.perturb_truth.unwrap_or(false)) {
        (Some(p), _) => ParamVector::from_slice(p)?,
        (None, true) => {
            let Some(t) = &truth else {
                bail!("--perturb-truth needs truth.csv in the run directory");
            };
            let sigma = args.prior_sigma.clone().unwrap_or_else(|| default_prior_sigma(config.l()));
            let bounds = EstimatorSettings::default_for(&config, t);
            let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(seed, usize::MAX));
            random_prior(t, &sigma, &bounds.bounds_lower, &bounds.bounds_upper, &mut rng)?
        }
        (None, false) => bail!(UsageError("give --prior or --perturb-truth".into())),
    };
    if prior.deltas.len() != config.l() {
        bail!(UsageError(format!("the prior needs {} values", config.n_params())));
    }
    let mut settings = file
        .estimator
        .take()
        .unwrap_or_else(|| EstimatorSettings::default_for(&config, &prior));
    if let Some(n) = args.n_search {
        settings.n_search = n;
    }
    if let Some(p) = args.parallel_starts {
        settings.parallel_starts = p;
    }
    settings.seed = seed;

    let clouds: Vec<PointCloud> = match args.filter {
        None => input.iter().map(|f| f.cloud.clone()).collect(),
        Some(method) => {
            let specs = filter_specs(&args.filter_flags, file.filters.take(), info.as_ref())?;
            input
                .iter()
                .enumerate()
                .map(|(t, f)| Ok(apply_filter(method, &f.cloud, &specs, &mut filter_rng(seed, t))?.cloud))
                .collect::<Result<_>>()?
        }
    };
    let results = track_sequence(&clouds, &prior, &settings, &config)?;

    let out = args.out.clone().unwrap_or_else(|| run.join("results.csv"));
    let omit_timing = args.omit_timing.unwrap_or(false);
    let threshold = args.threshold.unwrap_or(DEFAULT_THRESHOLD);
    let mut header = vec!["frame_index".to_owned()];
    header.extend(frames::param_header(config.l()));
    header.extend(["cost", "n_pts", "solve_time_ms"].map(String::from));
    if truth.is_some() {
        header.extend(["accuracy", "psi_e", "a_e", "x_e", "y_e", "z_e"].map(String::from));
        header.extend((1..=config.l()).map(|i| format!("delta_{i}_e")));
    }
    let mut w = csv_writer(&out)?;
    w.write_record(&header)?;
    for ((r, frame), cloud) in results.iter().zip(&input).zip(&clouds) {
        let mut row = vec![frame.cloud.frame_index.to_string()];
        row.extend(r.p_hat_new.to_vec().iter().map(f64::to_string));
        row.push(r.cost.to_string());
        row.push(cloud.len().to_string());
        row.push(if omit_timing {
            String::new()
        } else {
            (r.solve_time.as_secs_f64() * 1e3).to_string()
        });
        if let Some(t) = &truth {
            // Labeled runs are scored on their conductor points only.
            let scored = match &frame.labels {
                Some(labels) => frame.cloud.select(&labels.iter().map(|l| *l >= 0).collect::<Vec<_>>()),
                None => frame.cloud.clone(),
            };
            let acc = accuracy(&r.p_hat_new, t, &scored, &config, threshold)?;
            let e = parameter_errors(&r.p_hat_new, t)?;
            row.push(opt(acc.accuracy_pct));
            row.push(e.psi_error.to_string());
            row.push(e.a_error.to_string());
            row.extend(e.translation_error.iter().map(f64::to_string));
            row.extend(e.delta_errors.iter().map(f64::to_string));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    println!("estimated {} frames, results in {}", results.len(), out.display());
    Ok(())
}

fn default_prior_sigma(l: usize) -> Vec<f64> {
    let mut s = vec![2.0, 2.0, 2.0, 0.05, 500.0];
    s.extend(std::iter::repeat_n(0.3, l));
    s
}

fn benchmark_row(row: &StudyRow, omit_timing: bool) -> Vec<String> {
    let dt = |v: f64| if omit_timing { String::new() } else { v.to_string() };
    vec![
        row.n_outliers.to_string(),
        row.n_pts.mean.to_string(),
        row.n_pts.std.to_string(),
        dt(row.dt_ms.mean),
        dt(row.dt_ms.std),
        row.accuracy.mean.to_string(),
        row.accuracy.std.to_string(),
        row.psi_e.mean.to_string(),
        row.psi_e.std.to_string(),
        row.a_e.mean.to_string(),
        row.a_e.std.to_string(),
    ]
}

pub fn benchmark(mut args: BenchmarkArgs, mut file: RunConfig) -> Result<()> {
    args.merge(&mut file);
    let outliers = args.outliers.clone().unwrap_or_else(|| vec![0, 10, 50, 150, 300]);
    let repeats = args.repeats.unwrap_or(20);
    let template = build_scenario(&args.scenario, file.scenario.take())?;
    let mut settings = StudySettings::default_for(&template);
    if let Some(e) = file.estimator.take() {
        settings.estimator = e;
    }
    if let Some(n) = args.n_search {
        settings.estimator.n_search = n;
    }
    if let Some(s) = &args.prior_sigma {
        settings.prior_sigma = s.clone();
    }
    if let Some(w) = args.window {
        settings.window = w;
    }
    if let Some(t) = args.threshold {
        settings.threshold = t;
    }
    settings.seed = args.seed.unwrap_or(0);
    let omit_timing = args.omit_timing.unwrap_or(false);

    let mut study = sensitivity_study(&template, &outliers, repeats, &settings)?;
    let mut table = Vec::new();
    {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(&mut table);
        w.write_record(BENCHMARK_HEADER.split(','))?;
        for row in &study.rows {
            w.write_record(benchmark_row(row, omit_timing))?;
        }
        w.flush()?;
    }
    match &args.out {
        Some(path) => fs::write(path, &table).with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().write_all(&table)?,
    }
    for row in &study.rows {
        if row.n_failed_runs > 0 {
            eprintln!("n_o = {}: {} of {} runs failed", row.n_outliers, row.n_failed_runs, row.n_runs);
        }
    }
    if let Some(path) = &args.runs_json {
        if omit_timing {
            for f in study.runs.iter_mut().flat_map(|r| r.frames.iter_mut()) {
                f.solve_time_ms = f64::NAN;
                f.start_time_ms = f64::NAN;
            }
            for row in study.rows.iter_mut() {
                row.dt_ms.mean = f64::NAN;
                row.dt_ms.std = f64::NAN;
                row.start_ms.mean = f64::NAN;
                row.start_ms.std = f64::NAN;
            }
        }
        let mut text = serde_json::to_string_pretty(&study)?;
        text.push('\n');
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

pub fn filter(mut args: FilterArgs, mut file: RunConfig) -> Result<()> {
    args.merge(&mut file);
    let run = required(args.run.clone(), "run")?;
    let out = required(args.out.clone(), "out")?;
    let method: FilterMethod = required(args.method, "method")?;
    if out == run {
        bail!(UsageError("--out must differ from --run".into()));
    }
    let info = frames::read_run_info(&run)?;
    let specs = filter_specs(&args.flags, file.filters.take(), info.as_ref())?;
    let seed = args.seed.unwrap_or(0);
    let input = frames::read_frames(&run)?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let mut report = csv_writer(&out.join("filter_report.csv"))?;
    report.write_record(["frame_index", "n_in", "n_kept", "n_removed"])?;
    let (mut total_in, mut total_kept) = (0, 0);
    for (t, frame) in input.iter().enumerate() {
        let result = apply_filter(method, &frame.cloud, &specs, &mut filter_rng(seed, t))?;
        if let Some(w) = &result.warning {
            eprintln!("frame {}: {w}", frame.cloud.frame_index);
        }
        let labels: Option<Vec<i64>> = frame
            .labels
            .as_ref()
            .map(|l| l.iter().zip(&result.kept).filter(|(_, k)| **k).map(|(l, _)| *l).collect());
        frames::write_frame(&out, &result.cloud, labels.as_deref())?;
        report.write_record([
            frame.cloud.frame_index.to_string(),
            frame.cloud.len().to_string(),
            result.cloud.len().to_string(),
            result.n_removed().to_string(),
        ])?;
        total_in += frame.cloud.len();
        total_kept += result.cloud.len();
    }
    report.flush()?;
    for name in [frames::TRUTH_FILE, frames::RUN_FILE] {
        let src = run.join(name);
        if src.exists() {
            fs::copy(&src, out.join(name))?;
        }
    }
    println!(
        "{method:?} filter kept {total_kept} of {total_in} points ({} removed) over {} frames",
        total_in - total_kept,
        input.len()
    );
    Ok(())
}

fn params_from_results(path: &PathBuf, frame: Option<usize>, l: usize) -> Result<ParamVector> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let headers = r.headers()?.clone();
    let columns: Vec<usize> = frames::param_header(l)
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h == name)
                .with_context(|| format!("{}: no column {name}", path.display()))
        })
        .collect::<Result<_>>()?;
    let mut chosen = None;
    for rec in r.records() {
        let rec = rec?;
        let index: usize = rec[0].parse().with_context(|| format!("{}: bad frame_index", path.display()))?;
        if frame.is_none_or(|f| f == index) {
            chosen = Some(rec);
        }
    }
    let Some(rec) = chosen else {
        bail!("{}: no matching results row", path.display());
    };
    let values = columns
        .iter()
        .map(|&c| rec[c].parse::<f64>().with_context(|| format!("{}: bad value", path.display())))
        .collect::<Result<Vec<_>>>()?;
    Ok(ParamVector::from_slice(&values)?)
}

pub fn export_curves(mut args: ExportArgs, mut file: RunConfig) -> Result<()> {
    args.merge(&mut file);
    let config = ConductorConfig::builtin(&required(args.config.clone(), "config")?)?;
    let p = match (&args.params, &args.results) {
        (Some(v), _) => ParamVector::from_slice(v)?,
        (None, Some(path)) => params_from_results(path, args.frame, config.l())?,
        (None, None) => bail!(UsageError("give --params or --results".into())),
    };
    if p.deltas.len() != config.l() {
        bail!(UsageError(format!("the parameters need {} values", config.n_params())));
    }
    let out = required(args.out.clone(), "out")?;
    let curves = sample_curves(
        &p,
        &config,
        args.x_min.unwrap_or(-100.0),
        args.x_max.unwrap_or(100.0),
        args.n.unwrap_or(100),
    )?;
    let mut w = csv_writer(&out)?;
    w.write_record(["conductor_k", "x", "y", "z"])?;
    for (k, curve) in curves.iter().enumerate() {
        for pt in curve {
            w.write_record([k.to_string(), pt.x.to_string(), pt.y.to_string(), pt.z.to_string()])?;
        }
    }
    w.flush()?;
    println!("wrote {} curves to {}", curves.len(), out.display());
    Ok(())
}
