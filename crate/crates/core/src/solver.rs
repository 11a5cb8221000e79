//! Bound-constrained multi-start minimization of the loss.
//!
//! Each local solve is a projected Levenberg-Marquardt iteration: the step
//! solves the damped Gauss-Newton system built from the analytical gradient
//! on the variables not held at a bound, and is accepted by an Armijo search
//! along the projection arc. A frame estimate runs one warm start from the
//! prior plus `n_search` starts from Gaussian perturbations of it, and keeps
//! the lowest cost (ties go to the lowest start index).

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{argument, Error, Result};
use crate::geometry::{ConductorConfig, ParamVector, PointCloud, IDX_A};
use crate::loss::{evaluate, total_loss, Derivatives, LossWeights, PointTerm};

/// Hyper-parameters of the estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSettings {
    pub bounds_lower: Vec<f64>,
    pub bounds_upper: Vec<f64>,
    /// Number of perturbed restarts on top of the warm start.
    pub n_search: usize,
    /// Standard deviation of the restart perturbation, per parameter.
    pub sigma: Vec<f64>,
    pub weights: LossWeights,
    pub max_iterations: usize,
    /// Stop when one iteration decreases the cost by less than this.
    pub cost_tol: f64,
    /// Stop when the accepted step's largest component is below this.
    pub step_tol: f64,
    pub seed: u64,
    /// Run the starts of a frame on the rayon pool.
    #[serde(default)]
    pub parallel_starts: bool,
}

impl EstimatorSettings {
    /// Defaults around an initial prior: translations within 50 m of it, yaw
    /// within 0.5 rad, `a` in `[100, 5000]` m and offsets in `[0.1, 15]` m.
    pub fn default_for(config: &ConductorConfig, prior: &ParamVector) -> Self {
        let l = config.l();
        let mut lower = vec![prior.x_o - 50.0, prior.y_o - 50.0, prior.z_o - 50.0, prior.psi - 0.5, 100.0];
        let mut upper = vec![prior.x_o + 50.0, prior.y_o + 50.0, prior.z_o + 50.0, prior.psi + 0.5, 5000.0];
        lower.extend(std::iter::repeat_n(0.1, l));
        upper.extend(std::iter::repeat_n(15.0, l));
        let mut sigma = vec![5.0, 5.0, 2.0, 0.05, 500.0];
        sigma.extend(std::iter::repeat_n(0.5, l));
        Self {
            bounds_lower: lower,
            bounds_upper: upper,
            n_search: 2,
            sigma,
            weights: LossWeights::default_for(l),
            max_iterations: 200,
            cost_tol: 1e-9,
            step_tol: 1e-8,
            seed: 0,
            parallel_starts: false,
        }
    }

    pub fn validate(&self, config: &ConductorConfig) -> Result<()> {
        let n = config.n_params();
        for (name, v) in [
            ("bounds_lower", &self.bounds_lower),
            ("bounds_upper", &self.bounds_upper),
            ("sigma", &self.sigma),
            ("Q", &self.weights.q_diag),
        ] {
            if v.len() != n {
                return Err(argument(format!("{name} has {} entries, expected {n}", v.len())));
            }
        }
        if self.bounds_lower.iter().zip(&self.bounds_upper).any(|(l, u)| !(l <= u)) {
            return Err(argument("lower bounds must not exceed upper bounds"));
        }
        if !(self.bounds_lower[IDX_A] > 0.0) {
            return Err(argument("the lower bound on a must be strictly positive"));
        }
        if self.sigma.iter().any(|s| !(*s >= 0.0)) {
            return Err(argument("perturbation sigma must be non-negative"));
        }
        Ok(())
    }

    /// Clamp a parameter vector into the bounds.
    pub fn project(&self, values: &mut [f64]) {
        for ((v, l), u) in values.iter_mut().zip(&self.bounds_lower).zip(&self.bounds_upper) {
            *v = v.clamp(*l, *u);
        }
    }

    pub fn contains(&self, values: &[f64]) -> bool {
        values
            .iter()
            .zip(&self.bounds_lower)
            .zip(&self.bounds_upper)
            .all(|((v, l), u)| l <= v && v <= u)
    }
}

/// Outcome of one local solve.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSolution {
    pub params: ParamVector,
    pub cost: f64,
    pub iterations: usize,
    pub elapsed: Duration,
}

#[derive(Debug, Clone)]
pub struct EstimationResult {
    pub p_hat_new: ParamVector,
    pub cost: f64,
    pub per_point: Vec<PointTerm>,
    pub restarts_run: usize,
    pub best_restart_index: usize,
    /// Cost reached by each start; `None` where the start failed.
    pub start_costs: Vec<Option<f64>>,
    pub start_times: Vec<Duration>,
    pub solve_time: Duration,
}

impl EstimationResult {
    /// Mean wall-clock time of one start.
    pub fn mean_start_time(&self) -> Duration {
        if self.start_times.is_empty() {
            return Duration::ZERO;
        }
        self.start_times.iter().sum::<Duration>() / self.start_times.len() as u32
    }
}

fn cost_at(
    values: &[f64],
    cloud: &PointCloud,
    prior: &ParamVector,
    weights: &LossWeights,
    config: &ConductorConfig,
) -> f64 {
    ParamVector::from_slice(values)
        .and_then(|p| evaluate(&p, cloud, prior, weights, config, Derivatives::None))
        .map(|e| e.cost)
        .unwrap_or(f64::INFINITY)
}

/// Minimize the loss from `p0` inside the bounds.
pub fn solve_single(
    cloud: &PointCloud,
    prior: &ParamVector,
    p0: &ParamVector,
    settings: &EstimatorSettings,
    config: &ConductorConfig,
) -> Result<LocalSolution> {
    let started = Instant::now();
    settings.validate(config)?;
    let weights = &settings.weights;
    let n = config.n_params();
    let mut x = p0.to_vec();
    if x.len() != n {
        return Err(argument("start point does not match the conductor configuration"));
    }
    settings.project(&mut x);

    let non_finite = || Error::NonFiniteStart { start: x.clone() };
    let start = ParamVector::from_slice(&x)?;
    let mut eval = match evaluate(&start, cloud, prior, weights, config, Derivatives::GaussNewton) {
        Ok(e) if e.cost.is_finite() => e,
        _ => return Err(non_finite()),
    };

    let mut damping = 1e-3;
    let mut iterations = 0;
    while iterations < settings.max_iterations {
        iterations += 1;
        let g = eval.gradient.as_ref().expect("gradient");
        let h = eval.curvature.as_ref().expect("curvature");

        // Variables at a bound whose descent direction leaves the box stay fixed.
        let free: Vec<usize> = (0..n)
            .filter(|&j| {
                let at_lower = x[j] <= settings.bounds_lower[j] && g[j] > 0.0;
                let at_upper = x[j] >= settings.bounds_upper[j] && g[j] < 0.0;
                !(at_lower || at_upper)
            })
            .collect();
        if free.is_empty() {
            break;
        }
        let Some(direction) = damped_step(g, h, &free, damping, n) else {
            damping *= 10.0;
            if damping > 1e12 {
                break;
            }
            continue;
        };

        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha > 1e-10 {
            let mut trial: Vec<f64> = x.iter().zip(direction.iter()).map(|(x, d)| x + alpha * d).collect();
            settings.project(&mut trial);
            let slope: f64 = trial.iter().zip(&x).zip(g.iter()).map(|((t, x), g)| (t - x) * g).sum();
            if slope < 0.0 {
                let f = cost_at(&trial, cloud, prior, weights, config);
                if f <= eval.cost + 1e-4 * slope {
                    accepted = Some((trial, f));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((trial, f_new)) = accepted else {
            // No descent along this direction: tighten toward a gradient step or stop.
            damping *= 10.0;
            if damping > 1e12 {
                break;
            }
            continue;
        };

        let decrease = eval.cost - f_new;
        let step = trial.iter().zip(&x).map(|(t, x)| (t - x).abs()).fold(0.0, f64::max);
        x = trial;
        let p = ParamVector::from_slice(&x)?;
        eval = evaluate(&p, cloud, prior, weights, config, Derivatives::GaussNewton)?;
        damping = if alpha == 1.0 { (damping / 3.0).max(1e-12) } else { damping * 2.0 };
        if decrease < settings.cost_tol || step < settings.step_tol {
            break;
        }
    }

    Ok(LocalSolution {
        params: ParamVector::from_slice(&x)?,
        cost: eval.cost,
        iterations,
        elapsed: started.elapsed(),
    })
}

/// Solve `(H_ff + damping D_ff) d_f = -g_f` over the free variables.
fn damped_step(
    g: &DVector<f64>,
    h: &DMatrix<f64>,
    free: &[usize],
    damping: f64,
    n: usize,
) -> Option<DVector<f64>> {
    let m = free.len();
    let max_diag = free.iter().map(|&j| h[(j, j)]).fold(0.0, f64::max).max(1e-300);
    let mut a = DMatrix::zeros(m, m);
    let mut b = DVector::zeros(m);
    for (r, &i) in free.iter().enumerate() {
        b[r] = -g[i];
        for (c, &j) in free.iter().enumerate() {
            a[(r, c)] = h[(i, j)];
        }
        let scale = h[(i, i)].max(1e-12 * max_diag);
        a[(r, r)] += damping * scale + 1e-14 * max_diag;
    }
    let d_free = a.cholesky()?.solve(&b);
    if d_free.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut d = DVector::zeros(n);
    for (r, &i) in free.iter().enumerate() {
        d[i] = d_free[r];
    }
    Some(d)
}

/// Start points for one frame: the prior, then `n_search` perturbations.
fn start_points(prior: &ParamVector, settings: &EstimatorSettings) -> Vec<ParamVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let base = prior.to_vec();
    let mut starts = vec![prior.clone()];
    for _ in 0..settings.n_search {
        let mut v: Vec<f64> = base
            .iter()
            .zip(&settings.sigma)
            .map(|(x, &s)| {
                let eta = if s > 0.0 {
                    Normal::new(0.0, s).expect("finite sigma").sample(&mut rng)
                } else {
                    0.0
                };
                x + eta
            })
            .collect();
        settings.project(&mut v);
        starts.push(ParamVector::from_slice(&v).expect("length checked"));
    }
    starts
}

/// Estimate the array parameters for one frame.
pub fn estimate_frame(
    cloud: &PointCloud,
    prior: &ParamVector,
    settings: &EstimatorSettings,
    config: &ConductorConfig,
) -> Result<EstimationResult> {
    let started = Instant::now();
    settings.validate(config)?;
    if prior.deltas.len() != config.l() {
        return Err(argument("prior does not match the conductor configuration"));
    }
    if !settings.contains(&prior.to_vec()) {
        return Err(argument(format!("prior {:?} lies outside the bounds", prior.to_vec())));
    }

    let starts = start_points(prior, settings);
    let run = |p0: &ParamVector| solve_single(cloud, prior, p0, settings, config);
    let outcomes: Vec<Result<LocalSolution>> = if settings.parallel_starts {
        starts.par_iter().map(run).collect()
    } else {
        starts.iter().map(run).collect()
    };

    let mut best: Option<(usize, &LocalSolution)> = None;
    let mut failures = Vec::new();
    for (i, outcome) in outcomes.iter().enumerate() {
        match outcome {
            Ok(sol) if sol.cost.is_finite() => {
                if best.is_none_or(|(_, b)| sol.cost < b.cost) {
                    best = Some((i, sol));
                }
            }
            Ok(sol) => failures.push(format!("start {i}: non-finite cost {}", sol.cost)),
            Err(e) => failures.push(format!("start {i}: {e}")),
        }
    }
    let Some((best_index, best_solution)) = best else {
        return Err(Error::AllStartsFailed { failures });
    };

    let report = total_loss(&best_solution.params, cloud, prior, &settings.weights, config)?;
    Ok(EstimationResult {
        p_hat_new: best_solution.params.clone(),
        cost: best_solution.cost,
        per_point: report.per_point,
        restarts_run: starts.len(),
        best_restart_index: best_index,
        start_costs: outcomes
            .iter()
            .map(|o| o.as_ref().ok().map(|s| s.cost))
            .collect(),
        start_times: outcomes
            .iter()
            .map(|o| o.as_ref().map(|s| s.elapsed).unwrap_or_default())
            .collect(),
        solve_time: started.elapsed(),
    })
}

/// Seed used for frame `t` of a sequence.
pub fn frame_seed(seed: u64, t: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed.wrapping_add((t as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Estimate a sequence of frames, each warm-started from the previous estimate.
pub fn track_sequence(
    frames: &[PointCloud],
    initial_prior: &ParamVector,
    settings: &EstimatorSettings,
    config: &ConductorConfig,
) -> Result<Vec<EstimationResult>> {
    if frames.is_empty() {
        return Err(argument("no frames to track"));
    }
    let mut prior = initial_prior.clone();
    let mut results = Vec::with_capacity(frames.len());
    for (t, cloud) in frames.iter().enumerate() {
        let frame_settings = EstimatorSettings {
            seed: frame_seed(settings.seed, t),
            ..settings.clone()
        };
        let result = estimate_frame(cloud, &prior, &frame_settings, config).map_err(|e| Error::Frame {
            frame: t,
            source: Box::new(e),
        })?;
        prior = result.p_hat_new.clone();
        results.push(result);
    }
    Ok(results)
}
