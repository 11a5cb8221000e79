//! Independent oracles shared by the integration and acceptance suites.
//!
//! Nothing here calls the analytical gradient or the closed-form
//! association: derivatives come from central differences of the loss value,
//! distances from dense sampling of the forward model.
#![allow(dead_code)]

use catenary_core::geometry::{forward_point, yaw_rotation};
use catenary_core::loss::{total_loss, LossWeights, PointWeights};
use catenary_core::{ConductorConfig, ParamVector, Point3, PointCloud};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Central finite differences of the total loss, step `h` on every coordinate.
pub fn fd_gradient(
    p: &ParamVector,
    cloud: &PointCloud,
    prior: &ParamVector,
    weights: &LossWeights,
    config: &ConductorConfig,
    h: f64,
) -> Vec<f64> {
    fd_gradient_steps(p, cloud, prior, weights, config, &vec![h; p.len()])
}

/// Central finite differences with step `h * max(1, |p_j|)` on coordinate `j`.
pub fn fd_gradient_scaled(
    p: &ParamVector,
    cloud: &PointCloud,
    prior: &ParamVector,
    weights: &LossWeights,
    config: &ConductorConfig,
    h: f64,
) -> Vec<f64> {
    let steps: Vec<f64> = p.to_vec().iter().map(|v| h * v.abs().max(1.0)).collect();
    fd_gradient_steps(p, cloud, prior, weights, config, &steps)
}

fn fd_gradient_steps(
    p: &ParamVector,
    cloud: &PointCloud,
    prior: &ParamVector,
    weights: &LossWeights,
    config: &ConductorConfig,
    steps: &[f64],
) -> Vec<f64> {
    let base = p.to_vec();
    (0..base.len())
        .map(|j| {
            let h = steps[j];
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus[j] += h;
            minus[j] -= h;
            let f = |v: &[f64]| {
                let q = ParamVector::from_slice(v).unwrap();
                total_loss(&q, cloud, prior, weights, config).unwrap().total
            };
            (f(&plus) - f(&minus)) / (2.0 * h)
        })
        .collect()
}

/// Brute-force nearest distance: sample every conductor at `pitch` over
/// `[x_center - half_window, x_center + half_window]` and take the minimum.
pub fn sampled_distance(
    p: &ParamVector,
    config: &ConductorConfig,
    pt: &Point3,
    x_center: f64,
    half_window: f64,
    pitch: f64,
) -> (f64, usize) {
    let n = (2.0 * half_window / pitch).round() as usize;
    let mut best = (f64::INFINITY, 0);
    for k in 0..config.q() {
        for s in 0..=n {
            let x_j = x_center - half_window + s as f64 * pitch;
            let m = forward_point(p, config, k, x_j).unwrap();
            let d = (pt - m).norm();
            if d < best.0 {
                best = (d, k);
            }
        }
    }
    best
}

/// Random parameter vector for a built-in configuration.
pub fn random_params(rng: &mut impl Rng, config: &ConductorConfig, a_range: (f64, f64)) -> ParamVector {
    let deltas = (0..config.l()).map(|_| rng.random_range(2.0..8.0)).collect();
    ParamVector::new(
        rng.random_range(-50.0..50.0),
        rng.random_range(-50.0..50.0),
        rng.random_range(5.0..40.0),
        rng.random_range(-3.0..3.0),
        rng.random_range(a_range.0..a_range.1),
        deltas,
    )
}

pub fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// A cloud of `m` points: most within `near` meters of the model, the rest
/// scattered up to 30 m away.
pub fn mixed_cloud(
    rng: &mut impl Rng,
    p: &ParamVector,
    config: &ConductorConfig,
    m: usize,
    near: f64,
) -> PointCloud {
    let rot = yaw_rotation(p.psi);
    let points = (0..m)
        .map(|i| {
            let k = rng.random_range(0..config.q());
            let x_j = rng.random_range(-100.0..100.0);
            let on = forward_point(p, config, k, x_j).unwrap();
            if i % 5 == 4 {
                let lateral = rng.random_range(8.0..30.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                on + rot * Vector3::new(0.0, lateral, rng.random_range(-10.0..10.0))
            } else {
                on + random_unit(rng) * rng.random_range(0.0..near)
            }
        })
        .collect();
    PointCloud::new(points, 0)
}

/// Random weights with a strictly positive diagonal `Q` scaled per parameter.
pub fn random_weights(rng: &mut impl Rng, n: usize, m: usize) -> LossWeights {
    let mut w = LossWeights::unregularized(n);
    for (j, q) in w.q_diag.iter_mut().enumerate() {
        let scale = if j == 4 { 1e-5 } else { 1.0 };
        *q = rng.random_range(0.0..1.0) * scale;
    }
    w.point_weights = PointWeights::PerPoint((0..m).map(|_| rng.random_range(0.5..2.0)).collect());
    w
}

/// Perturb a parameter vector by a few meters / tenths of a radian.
pub fn nearby(rng: &mut impl Rng, p: &ParamVector) -> ParamVector {
    let mut v = p.to_vec();
    for (j, x) in v.iter_mut().enumerate() {
        *x += match j {
            3 => rng.random_range(-0.05..0.05),
            4 => rng.random_range(-100.0..100.0),
            _ => rng.random_range(-1.0..1.0),
        };
    }
    ParamVector::from_slice(&v).unwrap()
}

/// Smallest gap between the nearest and second-nearest conductor over the
/// cloud; large gaps keep finite differences away from association switches.
pub fn association_margin(p: &ParamVector, config: &ConductorConfig, cloud: &PointCloud) -> f64 {
    cloud
        .points
        .iter()
        .map(|pt| {
            let mut d: Vec<f64> = (0..config.q())
                .map(|k| catenary_core::geometry::error_vector(p, config, k, pt).unwrap().norm())
                .collect();
            d.sort_by(f64::total_cmp);
            if d.len() > 1 {
                d[1] - d[0]
            } else {
                f64::INFINITY
            }
        })
        .fold(f64::INFINITY, f64::min)
}

/// Norm-wise relative error `|a - b|_inf / |b|_inf`.
pub fn normwise_relative_error(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let den = b.iter().map(|y| y.abs()).fold(0.0, f64::max);
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// Max component-wise relative error, with a floor on the denominator.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Two-basin instance on a single conductor: 30 points on the truth at
/// y_o = 0 and 10 decoys on a parallel curve at y_o = 20, with the prior on
/// the decoys. Returns (cloud, truth, decoy).
pub fn trap_instance() -> (PointCloud, ParamVector, ParamVector) {
    let config = ConductorConfig::single();
    let truth = ParamVector::new(0.0, 0.0, 10.0, 0.0, 1000.0, vec![]);
    let decoy = ParamVector { y_o: 20.0, ..truth.clone() };
    let mut points: Vec<Point3> = (0..30)
        .map(|i| forward_point(&truth, &config, 0, -58.0 + 4.0 * i as f64).unwrap())
        .collect();
    points.extend((0..10).map(|i| forward_point(&decoy, &config, 0, -45.0 + 10.0 * i as f64).unwrap()));
    (PointCloud::new(points, 0), truth, decoy)
}

/// Unregularized cost over a grid of (x_o, y_o) with the other parameters
/// held at `p`; returns the grid point of least cost.
pub fn grid_minimum(
    cloud: &PointCloud,
    p: &ParamVector,
    config: &ConductorConfig,
    xs: &[f64],
    ys: &[f64],
) -> (f64, f64, f64) {
    let w = LossWeights::unregularized(config.n_params());
    let mut best = (f64::NAN, f64::NAN, f64::INFINITY);
    for &x in xs {
        for &y in ys {
            let q = ParamVector { x_o: x, y_o: y, ..p.clone() };
            let c = total_loss(&q, cloud, &q, &w, config).unwrap().total;
            if c < best.2 {
                best = (x, y, c);
            }
        }
    }
    best
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}
