//! Synthetic LiDAR frames with ground truth.
//!
//! A frame holds, per conductor, `Uniform{0..=pts_per_line_max}` noisy
//! samples of the true curve, followed by `n_outliers` points drawn uniformly
//! in an axis-aligned box and, optionally, ground-plane and pylon clutter.
//! Under global observation the abscissas cover the whole span; under partial
//! observation they cover a thin slice across the line.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{argument, Result};
use crate::geometry::{catenary_z, yaw_rotation, ArrayModel, ConductorConfig, ParamVector, Point3, PointCloud};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObservationMode {
    #[default]
    Global,
    Partial,
}

impl std::str::FromStr for ObservationMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(Self::Global),
            "partial" => Ok(Self::Partial),
            other => Err(argument(format!("unknown observation mode '{other}' (global|partial)"))),
        }
    }
}

/// Axis-aligned box in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierBox {
    pub center: [f64; 3],
    pub extent: [f64; 3],
}

impl OutlierBox {
    pub fn contains(&self, pt: &Point3) -> bool {
        (0..3).all(|i| (pt[i] - self.center[i]).abs() <= 0.5 * self.extent[i] + 1e-9)
    }

    fn sample(&self, rng: &mut impl Rng) -> Point3 {
        let mut pt = Point3::origin();
        for i in 0..3 {
            pt[i] = self.center[i] + self.extent[i] * (rng.random::<f64>() - 0.5);
        }
        pt
    }
}

/// Flat, slightly noisy ground under the observed part of the line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundClutter {
    pub n_points: usize,
    /// Half extent along the line, meters.
    pub half_length: f64,
    /// Half extent across the line, meters.
    pub half_width: f64,
    pub z: f64,
    pub noise_sigma: f64,
}

/// A dense ball of points standing in for a pylon or tree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PylonClutter {
    pub n_points: usize,
    pub center: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Clutter {
    pub ground: Option<GroundClutter>,
    pub pylon: Option<PylonClutter>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub config: ConductorConfig,
    pub truth: ParamVector,
    pub mode: ObservationMode,
    /// Extent of the abscissas under global observation, centered on the vertex.
    pub span: f64,
    pub slice_center: f64,
    pub slice_width: f64,
    pub pts_per_line_max: usize,
    pub noise_sigma: f64,
    pub n_outliers: usize,
    pub outlier_cluster: OutlierBox,
    #[serde(default)]
    pub clutter: Clutter,
    pub n_frames: usize,
    pub seed: u64,
}

/// Default truth for the double-circuit layout.
pub fn default_truth() -> ParamVector {
    ParamVector::new(-10.0, 5.0, 20.0, 0.3, 1000.0, vec![5.0, 4.0])
}

/// Default truth for any layout: the double-circuit pose with offsets
/// `[5, 4, 3]` truncated to the layout's offset count.
pub fn default_truth_for(config: &ConductorConfig) -> ParamVector {
    let mut p = default_truth();
    p.deltas = [5.0, 4.0, 3.0].iter().copied().cycle().take(config.l()).collect();
    p
}

fn local_to_world(p: &ParamVector, local: Vector3<f64>) -> Point3 {
    Point3::from(yaw_rotation(p.psi) * local + p.origin())
}

impl Scenario {
    /// Scenario with default sampling, noise and outlier box around `truth`.
    pub fn new(config: ConductorConfig, truth: ParamVector, mode: ObservationMode) -> Result<Self> {
        let mut s = Self {
            config,
            truth,
            mode,
            span: 200.0,
            slice_center: 0.0,
            slice_width: 5.0,
            pts_per_line_max: 10,
            noise_sigma: 0.1,
            n_outliers: 0,
            outlier_cluster: OutlierBox {
                center: [0.0; 3],
                extent: [10.0; 3],
            },
            clutter: Clutter::default(),
            n_frames: 100,
            seed: 0,
        };
        s.outlier_cluster.center = s.local_anchor(15.0)?.coords.into();
        s.validate()?;
        Ok(s)
    }

    /// Double-circuit layout at [`default_truth`].
    pub fn default_for(mode: ObservationMode) -> Self {
        Self::new(ConductorConfig::double_circuit(), default_truth(), mode).expect("valid defaults")
    }

    pub fn validate(&self) -> Result<()> {
        self.truth.check(&self.config)?;
        if !(self.span > 0.0) {
            return Err(argument("span must be positive"));
        }
        if !(self.slice_width > 0.0) {
            return Err(argument("slice width must be positive"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(argument("noise sigma must be non-negative"));
        }
        if self.outlier_cluster.extent.iter().any(|e| !(*e >= 0.0)) {
            return Err(argument("outlier box extent must be non-negative"));
        }
        let (lo, hi) = self.abscissa_range();
        catenary_z(lo, self.truth.a)?;
        catenary_z(hi, self.truth.a)?;
        Ok(())
    }

    /// Range of the sampled abscissas.
    pub fn abscissa_range(&self) -> (f64, f64) {
        match self.mode {
            ObservationMode::Global => (-0.5 * self.span, 0.5 * self.span),
            ObservationMode::Partial => (
                self.slice_center - 0.5 * self.slice_width,
                self.slice_center + 0.5 * self.slice_width,
            ),
        }
    }

    fn observed_center(&self) -> f64 {
        match self.mode {
            ObservationMode::Global => 0.0,
            ObservationMode::Partial => self.slice_center,
        }
    }

    /// World point `lateral` meters beside the array's mean conductor, at its
    /// mean height, above the middle of the observed abscissas.
    pub fn local_anchor(&self, lateral: f64) -> Result<Point3> {
        let m = self.config.offset_matrix(&self.truth.deltas)?;
        let q = self.config.q() as f64;
        let mean_y = m.row(1).sum() / q;
        let mean_z = m.row(2).sum() / q;
        let x = self.observed_center();
        let z = catenary_z(x, self.truth.a)? + mean_z;
        Ok(local_to_world(&self.truth, Vector3::new(x, mean_y + lateral, z)))
    }

    /// Two points on the array's center line, `half_length` meters either side
    /// of the observed abscissas. Used as corridor anchors.
    pub fn corridor_anchors(&self, half_length: f64) -> Result<(Point3, Point3)> {
        let m = self.config.offset_matrix(&self.truth.deltas)?;
        let q = self.config.q() as f64;
        let mean_y = m.row(1).sum() / q;
        let mean_z = m.row(2).sum() / q;
        let x = self.observed_center();
        let end = |x: f64| -> Result<Point3> {
            let z = catenary_z(x, self.truth.a)? + mean_z;
            Ok(local_to_world(&self.truth, Vector3::new(x, mean_y, z)))
        };
        Ok((end(x - half_length)?, end(x + half_length)?))
    }

    /// Add a ground plane at z = 0 and a pylon ball 20 m beside the array.
    pub fn with_default_clutter(mut self) -> Result<Self> {
        let half_length = match self.mode {
            ObservationMode::Global => 0.5 * self.span + 10.0,
            ObservationMode::Partial => 30.0,
        };
        self.clutter = Clutter {
            ground: Some(GroundClutter {
                n_points: 2000,
                half_length,
                half_width: 40.0,
                z: 0.0,
                noise_sigma: 0.05,
            }),
            pylon: Some(PylonClutter {
                n_points: 500,
                center: self.local_anchor(20.0)?.coords.into(),
                radius: 6.0,
            }),
        };
        Ok(self)
    }
}

/// Provenance of a simulated point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Conductor(usize),
    Outlier,
    Ground,
    Structure,
}

impl Label {
    /// File code: the conductor index, or `-1` for anything else.
    pub fn code(self) -> i64 {
        match self {
            Label::Conductor(k) => k as i64,
            _ => -1,
        }
    }

    pub fn from_code(code: i64) -> Self {
        if code >= 0 {
            Label::Conductor(code as usize)
        } else {
            Label::Outlier
        }
    }

    pub fn is_conductor(self) -> bool {
        matches!(self, Label::Conductor(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFrame {
    pub cloud: PointCloud,
    pub labels: Vec<Label>,
    pub truth: ParamVector,
}

impl LabeledFrame {
    /// Cloud of the conductor-labeled points only.
    pub fn conductor_points(&self) -> PointCloud {
        let keep: Vec<bool> = self.labels.iter().map(|l| l.is_conductor()).collect();
        self.cloud.select(&keep)
    }
}

fn gaussian3(rng: &mut impl Rng, sigma: f64) -> Vector3<f64> {
    Vector3::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    ) * sigma
}

/// Draw one frame.
pub fn generate_frame(scenario: &Scenario, frame_index: usize, rng: &mut impl Rng) -> Result<LabeledFrame> {
    scenario.validate()?;
    let model = ArrayModel::new(&scenario.truth, &scenario.config)?;
    let (lo, hi) = scenario.abscissa_range();
    let mut points = Vec::new();
    let mut labels = Vec::new();

    for k in 0..scenario.config.q() {
        let count = rng.random_range(0..=scenario.pts_per_line_max);
        for _ in 0..count {
            let x_j = lo + (hi - lo) * rng.random::<f64>();
            let on = model.forward_point(k, x_j)?;
            points.push(on + gaussian3(rng, scenario.noise_sigma));
            labels.push(Label::Conductor(k));
        }
    }
    for _ in 0..scenario.n_outliers {
        points.push(scenario.outlier_cluster.sample(rng));
        labels.push(Label::Outlier);
    }

    if let Some(g) = &scenario.clutter.ground {
        let center = scenario.observed_center();
        let rot = yaw_rotation(scenario.truth.psi);
        for _ in 0..g.n_points {
            let local = Vector3::new(
                center + g.half_length * (2.0 * rng.random::<f64>() - 1.0),
                g.half_width * (2.0 * rng.random::<f64>() - 1.0),
                0.0,
            );
            let mut pt = rot * local + scenario.truth.origin();
            pt.z = g.z + g.noise_sigma * rng.sample::<f64, _>(StandardNormal);
            points.push(Point3::from(pt));
            labels.push(Label::Ground);
        }
    }
    if let Some(pylon) = &scenario.clutter.pylon {
        let center = Vector3::from(pylon.center);
        for _ in 0..pylon.n_points {
            let offset = loop {
                let v = Vector3::new(
                    2.0 * rng.random::<f64>() - 1.0,
                    2.0 * rng.random::<f64>() - 1.0,
                    2.0 * rng.random::<f64>() - 1.0,
                );
                if v.norm_squared() <= 1.0 {
                    break v;
                }
            };
            points.push(Point3::from(center + offset * pylon.radius));
            labels.push(Label::Structure);
        }
    }

    Ok(LabeledFrame {
        cloud: PointCloud::new(points, frame_index),
        labels,
        truth: scenario.truth.clone(),
    })
}

/// Draw `n_frames` frames from one stream seeded by `scenario.seed`.
pub fn generate_sequence(scenario: &Scenario) -> Result<Vec<LabeledFrame>> {
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    (0..scenario.n_frames)
        .map(|t| generate_frame(scenario, t, &mut rng))
        .collect()
}

/// `truth` plus Gaussian noise of per-parameter deviation `sigma`, clamped
/// into `[lower, upper]`.
pub fn random_prior(
    truth: &ParamVector,
    sigma: &[f64],
    lower: &[f64],
    upper: &[f64],
    rng: &mut impl Rng,
) -> Result<ParamVector> {
    let n = truth.len();
    if sigma.len() != n || lower.len() != n || upper.len() != n {
        return Err(argument(format!("prior perturbation needs {n} entries per vector")));
    }
    if sigma.iter().any(|s| !(*s >= 0.0)) {
        return Err(argument("perturbation sigma must be non-negative"));
    }
    let v: Vec<f64> = truth
        .to_vec()
        .iter()
        .enumerate()
        .map(|(j, x)| {
            let eta: f64 = rng.sample(StandardNormal);
            (x + sigma[j] * eta).clamp(lower[j], upper[j])
        })
        .collect();
    ParamVector::from_slice(&v)
}
