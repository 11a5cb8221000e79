//! Pre-filters that extract conductor points from cluttered clouds.
//!
//! Every filter is a subset operator: it returns the kept points in their
//! original order together with the keep mask, so callers can carry labels
//! or weights along.

use std::collections::{HashMap, VecDeque};
use std::str::FromStr;

use nalgebra::{Matrix3, SymmetricEigen, Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{argument, Error, Result};
use crate::geometry::{Point3, PointCloud};

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    pub cloud: PointCloud,
    /// One entry per input point.
    pub kept: Vec<bool>,
    pub warning: Option<String>,
}

impl FilterOutput {
    fn from_mask(input: &PointCloud, kept: Vec<bool>, warning: Option<String>) -> Self {
        Self {
            cloud: input.select(&kept),
            kept,
            warning,
        }
    }

    fn unchanged(input: &PointCloud, warning: Option<String>) -> Self {
        Self::from_mask(input, vec![true; input.len()], warning)
    }

    pub fn n_removed(&self) -> usize {
        self.kept.iter().filter(|k| !**k).count()
    }
}

/// Rectangle between two pylons, plus an elevation-histogram ground cut.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorridorSpec {
    pub anchor_a: [f64; 3],
    pub anchor_b: [f64; 3],
    pub half_width: f64,
    pub bin_size: f64,
    /// Share of the corridor width a horizontal layer must span to count as ground.
    pub ground_fraction: f64,
}

impl CorridorSpec {
    pub fn new(anchor_a: Point3, anchor_b: Point3, half_width: f64) -> Self {
        Self {
            anchor_a: anchor_a.coords.into(),
            anchor_b: anchor_b.coords.into(),
            half_width,
            bin_size: 1.0,
            ground_fraction: 0.75,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let a = Vector2::new(self.anchor_a[0], self.anchor_a[1]);
        let b = Vector2::new(self.anchor_b[0], self.anchor_b[1]);
        if !((b - a).norm() > 1e-9) {
            return Err(argument("corridor anchors must be horizontally distinct"));
        }
        if !(self.half_width > 0.0) {
            return Err(argument("corridor half-width must be positive"));
        }
        if !(self.bin_size > 0.0) {
            return Err(argument("elevation bin size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.ground_fraction) {
            return Err(argument("ground fraction must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Keep the points above the ground inside the corridor rectangle.
///
/// Elevation bins have absolute edges at multiples of `bin_size`. A bin is
/// ground when its points occupy at least `ground_fraction` of the 1 m wide
/// lateral strips across the corridor. Points below the highest ground bin
/// plus two bins are dropped. The rule depends only on each bin's own points,
/// so the filter is idempotent.
pub fn corridor_filter(cloud: &PointCloud, spec: &CorridorSpec) -> Result<FilterOutput> {
    spec.validate()?;
    let a = Vector2::new(spec.anchor_a[0], spec.anchor_a[1]);
    let b = Vector2::new(spec.anchor_b[0], spec.anchor_b[1]);
    let length = (b - a).norm();
    let u = (b - a) / length;

    let lateral: Vec<Option<f64>> = cloud
        .points
        .iter()
        .map(|p| {
            let r = Vector2::new(p.x, p.y) - a;
            let t = r.dot(&u);
            let s = u.x * r.y - u.y * r.x;
            ((0.0..=length).contains(&t) && s.abs() <= spec.half_width).then_some(s)
        })
        .collect();

    let n_strips = (2.0 * spec.half_width).ceil().max(1.0) as usize;
    let mut strips: HashMap<i64, Vec<bool>> = HashMap::new();
    for (p, s) in cloud.points.iter().zip(&lateral) {
        if let Some(s) = s {
            let bin = (p.z / spec.bin_size).floor() as i64;
            let strip = (((s + spec.half_width).floor()) as usize).min(n_strips - 1);
            strips.entry(bin).or_insert_with(|| vec![false; n_strips])[strip] = true;
        }
    }
    let ground_top = strips
        .iter()
        .filter(|(_, occupied)| {
            let covered = occupied.iter().filter(|o| **o).count();
            covered as f64 >= spec.ground_fraction * n_strips as f64
        })
        .map(|(bin, _)| *bin)
        .max();
    let z_cut = ground_top.map(|b| (b + 3) as f64 * spec.bin_size);

    let kept = cloud
        .points
        .iter()
        .zip(&lateral)
        .map(|(p, s)| s.is_some() && z_cut.is_none_or(|z| p.z >= z))
        .collect();
    Ok(FilterOutput::from_mask(cloud, kept, None))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacSpec {
    pub iterations: usize,
    pub threshold: f64,
    pub min_inlier_fraction: f64,
}

impl Default for RansacSpec {
    fn default() -> Self {
        Self {
            iterations: 200,
            threshold: 0.3,
            min_inlier_fraction: 0.2,
        }
    }
}

impl RansacSpec {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(argument("RANSAC needs at least one iteration"));
        }
        if !(self.threshold > 0.0) {
            return Err(argument("RANSAC threshold must be positive"));
        }
        if !(0.0..=1.0).contains(&self.min_inlier_fraction) {
            return Err(argument("RANSAC inlier fraction must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Best plane found by RANSAC: unit normal `n` and offset `c` with `n . p = c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub offset: f64,
    pub n_inliers: usize,
}

/// Fit the plane with the most inliers over `spec.iterations` random triples.
pub fn ransac_plane(points: &[Point3], spec: &RansacSpec, rng: &mut impl Rng) -> Option<Plane> {
    let n = points.len();
    if n < 3 {
        return None;
    }
    let mut best: Option<Plane> = None;
    for _ in 0..spec.iterations {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        let k = rng.random_range(0..n);
        if i == j || j == k || i == k {
            continue;
        }
        let normal = (points[j] - points[i]).cross(&(points[k] - points[i]));
        let norm = normal.norm();
        if norm < 1e-12 {
            continue;
        }
        let normal = normal / norm;
        let offset = normal.dot(&points[i].coords);
        let n_inliers = points
            .iter()
            .filter(|p| (normal.dot(&p.coords) - offset).abs() <= spec.threshold)
            .count();
        if best.is_none_or(|b| n_inliers > b.n_inliers) {
            best = Some(Plane {
                normal,
                offset,
                n_inliers,
            });
        }
    }
    best
}

/// Remove the dominant plane if it holds at least `min_inlier_fraction` of the points.
pub fn ground_filter_ransac(cloud: &PointCloud, spec: &RansacSpec, rng: &mut impl Rng) -> Result<FilterOutput> {
    spec.validate()?;
    if cloud.len() < 3 {
        return Ok(FilterOutput::unchanged(
            cloud,
            Some(format!("{} points are too few to fit a plane", cloud.len())),
        ));
    }
    let Some(plane) = ransac_plane(&cloud.points, spec, rng) else {
        return Ok(FilterOutput::unchanged(cloud, Some("no non-degenerate plane sample".into())));
    };
    if (plane.n_inliers as f64) < spec.min_inlier_fraction * cloud.len() as f64 {
        return Ok(FilterOutput::unchanged(cloud, None));
    }
    let kept = cloud
        .points
        .iter()
        .map(|p| (plane.normal.dot(&p.coords) - plane.offset).abs() > spec.threshold)
        .collect();
    Ok(FilterOutput::from_mask(cloud, kept, None))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub epsilon: f64,
    pub min_points: usize,
    /// Minimum ratio of the two largest covariance eigenvalues.
    pub linearity_ratio: f64,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        Self {
            epsilon: 1.5,
            min_points: 4,
            linearity_ratio: 10.0,
        }
    }
}

impl ClusterSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(argument("DBSCAN epsilon must be positive"));
        }
        if self.min_points == 0 {
            return Err(argument("DBSCAN min_points must be at least 1"));
        }
        if !(self.linearity_ratio >= 1.0) {
            return Err(argument("linearity ratio threshold must be at least 1"));
        }
        Ok(())
    }
}

struct Grid<'a> {
    points: &'a [Point3],
    eps: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl<'a> Grid<'a> {
    fn new(points: &'a [Point3], eps: f64) -> Self {
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, eps)).or_default().push(i);
        }
        Self { points, eps, cells }
    }

    fn key(p: &Point3, eps: f64) -> [i64; 3] {
        [
            (p.x / eps).floor() as i64,
            (p.y / eps).floor() as i64,
            (p.z / eps).floor() as i64,
        ]
    }

    /// Indices within `eps` of point `i`, itself included, in ascending order.
    fn neighbors(&self, i: usize) -> Vec<usize> {
        let p = &self.points[i];
        let [cx, cy, cz] = Self::key(p, self.eps);
        let eps2 = self.eps * self.eps;
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(cell) = self.cells.get(&[cx + dx, cy + dy, cz + dz]) {
                        out.extend(cell.iter().copied().filter(|&j| (self.points[j] - p).norm_squared() <= eps2));
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// DBSCAN cluster label of every point (`None` for noise). A point is core
/// when at least `min_points` points, itself included, lie within `eps`.
/// Clusters are numbered in order of their first core point.
pub fn dbscan(points: &[Point3], eps: f64, min_points: usize) -> Vec<Option<usize>> {
    let grid = Grid::new(points, eps);
    let mut labels = vec![None; points.len()];
    let mut visited = vec![false; points.len()];
    let mut next = 0;
    for i in 0..points.len() {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        let seeds = grid.neighbors(i);
        if seeds.len() < min_points {
            continue;
        }
        let cluster = next;
        next += 1;
        labels[i] = Some(cluster);
        let mut queue: VecDeque<usize> = seeds.into();
        while let Some(j) = queue.pop_front() {
            if labels[j].is_none() {
                labels[j] = Some(cluster);
            }
            if visited[j] {
                continue;
            }
            visited[j] = true;
            let nb = grid.neighbors(j);
            if nb.len() >= min_points {
                queue.extend(nb);
            }
        }
    }
    labels
}

/// Covariance eigenvalues of a point set, largest first.
pub fn covariance_eigenvalues(points: &[Point3]) -> [f64; 3] {
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / n;
    let cov = points.iter().fold(Matrix3::zeros(), |acc, p| {
        let d = p.coords - mean;
        acc + d * d.transpose()
    }) / n;
    let mut ev: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    [ev[0], ev[1], ev[2]]
}

fn is_line_like(points: &[Point3], ratio: f64) -> bool {
    let [l1, l2, _] = covariance_eigenvalues(points);
    l1 > 0.0 && l1 >= ratio * l2.max(0.0)
}

/// Ground removal, DBSCAN, then keep only clusters shaped like a line.
pub fn clustering_filter(
    cloud: &PointCloud,
    ransac: &RansacSpec,
    spec: &ClusterSpec,
    rng: &mut impl Rng,
) -> Result<FilterOutput> {
    spec.validate()?;
    let ground = ground_filter_ransac(cloud, ransac, rng)?;
    let remaining: Vec<usize> = (0..cloud.len()).filter(|&i| ground.kept[i]).collect();
    let labels = dbscan(&ground.cloud.points, spec.epsilon, spec.min_points);
    let n_clusters = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<Point3>> = vec![Vec::new(); n_clusters];
    for (p, l) in ground.cloud.points.iter().zip(&labels) {
        if let Some(c) = l {
            members[*c].push(*p);
        }
    }
    let keep_cluster: Vec<bool> = members.iter().map(|m| is_line_like(m, spec.linearity_ratio)).collect();
    let mut kept = vec![false; cloud.len()];
    for (&i, l) in remaining.iter().zip(&labels) {
        kept[i] = l.is_some_and(|c| keep_cluster[c]);
    }
    Ok(FilterOutput::from_mask(cloud, kept, ground.warning))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterMethod {
    Corridor,
    Ground,
    Cluster,
}

impl FromStr for FilterMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corridor" => Ok(Self::Corridor),
            "ground" => Ok(Self::Ground),
            "cluster" => Ok(Self::Cluster),
            other => Err(argument(format!("unknown filter method {other:?}"))),
        }
    }
}

/// Parameters for every filter; the corridor needs anchors and has no default.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FilterSpecs {
    #[serde(default)]
    pub corridor: Option<CorridorSpec>,
    #[serde(default)]
    pub ransac: RansacSpec,
    #[serde(default)]
    pub cluster: ClusterSpec,
}

pub fn apply_filter(
    method: FilterMethod,
    cloud: &PointCloud,
    specs: &FilterSpecs,
    rng: &mut impl Rng,
) -> Result<FilterOutput> {
    match method {
        FilterMethod::Corridor => {
            let spec = specs
                .corridor
                .as_ref()
                .ok_or_else(|| argument("the corridor filter needs two anchors"))?;
            corridor_filter(cloud, spec)
        }
        FilterMethod::Ground => ground_filter_ransac(cloud, &specs.ransac, rng),
        FilterMethod::Cluster => clustering_filter(cloud, &specs.ransac, &specs.cluster, rng),
    }
}
