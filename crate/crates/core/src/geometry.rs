//! Catenary-array forward model and point-to-model association.
//!
//! An array of `q` conductors shares one yaw `psi` and one sag parameter `a`.
//! Each conductor hangs as a catenary `z = a (cosh(x/a) - 1)` in a local frame
//! whose origin is its vertex; the vertices are offset from the array frame
//! origin by the columns of the offset matrix `M(deltas)`. Note that the array
//! origin `(x_o, y_o, z_o)` may end up somewhere no conductor physically
//! passes through (for instance a virtual vertex beyond the span on a steep
//! slope), so an estimated origin is not necessarily a point on a line.
//!
//! Measurements are associated to a model point in closed form: the abscissa
//! along the line is the measurement's coordinate along the array direction,
//! which reduces the nearest-point search to a minimum over conductors.

use nalgebra::{Matrix3, Matrix3xX, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{argument, Error, Result};

pub type Point3 = nalgebra::Point3<f64>;

/// Largest `|x/a|` accepted by [`catenary_z`].
pub const MAX_CATENARY_RATIO: f64 = 700.0;

/// Number of global parameters ahead of the internal offsets.
pub const N_GLOBAL_PARAMS: usize = 5;

pub const IDX_X_O: usize = 0;
pub const IDX_Y_O: usize = 1;
pub const IDX_Z_O: usize = 2;
pub const IDX_PSI: usize = 3;
pub const IDX_A: usize = 4;

/// One LiDAR frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub frame_index: usize,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, frame_index: usize) -> Self {
        Self {
            points,
            frame_index,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Keep the points whose mask entry is `true`, preserving order.
    pub fn select(&self, keep: &[bool]) -> PointCloud {
        debug_assert_eq!(keep.len(), self.points.len());
        let points = self
            .points
            .iter()
            .zip(keep)
            .filter_map(|(p, &k)| k.then_some(*p))
            .collect();
        PointCloud::new(points, self.frame_index)
    }
}

/// A named conductor layout.
///
/// The offset matrix is linear in the internal offsets, so the layout is
/// stored as one constant `3 x q` partial-derivative matrix per offset
/// parameter and `M(deltas) = sum_l deltas[l] * jacobians[l]`.
///
/// Serialized by name; only the built-in layouts can be read back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ConductorConfig {
    name: String,
    q: usize,
    offset_jacobians: Vec<Matrix3xX<f64>>,
}

impl ConductorConfig {
    pub const CATALOG: [&'static str; 3] = ["1", "32", "222"];

    pub fn new(
        name: impl Into<String>,
        q: usize,
        offset_jacobians: Vec<Matrix3xX<f64>>,
    ) -> Result<Self> {
        if q == 0 {
            return Err(argument("a conductor configuration needs at least one conductor"));
        }
        if let Some(bad) = offset_jacobians.iter().find(|j| j.ncols() != q) {
            return Err(argument(format!(
                "offset jacobian has {} columns, expected {q}",
                bad.ncols()
            )));
        }
        Ok(Self {
            name: name.into(),
            q,
            offset_jacobians,
        })
    }

    /// Look up one of the built-in layouts: `"1"`, `"32"` or `"222"`.
    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "1" => Ok(Self::single()),
            "32" => Ok(Self::three_two()),
            "222" => Ok(Self::double_circuit()),
            other => Err(argument(format!(
                "unknown conductor configuration '{other}' (known: {})",
                Self::CATALOG.join(", ")
            ))),
        }
    }

    /// A single conductor without offsets.
    pub fn single() -> Self {
        Self {
            name: "1".into(),
            q: 1,
            offset_jacobians: Vec::new(),
        }
    }

    /// Three conductors on a horizontal bottom row and two on a top row.
    ///
    /// `y = [-d1, 0, d1, -d3, d3]`, `z = [0, 0, 0, d2, d2]`.
    pub fn three_two() -> Self {
        let d1 = Matrix3xX::from_row_slice(&[
            0.0, 0.0, 0.0, 0.0, 0.0, //
            -1.0, 0.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, 0.0, 0.0,
        ]);
        let d2 = Matrix3xX::from_row_slice(&[
            0.0, 0.0, 0.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, 1.0, 1.0,
        ]);
        let d3 = Matrix3xX::from_row_slice(&[
            0.0, 0.0, 0.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, -1.0, 1.0, //
            0.0, 0.0, 0.0, 0.0, 0.0,
        ]);
        Self {
            name: "32".into(),
            q: 5,
            offset_jacobians: vec![d1, d2, d3],
        }
    }

    /// Double circuit: two vertical stacks of three conductors.
    ///
    /// `d1` is half the horizontal separation of the stacks and `d2` the
    /// vertical spacing inside a stack.
    pub fn double_circuit() -> Self {
        let d1 = Matrix3xX::from_row_slice(&[
            0.0, 0.0, 0.0, 0.0, 0.0, 0.0, //
            -1.0, -1.0, -1.0, 1.0, 1.0, 1.0, //
            0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
        ]);
        let d2 = Matrix3xX::from_row_slice(&[
            0.0, 0.0, 0.0, 0.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, 0.0, 0.0, 0.0, //
            0.0, 1.0, 2.0, 0.0, 1.0, 2.0,
        ]);
        Self {
            name: "222".into(),
            q: 6,
            offset_jacobians: vec![d1, d2],
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Conductor count.
    pub fn q(&self) -> usize {
        self.q
    }

    /// Internal offset count.
    pub fn l(&self) -> usize {
        self.offset_jacobians.len()
    }

    /// Length of the parameter vector, `5 + l`.
    pub fn n_params(&self) -> usize {
        N_GLOBAL_PARAMS + self.l()
    }

    /// Constant partials of the offset matrix, one `3 x q` matrix per offset.
    pub fn offset_jacobians(&self) -> &[Matrix3xX<f64>] {
        &self.offset_jacobians
    }

    /// Per-conductor vertex translations in the array frame, one column per conductor.
    pub fn offset_matrix(&self, deltas: &[f64]) -> Result<Matrix3xX<f64>> {
        if deltas.len() != self.l() {
            return Err(argument(format!(
                "configuration '{}' takes {} offsets, got {}",
                self.name,
                self.l(),
                deltas.len()
            )));
        }
        let mut m = Matrix3xX::zeros(self.q);
        for (delta, jac) in deltas.iter().zip(&self.offset_jacobians) {
            m += jac * *delta;
        }
        Ok(m)
    }
}

impl TryFrom<String> for ConductorConfig {
    type Error = Error;

    fn try_from(name: String) -> Result<Self> {
        Self::builtin(&name)
    }
}

impl From<ConductorConfig> for String {
    fn from(config: ConductorConfig) -> String {
        config.name
    }
}

/// Parameters of the array model: pose, sag and internal offsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub x_o: f64,
    pub y_o: f64,
    pub z_o: f64,
    /// Yaw about the world vertical, radians.
    pub psi: f64,
    /// Sag parameter, meters.
    pub a: f64,
    pub deltas: Vec<f64>,
}

impl ParamVector {
    pub fn new(x_o: f64, y_o: f64, z_o: f64, psi: f64, a: f64, deltas: Vec<f64>) -> Self {
        Self {
            x_o,
            y_o,
            z_o,
            psi,
            a,
            deltas,
        }
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        if values.len() < N_GLOBAL_PARAMS {
            return Err(argument(format!(
                "parameter vector needs at least {N_GLOBAL_PARAMS} entries, got {}",
                values.len()
            )));
        }
        Ok(Self::new(
            values[IDX_X_O],
            values[IDX_Y_O],
            values[IDX_Z_O],
            values[IDX_PSI],
            values[IDX_A],
            values[N_GLOBAL_PARAMS..].to_vec(),
        ))
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&[self.x_o, self.y_o, self.z_o, self.psi, self.a]);
        v.extend_from_slice(&self.deltas);
        v
    }

    pub fn len(&self) -> usize {
        N_GLOBAL_PARAMS + self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn origin(&self) -> Vector3<f64> {
        Vector3::new(self.x_o, self.y_o, self.z_o)
    }

    /// Compose a planar rigid transform (yaw about the vertical, then
    /// translation) into the pose.
    pub fn transformed(&self, yaw: f64, translation: Vector3<f64>) -> Self {
        let o = yaw_rotation(yaw) * self.origin() + translation;
        Self {
            x_o: o.x,
            y_o: o.y,
            z_o: o.z,
            psi: self.psi + yaw,
            ..self.clone()
        }
    }

    pub(crate) fn check(&self, config: &ConductorConfig) -> Result<()> {
        if self.deltas.len() != config.l() {
            return Err(argument(format!(
                "configuration '{}' takes {} offsets, parameter vector has {}",
                config.name(),
                config.l(),
                self.deltas.len()
            )));
        }
        if !(self.a > 0.0) || !self.a.is_finite() {
            return Err(Error::Domain {
                ratio: f64::NAN,
                a: self.a,
            });
        }
        Ok(())
    }
}

/// Distance of a measurement to the nearest conductor of the array.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConductorDistance {
    pub d: f64,
    /// Index of the nearest conductor (lowest index on ties).
    pub k_star: usize,
    /// Error vector in the array basis; its first component is always zero.
    pub e_c: Vector3<f64>,
    /// Abscissa of the associated model point.
    pub x_j: f64,
}

/// Rotation about the world vertical.
pub fn yaw_rotation(psi: f64) -> Matrix3<f64> {
    let (s, c) = psi.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn catenary_ratio(x_j: f64, a: f64) -> Result<f64> {
    let ratio = x_j / a;
    if !(a > 0.0) || !ratio.is_finite() || ratio.abs() > MAX_CATENARY_RATIO {
        return Err(Error::Domain { ratio, a });
    }
    Ok(ratio)
}

/// `cosh(u) - 1` without cancellation near the vertex.
#[inline]
fn cosh_m1(u: f64) -> f64 {
    let s = (0.5 * u).sinh();
    2.0 * s * s
}

/// Height of the catenary above its vertex: `a (cosh(x_j / a) - 1)`.
pub fn catenary_z(x_j: f64, a: f64) -> Result<f64> {
    let ratio = catenary_ratio(x_j, a)?;
    let z = a * cosh_m1(ratio);
    if !z.is_finite() {
        return Err(Error::Domain { ratio, a });
    }
    Ok(z)
}

/// Catenary height with its partials with respect to the abscissa and `a`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct CatenaryEval {
    pub z: f64,
    pub dz_dx: f64,
    pub dz_da: f64,
}

pub(crate) fn catenary_eval(x_j: f64, a: f64) -> Result<CatenaryEval> {
    let u = catenary_ratio(x_j, a)?;
    let sh = u.sinh();
    let cm1 = cosh_m1(u);
    let z = a * cm1;
    if !z.is_finite() {
        return Err(Error::Domain { ratio: u, a });
    }
    Ok(CatenaryEval {
        z,
        dz_dx: sh,
        dz_da: cm1 - u * sh,
    })
}

/// The array model bound to a parameter vector, with the offset matrix and
/// rotation precomputed.
#[derive(Debug, Clone)]
pub struct ArrayModel<'a> {
    config: &'a ConductorConfig,
    params: &'a ParamVector,
    offsets: Matrix3xX<f64>,
    cos_psi: f64,
    sin_psi: f64,
}

impl<'a> ArrayModel<'a> {
    pub fn new(params: &'a ParamVector, config: &'a ConductorConfig) -> Result<Self> {
        params.check(config)?;
        let offsets = config.offset_matrix(&params.deltas)?;
        let (sin_psi, cos_psi) = params.psi.sin_cos();
        Ok(Self {
            config,
            params,
            offsets,
            cos_psi,
            sin_psi,
        })
    }

    pub fn config(&self) -> &ConductorConfig {
        self.config
    }

    pub fn params(&self) -> &ParamVector {
        self.params
    }

    pub fn offsets(&self) -> &Matrix3xX<f64> {
        &self.offsets
    }

    pub(crate) fn cos_sin(&self) -> (f64, f64) {
        (self.cos_psi, self.sin_psi)
    }

    fn check_conductor(&self, k: usize) -> Result<()> {
        if k >= self.config.q() {
            return Err(argument(format!(
                "conductor index {k} out of range for {} conductors",
                self.config.q()
            )));
        }
        Ok(())
    }

    /// World position of the model point at abscissa `x_j` on conductor `k`.
    pub fn forward_point(&self, k: usize, x_j: f64) -> Result<Point3> {
        self.check_conductor(k)?;
        let off = self.offsets.column(k);
        let local = Vector3::new(
            x_j + off[0],
            off[1],
            catenary_z(x_j, self.params.a)? + off[2],
        );
        let w = yaw_rotation(self.params.psi) * local + self.params.origin();
        Ok(Point3::from(w))
    }

    /// Measurement expressed in the array basis relative to the array origin.
    #[inline]
    pub(crate) fn to_array_frame(&self, pt: &Point3) -> Vector3<f64> {
        let dx = pt.x - self.params.x_o;
        let dy = pt.y - self.params.y_o;
        Vector3::new(
            self.cos_psi * dx + self.sin_psi * dy,
            -self.sin_psi * dx + self.cos_psi * dy,
            pt.z - self.params.z_o,
        )
    }

    /// Closed-form abscissa of the model point associated with `pt` on conductor `k`.
    pub fn associate_x(&self, k: usize, pt: &Point3) -> Result<f64> {
        self.check_conductor(k)?;
        Ok(self.to_array_frame(pt).x - self.offsets[(0, k)])
    }

    /// Error between `pt` and its associated model point on conductor `k`, in the array basis.
    pub fn error_vector(&self, k: usize, pt: &Point3) -> Result<Vector3<f64>> {
        self.check_conductor(k)?;
        let local = self.to_array_frame(pt);
        let (e, _) = self.error_local(k, &local)?;
        Ok(e)
    }

    #[inline]
    fn error_local(&self, k: usize, local: &Vector3<f64>) -> Result<(Vector3<f64>, f64)> {
        let off = self.offsets.column(k);
        let x_j = local.x - off[0];
        let z_j = catenary_z(x_j, self.params.a)?;
        Ok((
            Vector3::new(0.0, local.y - off[1], local.z - off[2] - z_j),
            x_j,
        ))
    }

    /// Nearest conductor and distance for a measurement.
    pub fn distance(&self, pt: &Point3) -> Result<ConductorDistance> {
        let local = self.to_array_frame(pt);
        let mut best: Option<ConductorDistance> = None;
        for k in 0..self.config.q() {
            let (e_c, x_j) = self.error_local(k, &local)?;
            let d = e_c.norm();
            if best.is_none_or(|b| d < b.d) {
                best = Some(ConductorDistance { d, k_star: k, e_c, x_j });
            }
        }
        Ok(best.expect("configurations have at least one conductor"))
    }
}

/// World position of the model point at abscissa `x_j` on conductor `k`.
pub fn forward_point(
    p: &ParamVector,
    config: &ConductorConfig,
    k: usize,
    x_j: f64,
) -> Result<Point3> {
    ArrayModel::new(p, config)?.forward_point(k, x_j)
}

pub fn associate_x(p: &ParamVector, config: &ConductorConfig, k: usize, pt: &Point3) -> Result<f64> {
    ArrayModel::new(p, config)?.associate_x(k, pt)
}

pub fn error_vector(
    p: &ParamVector,
    config: &ConductorConfig,
    k: usize,
    pt: &Point3,
) -> Result<Vector3<f64>> {
    ArrayModel::new(p, config)?.error_vector(k, pt)
}

pub fn distance_to_model(
    p: &ParamVector,
    config: &ConductorConfig,
    pt: &Point3,
) -> Result<ConductorDistance> {
    ArrayModel::new(p, config)?.distance(pt)
}

/// Sample every conductor at `n` evenly spaced abscissas in `[x_min, x_max]`.
pub fn sample_curves(
    p: &ParamVector,
    config: &ConductorConfig,
    x_min: f64,
    x_max: f64,
    n: usize,
) -> Result<Vec<Vec<Point3>>> {
    if n < 2 {
        return Err(argument(format!("need at least 2 samples per curve, got {n}")));
    }
    if !(x_min < x_max) {
        return Err(argument(format!("empty sampling range [{x_min}, {x_max}]")));
    }
    let model = ArrayModel::new(p, config)?;
    let step = (x_max - x_min) / (n - 1) as f64;
    (0..config.q())
        .map(|k| {
            (0..n)
                .map(|i| {
                    let x_j = if i == n - 1 { x_max } else { x_min + step * i as f64 };
                    model.forward_point(k, x_j)
                })
                .collect()
        })
        .collect()
}
