//! Robust point-to-model loss and its analytical gradient.
//!
//! Each measurement costs `log(1 + d^2)` where `d` is its distance to the
//! nearest conductor, and the parameter vector is pulled toward a prior by a
//! diagonal quadratic term:
//!
//! ```text
//! J(p) = sum_i R_i log(1 + d_i(p)^2) + (p_prior - p)^T Q (p_prior - p)
//! ```
//!
//! The logarithm is base 10 by default. The gradient of the regularization
//! is `+2 Q (p - p_prior)`; writing it with a minus sign, as is sometimes
//! done, does not match the derivative of the term above.
//!
//! For the gradient each point's nearest conductor is frozen at its current
//! argmin, which is recomputed on every evaluation.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{argument, Result};
use crate::geometry::{
    catenary_eval, ArrayModel, ConductorConfig, ParamVector, PointCloud, IDX_A, IDX_PSI, IDX_X_O,
    IDX_Y_O, IDX_Z_O, N_GLOBAL_PARAMS,
};

/// Base of the logarithm in the per-point cost.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    #[default]
    Ten,
    Natural,
}

impl LogBase {
    fn ln(self) -> f64 {
        match self {
            LogBase::Ten => std::f64::consts::LN_10,
            LogBase::Natural => 1.0,
        }
    }
}

/// Per-point weights `R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PointWeights {
    /// Same weight for every point.
    Uniform(f64),
    PerPoint(Vec<f64>),
}

impl Default for PointWeights {
    fn default() -> Self {
        PointWeights::Uniform(1.0)
    }
}

impl PointWeights {
    fn get(&self, i: usize) -> f64 {
        match self {
            PointWeights::Uniform(w) => *w,
            PointWeights::PerPoint(w) => w[i],
        }
    }

    fn check(&self, m: usize) -> Result<()> {
        let ok = match self {
            PointWeights::Uniform(w) => *w >= 0.0,
            PointWeights::PerPoint(w) => {
                if w.len() != m {
                    return Err(argument(format!(
                        "{} point weights for a cloud of {m} points",
                        w.len()
                    )));
                }
                w.iter().all(|&w| w >= 0.0)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(argument("point weights must be non-negative"))
        }
    }
}

/// Weights of the loss: `R` for points, diagonal `Q` for the prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    #[serde(default)]
    pub point_weights: PointWeights,
    /// Diagonal of `Q`, one entry per parameter.
    pub q_diag: Vec<f64>,
    #[serde(default)]
    pub log_base: LogBase,
}

impl LossWeights {
    /// Unit point weights and no regularization.
    pub fn unregularized(n_params: usize) -> Self {
        Self {
            point_weights: PointWeights::default(),
            q_diag: vec![0.0; n_params],
            log_base: LogBase::Ten,
        }
    }

    /// Default regularization for a configuration with `l` offsets.
    ///
    /// Weak enough that a single frame of conductor points dominates, strong
    /// enough to keep unobservable directions near the previous estimate.
    pub fn default_for(l: usize) -> Self {
        let mut q_diag = vec![1e-2, 1e-2, 1e-2, 1.0, 1e-6];
        q_diag.extend(std::iter::repeat_n(1e-2, l));
        Self {
            point_weights: PointWeights::default(),
            q_diag,
            log_base: LogBase::Ten,
        }
    }

    fn check(&self, n_params: usize, m: usize) -> Result<()> {
        if self.q_diag.len() != n_params {
            return Err(argument(format!(
                "Q has {} diagonal entries, expected {n_params}",
                self.q_diag.len()
            )));
        }
        if self.q_diag.iter().any(|&q| !(q >= 0.0)) {
            return Err(argument("Q entries must be non-negative"));
        }
        self.point_weights.check(m)
    }
}

/// Contribution of one measurement to the loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointTerm {
    pub d: f64,
    pub c: f64,
    pub k_star: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub points_cost: f64,
    pub regularization: f64,
    pub per_point: Vec<PointTerm>,
}

/// Base-10 Lorentzian cost of a distance, `log10(1 + d^2)`.
pub fn point_cost(d: f64) -> f64 {
    point_cost_with(d, LogBase::Ten)
}

pub fn point_cost_with(d: f64, base: LogBase) -> f64 {
    (d * d).ln_1p() / base.ln()
}

fn check_inputs(
    p: &ParamVector,
    cloud: &PointCloud,
    prior: &ParamVector,
    weights: &LossWeights,
    config: &ConductorConfig,
) -> Result<()> {
    if prior.deltas.len() != config.l() {
        return Err(argument("prior does not match the conductor configuration"));
    }
    weights.check(p.len(), cloud.len())
}

fn regularization(p: &[f64], prior: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(prior)
        .zip(q)
        .map(|((p, h), q)| q * (h - p) * (h - p))
        .sum()
}

/// Evaluate the loss with its per-point breakdown.
pub fn total_loss(
    p: &ParamVector,
    cloud: &PointCloud,
    prior: &ParamVector,
    weights: &LossWeights,
    config: &ConductorConfig,
) -> Result<LossReport> {
    check_inputs(p, cloud, prior, weights, config)?;
    let model = ArrayModel::new(p, config)?;
    let mut per_point = Vec::with_capacity(cloud.len());
    let mut points_cost = 0.0;
    for (i, pt) in cloud.points.iter().enumerate() {
        let nearest = model.distance(pt)?;
        let c = point_cost_with(nearest.d, weights.log_base);
        points_cost += weights.point_weights.get(i) * c;
        per_point.push(PointTerm {
            d: nearest.d,
            c,
            k_star: nearest.k_star,
        });
    }
    let regularization = regularization(&p.to_vec(), &prior.to_vec(), &weights.q_diag);
    Ok(LossReport {
        total: points_cost + regularization,
        points_cost,
        regularization,
        per_point,
    })
}

/// Gradient of [`total_loss`] with respect to the parameter vector.
pub fn loss_gradient(
    p: &ParamVector,
    cloud: &PointCloud,
    prior: &ParamVector,
    weights: &LossWeights,
    config: &ConductorConfig,
) -> Result<Vec<f64>> {
    let eval = evaluate(p, cloud, prior, weights, config, Derivatives::Gradient)?;
    Ok(eval.gradient.expect("gradient requested").as_slice().to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Derivatives {
    None,
    Gradient,
    /// Gradient plus the Gauss-Newton curvature `sum_i R_i w_i J_i^T J_i + 2 Q`
    /// with the iteratively-reweighted weights `w_i = 2 / (ln b (1 + d_i^2))`.
    GaussNewton,
}

#[derive(Debug, Clone)]
pub(crate) struct Evaluation {
    pub cost: f64,
    pub gradient: Option<DVector<f64>>,
    pub curvature: Option<DMatrix<f64>>,
}

/// Residual of one point against its frozen conductor, with the two
/// non-trivial rows of the error Jacobian (the first error component is
/// identically zero).
struct Residual {
    e: [f64; 2],
}

#[inline]
fn residual_rows(
    model: &ArrayModel<'_>,
    pt: &crate::geometry::Point3,
    k: usize,
    rows: &mut [Vec<f64>; 2],
) -> Result<Residual> {
    let config = model.config();
    let params = model.params();
    let (c, s) = model.cos_sin();
    let local: Vector3<f64> = model.to_array_frame(pt);
    let off = model.offsets().column(k);

    let x_j = local.x - off[0];
    let cat = catenary_eval(x_j, params.a)?;
    let e2 = local.y - off[1];
    let e3 = local.z - off[2] - cat.z;
    let sh = cat.dz_dx;

    // d x_j / d psi equals the lateral coordinate; d e2 / d psi is minus the longitudinal one.
    let [r2, r3] = rows;
    r2[IDX_X_O] = s;
    r2[IDX_Y_O] = -c;
    r2[IDX_Z_O] = 0.0;
    r2[IDX_PSI] = -local.x;
    r2[IDX_A] = 0.0;
    r3[IDX_X_O] = sh * c;
    r3[IDX_Y_O] = sh * s;
    r3[IDX_Z_O] = -1.0;
    r3[IDX_PSI] = -sh * local.y;
    r3[IDX_A] = -cat.dz_da;
    for (l, jac) in config.offset_jacobians().iter().enumerate() {
        let col = jac.column(k);
        r2[N_GLOBAL_PARAMS + l] = -col[1];
        r3[N_GLOBAL_PARAMS + l] = -col[2] + sh * col[0];
    }
    Ok(Residual { e: [e2, e3] })
}

pub(crate) fn evaluate(
    p: &ParamVector,
    cloud: &PointCloud,
    prior: &ParamVector,
    weights: &LossWeights,
    config: &ConductorConfig,
    want: Derivatives,
) -> Result<Evaluation> {
    check_inputs(p, cloud, prior, weights, config)?;
    let model = ArrayModel::new(p, config)?;
    let n = p.len();
    let ln_b = weights.log_base.ln();
    let pv = p.to_vec();
    let hv = prior.to_vec();

    let mut cost = 0.0;
    let mut grad = DVector::zeros(n);
    let mut curv = DMatrix::zeros(n, n);
    let mut rows = [vec![0.0; n], vec![0.0; n]];

    for (i, pt) in cloud.points.iter().enumerate() {
        let nearest = model.distance(pt)?;
        let r_i = weights.point_weights.get(i);
        let d2 = nearest.d * nearest.d;
        cost += r_i * d2.ln_1p() / ln_b;
        if want == Derivatives::None || r_i == 0.0 || nearest.d == 0.0 {
            continue;
        }
        let res = residual_rows(&model, pt, nearest.k_star, &mut rows)?;
        // dc/dd * dd/de = 2 e / (ln b (1 + d^2))
        let w = r_i * 2.0 / (ln_b * (1.0 + d2));
        for (row, e) in rows.iter().zip(res.e) {
            for (g, r) in grad.iter_mut().zip(row) {
                *g += w * e * r;
            }
            if want == Derivatives::GaussNewton {
                for a in 0..n {
                    if row[a] == 0.0 {
                        continue;
                    }
                    for b in 0..n {
                        curv[(a, b)] += w * row[a] * row[b];
                    }
                }
            }
        }
    }

    cost += regularization(&pv, &hv, &weights.q_diag);
    let (gradient, curvature) = match want {
        Derivatives::None => (None, None),
        _ => {
            for j in 0..n {
                grad[j] += 2.0 * weights.q_diag[j] * (pv[j] - hv[j]);
                curv[(j, j)] += 2.0 * weights.q_diag[j];
            }
            let curvature = (want == Derivatives::GaussNewton).then_some(curv);
            (Some(grad), curvature)
        }
    };
    Ok(Evaluation {
        cost,
        gradient,
        curvature,
    })
}
