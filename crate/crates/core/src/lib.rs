//! Pose, offset and sag estimation for overhead conductor arrays.
//!
//! A whole array of conductors is described by one catenary-array model with
//! `5 + l` parameters (see [`geometry`]). Each LiDAR frame is fit by
//! minimizing a robust loss ([`loss`]) with a bound-constrained multi-start
//! solver ([`solver`]), warm-started from the previous frame's estimate.

pub mod error;
pub mod filters;
pub mod geometry;
pub mod loss;
pub mod metrics;
pub mod simulator;
pub mod solver;

pub use error::{Error, Result};
pub use geometry::{ConductorConfig, ConductorDistance, ParamVector, Point3, PointCloud};
