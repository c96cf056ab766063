//! Process and measurement models for the homography state `(H, Γ)`.
//!
//! Error convention throughout: the estimate `H̄` and the true `H` are related
//! by `exp(δξ^) = H̄ H⁻¹` (perturbations act on the left of the mean), and
//! `δγ^ = Γ − Γ̄`.

mod camera;
mod geometry;
mod process;
mod state;

use thiserror::Error;

use crate::sl3::Sl3Error;

pub use camera::{
    measurement_jacobian, predict_pixel, projection_jacobian, CameraIntrinsics, FeatureCorrespondence, FeatureFrame,
    MIN_DEPTH,
};
pub use geometry::{gamma_from_velocity, homography_from_pose, PlanePose};
pub use process::{
    b_projection, continuous_noise, discretize, discretize_with, linearize_process, propagate_state, Discretization,
    NoiseJacobian, ProcessJacobian,
};
pub use state::{check_covariance, FilterState, GyroSample, NoiseConfig, StateCovariance, STATE_DIM};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("degenerate camera pose: {0}")]
    DegeneratePose(String),
    #[error("plane distance must be positive, got {0}")]
    PlaneDistance(f64),
    #[error("point is behind the camera (depth {depth:e})")]
    BehindCamera { depth: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Sl3(#[from] Sl3Error),
}
