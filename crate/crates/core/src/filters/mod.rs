//! Iterated EKF and interacting multiple model filters on `SL(3) × 𝔰𝔩(3)`.

mod iekf;
mod imm;

use nalgebra::Vector3;
use thiserror::Error;

use crate::models::{GyroSample, ModelError};
use crate::scalar::Scalar;
use crate::sl3::Sl3Error;

pub use iekf::{
    ekf_correct, ekf_predict, propagate_through, scdcs_weight, BeliefState, Correction, CorrectionReport, IekfConfig, RobustScale,
};
pub use imm::{
    imm_correct, imm_fused_estimate, imm_interaction, imm_mix, imm_predict, imm_step, mix_about, ImmConfig,
    ImmOutput, ImmState, ImmStepReport, MixReport, MixingMatrix,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sl3(#[from] Sl3Error),
    #[error("invalid filter configuration: {0}")]
    Config(String),
    #[error("covariance is not positive definite: {0}")]
    Covariance(String),
}

/// Splits `[t0, t1)` into zero-order-hold pieces of the gyro stream.
///
/// Each sample's rate holds from its timestamp until the next sample. Times
/// before the first sample use the first rate. Pieces shorter than `1e-12` s
/// are dropped.
pub fn zoh_segments<T: Scalar>(gyro: &[GyroSample<T>], t0: f64, t1: f64) -> Vec<(Vector3<T>, f64)> {
    let mut out = Vec::new();
    if gyro.is_empty() || !(t1 > t0) {
        return out;
    }
    let mut idx = gyro.partition_point(|g| g.t <= t0).saturating_sub(1);
    let mut t = t0;
    while t < t1 {
        let end = gyro.get(idx + 1).map_or(t1, |g| g.t.min(t1));
        if end - t > 1e-12 {
            out.push((gyro[idx].omega, end - t));
        }
        t = t.max(end);
        if idx + 1 >= gyro.len() {
            break;
        }
        idx += 1;
    }
    out
}
