use nalgebra::{SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::scalar::Scalar;
use crate::sl3::{AlgebraMatrix, GroupElement};

/// Error-state dimension: 8 homography coordinates followed by 8 for Γ.
pub const STATE_DIM: usize = 16;

/// Covariance of the stacked error `(δξ, δγ)`.
pub type StateCovariance<T> = SMatrix<T, 16, 16>;

/// Homography `H_ab` and its translational-flow term `Γ_ab` at time `t` (s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterState<T: Scalar> {
    pub h: GroupElement<T>,
    pub gamma: AlgebraMatrix<T>,
    pub t: f64,
}

impl<T: Scalar> FilterState<T> {
    pub fn new(h: GroupElement<T>, gamma: AlgebraMatrix<T>, t: f64) -> Self {
        Self { h, gamma, t }
    }

    pub fn identity(t: f64) -> Self {
        Self { h: GroupElement::identity(), gamma: AlgebraMatrix::zero(), t }
    }
}

/// Rate-gyro reading. The rate is held constant until the next sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct GyroSample<T: Scalar> {
    pub t: f64,
    /// Angular velocity of the camera, resolved in the camera frame (rad/s).
    pub omega: Vector3<T>,
}

/// Noise intensities shared by the process and measurement models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct NoiseConfig<T: Scalar> {
    /// Gyro noise PSD root (rad/s/√Hz); `Q_g = σ_g² I`.
    pub sigma_g: T,
    /// Pixel noise standard deviation; `R = σ_r² I`.
    pub sigma_r: T,
    /// Model-confidence PSD `σ_m²` on Γ; `Q_m = σ_m² I`.
    pub sigma_m2: T,
}

impl<T: Scalar> NoiseConfig<T> {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.sigma_g > T::zero() && self.sigma_r > T::zero() && self.sigma_m2 > T::zero() {
            Ok(())
        } else {
            Err(ModelError::Config("noise intensities must be strictly positive".into()))
        }
    }
}

impl Default for NoiseConfig<f64> {
    fn default() -> Self {
        Self { sigma_g: 0.01, sigma_r: 1.0, sigma_m2: 1e-7 }
    }
}

/// Checks symmetry and positive semi-definiteness of a covariance.
pub fn check_covariance<T: Scalar>(p: &StateCovariance<T>) -> Result<(), ModelError> {
    let scale = p.norm().max(T::one());
    let asym = (p - p.transpose()).abs().max();
    if asym > T::lit(1e-12).max(T::eps() * T::lit(64.0)) * scale {
        return Err(ModelError::Config(format!("covariance asymmetric by {:e}", asym.to_f64_lossy())));
    }
    let min_eig = p.symmetric_eigenvalues().min();
    if min_eig < -T::lit(1e-10).max(T::eps() * T::lit(64.0)) * scale {
        return Err(ModelError::Config(format!("covariance eigenvalue {:e} < 0", min_eig.to_f64_lossy())));
    }
    Ok(())
}
