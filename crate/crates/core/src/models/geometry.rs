use nalgebra::{Matrix3, Vector3};

use super::ModelError;
use crate::scalar::Scalar;
use crate::sl3::{project_sl3, AlgebraMatrix, GroupElement};

/// Pose of the current camera `b` relative to the reference camera `a`,
/// together with the observed plane expressed in `b`.
///
/// Points `ρ_b` on the plane satisfy `n_bᵀ ρ_b = −d_b`: the unit normal
/// points from the plane towards the camera and `d_b > 0` is the camera's
/// distance to the plane. Reference coordinates follow `ρ_a = C_ab ρ_b + r_a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanePose<T: Scalar> {
    pub c_ab: Matrix3<T>,
    pub r_a_ba: Vector3<T>,
    pub n_b: Vector3<T>,
    pub d_b: T,
}

/// `H_ab = (C_ab − r_a nᵀ_b / d_b)` projected onto SL(3).
///
/// A reference point maps into the current view by `q_b ∝ K H⁻¹ K⁻¹ q_a`.
pub fn homography_from_pose<T: Scalar>(pose: &PlanePose<T>) -> Result<GroupElement<T>, ModelError> {
    if !(pose.d_b > T::zero()) {
        return Err(ModelError::PlaneDistance(pose.d_b.to_f64_lossy()));
    }
    let m = pose.c_ab - pose.r_a_ba * pose.n_b.transpose() / pose.d_b;
    project_sl3(&m).map_err(|e| ModelError::DegeneratePose(format!("camera crossed the plane ({e})")))
}

/// `Γ = −v nᵀ/d + (nᵀv)/(3d) I`, with `v` the camera velocity in `b`.
pub fn gamma_from_velocity<T: Scalar>(v_b: &Vector3<T>, n_b: &Vector3<T>, d_b: T) -> Result<AlgebraMatrix<T>, ModelError> {
    if !(d_b > T::zero()) {
        return Err(ModelError::PlaneDistance(d_b.to_f64_lossy()));
    }
    let outer = v_b * n_b.transpose() / d_b;
    let mut g = -outer;
    let third = outer.trace() / T::lit(3.0);
    for i in 0..3 {
        g[(i, i)] += third;
    }
    Ok(AlgebraMatrix::project(g))
}
