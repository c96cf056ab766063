use nalgebra::{Matrix2x3, SMatrix, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{FilterState, ModelError};
use crate::scalar::Scalar;
use crate::sl3::odot;

/// Smallest admissible depth of `H⁻¹ p_ref` before a feature is treated as
/// lying behind the camera.
pub const MIN_DEPTH: f64 = 1e-9;

/// Pinhole intrinsics (pixels).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct CameraIntrinsics<T: Scalar> {
    pub fu: T,
    pub fv: T,
    pub cu: T,
    pub cv: T,
}

impl<T: Scalar> CameraIntrinsics<T> {
    pub fn new(fu: T, fv: T, cu: T, cv: T) -> Self {
        Self { fu, fv, cu, cv }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.fu > T::zero() && self.fv > T::zero() {
            Ok(())
        } else {
            Err(ModelError::Config("focal lengths must be positive".into()))
        }
    }

    /// Pixel coordinates of a normalised image point.
    pub fn project_normalized(&self, p: &Vector2<T>) -> Vector2<T> {
        Vector2::new(self.fu * p.x + self.cu, self.fv * p.y + self.cv)
    }

    /// Normalised image coordinates of a pixel.
    pub fn unproject(&self, px: &Vector2<T>) -> Vector3<T> {
        Vector3::new((px.x - self.cu) / self.fu, (px.y - self.cv) / self.fv, T::one())
    }
}

impl Default for CameraIntrinsics<f64> {
    fn default() -> Self {
        Self::new(600.0, 600.0, 320.0, 240.0)
    }
}

/// A reference-frame point (normalised coordinates, third entry 1) matched to
/// a pixel measurement in the current frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct FeatureCorrespondence<T: Scalar> {
    pub id: u32,
    pub p_ref: Vector3<T>,
    pub y_pix: Vector2<T>,
}

/// All correspondences observed at one camera timestamp. Empty during occlusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct FeatureFrame<T: Scalar> {
    pub t: f64,
    pub correspondences: Vec<FeatureCorrespondence<T>>,
}

impl<T: Scalar> FeatureFrame<T> {
    pub fn empty(t: f64) -> Self {
        Self { t, correspondences: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.correspondences.is_empty()
    }
}

fn current_ray<T: Scalar>(state: &FilterState<T>, p_ref: &Vector3<T>) -> Result<Vector3<T>, ModelError> {
    let r = state.h.inverse().matrix() * p_ref;
    if !(r.z > T::lit(MIN_DEPTH)) {
        return Err(ModelError::BehindCamera { depth: r.z.to_f64_lossy() });
    }
    Ok(r)
}

/// `y = D K r / z` with `r = H⁻¹ p_ref`.
pub fn predict_pixel<T: Scalar>(
    state: &FilterState<T>,
    p_ref: &Vector3<T>,
    k: &CameraIntrinsics<T>,
) -> Result<Vector2<T>, ModelError> {
    let r = current_ray(state, p_ref)?;
    Ok(Vector2::new(k.fu * r.x / r.z + k.cu, k.fv * r.y / r.z + k.cv))
}

/// Jacobian of the pinhole projection with respect to the ray `r = (x, y, z)`.
pub fn projection_jacobian<T: Scalar>(r: &Vector3<T>, k: &CameraIntrinsics<T>) -> Matrix2x3<T> {
    let inv_z = T::one() / r.z;
    Matrix2x3::new(
        k.fu * inv_z,
        T::zero(),
        -k.fu * r.x * inv_z * inv_z,
        T::zero(),
        k.fv * inv_z,
        -k.fv * r.y * inv_z * inv_z,
    )
}

/// Jacobian of [`predict_pixel`] with respect to the error state `(δξ, δγ)`.
///
/// With `H = exp(−δξ^) H̄` the ray is `H̄⁻¹ exp(δξ^) p`, so the homography
/// block is `H̄⁻¹ p^⊙`; the Γ block is zero.
pub fn measurement_jacobian<T: Scalar>(
    state: &FilterState<T>,
    p_ref: &Vector3<T>,
    k: &CameraIntrinsics<T>,
) -> Result<SMatrix<T, 2, 16>, ModelError> {
    let r = current_ray(state, p_ref)?;
    let block = projection_jacobian(&r, k) * state.h.inverse().matrix() * odot(p_ref);
    let mut jac = SMatrix::<T, 2, 16>::zeros();
    jac.fixed_view_mut::<2, 8>(0, 0).copy_from(&block);
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sl3::{exp_sl3, project_sl3, wedge, AlgebraMatrix, AlgebraVector, GroupElement};

    fn k() -> CameraIntrinsics<f64> {
        CameraIntrinsics::default()
    }

    fn random_state(seed: u64) -> FilterState<f64> {
        // Small deterministic pseudo-random state with ‖ξ‖ ≤ 0.5.
        let mut x = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = || {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((x >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        let xi = AlgebraVector::from_fn(|_, _| next());
        let xi = xi * (0.5 / xi.norm().max(1.0));
        let g = AlgebraVector::from_fn(|_, _| next() * 0.3);
        FilterState::new(exp_sl3(&wedge(&xi)), wedge(&g), 0.0)
    }

    #[test]
    fn optical_axis_maps_to_principal_point() {
        let s = FilterState::<f64>::identity(0.0);
        let y = predict_pixel(&s, &Vector3::new(0.0, 0.0, 1.0), &k()).unwrap();
        assert_eq!(y, Vector2::new(320.0, 240.0));
        let y = predict_pixel(&s, &Vector3::new(0.1, -0.2, 1.0), &k()).unwrap();
        assert!((y - Vector2::new(380.0, 120.0)).norm() < 1e-12);
    }

    #[test]
    fn behind_camera_is_an_error() {
        let flip = GroupElement::new(nalgebra::Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, -1.0))).unwrap();
        let s = FilterState::new(flip, AlgebraMatrix::zero(), 0.0);
        assert!(matches!(
            predict_pixel(&s, &Vector3::new(0.0, 0.0, 1.0), &k()),
            Err(ModelError::BehindCamera { .. })
        ));
        assert!(measurement_jacobian(&s, &Vector3::new(0.0, 0.0, 1.0), &k()).is_err());
    }

    #[test]
    fn on_axis_projection_jacobian() {
        let pj = projection_jacobian(&Vector3::new(0.0, 0.0, 1.0), &k());
        assert_eq!(pj, Matrix2x3::new(600.0, 0.0, 0.0, 0.0, 600.0, 0.0));
    }

    #[test]
    fn gamma_columns_vanish() {
        let s = random_state(3);
        let j = measurement_jacobian(&s, &Vector3::new(0.1, 0.05, 1.0), &k()).unwrap();
        assert!(j.fixed_view::<2, 8>(0, 8).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let h = 1e-6;
        for seed in 0..100 {
            let s = random_state(seed);
            let p = Vector3::new(0.12, -0.08, 1.0);
            let j = measurement_jacobian(&s, &p, &k()).unwrap();
            for c in 0..8 {
                let dx = crate::sl3::basis::<f64>(c) * h;
                let plus = FilterState::new(exp_sl3(&wedge(&-dx)) * s.h, s.gamma, 0.0);
                let minus = FilterState::new(exp_sl3(&wedge(&dx)) * s.h, s.gamma, 0.0);
                let fd = (predict_pixel(&plus, &p, &k()).unwrap() - predict_pixel(&minus, &p, &k()).unwrap()) / (2.0 * h);
                let col = j.column(c).into_owned();
                let rel = (fd - col).norm() / col.norm().max(1.0);
                assert!(rel < 1e-5, "seed {seed} col {c}: rel {rel}");
            }
        }
    }

    #[test]
    fn prediction_is_scale_invariant() {
        let s = random_state(11);
        let p = Vector3::new(-0.2, 0.1, 1.0);
        let scaled = s.h.matrix() * 2.7;
        let projected = FilterState::new(project_sl3(&scaled).unwrap(), s.gamma, 0.0);
        let y_scaled = {
            let r = scaled.try_inverse().unwrap() * p;
            Vector2::new(600.0 * r.x / r.z + 320.0, 600.0 * r.y / r.z + 240.0)
        };
        let y = predict_pixel(&projected, &p, &k()).unwrap();
        assert!((y - y_scaled).norm() < 1e-9);
    }

    mod properties {
        use super::*;
        use crate::sl3::{exp_sl3, wedge, AlgebraVector};
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn prediction_ignores_scale(
                xi in proptest::array::uniform8(-0.3..0.3f64),
                c in 0.1..10.0f64,
                x in -0.5..0.5f64,
                y in -0.5..0.5f64,
            ) {
                let h = exp_sl3(&wedge(&AlgebraVector::from(xi)));
                let p = Vector3::new(x, y, 1.0);
                let scaled = h.matrix() * c;
                let r = scaled.try_inverse().unwrap() * p;
                let direct = Vector2::new(600.0 * r.x / r.z + 320.0, 600.0 * r.y / r.z + 240.0);
                let s = FilterState::new(project_sl3(&scaled).unwrap(), AlgebraMatrix::zero(), 0.0);
                let y = predict_pixel(&s, &p, &k()).unwrap();
                prop_assert!((y - direct).norm() < 1e-9 * (1.0 + direct.norm()));
            }
        }
    }
}
