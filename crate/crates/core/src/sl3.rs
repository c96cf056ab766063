//! The special linear group SL(3) and its Lie algebra sl(3).
//!
//! Coordinates on the algebra use the basis
//!
//! ```text
//!        [ ξ4+ξ5   -ξ3+ξ6   ξ1  ]
//! ξ^ =   [ ξ3+ξ6    ξ4-ξ5   ξ2  ]
//!        [  ξ7       ξ8    -2ξ4 ]
//! ```
//!
//! so that rotations, translations of the image plane, scalings and
//! perspective terms each occupy their own coordinates. All maps here are pure
//! functions of immutable values.

use std::ops::Mul;

use nalgebra::{Complex, Matrix3, SMatrix, SVector, Schur, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::expm;
use crate::scalar::Scalar;

/// Coordinates ξ ∈ ℝ⁸ of an algebra element.
pub type AlgebraVector<T> = SVector<T, 8>;
/// Linear maps on algebra coordinates (adjoints, Jacobians).
pub type Matrix8<T> = SMatrix<T, 8, 8>;

/// Relative trace tolerance accepted for algebra elements.
const TRACE_TOL: f64 = 1e-12;
/// Determinant tolerance accepted for group elements.
const DET_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Sl3Error {
    #[error("matrix is not trace-free (trace {trace:e}, norm {norm:e})")]
    InvalidAlgebraElement { trace: f64, norm: f64 },
    #[error("matrix is not in SL(3) (det {det:e})")]
    InvalidGroupElement { det: f64 },
    #[error("cannot project onto SL(3): determinant {det:e} is not positive")]
    Projection { det: f64 },
    #[error("logarithm undefined: {reason}")]
    LogDomain { reason: String },
}

/// A trace-free 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct AlgebraMatrix<T: Scalar>(Matrix3<T>);

impl<T: Scalar> AlgebraMatrix<T> {
    /// Checks the trace against the matrix scale.
    pub fn new(m: Matrix3<T>) -> Result<Self, Sl3Error> {
        let trace = m.trace();
        let norm = m.norm();
        let tol = T::lit(TRACE_TOL).max(T::eps() * T::lit(64.0));
        if !m.iter().all(|v| v.is_finite()) || trace.abs() > tol * norm.max(T::one()) {
            return Err(Sl3Error::InvalidAlgebraElement {
                trace: trace.to_f64_lossy(),
                norm: norm.to_f64_lossy(),
            });
        }
        Ok(Self(m))
    }

    /// Removes the trace: `m - tr(m)/3 · I`.
    pub fn project(m: Matrix3<T>) -> Self {
        let shift = m.trace() / T::lit(3.0);
        Self(m - Matrix3::identity() * shift)
    }

    pub fn zero() -> Self {
        Self(Matrix3::zeros())
    }

    pub fn matrix(&self) -> &Matrix3<T> {
        &self.0
    }

    pub fn into_inner(self) -> Matrix3<T> {
        self.0
    }

    pub fn vee(&self) -> AlgebraVector<T> {
        vee_unchecked(&self.0)
    }

    pub fn scale(&self, s: T) -> Self {
        Self(self.0 * s)
    }

    pub fn add(&self, other: &Self) -> Self {
        Self(self.0 + other.0)
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self(self.0 - other.0)
    }

    /// Lie bracket `[self, other]`.
    pub fn bracket(&self, other: &Self) -> Self {
        Self(self.0 * other.0 - other.0 * self.0)
    }

    pub fn exp(&self) -> GroupElement<T> {
        exp_sl3(self)
    }
}

/// A unit-determinant 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct GroupElement<T: Scalar>(Matrix3<T>);

impl<T: Scalar> GroupElement<T> {
    /// Accepts matrices whose determinant is 1 within 1e-9.
    pub fn new(m: Matrix3<T>) -> Result<Self, Sl3Error> {
        let det = m.determinant();
        let tol = T::lit(DET_TOL).max(T::eps() * T::lit(64.0));
        if !det.is_finite() || (det - T::one()).abs() > tol {
            return Err(Sl3Error::InvalidGroupElement { det: det.to_f64_lossy() });
        }
        Ok(Self(m))
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn matrix(&self) -> &Matrix3<T> {
        &self.0
    }

    pub fn into_inner(self) -> Matrix3<T> {
        self.0
    }

    /// The adjugate, which is the inverse when the determinant is 1. Non-finite
    /// entries propagate instead of panicking.
    pub fn inverse(&self) -> Self {
        let m = &self.0;
        let c = |r0: usize, r1: usize, c0: usize, c1: usize| m[(r0, c0)] * m[(r1, c1)] - m[(r0, c1)] * m[(r1, c0)];
        Self(Matrix3::new(
            c(1, 2, 1, 2),
            -c(0, 2, 1, 2),
            c(0, 1, 1, 2),
            -c(1, 2, 0, 2),
            c(0, 2, 0, 2),
            -c(0, 1, 0, 2),
            c(1, 2, 0, 1),
            -c(0, 2, 0, 1),
            c(0, 1, 0, 1),
        ))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn log(&self) -> Result<AlgebraMatrix<T>, Sl3Error> {
        log_sl3(self)
    }

    /// Re-normalises the determinant after accumulated rounding.
    pub fn renormalize(&self) -> Self {
        project_sl3(&self.0).unwrap_or(*self)
    }
}

impl<T: Scalar> Mul for GroupElement<T> {
    type Output = GroupElement<T>;
    fn mul(self, rhs: Self) -> Self {
        GroupElement(self.0 * rhs.0)
    }
}

impl<'a, T: Scalar> Mul<&'a GroupElement<T>> for &'a GroupElement<T> {
    type Output = GroupElement<T>;
    fn mul(self, rhs: &'a GroupElement<T>) -> GroupElement<T> {
        GroupElement(self.0 * rhs.0)
    }
}

/// `ξ ↦ ξ^`.
pub fn wedge<T: Scalar>(xi: &AlgebraVector<T>) -> AlgebraMatrix<T> {
    let two = T::lit(2.0);
    AlgebraMatrix(Matrix3::new(
        xi[3] + xi[4],
        -xi[2] + xi[5],
        xi[0],
        xi[2] + xi[5],
        xi[3] - xi[4],
        xi[1],
        xi[6],
        xi[7],
        -two * xi[3],
    ))
}

/// Inverse of [`wedge`] for an arbitrary 3×3 matrix; rejects non-trace-free input.
pub fn vee<T: Scalar>(m: &Matrix3<T>) -> Result<AlgebraVector<T>, Sl3Error> {
    AlgebraMatrix::new(*m).map(|a| a.vee())
}

fn vee_unchecked<T: Scalar>(m: &Matrix3<T>) -> AlgebraVector<T> {
    let half = T::lit(0.5);
    let quarter = T::lit(0.25);
    AlgebraVector::from([
        m[(0, 2)],
        m[(1, 2)],
        (m[(1, 0)] - m[(0, 1)]) * half,
        (m[(0, 0)] + m[(1, 1)] - m[(2, 2)]) * quarter,
        (m[(0, 0)] - m[(1, 1)]) * half,
        (m[(1, 0)] + m[(0, 1)]) * half,
        m[(2, 0)],
        m[(2, 1)],
    ])
}

/// Basis vector `e_k` of the algebra coordinates.
pub fn basis<T: Scalar>(k: usize) -> AlgebraVector<T> {
    let mut e = AlgebraVector::zeros();
    e[k] = T::one();
    e
}

/// Matrix exponential of an algebra element.
pub fn exp_sl3<T: Scalar>(m: &AlgebraMatrix<T>) -> GroupElement<T> {
    let e = expm(&m.0);
    // det(exp m) = exp(tr m) = 1; normalise away the rounding residue.
    let det = e.determinant();
    if det > T::zero() {
        GroupElement(e / det.cbrt_real())
    } else {
        GroupElement(e)
    }
}

trait CbrtReal {
    fn cbrt_real(self) -> Self;
}

impl<T: Scalar> CbrtReal for T {
    fn cbrt_real(self) -> Self {
        if self >= T::zero() {
            self.powf(T::one() / T::lit(3.0))
        } else {
            -(-self).powf(T::one() / T::lit(3.0))
        }
    }
}

/// Guards for the matrix logarithm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogConfig<T: Scalar> {
    /// Spectral radius bound on `X − I` inside which the series stage runs.
    pub series_radius: T,
    /// Square roots allowed to bring the input inside `series_radius`.
    /// Zero makes the bound apply to the input itself.
    pub max_square_roots: u32,
}

impl<T: Scalar> Default for LogConfig<T> {
    fn default() -> Self {
        Self { series_radius: T::lit(0.9), max_square_roots: 16 }
    }
}

/// Principal matrix logarithm with the default guard.
pub fn log_sl3<T: Scalar>(h: &GroupElement<T>) -> Result<AlgebraMatrix<T>, Sl3Error> {
    log_sl3_with(h, &LogConfig::default())
}

fn complex_abs<T: Scalar>(z: &Complex<T>) -> T {
    (z.re * z.re + z.im * z.im).sqrt()
}

fn complex_sqrt<T: Scalar>(z: &Complex<T>) -> Complex<T> {
    let r = complex_abs(z);
    let half = T::lit(0.5);
    let re = ((r + z.re) * half).max(T::zero()).sqrt();
    let im = ((r - z.re) * half).max(T::zero()).sqrt();
    Complex::new(re, if z.im < T::zero() { -im } else { im })
}

/// Eigenvalues from a Schur decomposition with a bounded iteration count.
/// The tolerance is relaxed progressively when the QR sweep stalls.
fn eigenvalues<T: Scalar>(m: &Matrix3<T>) -> Option<Vec<Complex<T>>> {
    let mut tol = T::eps();
    for _ in 0..4 {
        if let Some(schur) = Schur::try_new(*m, tol, 500) {
            return Some(schur.complex_eigenvalues().iter().cloned().collect());
        }
        tol *= T::lit(1e3);
    }
    None
}

fn spectral_radius_minus_identity<T: Scalar>(eig: &[Complex<T>]) -> T {
    eig.iter()
        .map(|l| complex_abs(&Complex::new(l.re - T::one(), l.im)))
        .fold(T::zero(), |a, b| a.max(b))
}

/// Denman–Beavers iteration for the principal square root.
fn sqrtm<T: Scalar>(a: &Matrix3<T>) -> Option<Matrix3<T>> {
    let half = T::lit(0.5);
    let mut y = *a;
    let mut z = Matrix3::identity();
    for _ in 0..60 {
        let y_inv = y.try_inverse()?;
        let z_inv = z.try_inverse()?;
        let y_next = (y + z_inv) * half;
        let z_next = (z + y_inv) * half;
        let delta = (y_next - y).norm();
        y = y_next;
        z = z_next;
        if delta <= T::eps() * T::lit(8.0) * y.norm() {
            return Some(y);
        }
    }
    if y.iter().all(|v| v.is_finite()) && (y * y - a).norm() <= T::lit(1e-10).max(T::eps() * T::lit(1e3)) * a.norm() {
        Some(y)
    } else {
        None
    }
}

/// Principal matrix logarithm by inverse scaling and squaring.
///
/// The input must have no eigenvalue on the closed negative real axis and must
/// reach the spectral-radius region of `cfg` within `cfg.max_square_roots`
/// square roots; otherwise a log-domain error is returned.
pub fn log_sl3_with<T: Scalar>(h: &GroupElement<T>, cfg: &LogConfig<T>) -> Result<AlgebraMatrix<T>, Sl3Error> {
    let m = h.0;
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Sl3Error::LogDomain { reason: "non-finite entries".into() });
    }
    let mut eig: Vec<Complex<T>> = eigenvalues(&m)
        .ok_or_else(|| Sl3Error::LogDomain { reason: "eigenvalue iteration did not converge".into() })?;
    let axis_tol = T::lit(1e-12).max(T::eps() * T::lit(16.0));
    for l in &eig {
        let modulus = complex_abs(l);
        if modulus <= axis_tol || (l.re <= T::zero() && l.im.abs() <= axis_tol * modulus) {
            return Err(Sl3Error::LogDomain {
                reason: format!("eigenvalue {:?} on the closed negative real axis", (l.re.to_f64_lossy(), l.im.to_f64_lossy())),
            });
        }
    }

    let mut roots = 0u32;
    let mut radius = spectral_radius_minus_identity(&eig);
    while radius >= cfg.series_radius {
        if roots >= cfg.max_square_roots {
            return Err(Sl3Error::LogDomain {
                reason: format!(
                    "spectral radius of h - I is {:.3e} after {} square roots (bound {:.3e})",
                    radius.to_f64_lossy(),
                    roots,
                    cfg.series_radius.to_f64_lossy()
                ),
            });
        }
        eig.iter_mut().for_each(|l| *l = complex_sqrt(l));
        radius = spectral_radius_minus_identity(&eig);
        roots += 1;
    }

    let log_fail = || Sl3Error::LogDomain { reason: "square-root iteration failed to converge".into() };
    let mut x = m;
    for _ in 0..roots {
        x = sqrtm(&x).ok_or_else(log_fail)?;
    }
    // Extra roots keep the series short and accurate; these always converge
    // because the spectrum is already clustered near one.
    let accuracy = T::lit(0.25);
    let identity = Matrix3::<T>::identity();
    let mut extra = 0;
    while (x - identity).norm() > accuracy && extra < 12 {
        x = sqrtm(&x).ok_or_else(log_fail)?;
        roots += 1;
        extra += 1;
    }

    // log X = 2 atanh(Z), Z = (X - I)(X + I)^-1.
    let z = (x - identity) * (x + identity).try_inverse().ok_or_else(log_fail)?;
    let z2 = z * z;
    let mut power = z;
    let mut sum = z;
    for k in 1..60 {
        power *= z2;
        let term = power / T::from_usize(2 * k + 1).unwrap();
        sum += term;
        if term.norm() <= T::eps() * sum.norm().max(T::eps()) {
            break;
        }
    }
    let scale = T::lit(2.0) * T::lit(2.0).powi(roots as i32);
    let log = sum * scale;
    if !log.iter().all(|v| v.is_finite()) {
        return Err(log_fail());
    }
    Ok(AlgebraMatrix::project(log))
}

/// Projects a positive-determinant matrix onto SL(3) by `x / det(x)^(1/3)`.
pub fn project_sl3<T: Scalar>(x: &Matrix3<T>) -> Result<GroupElement<T>, Sl3Error> {
    let det = x.determinant();
    if !(det > T::zero()) || !det.is_finite() {
        return Err(Sl3Error::Projection { det: det.to_f64_lossy() });
    }
    Ok(GroupElement(x / det.cbrt_real()))
}

/// Adjoint matrix: `Ad(h) ξ = (h ξ^ h⁻¹)^∨`, assembled column by column.
pub fn adjoint_matrix<T: Scalar>(h: &GroupElement<T>) -> Matrix8<T> {
    let h_inv = h.inverse();
    let mut ad = Matrix8::zeros();
    for k in 0..8 {
        let conj = h.0 * wedge(&basis::<T>(k)).0 * h_inv.0;
        ad.set_column(k, &vee_unchecked(&conj));
    }
    ad
}

/// Little adjoint: `ad(ξ₁) ξ₂ = [ξ₁^, ξ₂^]^∨`.
pub fn little_adjoint<T: Scalar>(xi: &AlgebraVector<T>) -> Matrix8<T> {
    let a = wedge(xi);
    let mut ad = Matrix8::zeros();
    for k in 0..8 {
        ad.set_column(k, &a.bracket(&wedge(&basis::<T>(k))).vee());
    }
    ad
}

/// The 3×8 matrix with `ξ^ p = p^⊙ ξ`.
pub fn odot<T: Scalar>(p: &Vector3<T>) -> SMatrix<T, 3, 8> {
    let z = T::zero();
    let two = T::lit(2.0);
    SMatrix::<T, 3, 8>::from_row_slice(&[
        p[2], z, -p[1], p[0], p[0], p[1], z, z, //
        z, p[2], p[0], p[1], -p[1], p[0], z, z, //
        z, z, z, -two * p[2], z, z, p[0], p[1],
    ])
}

/// Default finite-difference step for [`right_jacobian`].
pub fn default_jacobian_step<T: Scalar>() -> T {
    T::lit(1e-6).max(T::eps().sqrt())
}

/// Right group Jacobian by backward finite differences.
///
/// Satisfies `exp((ε + d)^) ≈ exp(ε^) exp((Jʳ(ε) d)^)`. Column `k` is
/// `log(exp(-(ε - δ e_k)^) exp(ε^))^∨ / δ`.
pub fn right_jacobian<T: Scalar>(eps: &AlgebraVector<T>, step: T) -> Result<Matrix8<T>, Sl3Error> {
    let exp_eps = exp_sl3(&wedge(eps));
    let mut jac = Matrix8::zeros();
    for k in 0..8 {
        let back = eps - basis::<T>(k) * step;
        let lhs = exp_sl3(&wedge(&(-back)));
        let diff = log_sl3(&(lhs * exp_eps))?;
        jac.set_column(k, &(diff.vee() / step));
    }
    Ok(jac)
}

/// Skew-symmetric matrix `ω×`.
pub fn skew<T: Scalar>(w: &Vector3<T>) -> Matrix3<T> {
    Matrix3::new(T::zero(), -w[2], w[1], w[2], T::zero(), -w[0], -w[1], w[0], T::zero())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn xi_strategy(bound: f64) -> impl Strategy<Value = AlgebraVector<f64>> {
        proptest::collection::vec(-1.0..1.0f64, 8).prop_map(move |v| {
            let x = AlgebraVector::from_vec(v);
            let n = x.norm();
            if n > bound { x * (bound / n) } else { x }
        })
    }

    /// Log of a diagonalisable matrix through its eigendecomposition, the
    /// reference route for well-separated real spectra.
    fn eig_log_oracle(m: &Matrix3<f64>) -> Matrix3<f64> {
        let eig = m.symmetric_eigen();
        let log_d = Matrix3::from_diagonal(&eig.eigenvalues.map(f64::ln));
        eig.eigenvectors * log_d * eig.eigenvectors.transpose()
    }

    /// Plain power series of exp with many terms and no scaling, for small arguments.
    fn series_exp_oracle(m: &Matrix3<f64>) -> Matrix3<f64> {
        let mut sum = Matrix3::identity();
        let mut term = Matrix3::identity();
        for k in 1..60 {
            term = term * m / k as f64;
            sum += term;
        }
        sum
    }

    #[test]
    fn wedge_fourth_basis_is_diagonal_scaling() {
        let m = wedge(&basis::<f64>(3));
        assert_eq!(*m.matrix(), Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -2.0)));
        assert_eq!(vee(m.matrix()).unwrap(), basis(3));
        assert_eq!(wedge(&AlgebraVector::<f64>::zeros()).into_inner(), Matrix3::zeros());
        assert_eq!(vee(&Matrix3::<f64>::zeros()).unwrap(), AlgebraVector::zeros());
    }

    #[test]
    fn vee_rejects_traceful_matrix() {
        let m = Matrix3::<f64>::identity();
        assert!(matches!(vee(&m), Err(Sl3Error::InvalidAlgebraElement { .. })));
    }

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(exp_sl3(&AlgebraMatrix::<f64>::zero()), GroupElement::identity());
        assert_eq!(*log_sl3(&GroupElement::<f64>::identity()).unwrap().matrix(), Matrix3::zeros());
    }

    #[test]
    fn exp_matches_series_oracle() {
        let xi = AlgebraVector::from([0.1, -0.2, 0.3, 0.05, -0.1, 0.2, 0.15, -0.05]);
        let m = wedge(&xi);
        let e = exp_sl3(&m);
        assert!((e.matrix() - series_exp_oracle(m.matrix())).abs().max() < 1e-13);
    }

    #[test]
    fn log_of_large_diagonal_matches_eigen_oracle() {
        let h = GroupElement::new(Matrix3::from_diagonal(&Vector3::new(2.0, 1.0, 0.5))).unwrap();
        // Spectral radius of h - I is 1: outside the series region, reachable by one root.
        let l = log_sl3(&h).unwrap();
        let oracle = eig_log_oracle(h.matrix());
        assert!((l.matrix() - oracle).abs().max() < 1e-12);
        // With the strict guard the same input is rejected instead of returning garbage.
        let strict = LogConfig { series_radius: 0.9, max_square_roots: 0 };
        assert!(matches!(log_sl3_with(&h, &strict), Err(Sl3Error::LogDomain { .. })));
    }

    #[test]
    fn log_of_symmetric_positive_matches_eigen_oracle() {
        let a = Matrix3::new(1.3, 0.2, -0.1, 0.2, 0.9, 0.05, -0.1, 0.05, 1.1);
        let h = project_sl3(&a).unwrap();
        let l = log_sl3(&h).unwrap();
        assert!((l.matrix() - eig_log_oracle(h.matrix())).abs().max() < 1e-12);
    }

    #[test]
    fn log_rejects_negative_real_eigenvalues() {
        let h = GroupElement::new(Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0))).unwrap();
        assert!(matches!(log_sl3(&h), Err(Sl3Error::LogDomain { .. })));
    }

    #[test]
    fn projection_normalises_determinant() {
        let two = Matrix3::<f64>::identity() * 2.0;
        assert!((project_sl3(&two).unwrap().matrix() - Matrix3::identity()).abs().max() < 1e-15);
        let x = Matrix3::<f64>::new(2.0, 0.3, -0.1, 0.1, 1.5, 0.2, 0.0, -0.4, 0.7);
        let p = project_sl3(&x).unwrap();
        assert!((p.matrix().determinant() - 1.0).abs() < 1e-12);
        assert!(matches!(project_sl3(&(-two)), Err(Sl3Error::Projection { .. })));
        assert!(matches!(project_sl3(&Matrix3::<f64>::zeros()), Err(Sl3Error::Projection { .. })));
    }

    #[test]
    fn adjoint_and_little_adjoint_at_identity_and_zero() {
        assert_eq!(adjoint_matrix(&GroupElement::<f64>::identity()), Matrix8::identity());
        assert_eq!(little_adjoint(&AlgebraVector::<f64>::zeros()), Matrix8::zeros());
    }

    #[test]
    fn odot_on_optical_axis() {
        let p = Vector3::new(0.0, 0.0, 1.0);
        let xi = AlgebraVector::from([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        assert_eq!(odot(&p) * xi, Vector3::new(1.0, 2.0, -8.0));
        assert_eq!(odot(&Vector3::<f64>::zeros()), SMatrix::<f64, 3, 8>::zeros());
    }

    #[test]
    fn odot_columns_match_basis_brute_force() {
        let p = Vector3::new(0.3, -1.2, 0.8);
        let o = odot(&p);
        for k in 0..8 {
            let col = wedge(&basis::<f64>(k)).matrix() * p;
            assert_eq!(o.column(k).into_owned(), col);
        }
    }

    #[test]
    fn right_jacobian_at_origin_is_identity() {
        let j = right_jacobian(&AlgebraVector::<f64>::zeros(), 1e-6).unwrap();
        assert!((j - Matrix8::identity()).abs().max() < 1e-5);
    }

    #[test]
    fn right_jacobian_matches_series_oracle() {
        // Jr(ε) = Σ_k (-ad ε)^k / (k+1)!
        let eps = AlgebraVector::from([0.2, -0.1, 0.15, 0.05, -0.08, 0.12, 0.1, -0.07]);
        let ad = little_adjoint(&eps);
        let mut oracle = Matrix8::identity();
        let mut term = Matrix8::identity();
        for k in 1..40 {
            term = term * (-ad) / (k as f64 + 1.0);
            oracle += term;
        }
        let j = right_jacobian(&eps, 1e-6).unwrap();
        assert!((j - oracle).abs().max() < 5e-6, "max err {}", (j - oracle).abs().max());
    }

    #[test]
    fn right_jacobian_first_order_consistency() {
        let eps = AlgebraVector::from([0.3, -0.2, 0.1, 0.05, 0.1, -0.15, 0.2, 0.1]);
        let j = right_jacobian(&eps, 1e-6).unwrap();
        let base = exp_sl3(&wedge(&eps));
        for scale in [1e-3, 1e-4] {
            let d = AlgebraVector::from([1.0, -0.5, 0.3, 0.2, -0.1, 0.4, -0.6, 0.7]).normalize() * scale;
            let lhs = exp_sl3(&wedge(&(eps + d)));
            let rhs = base * exp_sl3(&wedge(&(j * d)));
            let resid = (lhs.matrix() - rhs.matrix()).norm();
            // Residual must be second order in ‖d‖ (plus the O(δ‖d‖) FD error).
            assert!(resid < 2.0 * scale * scale + 1e-5 * scale, "resid {resid} at {scale}");
        }
    }

    #[test]
    fn right_jacobian_invertible_on_half_ball() {
        for k in 0..8 {
            let eps = basis::<f64>(k) * 0.5;
            let j = right_jacobian(&eps, 1e-6).unwrap();
            let sv = j.singular_values();
            let cond = sv.max() / sv.min();
            assert!(cond.is_finite() && cond < 10.0, "cond {cond}");
        }
    }

    #[test]
    fn f32_round_trip() {
        let xi = AlgebraVector::<f32>::from([0.1, -0.2, 0.05, 0.02, -0.03, 0.04, 0.1, -0.1]);
        let h = exp_sl3(&wedge(&xi));
        assert!((h.matrix().determinant() - 1.0).abs() < 1e-5);
        let back = log_sl3(&h).unwrap().vee();
        assert!((back - xi).abs().max() < 1e-5);
    }

    proptest! {
        #[test]
        fn wedge_vee_inverse(xi in xi_strategy(10.0)) {
            let m = wedge(&xi);
            prop_assert!(m.matrix().trace().abs() < 1e-14 * (1.0 + m.matrix().norm()));
            prop_assert!((vee(m.matrix()).unwrap() - xi).abs().max() < 1e-14);
        }

        #[test]
        fn exp_has_unit_determinant_and_inverse(xi in xi_strategy(1.0)) {
            let m = wedge(&xi);
            let h = exp_sl3(&m);
            prop_assert!((h.matrix().determinant() - 1.0).abs() < 1e-10);
            let prod = h * exp_sl3(&m.scale(-1.0));
            prop_assert!((prod.matrix() - Matrix3::identity()).abs().max() < 1e-10);
        }

        #[test]
        fn exp_log_round_trip(xi in xi_strategy(0.5)) {
            let h = exp_sl3(&wedge(&xi));
            let l = log_sl3(&h).unwrap();
            prop_assert!(l.matrix().trace().abs() < 1e-10);
            prop_assert!((l.vee() - xi).norm() < 1e-9);
            prop_assert!((exp_sl3(&l).matrix() - h.matrix()).abs().max() < 1e-9);
        }

        #[test]
        fn adjoint_is_conjugation(a in xi_strategy(1.0), xi in xi_strategy(2.0)) {
            let h = exp_sl3(&wedge(&a));
            let direct = (h.matrix() * wedge(&xi).matrix() * h.inverse().matrix()).clone();
            let via = adjoint_matrix(&h) * xi;
            prop_assert!((vee_unchecked(&direct) - via).abs().max() < 1e-9);
        }

        #[test]
        fn adjoint_is_homomorphism(a in xi_strategy(1.0), b in xi_strategy(1.0)) {
            let h1 = exp_sl3(&wedge(&a));
            let h2 = exp_sl3(&wedge(&b));
            let lhs = adjoint_matrix(&(h1 * h2));
            let rhs = adjoint_matrix(&h1) * adjoint_matrix(&h2);
            prop_assert!((lhs - rhs).abs().max() < 1e-9);
        }

        #[test]
        fn little_adjoint_is_bracket(a in xi_strategy(2.0), b in xi_strategy(2.0)) {
            let direct = wedge(&a).bracket(&wedge(&b)).vee();
            prop_assert!((little_adjoint(&a) * b - direct).abs().max() < 1e-12);
            prop_assert!((little_adjoint(&a) * a).abs().max() < 1e-12);
        }

        #[test]
        fn odot_identity(xi in xi_strategy(5.0), p in proptest::array::uniform3(-3.0..3.0f64)) {
            let p = Vector3::from(p);
            let lhs = wedge(&xi).matrix() * p;
            prop_assert!((lhs - odot(&p) * xi).abs().max() < 1e-13);
        }

        #[test]
        fn projection_is_idempotent(xi in xi_strategy(1.0), s in 0.1..5.0f64) {
            let h = exp_sl3(&wedge(&xi));
            let again = project_sl3(h.matrix()).unwrap();
            prop_assert!((again.matrix() - h.matrix()).abs().max() < 1e-14);
            let scaled = project_sl3(&(h.matrix() * s)).unwrap();
            prop_assert!((scaled.matrix().determinant() - 1.0).abs() < 1e-12);
        }
    }
}
