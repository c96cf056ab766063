use nalgebra::{SMatrix, Vector3};

use super::{FilterState, NoiseConfig};
use crate::linalg::{expm, norm1, symmetrize};
use crate::scalar::Scalar;
use crate::sl3::{adjoint_matrix, little_adjoint, project_sl3, skew, vee, AlgebraMatrix};

/// Continuous-time error dynamics `A`.
pub type ProcessJacobian<T> = SMatrix<T, 16, 16>;
/// Noise input matrix `L` for the stacked noise `(δw ∈ ℝ³, δwᵐ ∈ ℝ⁸)`.
pub type NoiseJacobian<T> = SMatrix<T, 16, 11>;

/// The 8×3 matrix `B` with `(ω×)^∨ = B ω`.
pub fn b_projection<T: Scalar>() -> SMatrix<T, 8, 3> {
    let mut b = SMatrix::<T, 8, 3>::zeros();
    for k in 0..3 {
        let mut e = Vector3::zeros();
        e[k] = T::one();
        let col = vee(&skew(&e)).expect("skew matrices are trace-free");
        b.set_column(k, &col);
    }
    b
}

/// Exact flow of `Ḣ = H(ω× + Γ)`, `Γ̇ = [Γ, ω×]` over `dt` with constant `ω`:
/// `Γ(dt) = Rᵀ Γ R` and `H(dt) = H exp(Γ dt) R` with `R = exp(ω× dt)`.
/// `H` is re-projected onto SL(3) and `Γ` onto trace-free matrices to
/// remove rounding drift.
pub fn propagate_state<T: Scalar>(state: &FilterState<T>, omega: &Vector3<T>, dt: T) -> FilterState<T> {
    let r = expm(&(skew(omega) * dt));
    let g0 = *state.gamma.matrix();
    let h1 = state.h.matrix() * expm(&(g0 * dt)) * r;
    let g1 = r.transpose() * g0 * r;
    let h = project_sl3(&h1).unwrap_or(state.h);
    FilterState { h, gamma: AlgebraMatrix::project(g1), t: state.t + dt.to_f64_lossy() }
}

/// Right-invariant linearisation of the process model about `state` with
/// gyro input `omega`.
pub fn linearize_process<T: Scalar>(state: &FilterState<T>, omega: &Vector3<T>) -> (ProcessJacobian<T>, NoiseJacobian<T>) {
    let ad_h = adjoint_matrix(&state.h);
    let b = b_projection::<T>();
    let ad_u = little_adjoint(&(b * omega));
    let ad_gamma = little_adjoint(&state.gamma.vee());

    let mut a = ProcessJacobian::zeros();
    a.fixed_view_mut::<8, 8>(0, 8).copy_from(&(-ad_h));
    a.fixed_view_mut::<8, 8>(8, 8).copy_from(&(-ad_u));

    let mut l = NoiseJacobian::zeros();
    l.fixed_view_mut::<8, 3>(0, 0).copy_from(&(ad_h * b));
    l.fixed_view_mut::<8, 3>(8, 0).copy_from(&(-(ad_gamma * b)));
    l.fixed_view_mut::<8, 8>(8, 3).copy_from(&SMatrix::<T, 8, 8>::identity());
    (a, l)
}

/// Block-diagonal PSD of the stacked noise: `diag(σ_g² I₃, σ_m² I₈)`.
pub fn continuous_noise<T: Scalar>(noise: &NoiseConfig<T>) -> SMatrix<T, 11, 11> {
    let mut q = SMatrix::<T, 11, 11>::zeros();
    let g2 = noise.sigma_g * noise.sigma_g;
    for i in 0..3 {
        q[(i, i)] = g2;
    }
    for i in 3..11 {
        q[(i, i)] = noise.sigma_m2;
    }
    q
}

/// Discretisation scheme for `(Φ, Q_d)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discretization {
    /// Exact for piecewise-constant `A` and white noise.
    #[default]
    VanLoan,
    /// `Φ = I + A dt`, `Q_d = L Q Lᵀ dt`.
    FirstOrder,
}

/// Van Loan discretisation of `ẋ = A x + L w`, `E[w wᵀ] = Q δ`.
pub fn discretize<T: Scalar>(
    a: &ProcessJacobian<T>,
    l: &NoiseJacobian<T>,
    qc: &SMatrix<T, 11, 11>,
    dt: T,
) -> (ProcessJacobian<T>, ProcessJacobian<T>) {
    discretize_with(a, l, qc, dt, Discretization::VanLoan)
}

pub fn discretize_with<T: Scalar>(
    a: &ProcessJacobian<T>,
    l: &NoiseJacobian<T>,
    qc: &SMatrix<T, 11, 11>,
    dt: T,
    method: Discretization,
) -> (ProcessJacobian<T>, ProcessJacobian<T>) {
    let q = l * qc * l.transpose();
    match method {
        Discretization::FirstOrder => (ProcessJacobian::identity() + a * dt, symmetrize(&(q * dt))),
        Discretization::VanLoan => {
            // exp([[-A, Q], [0, Aᵀ]] dt) = [[·, E12], [0, E22]];  Φ = E22ᵀ, Q_d = Φ E12.
            let (_, e12, e22) = block_triangular_exp(&(-a * dt), &(q * dt), &(a.transpose() * dt));
            let phi = e22.transpose();
            let qd = symmetrize(&(phi * e12));
            (phi, qd)
        }
    }
}

type M16<T> = SMatrix<T, 16, 16>;

/// Exponential of the block upper-triangular matrix `[[X, Y], [0, Z]]`,
/// evaluated blockwise by scaling and squaring of the Taylor series.
fn block_triangular_exp<T: Scalar>(x: &M16<T>, y: &M16<T>, z: &M16<T>) -> (M16<T>, M16<T>, M16<T>) {
    let half = T::lit(0.5);
    let norm = norm1(x).max(norm1(z));
    let mut squarings = 0u32;
    let mut scale = T::one();
    while norm * scale > half && squarings < 64 {
        scale *= half;
        squarings += 1;
    }
    let (xs, ys, zs) = (x * scale, y * scale, z * scale);

    let mut sx = M16::identity();
    let mut sy = M16::zeros();
    let mut sz = M16::identity();
    let (mut tx, mut ty, mut tz) = (M16::identity(), M16::zeros(), M16::identity());
    for k in 1..40 {
        let inv_k = T::one() / T::from_usize(k).unwrap();
        // [[tx, ty], [0, tz]] · [[xs, ys], [0, zs]] / k
        let nty = (tx * ys + ty * zs) * inv_k;
        tx = tx * xs * inv_k;
        tz = tz * zs * inv_k;
        ty = nty;
        sx += tx;
        sy += ty;
        sz += tz;
        let small = |t: &M16<T>, s: &M16<T>| norm1(t) <= T::eps() * norm1(s);
        if small(&tx, &sx) && small(&tz, &sz) && (norm1(&ty) <= T::eps() * norm1(&sy) || norm1(&sy) == T::zero()) {
            break;
        }
    }
    for _ in 0..squarings {
        let ny = sx * sy + sy * sz;
        sx = sx * sx;
        sz = sz * sz;
        sy = ny;
    }
    (sx, sy, sz)
}
