//! Small dense helpers not provided directly by nalgebra.

use nalgebra::SMatrix;

use crate::scalar::Scalar;

/// Induced 1-norm (maximum absolute column sum).
pub fn norm1<T: Scalar, const R: usize, const C: usize>(m: &SMatrix<T, R, C>) -> T {
    let mut best = T::zero();
    for col in m.column_iter() {
        let s = col.iter().fold(T::zero(), |acc, v| acc + v.abs());
        if s > best {
            best = s;
        }
    }
    best
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
///
/// The argument is scaled until its 1-norm is at most 1/2; the series is then
/// summed until the next term is below machine precision relative to the sum.
pub fn expm<T: Scalar, const D: usize>(m: &SMatrix<T, D, D>) -> SMatrix<T, D, D> {
    let norm = norm1(m);
    let half = T::lit(0.5);
    let mut squarings = 0u32;
    let mut scale = T::one();
    while norm * scale > half && squarings < 64 {
        scale *= half;
        squarings += 1;
    }
    let a = m * scale;
    let mut sum = SMatrix::<T, D, D>::identity();
    let mut term = SMatrix::<T, D, D>::identity();
    for k in 1..40 {
        term = term * a * (T::one() / T::from_usize(k).unwrap());
        sum += term;
        if norm1(&term) <= T::eps() * norm1(&sum) {
            break;
        }
    }
    for _ in 0..squarings {
        sum = sum * sum;
    }
    sum
}

/// Symmetric part `(P + Pᵀ)/2`.
pub fn symmetrize<T: Scalar, const D: usize>(p: &SMatrix<T, D, D>) -> SMatrix<T, D, D> {
    (p + p.transpose()) * T::lit(0.5)
}
