//! Bayesian homography estimation on `SL(3)` from rate-gyro and planar
//! feature measurements.
//!
//! The algebra, models and filters are generic over the scalar type; the
//! simulator, metrics and experiment harness work in `f64`.

pub mod linalg;
pub mod models;
pub mod scalar;
pub mod sl3;
pub mod filters;
pub mod sim;
pub mod metrics;
pub mod experiment;
pub mod io;

pub type GroupElementF64 = sl3::GroupElement<f64>;
pub type GroupElementF32 = sl3::GroupElement<f32>;
pub type AlgebraMatrixF64 = sl3::AlgebraMatrix<f64>;
pub type AlgebraMatrixF32 = sl3::AlgebraMatrix<f32>;
pub type FilterStateF64 = models::FilterState<f64>;
pub type FilterStateF32 = models::FilterState<f32>;
pub type BeliefStateF64 = filters::BeliefState<f64>;
pub type BeliefStateF32 = filters::BeliefState<f32>;
pub type IekfConfigF64 = filters::IekfConfig<f64>;
pub type IekfConfigF32 = filters::IekfConfig<f32>;
pub type ImmConfigF64 = filters::ImmConfig<f64>;
pub type ImmConfigF32 = filters::ImmConfig<f32>;
pub type ImmStateF64 = filters::ImmState<f64>;
pub type ImmStateF32 = filters::ImmState<f32>;
