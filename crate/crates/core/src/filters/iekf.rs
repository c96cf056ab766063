use nalgebra::{DMatrix, DVector, Matrix2, SMatrix, SVector};
use serde::{Deserialize, Serialize};

use super::{zoh_segments, FilterError};
use crate::linalg::symmetrize;
use crate::models::{
    continuous_noise, discretize_with, linearize_process, measurement_jacobian, predict_pixel, propagate_state,
    CameraIntrinsics, Discretization, FeatureFrame, FilterState, GyroSample, NoiseConfig, StateCovariance,
};
use crate::scalar::Scalar;
use crate::sl3::{default_jacobian_step, exp_sl3, right_jacobian, wedge, AlgebraVector, Matrix8};

type Vector16<T> = SVector<T, 16>;

/// Settings of the iterated EKF.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct IekfConfig<T: Scalar> {
    pub noise: NoiseConfig<T>,
    /// Upper bound on Gauss–Newton iterations per correction.
    pub max_gn_iters: usize,
    /// Iteration stops once the step norm drops below this value.
    pub gn_tol: T,
    /// SC/DCS threshold on the squared normalised pixel residual.
    pub robust_c: T,
    /// Apply SC/DCS weights to pixel residuals.
    pub robust: bool,
    /// Fold the robust weights into the likelihood used by the IMM.
    pub robust_likelihood: bool,
    /// Covariance that whitens a pixel residual before the robust weight.
    #[serde(default)]
    pub robust_scale: RobustScale,
    pub discretization: Discretization,
}

/// Whitening of the residual fed to the SC/DCS weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobustScale {
    /// `r² = νᵀ S⁻¹ ν` with `S = G P Gᵀ + R`, where `P` is the uncertainty of
    /// the current Gauss–Newton iterate. A broad prior then does not turn
    /// every feature into an outlier.
    #[default]
    Innovation,
    /// `r² = ‖ν‖² / σ_r²`.
    Measurement,
}

impl<T: Scalar> IekfConfig<T> {
    pub fn new(noise: NoiseConfig<T>) -> Self {
        Self {
            noise,
            max_gn_iters: 5,
            gn_tol: T::lit(1e-8),
            robust_c: T::lit(9.5),
            robust: true,
            robust_likelihood: true,
            robust_scale: RobustScale::Innovation,
            discretization: Discretization::VanLoan,
        }
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        self.noise.validate()?;
        if self.max_gn_iters == 0 {
            return Err(FilterError::Config("max_gn_iters must be at least 1".into()));
        }
        if !(self.robust_c > T::zero()) {
            return Err(FilterError::Config("robust_c must be positive".into()));
        }
        if !(self.gn_tol >= T::zero()) {
            return Err(FilterError::Config("gn_tol must be non-negative".into()));
        }
        Ok(())
    }
}

impl Default for IekfConfig<f64> {
    fn default() -> Self {
        Self::new(NoiseConfig::default())
    }
}

/// Gaussian belief: mean state and covariance of the error `(δξ, δγ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeliefState<T: Scalar> {
    pub mean: FilterState<T>,
    pub cov: StateCovariance<T>,
}

impl<T: Scalar> BeliefState<T> {
    pub fn new(mean: FilterState<T>, cov: StateCovariance<T>) -> Self {
        Self { mean, cov }
    }

    /// Homography block of the covariance.
    pub fn cov_hh(&self) -> Matrix8<T> {
        self.cov.fixed_view::<8, 8>(0, 0).into_owned()
    }
}

/// Outcome of one correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Correction<T: Scalar> {
    pub belief: BeliefState<T>,
    /// Gaussian log-likelihood of the frame under the prior, with each
    /// feature's pixel noise inflated by its final robust weight.
    pub log_likelihood: T,
    /// Robust weight of each frame feature at the final iterate; `1` for
    /// features that were not used.
    pub weights: Vec<T>,
    pub report: CorrectionReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CorrectionReport {
    pub iterations: usize,
    pub final_step_norm: f64,
    pub features_used: usize,
    pub features_skipped: usize,
    /// Smallest robust weight applied at the final iterate.
    pub min_weight: f64,
    /// The iteration stopped early because the iterate left the log domain.
    pub log_failure: bool,
    /// Step halvings made by the line search over all iterations.
    pub step_halvings: usize,
}

/// SC/DCS weight: `1` below the threshold, `4c²/(c + r²)²` above it.
pub fn scdcs_weight<T: Scalar>(r2: T, c: T) -> T {
    if r2 < c {
        T::one()
    } else {
        let d = c + r2;
        T::lit(4.0) * c * c / (d * d)
    }
}

/// Propagates the belief over `dt` with constant gyro reading `omega`.
///
/// The mean follows the nonlinear model; the covariance uses the Jacobians
/// at the prior mean.
pub fn ekf_predict<T: Scalar>(
    belief: &BeliefState<T>,
    gyro: &GyroSample<T>,
    dt: f64,
    cfg: &IekfConfig<T>,
) -> BeliefState<T> {
    let dt_s = T::lit(dt);
    let (a, l) = linearize_process(&belief.mean, &gyro.omega);
    let qc = continuous_noise(&cfg.noise);
    let (phi, qd) = discretize_with(&a, &l, &qc, dt_s, cfg.discretization);
    let mut mean = propagate_state(&belief.mean, &gyro.omega, dt_s);
    mean.t = belief.mean.t + dt;
    let cov = symmetrize(&(phi * belief.cov * phi.transpose() + qd));
    debug_assert!(is_psd(&cov), "predicted covariance lost definiteness");
    BeliefState { mean, cov }
}

/// Predicts through the gyro stream from the belief time up to `t_end`.
pub fn propagate_through<T: Scalar>(
    belief: &BeliefState<T>,
    gyro: &[GyroSample<T>],
    t_end: f64,
    cfg: &IekfConfig<T>,
) -> BeliefState<T> {
    let mut b = *belief;
    for (omega, dt) in zoh_segments(gyro, belief.mean.t, t_end) {
        b = ekf_predict(&b, &GyroSample { t: b.mean.t, omega }, dt, cfg);
    }
    b.mean.t = t_end.max(b.mean.t);
    b
}

pub(crate) struct Linearized<T: Scalar> {
    jac: SMatrix<T, 2, 16>,
    residual: nalgebra::Vector2<T>,
}

fn linearize_features<T: Scalar>(
    state: &FilterState<T>,
    frame: &FeatureFrame<T>,
    active: &[bool],
    k: &CameraIntrinsics<T>,
) -> Vec<Option<Linearized<T>>> {
    frame
        .correspondences
        .iter()
        .zip(active)
        .map(|(c, &on)| {
            if !on {
                return None;
            }
            let y = predict_pixel(state, &c.p_ref, k).ok()?;
            let jac = measurement_jacobian(state, &c.p_ref, k).ok()?;
            Some(Linearized { jac, residual: c.y_pix - y })
        })
        .collect()
}

/// Error of `iterate` expressed in the prior's coordinates.
fn prior_delta<T: Scalar>(prior: &FilterState<T>, iterate: &FilterState<T>) -> Result<Vector16<T>, FilterError> {
    let mut delta = Vector16::zeros();
    let diff = *prior.h.matrix() - iterate.h.matrix();
    if diff.iter().any(|v| *v != T::zero()) {
        let xi = (prior.h * iterate.h.inverse()).log()?.vee();
        delta.fixed_rows_mut::<8>(0).copy_from(&xi);
    }
    delta.fixed_rows_mut::<8>(8).copy_from(&iterate.gamma.sub(&prior.gamma).vee());
    Ok(delta)
}

/// Jacobian of the prior error with respect to a perturbation of the iterate.
fn prior_error_jacobian<T: Scalar>(delta: &Vector16<T>) -> Result<StateCovariance<T>, FilterError> {
    let mut jac = StateCovariance::identity();
    let xi: AlgebraVector<T> = delta.fixed_rows::<8>(0).into_owned();
    if xi.iter().any(|v| *v != T::zero()) {
        let jr = right_jacobian(&xi, default_jacobian_step())?;
        let jr_inv = jr
            .try_inverse()
            .ok_or_else(|| FilterError::Covariance("singular right Jacobian".into()))?;
        jac.fixed_view_mut::<8, 8>(0, 0).copy_from(&jr_inv);
    }
    Ok(jac)
}

/// Weighted least-squares cost with the robust weights held fixed. `None`
/// when an active feature cannot be predicted.
fn wls_cost<T: Scalar>(
    delta: &Vector16<T>,
    prior_info: &StateCovariance<T>,
    state: &FilterState<T>,
    frame: &FeatureFrame<T>,
    active: &[bool],
    weights: &[T],
    k: &CameraIntrinsics<T>,
    r_inv: T,
) -> Option<T> {
    let mut cost = delta.dot(&(prior_info * delta));
    let mut w = weights.iter();
    for (c, &on) in frame.correspondences.iter().zip(active) {
        let wi = *w.next()?;
        if on {
            let y = predict_pixel(state, &c.p_ref, k).ok()?;
            cost += (c.y_pix - y).norm_squared() * r_inv * wi;
        }
    }
    cost.is_finite().then_some(cost * T::lit(0.5))
}

/// Line-search halvings tried before a Gauss–Newton step is abandoned.
const MAX_STEP_HALVINGS: usize = 10;

fn retract<T: Scalar>(state: &FilterState<T>, step: &Vector16<T>) -> FilterState<T> {
    let dxi: AlgebraVector<T> = step.fixed_rows::<8>(0).into_owned();
    let dg: AlgebraVector<T> = step.fixed_rows::<8>(8).into_owned();
    FilterState { h: exp_sl3(&wedge(&-dxi)) * state.h, gamma: state.gamma.add(&wedge(&dg)), t: state.t }
}

fn robust_weights<T: Scalar>(lin: &[Option<Linearized<T>>], prior_cov: &StateCovariance<T>, cfg: &IekfConfig<T>) -> Vec<T> {
    let r_var = cfg.noise.sigma_r * cfg.noise.sigma_r;
    lin.iter()
        .map(|l| match l {
            Some(l) if cfg.robust => {
                let plain = l.residual.norm_squared() / r_var;
                let r2 = match cfg.robust_scale {
                    RobustScale::Measurement => plain,
                    RobustScale::Innovation => {
                        let s = l.jac * prior_cov * l.jac.transpose() + Matrix2::identity() * r_var;
                        s.cholesky().map_or(plain, |c| l.residual.dot(&c.solve(&l.residual)))
                    }
                };
                scdcs_weight(r2, cfg.robust_c)
            }
            _ => T::one(),
        })
        .collect()
}

fn information<T: Scalar>(
    prior_info: &StateCovariance<T>,
    jac: &StateCovariance<T>,
    lin: &[Option<Linearized<T>>],
    weights: &[T],
    r_inv: T,
) -> StateCovariance<T> {
    let mut info = jac.transpose() * prior_info * jac;
    for (l, &w) in lin.iter().zip(weights) {
        if let Some(l) = l {
            info += l.jac.transpose() * l.jac * (w * r_inv);
        }
    }
    symmetrize(&info)
}

fn spd_inverse<T: Scalar>(m: &StateCovariance<T>, what: &str) -> Result<StateCovariance<T>, FilterError> {
    m.cholesky()
        .map(|c| symmetrize(&c.inverse()))
        .ok_or_else(|| FilterError::Covariance(format!("{what} is not positive definite")))
}

/// Innovation of a frame at the prior mean.
pub(crate) struct Innovation<T: Scalar> {
    /// Frame index of each stacked feature.
    index: Vec<usize>,
    nu: DVector<T>,
    /// `G P̌ Gᵀ` without the pixel noise.
    gpg: DMatrix<T>,
    r_var: T,
}

fn innovation<T: Scalar>(
    prior: &BeliefState<T>,
    lin: &[Option<Linearized<T>>],
    cfg: &IekfConfig<T>,
) -> Innovation<T> {
    let index: Vec<usize> = lin.iter().enumerate().filter_map(|(i, l)| l.as_ref().map(|_| i)).collect();
    let m = index.len();
    let r_var = cfg.noise.sigma_r * cfg.noise.sigma_r;
    let mut g = DMatrix::<T>::zeros(2 * m, 16);
    let mut nu = DVector::<T>::zeros(2 * m);
    for (row, &i) in index.iter().enumerate() {
        let l = lin[i].as_ref().expect("indexed feature is linearised");
        g.view_mut((2 * row, 0), (2, 16)).copy_from(&l.jac);
        nu.rows_mut(2 * row, 2).copy_from(&l.residual);
    }
    let p = DMatrix::from_iterator(16, 16, prior.cov.iter().cloned());
    let gpg = &g * p * g.transpose();
    Innovation { index, nu, gpg, r_var }
}

impl<T: Scalar> Innovation<T> {
    /// Gaussian log-likelihood with feature `i`'s pixel noise inflated to `R / weights[i]`.
    pub(crate) fn log_likelihood(&self, weights: &[T]) -> T {
        let m = self.index.len();
        if m == 0 {
            return T::zero();
        }
        let mut s = self.gpg.clone();
        for (row, &i) in self.index.iter().enumerate() {
            for d in 0..2 {
                s[(2 * row + d, 2 * row + d)] += self.r_var / weights[i];
            }
        }
        let s = (&s + s.transpose()) * T::lit(0.5);
        let Some(chol) = s.cholesky() else {
            return T::lit(f64::NEG_INFINITY);
        };
        let maha = self.nu.dot(&chol.solve(&self.nu));
        let log_det = chol.l().diagonal().iter().fold(T::zero(), |acc, d| acc + d.ln()) * T::lit(2.0);
        let two_pi = T::lit(2.0 * std::f64::consts::PI);
        -(maha + log_det + T::from_usize(2 * m).unwrap() * two_pi.ln()) * T::lit(0.5)
    }
}

/// Innovation of `frame` at the belief mean, for likelihood evaluation.
pub(crate) fn frame_innovation<T: Scalar>(
    belief: &BeliefState<T>,
    frame: &FeatureFrame<T>,
    k: &CameraIntrinsics<T>,
    cfg: &IekfConfig<T>,
) -> Innovation<T> {
    let all = vec![true; frame.correspondences.len()];
    innovation(belief, &linearize_features(&belief.mean, frame, &all, k), cfg)
}

/// Iterated EKF correction solved by Gauss–Newton on the weighted
/// least-squares cost of the prior and pixel residuals.
///
/// Each step `η` is applied as `H ← exp(−η_ξ^) H`, `Γ ← Γ + η_γ^`. The
/// posterior covariance is the inverse Gauss–Newton information at the final
/// iterate. An empty frame, or one whose points all lie behind the camera,
/// leaves the belief unchanged with zero log-likelihood.
pub fn ekf_correct<T: Scalar>(
    belief: &BeliefState<T>,
    frame: &FeatureFrame<T>,
    k: &CameraIntrinsics<T>,
    cfg: &IekfConfig<T>,
) -> Result<Correction<T>, FilterError> {
    let n = frame.correspondences.len();
    let mut report = CorrectionReport { min_weight: 1.0, ..Default::default() };
    let unchanged =
        |report: CorrectionReport| Correction { belief: *belief, log_likelihood: T::zero(), weights: vec![T::one(); n], report };
    if n == 0 {
        return Ok(unchanged(report));
    }
    let prior = belief.mean;
    let all = vec![true; n];
    let first = linearize_features(&prior, frame, &all, k);
    let active: Vec<bool> = first.iter().map(Option::is_some).collect();
    report.features_used = active.iter().filter(|a| **a).count();
    report.features_skipped = n - report.features_used;
    if report.features_used == 0 {
        return Ok(unchanged(report));
    }

    let inn = innovation(belief, &first, cfg);
    let prior_info = spd_inverse(&belief.cov, "prior covariance")?;
    let r_inv = T::one() / (cfg.noise.sigma_r * cfg.noise.sigma_r);

    let mut iterate = prior;
    let mut lin = first;
    let mut delta = Vector16::zeros();
    let mut jac = StateCovariance::identity();
    // Uncertainty of the current iterate: the prior, then the inverse
    // information of the previous Gauss–Newton step.
    let mut scale_cov = belief.cov;
    for it in 0..cfg.max_gn_iters {
        let weights = robust_weights(&lin, &scale_cov, cfg);
        let info = information(&prior_info, &jac, &lin, &weights, r_inv);
        let mut rhs = -(jac.transpose() * prior_info * delta);
        for (l, &w) in lin.iter().zip(&weights) {
            if let Some(l) = l {
                rhs += l.jac.transpose() * l.residual * (w * r_inv);
            }
        }
        let chol = info
            .cholesky()
            .ok_or_else(|| FilterError::Covariance("Gauss-Newton information is not positive definite".into()))?;
        let step = chol.solve(&rhs);
        scale_cov = symmetrize(&chol.inverse());
        if !step.iter().all(|v| v.is_finite()) {
            report.log_failure = true;
            break;
        }

        // Backtracking: halve the step until the cost does not increase beyond
        // rounding.
        let cost_now = wls_cost(&delta, &prior_info, &iterate, frame, &active, &weights, k, r_inv);
        let mut scale = T::one();
        let mut accepted = None;
        for halving in 0..=MAX_STEP_HALVINGS {
            let candidate = retract(&iterate, &(step * scale));
            if candidate.h.is_finite() {
                if let Ok(cand_delta) = prior_delta(&prior, &candidate) {
                    let cost = wls_cost(&cand_delta, &prior_info, &candidate, frame, &active, &weights, k, r_inv);
                    let better = match (cost, cost_now) {
                        (Some(c), Some(now)) => c <= now + T::lit(1e-10) * now.max(T::one()),
                        (Some(_), None) => true,
                        _ => false,
                    };
                    if better {
                        accepted = Some((candidate, cand_delta));
                        report.step_halvings += halving;
                        break;
                    }
                }
            }
            scale *= T::lit(0.5);
        }
        let Some((candidate, cand_delta)) = accepted else {
            break;
        };
        let Ok(cand_jac) = prior_error_jacobian(&cand_delta) else {
            report.log_failure = true;
            break;
        };
        iterate = candidate;
        delta = cand_delta;
        jac = cand_jac;
        report.iterations = it + 1;
        let taken = step * scale;
        report.final_step_norm = taken.norm().to_f64_lossy();
        lin = linearize_features(&iterate, frame, &active, k);
        if taken.norm() < cfg.gn_tol {
            break;
        }
    }

    let weights = robust_weights(&lin, &scale_cov, cfg);
    report.min_weight = weights.iter().fold(1.0_f64, |acc, w| acc.min(w.to_f64_lossy()));
    let info = information(&prior_info, &jac, &lin, &weights, r_inv);
    let cov = spd_inverse(&info, "posterior information")?;
    debug_assert!(is_psd(&cov), "posterior covariance lost definiteness");
    let log_likelihood = if cfg.robust_likelihood { inn.log_likelihood(&weights) } else { inn.log_likelihood(&vec![T::one(); n]) };
    Ok(Correction { belief: BeliefState { mean: iterate, cov }, log_likelihood, weights, report })
}

fn is_psd<T: Scalar>(p: &StateCovariance<T>) -> bool {
    let jitter = T::eps() * T::lit(64.0) * p.diagonal().iter().fold(T::one(), |a, d| a.max(d.abs()));
    (p + StateCovariance::identity() * jitter).cholesky().is_some()
}
