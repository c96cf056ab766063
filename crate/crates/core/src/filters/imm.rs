use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::iekf::{
    ekf_correct, ekf_predict, frame_innovation, BeliefState, CorrectionReport, IekfConfig,
};
use super::{zoh_segments, FilterError};
use crate::linalg::symmetrize;
use crate::models::{CameraIntrinsics, FeatureFrame, GyroSample, NoiseConfig, StateCovariance};
use crate::scalar::Scalar;
use crate::sl3::{default_jacobian_step, exp_sl3, right_jacobian, wedge, AlgebraVector};

type Vector16<T> = nalgebra::SVector<T, 16>;

/// Which estimate the IMM reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImmOutput {
    /// Weighted mixture of all modes about the most probable one.
    #[default]
    Mixture,
    /// The most probable mode on its own.
    MaxWeight,
}

/// Bank of mode-conditioned iterated EKFs that differ only in `σ_m²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct ImmConfig<T: Scalar> {
    pub mode_sigmas: Vec<T>,
    /// Row-stochastic Markov matrix: `transition[i][j]` is the probability of
    /// switching from mode `i` to mode `j`.
    pub transition: Vec<Vec<T>>,
    pub base: IekfConfig<T>,
    #[serde(default)]
    pub output: ImmOutput,
}

impl<T: Scalar> ImmConfig<T> {
    /// Number of modes.
    pub fn len(&self) -> usize {
        self.mode_sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mode_sigmas.is_empty()
    }

    /// Filter settings of mode `i`.
    pub fn mode_config(&self, i: usize) -> IekfConfig<T> {
        IekfConfig { noise: NoiseConfig { sigma_m2: self.mode_sigmas[i], ..self.base.noise }, ..self.base }
    }

    /// Checks shapes and stochasticity. A single mode is accepted; it reduces
    /// the bank to one iterated EKF.
    pub fn validate(&self) -> Result<(), FilterError> {
        let n = self.len();
        if n == 0 {
            return Err(FilterError::Config("at least one mode is required".into()));
        }
        if self.transition.len() != n || self.transition.iter().any(|r| r.len() != n) {
            return Err(FilterError::Config(format!("transition matrix must be {n}×{n}")));
        }
        for (i, row) in self.transition.iter().enumerate() {
            if row.iter().any(|p| !(*p >= T::zero())) {
                return Err(FilterError::Config(format!("transition row {i} has a negative entry")));
            }
            let sum = row.iter().fold(T::zero(), |a, p| a + *p);
            if (sum - T::one()).abs() > T::lit(1e-12).max(T::eps() * T::lit(8.0)) {
                return Err(FilterError::Config(format!("transition row {i} sums to {}", sum.to_f64_lossy())));
            }
        }
        for i in 0..n {
            self.mode_config(i).validate()?;
        }
        Ok(())
    }
}

impl ImmConfig<f64> {
    /// Two modes `σ_m² ∈ {1e-6, 1}`, `Π = [[0.9, 0.1], [0.1, 0.9]]`, `c = 9.5`.
    pub fn experimental_defaults() -> Self {
        Self {
            mode_sigmas: vec![1e-6, 1.0],
            transition: vec![vec![0.9, 0.1], vec![0.1, 0.9]],
            base: IekfConfig::default(),
            output: ImmOutput::Mixture,
        }
    }
}

/// Mode-conditioned beliefs and their posterior probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ImmState<T: Scalar> {
    pub modes: Vec<BeliefState<T>>,
    pub weights: Vec<T>,
}

impl<T: Scalar> ImmState<T> {
    /// Every mode starts from the same belief with equal weight.
    pub fn uniform(belief: BeliefState<T>, n: usize) -> Self {
        let w = T::one() / T::from_usize(n).unwrap();
        Self { modes: vec![belief; n], weights: vec![w; n] }
    }

    /// Index of the most probable mode (first on ties).
    pub fn best_mode(&self) -> usize {
        let mut best = 0;
        for (i, w) in self.weights.iter().enumerate() {
            if *w > self.weights[best] {
                best = i;
            }
        }
        best
    }

    pub fn t(&self) -> f64 {
        self.modes[0].mean.t
    }
}

/// Mixing probabilities `μ[(j, i)]` from source mode `j` into target mode
/// `i`; every column sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix<T: Scalar> {
    pub mu: DMatrix<T>,
    /// Predicted mode probabilities `Σ_j p_ji w_j` (the column normalisers).
    pub predicted: Vec<T>,
    /// Columns that were unreachable and fell back to uniform.
    pub fallback: Vec<bool>,
}

/// Interaction: `μ^{ji} ∝ p_ji w_j`, normalised over sources for each target.
pub fn imm_interaction<T: Scalar>(state: &ImmState<T>, cfg: &ImmConfig<T>) -> MixingMatrix<T> {
    let n = state.weights.len();
    let mut mu = DMatrix::<T>::zeros(n, n);
    let mut predicted = vec![T::zero(); n];
    let mut fallback = vec![false; n];
    for i in 0..n {
        for j in 0..n {
            mu[(j, i)] = cfg.transition[j][i] * state.weights[j];
        }
        let col_sum = mu.column(i).sum();
        predicted[i] = col_sum;
        if col_sum > T::zero() && col_sum.is_finite() {
            for j in 0..n {
                mu[(j, i)] /= col_sum;
            }
        } else {
            fallback[i] = true;
            let u = T::one() / T::from_usize(n).unwrap();
            mu.column_mut(i).fill(u);
        }
    }
    MixingMatrix { mu, predicted, fallback }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MixReport {
    /// Targets left unmixed because a logarithm failed.
    pub skipped: Vec<bool>,
}

/// Gaussian mixture of `modes` with probabilities `probs`, expressed about the
/// mean of `modes[target]`.
///
/// Each source mean is re-expressed in the target's error coordinates by
/// `ε = log(X̄_target X̄_source⁻¹)^∨` with covariance transported by
/// `Jʳ(ε)⁻¹` on the homography block; the Γ block is linear. The mixed mean
/// is retracted onto the group and the covariance moved by `Jʳ` of the mixed
/// mean.
pub fn mix_about<T: Scalar>(
    modes: &[BeliefState<T>],
    probs: &[T],
    target: usize,
) -> Result<BeliefState<T>, FilterError> {
    let reference = &modes[target];
    let sources: Vec<usize> = (0..modes.len()).filter(|&j| probs[j] > T::zero()).collect();
    if sources.len() == 1 && sources[0] == target {
        return Ok(*reference);
    }
    let step = default_jacobian_step();
    let mut means: Vec<Vector16<T>> = Vec::with_capacity(sources.len());
    let mut covs: Vec<StateCovariance<T>> = Vec::with_capacity(sources.len());
    for &j in &sources {
        if j == target {
            means.push(Vector16::zeros());
            covs.push(reference.cov);
            continue;
        }
        let src = &modes[j];
        let eps = (reference.mean.h * src.mean.h.inverse()).log()?.vee();
        let mut transport = StateCovariance::identity();
        let jr_inv = right_jacobian(&eps, step)?
            .try_inverse()
            .ok_or_else(|| FilterError::Covariance("singular right Jacobian in mixing".into()))?;
        transport.fixed_view_mut::<8, 8>(0, 0).copy_from(&jr_inv);
        let mut m = Vector16::zeros();
        m.fixed_rows_mut::<8>(0).copy_from(&eps);
        m.fixed_rows_mut::<8>(8).copy_from(&src.mean.gamma.sub(&reference.mean.gamma).vee());
        means.push(m);
        covs.push(transport * src.cov * transport.transpose());
    }

    let mut mean = Vector16::zeros();
    for (&j, m) in sources.iter().zip(&means) {
        mean += m * probs[j];
    }
    let mut cov = StateCovariance::zeros();
    for ((&j, m), p) in sources.iter().zip(&means).zip(&covs) {
        let d = m - mean;
        cov += (p + d * d.transpose()) * probs[j];
    }

    let xi: AlgebraVector<T> = mean.fixed_rows::<8>(0).into_owned();
    let dg: AlgebraVector<T> = mean.fixed_rows::<8>(8).into_owned();
    let mut out = *reference;
    out.mean.h = exp_sl3(&wedge(&-xi)) * reference.mean.h;
    out.mean.gamma = reference.mean.gamma.add(&wedge(&dg));
    let mut back = StateCovariance::identity();
    back.fixed_view_mut::<8, 8>(0, 0).copy_from(&right_jacobian(&xi, step)?);
    out.cov = symmetrize(&(back * cov * back.transpose()));
    Ok(out)
}

/// Mixing: each target mode becomes the mixture of all modes under column
/// `i` of `μ`. A target whose mixture fails keeps its own belief.
pub fn imm_mix<T: Scalar>(state: &ImmState<T>, mixing: &MixingMatrix<T>) -> (ImmState<T>, MixReport) {
    let n = state.modes.len();
    let mut report = MixReport { skipped: vec![false; n] };
    let mut modes = Vec::with_capacity(n);
    for i in 0..n {
        let probs: Vec<T> = mixing.mu.column(i).iter().cloned().collect();
        match mix_about(&state.modes, &probs, i) {
            Ok(b) => modes.push(b),
            Err(_) => {
                report.skipped[i] = true;
                modes.push(state.modes[i]);
            }
        }
    }
    (ImmState { modes, weights: state.weights.clone() }, report)
}

/// Predicts every mode with its own `σ_m²`.
pub fn imm_predict<T: Scalar>(state: &ImmState<T>, gyro: &GyroSample<T>, dt: f64, cfg: &ImmConfig<T>) -> ImmState<T> {
    let modes = state.modes.iter().enumerate().map(|(i, b)| ekf_predict(b, gyro, dt, &cfg.mode_config(i))).collect();
    ImmState { modes, weights: state.weights.clone() }
}

/// Result of an IMM correction.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImmStepReport {
    pub mixing_fallback: Vec<bool>,
    pub mixing_skipped: Vec<bool>,
    /// Every likelihood was non-finite; the weights were left unchanged.
    pub likelihood_underflow: bool,
    pub log_likelihoods: Vec<f64>,
    pub corrections: Vec<CorrectionReport>,
}

/// Corrects every mode and updates `wᵢ ∝ Λᵢ · predictedᵢ` in log space.
///
/// With a robust likelihood, every mode uses the same per-feature weight: the
/// largest final SC/DCS weight any mode's correction gives that feature. A
/// feature then counts as an outlier only when no mode can fit it, so outliers
/// do not favour the mode with the widest innovation covariance and a mode's
/// own misprediction is not excused.
pub fn imm_correct<T: Scalar>(
    state: &ImmState<T>,
    predicted: &[T],
    frame: &FeatureFrame<T>,
    k: &CameraIntrinsics<T>,
    cfg: &ImmConfig<T>,
    report: &mut ImmStepReport,
) -> Result<ImmState<T>, FilterError> {
    let n = state.modes.len();
    let mut modes = Vec::with_capacity(n);
    let mut log_lik = Vec::with_capacity(n);
    report.corrections.clear();
    let mut corrections = Vec::with_capacity(state.modes.len());
    for (i, b) in state.modes.iter().enumerate() {
        corrections.push(ekf_correct(b, frame, k, &cfg.mode_config(i))?);
    }
    let mut shared = vec![T::one(); frame.correspondences.len()];
    if cfg.base.robust && cfg.base.robust_likelihood {
        for (f, w) in shared.iter_mut().enumerate() {
            *w = corrections.iter().map(|c| c.weights[f]).fold(T::zero(), |a, v| a.max(v));
        }
    }
    for (i, c) in corrections.into_iter().enumerate() {
        let lik = if c.report.features_used == 0 {
            c.log_likelihood
        } else {
            frame_innovation(&state.modes[i], frame, k, &cfg.mode_config(i)).log_likelihood(&shared)
        };
        modes.push(c.belief);
        log_lik.push(lik);
        report.corrections.push(c.report);
    }
    report.log_likelihoods = log_lik.iter().map(|l| l.to_f64_lossy()).collect();

    let log_post: Vec<T> = log_lik
        .iter()
        .zip(predicted)
        .map(|(l, p)| if *p > T::zero() { *l + p.ln() } else { T::lit(f64::NEG_INFINITY) })
        .collect();
    let peak = log_post.iter().cloned().filter(|v| v.is_finite()).fold(T::lit(f64::NEG_INFINITY), |a, v| a.max(v));
    let weights = if peak.is_finite() {
        let raw: Vec<T> = log_post.iter().map(|v| if v.is_finite() { (*v - peak).exp() } else { T::zero() }).collect();
        let total = raw.iter().fold(T::zero(), |a, v| a + *v);
        raw.into_iter().map(|v| v / total).collect()
    } else {
        report.likelihood_underflow = true;
        state.weights.clone()
    };
    Ok(ImmState { modes, weights })
}

/// One IMM cycle ending at the frame time: interaction, mixing, per-mode
/// prediction through the gyro stream, per-mode correction and weight update.
pub fn imm_step<T: Scalar>(
    state: &ImmState<T>,
    gyro: &[GyroSample<T>],
    frame: &FeatureFrame<T>,
    k: &CameraIntrinsics<T>,
    cfg: &ImmConfig<T>,
) -> Result<(ImmState<T>, ImmStepReport), FilterError> {
    let mixing = imm_interaction(state, cfg);
    let (mut mixed, mix_report) = imm_mix(state, &mixing);
    let mut report = ImmStepReport {
        mixing_fallback: mixing.fallback.clone(),
        mixing_skipped: mix_report.skipped,
        ..Default::default()
    };
    for (omega, dt) in zoh_segments(gyro, state.t(), frame.t) {
        let t = mixed.t();
        mixed = imm_predict(&mixed, &GyroSample { t, omega }, dt, cfg);
    }
    for m in mixed.modes.iter_mut() {
        m.mean.t = frame.t.max(m.mean.t);
    }
    let out = imm_correct(&mixed, &mixing.predicted, frame, k, cfg, &mut report)?;
    Ok((out, report))
}

/// The IMM's reported belief.
///
/// `Mixture` mixes all modes with weights `w` about the most probable mode's
/// mean and falls back to that mode if the mixture fails; `MaxWeight` returns
/// the most probable mode.
pub fn imm_fused_estimate<T: Scalar>(state: &ImmState<T>, output: ImmOutput) -> BeliefState<T> {
    let best = state.best_mode();
    match output {
        ImmOutput::MaxWeight => state.modes[best],
        ImmOutput::Mixture => mix_about(&state.modes, &state.weights, best).unwrap_or(state.modes[best]),
    }
}
