//! Estimator runs over datasets and seeded Monte Carlo batches.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filters::{
    ekf_correct, imm_fused_estimate, imm_step, propagate_through, BeliefState, FilterError, IekfConfig, ImmConfig,
    ImmOutput, ImmState,
};
use crate::metrics::{aggregate, homography_error, nees, percent_diff, AggregateSummary, MetricsError, StepRecord, TrialReport};
use crate::models::{CameraIntrinsics, FilterState, NoiseConfig, StateCovariance};
use crate::sim::{generate_trajectory, perturb_initial_state, synthesize_measurements, MeasurementSpec, SimDataset, SimError, TrajectorySpec};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    EkfTight,
    EkfLoose,
    Imm,
}

impl EstimatorKind {
    pub fn label(self) -> &'static str {
        match self {
            EstimatorKind::EkfTight => "ekf_tight",
            EstimatorKind::EkfLoose => "ekf_loose",
            EstimatorKind::Imm => "imm",
        }
    }
}

/// Resolved estimator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    /// One value for an EKF, one per mode for the IMM.
    pub sigma_m2: Vec<f64>,
    /// Mode transition matrix; empty for an EKF.
    #[serde(default)]
    pub transition: Vec<Vec<f64>>,
    /// Shared filter settings; `filter.noise.sigma_m2` is replaced per mode.
    pub filter: IekfConfig<f64>,
    #[serde(default)]
    pub output: ImmOutput,
}

/// `σ_m²` of the tight EKF.
pub const SIGMA_M2_TIGHT: f64 = 1e-7;
/// `σ_m²` of the loose EKF.
pub const SIGMA_M2_LOOSE: f64 = 1e-1;

impl EstimatorConfig {
    pub fn ekf(kind: EstimatorKind, sigma_m2: f64) -> Self {
        Self {
            kind,
            sigma_m2: vec![sigma_m2],
            transition: Vec::new(),
            filter: IekfConfig::new(NoiseConfig { sigma_m2, ..NoiseConfig::default() }),
            output: ImmOutput::Mixture,
        }
    }

    pub fn ekf_tight() -> Self {
        Self::ekf(EstimatorKind::EkfTight, SIGMA_M2_TIGHT)
    }

    pub fn ekf_loose() -> Self {
        Self::ekf(EstimatorKind::EkfLoose, SIGMA_M2_LOOSE)
    }

    pub fn imm(sigma_m2: Vec<f64>, transition: Vec<Vec<f64>>) -> Self {
        Self {
            kind: EstimatorKind::Imm,
            filter: IekfConfig::new(NoiseConfig { sigma_m2: sigma_m2[0], ..NoiseConfig::default() }),
            sigma_m2,
            transition,
            output: ImmOutput::Mixture,
        }
    }

    /// IMM over the tight and loose EKFs, used on simulated data, with
    /// `Π = [[0.995, 0.005], [0.005, 0.995]]`.
    pub fn imm_simulation() -> Self {
        Self::imm(vec![SIGMA_M2_TIGHT, SIGMA_M2_LOOSE], vec![vec![0.995, 0.005], vec![0.005, 0.995]])
    }

    /// IMM settings used on recorded data: modes `{1e-6, 1}`, `Π = [[0.9, 0.1], [0.1, 0.9]]`, `c = 9.5`.
    pub fn imm_experimental() -> Self {
        let d = ImmConfig::experimental_defaults();
        Self::imm(d.mode_sigmas, d.transition)
    }

    pub fn label(&self) -> &'static str {
        self.kind.label()
    }

    /// Overrides the noise intensities shared by all modes.
    pub fn with_sensor_noise(mut self, sigma_g: f64, sigma_r: f64) -> Self {
        self.filter.noise.sigma_g = sigma_g;
        self.filter.noise.sigma_r = sigma_r;
        self
    }

    pub fn imm_config(&self) -> ImmConfig<f64> {
        ImmConfig {
            mode_sigmas: self.sigma_m2.clone(),
            transition: self.transition.clone(),
            base: self.filter,
            output: self.output,
        }
    }

    pub fn ekf_config(&self) -> IekfConfig<f64> {
        IekfConfig { noise: NoiseConfig { sigma_m2: self.sigma_m2[0], ..self.filter.noise }, ..self.filter }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        match self.kind {
            EstimatorKind::EkfTight | EstimatorKind::EkfLoose => {
                if self.sigma_m2.len() != 1 {
                    return Err(ExperimentError::Config("an EKF takes exactly one sigma_m2 value".into()));
                }
                self.ekf_config().validate()?;
            }
            EstimatorKind::Imm => self.imm_config().validate()?,
        }
        Ok(())
    }
}

/// Filter output at every camera frame of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub estimates: Vec<FilterState<f64>>,
    pub report: TrialReport,
    /// Corrections that failed and were replaced by prediction only.
    pub failed_corrections: usize,
}

enum Bank {
    Ekf(BeliefState<f64>, IekfConfig<f64>),
    Imm(ImmState<f64>, ImmConfig<f64>),
}

impl Bank {
    fn reported(&self) -> (BeliefState<f64>, Vec<f64>) {
        match self {
            Bank::Ekf(b, _) => (*b, vec![1.0]),
            Bank::Imm(s, c) => (imm_fused_estimate(s, c.output), s.weights.clone()),
        }
    }
}

/// Runs one estimator over a dataset from the given initial belief.
///
/// A failed correction keeps the predicted belief and flags the step as
/// diverged; the run continues.
pub fn run_estimator(
    ds: &SimDataset,
    initial: &BeliefState<f64>,
    cfg: &EstimatorConfig,
    k: &CameraIntrinsics<f64>,
) -> Result<RunOutput, ExperimentError> {
    cfg.validate()?;
    let mut bank = match cfg.kind {
        EstimatorKind::Imm => {
            let c = cfg.imm_config();
            Bank::Imm(ImmState::uniform(*initial, c.len()), c)
        }
        _ => Bank::Ekf(*initial, cfg.ekf_config()),
    };
    let mut estimates = Vec::with_capacity(ds.frames.len());
    let mut records = Vec::with_capacity(ds.frames.len());
    let mut failed_corrections = 0;
    for frame in &ds.frames {
        let mut failed = false;
        bank = match bank {
            Bank::Ekf(b, c) => {
                let pred = propagate_through(&b, &ds.gyro, frame.t, &c);
                match ekf_correct(&pred, frame, k, &c) {
                    Ok(corr) => Bank::Ekf(corr.belief, c),
                    Err(_) => {
                        failed = true;
                        Bank::Ekf(pred, c)
                    }
                }
            }
            Bank::Imm(s, c) => match imm_step(&s, &ds.gyro, frame, k, &c) {
                Ok((next, _)) => Bank::Imm(next, c),
                Err(_) => {
                    failed = true;
                    let modes = s
                        .modes
                        .iter()
                        .enumerate()
                        .map(|(i, m)| propagate_through(m, &ds.gyro, frame.t, &c.mode_config(i)))
                        .collect();
                    Bank::Imm(ImmState { modes, weights: s.weights }, c)
                }
            },
        };
        failed_corrections += usize::from(failed);
        let (belief, mode_weights) = bank.reported();
        let p_hh = belief.cov_hh();
        let (r_k, nees_k, diverged) = match ds.truth_at(frame.t) {
            Some(truth) => {
                let err = homography_error(&belief.mean.h, &truth.h);
                let n = err.xi.and_then(|xi| nees(&xi, &p_hh).ok());
                (Some(err.value), n, err.diverged)
            }
            None => (None, None, false),
        };
        records.push(StepRecord {
            t: frame.t,
            r_k,
            nees: nees_k,
            mode_weights,
            cov_trace: p_hh.trace(),
            diverged: diverged || failed,
        });
        estimates.push(belief.mean);
    }
    Ok(RunOutput { estimates, report: TrialReport::from_records(records), failed_corrections })
}

/// Belief centred on the truth at the first sample with covariance `variance · I`.
pub fn truth_initial_belief(ds: &SimDataset, variance: f64) -> Option<BeliefState<f64>> {
    let first = ds.truth.as_ref()?.first()?;
    Some(BeliefState::new(first.state(), StateCovariance::identity() * variance))
}

/// Seed of run `index` under `master`: the first word of ChaCha8 stream
/// `index` keyed by `master`.
pub fn run_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng.next_u64()
}

/// A Monte Carlo batch: one trajectory, fresh noise and initial error per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub trajectory: TrajectorySpec,
    /// Measurement settings; the seed is replaced per run.
    pub measurement: MeasurementSpec,
    pub estimators: Vec<EstimatorConfig>,
    pub n_runs: usize,
    pub master_seed: u64,
    /// Initial covariance `variance · I`, also the spread of the initial error.
    pub initial_variance: f64,
    /// Start from the truth instead of a perturbed state.
    #[serde(default)]
    pub truth_init: bool,
}

impl MonteCarloConfig {
    pub fn new(trajectory: TrajectorySpec, estimators: Vec<EstimatorConfig>, n_runs: usize, master_seed: u64) -> Self {
        Self {
            trajectory,
            measurement: MeasurementSpec::default(),
            estimators,
            n_runs,
            master_seed,
            initial_variance: 1e-1,
            truth_init: false,
        }
    }
}

/// Estimators' summaries in configuration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub label: String,
    pub config: EstimatorConfig,
    pub summary: AggregateSummary,
    pub failed_corrections: usize,
}

/// `(b − a)/b` of the mean `r_k` for each ordered pair `(a, b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentDiff {
    pub a: String,
    pub b: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub config: MonteCarloConfig,
    pub max_s_dot_norm: f64,
    pub estimators: Vec<EstimatorSummary>,
    pub percent_diff: Vec<PercentDiff>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloResult {
    pub summary: MonteCarloSummary,
    /// `runs[e][i]` is run `i` of estimator `e`.
    pub runs: Vec<Vec<TrialReport>>,
}

/// Truth-centred belief with its mean perturbed by a draw seeded with `seed`.
///
/// The draw uses ChaCha8 stream 1 so that the same seed can also drive the
/// measurement noise (stream 0) without correlation.
pub fn perturbed_initial_belief(ds: &SimDataset, variance: f64, seed: u64) -> Option<BeliefState<f64>> {
    let start = truth_initial_belief(ds, variance)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    Some(BeliefState::new(perturb_initial_state(&start.mean, variance, &mut rng), start.cov))
}

/// Dataset and initial belief of run `index`. The run seed
/// `run_seed(master_seed, index)` seeds both the measurements and the
/// initial perturbation, so the run can be reproduced from the seed alone.
pub fn monte_carlo_run_input(
    cfg: &MonteCarloConfig,
    truth: &SimDataset,
    index: usize,
) -> Result<(SimDataset, BeliefState<f64>), ExperimentError> {
    let seed = run_seed(cfg.master_seed, index as u64);
    let meas = MeasurementSpec { seed, ..cfg.measurement.clone() };
    let ds = synthesize_measurements(truth, &cfg.trajectory, &meas)?;
    let init = if cfg.truth_init {
        truth_initial_belief(&ds, cfg.initial_variance)
    } else {
        perturbed_initial_belief(&ds, cfg.initial_variance, seed)
    };
    let init = init.ok_or_else(|| ExperimentError::Config("trajectory has no samples".into()))?;
    Ok((ds, init))
}

/// Runs the batch on `threads` workers (all cores when `None`). Results do
/// not depend on the thread count.
pub fn monte_carlo(cfg: &MonteCarloConfig, threads: Option<usize>) -> Result<MonteCarloResult, ExperimentError> {
    if cfg.n_runs == 0 {
        return Err(ExperimentError::Config("n_runs must be at least 1".into()));
    }
    if cfg.estimators.is_empty() {
        return Err(ExperimentError::Config("no estimators configured".into()));
    }
    if !(cfg.initial_variance > 0.0) {
        return Err(ExperimentError::Config("initial_variance must be positive".into()));
    }
    for e in &cfg.estimators {
        e.validate()?;
    }
    let truth = generate_trajectory(&cfg.trajectory)?;
    let k = cfg.measurement.intrinsics;
    let one_run = |i: usize| -> Result<Vec<RunOutput>, ExperimentError> {
        let (ds, init) = monte_carlo_run_input(cfg, &truth, i)?;
        cfg.estimators.iter().map(|e| run_estimator(&ds, &init, e, &k)).collect()
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder.build().map_err(|e| ExperimentError::ThreadPool(e.to_string()))?;
    let per_run: Vec<Vec<RunOutput>> =
        pool.install(|| (0..cfg.n_runs).into_par_iter().map(one_run).collect::<Result<_, _>>())?;

    let mut runs: Vec<Vec<TrialReport>> = vec![Vec::with_capacity(cfg.n_runs); cfg.estimators.len()];
    let mut failed = vec![0usize; cfg.estimators.len()];
    for outputs in per_run {
        for (e, out) in outputs.into_iter().enumerate() {
            failed[e] += out.failed_corrections;
            runs[e].push(out.report);
        }
    }
    let estimators: Vec<EstimatorSummary> = cfg
        .estimators
        .iter()
        .zip(&runs)
        .zip(failed)
        .map(|((e, r), f)| {
            Ok(EstimatorSummary { label: e.label().to_string(), config: e.clone(), summary: aggregate(r)?, failed_corrections: f })
        })
        .collect::<Result<_, MetricsError>>()?;
    let mut diffs = Vec::new();
    for a in &estimators {
        for b in &estimators {
            if a.label != b.label {
                if let (Some(ma), Some(mb)) = (a.summary.mean_r, b.summary.mean_r) {
                    diffs.push(PercentDiff { a: a.label.clone(), b: b.label.clone(), value: percent_diff(ma, mb) });
                }
            }
        }
    }
    Ok(MonteCarloResult {
        summary: MonteCarloSummary {
            config: cfg.clone(),
            max_s_dot_norm: truth.max_s_dot_norm(),
            estimators,
            percent_diff: diffs,
        },
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::simulate;

    fn short(name: &str, duration: f64) -> TrajectorySpec {
        TrajectorySpec { duration, ..TrajectorySpec::preset(name).unwrap() }
    }

    #[test]
    fn run_seeds_are_distinct_and_stable() {
        let a: Vec<u64> = (0..50).map(|i| run_seed(7, i)).collect();
        let mut b = a.clone();
        b.sort_unstable();
        b.dedup();
        assert_eq!(b.len(), 50);
        assert_eq!(a[3], run_seed(7, 3));
        assert_ne!(run_seed(7, 3), run_seed(8, 3));
    }

    #[test]
    fn estimator_presets_validate() {
        for e in [
            EstimatorConfig::ekf_tight(),
            EstimatorConfig::ekf_loose(),
            EstimatorConfig::imm_simulation(),
            EstimatorConfig::imm_experimental(),
        ] {
            e.validate().unwrap();
        }
        let bad = EstimatorConfig { sigma_m2: vec![1e-7, 1e-1], ..EstimatorConfig::ekf_tight() };
        assert!(bad.validate().is_err());
        let bad = EstimatorConfig::imm(vec![1e-7, 1e-1], vec![vec![0.5, 0.4], vec![0.1, 0.9]]);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn truth_initialised_noiseless_run_tracks_exactly() {
        let spec = short("traj1", 3.0);
        let meas = MeasurementSpec {
            noise: NoiseConfig { sigma_g: 0.0, sigma_r: 0.0, sigma_m2: 1e-7 },
            ..MeasurementSpec::default()
        };
        let ds = simulate(&spec, &meas).unwrap();
        let init = truth_initial_belief(&ds, 1e-1).unwrap();
        for e in [EstimatorConfig::ekf_tight(), EstimatorConfig::ekf_loose(), EstimatorConfig::imm_simulation()] {
            let out = run_estimator(&ds, &init, &e, &meas.intrinsics).unwrap();
            assert_eq!(out.report.records.len(), ds.frames.len());
            assert!(out.report.mean_r.unwrap() < 1e-9, "{}: {:e}", e.label(), out.report.mean_r.unwrap());
            assert_eq!(out.failed_corrections, 0);
        }
    }

    #[test]
    fn single_mode_imm_matches_ekf_run() {
        let spec = short("traj4", 2.0);
        let ds = simulate(&spec, &MeasurementSpec { seed: 3, ..MeasurementSpec::default() }).unwrap();
        let init = truth_initial_belief(&ds, 1e-2).unwrap();
        let k = CameraIntrinsics::default();
        let ekf = run_estimator(&ds, &init, &EstimatorConfig::ekf_tight(), &k).unwrap();
        let imm = run_estimator(&ds, &init, &EstimatorConfig::imm(vec![SIGMA_M2_TIGHT], vec![vec![1.0]]), &k).unwrap();
        assert_eq!(ekf.estimates, imm.estimates);
        assert_eq!(ekf.report.mean_r, imm.report.mean_r);
    }

    #[test]
    fn missing_truth_still_produces_estimates() {
        let spec = short("traj1", 1.0);
        let mut ds = simulate(&spec, &MeasurementSpec::default()).unwrap();
        let init = truth_initial_belief(&ds, 1e-1).unwrap();
        ds.truth = None;
        let out = run_estimator(&ds, &init, &EstimatorConfig::ekf_tight(), &CameraIntrinsics::default()).unwrap();
        assert_eq!(out.estimates.len(), ds.frames.len());
        assert!(out.report.records.iter().all(|r| r.r_k.is_none() && r.nees.is_none()));
        assert_eq!(out.report.mean_r, None);
    }

    #[test]
    fn monte_carlo_is_independent_of_thread_count() {
        let cfg = MonteCarloConfig::new(short("traj2", 1.0), vec![EstimatorConfig::ekf_tight(), EstimatorConfig::imm_simulation()], 4, 11);
        let a = monte_carlo(&cfg, Some(1)).unwrap();
        let b = monte_carlo(&cfg, Some(3)).unwrap();
        assert_eq!(serde_json::to_string(&a.summary).unwrap(), serde_json::to_string(&b.summary).unwrap());
        assert_eq!(a.runs, b.runs);
        assert_eq!(a.summary.percent_diff.len(), 2);
    }

    #[test]
    fn single_run_batch_equals_direct_run() {
        let cfg = MonteCarloConfig::new(short("traj3", 1.0), vec![EstimatorConfig::ekf_loose()], 1, 5);
        let mc = monte_carlo(&cfg, Some(1)).unwrap();
        let truth = generate_trajectory(&cfg.trajectory).unwrap();
        let (ds, init) = monte_carlo_run_input(&cfg, &truth, 0).unwrap();
        let direct = run_estimator(&ds, &init, &cfg.estimators[0], &cfg.measurement.intrinsics).unwrap();
        assert_eq!(mc.runs[0][0], direct.report);
        assert_eq!(mc.summary.estimators[0].summary.mean_r, direct.report.mean_r);
    }

    #[test]
    fn batch_configuration_is_checked() {
        let mut cfg = MonteCarloConfig::new(short("traj1", 1.0), vec![EstimatorConfig::ekf_tight()], 0, 1);
        assert!(monte_carlo(&cfg, Some(1)).is_err());
        cfg.n_runs = 1;
        cfg.estimators.clear();
        assert!(monte_carlo(&cfg, Some(1)).is_err());
    }
}
