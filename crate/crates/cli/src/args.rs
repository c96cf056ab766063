use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sl3_homography::experiment::{EstimatorConfig, EstimatorKind};
use sl3_homography::filters::{ImmConfig, ImmOutput};
use sl3_homography::models::NoiseConfig;
use sl3_homography::sim::{MeasurementSpec, OcclusionWindow, OutlierConfig, TrajectorySpec, PRESET_NAMES};

use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "homography", version, about = "Homography estimation on SL(3) from gyro and feature data")]
pub struct Cli {
    /// Log more (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset from a trajectory preset.
    Simulate(SimulateArgs),
    /// Run one estimator over a dataset.
    Filter(FilterArgs),
    /// Run a seeded Monte Carlo batch on a trajectory preset.
    Montecarlo(MonteCarloArgs),
    /// Print a summary JSON written by `filter` or `montecarlo` as a table.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct TrajectoryArgs {
    #[arg(long, default_value = "traj1", value_parser = clap::builder::PossibleValuesParser::new(PRESET_NAMES))]
    pub preset: String,
    /// Duration in seconds (preset default when omitted).
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub gyro_rate: Option<f64>,
    #[arg(long)]
    pub cam_rate: Option<f64>,
}

impl TrajectoryArgs {
    pub fn resolve(&self) -> TrajectorySpec {
        let mut spec = TrajectorySpec::preset(&self.preset).expect("preset names are validated by the parser");
        if let Some(d) = self.duration {
            spec.duration = d;
        }
        if let Some(r) = self.gyro_rate {
            spec.gyro_rate = r;
        }
        if let Some(r) = self.cam_rate {
            spec.cam_rate = r;
        }
        spec
    }
}

#[derive(Debug, Clone, Args)]
pub struct MeasurementArgs {
    /// Gyro noise PSD root (rad/s/√Hz).
    #[arg(long)]
    pub sigma_g: Option<f64>,
    /// Pixel noise standard deviation.
    #[arg(long)]
    pub sigma_r: Option<f64>,
    /// Number of tracked reference points.
    #[arg(long)]
    pub n_points: Option<usize>,
    /// Full occlusion window `START:END` in seconds; repeatable.
    #[arg(long, value_parser = parse_occlusion)]
    pub occlusion: Vec<OcclusionWindow>,
    /// Fraction of correspondences replaced by gross outliers.
    #[arg(long)]
    pub outlier_fraction: Option<f64>,
    /// Pixel magnitude of injected outliers.
    #[arg(long, default_value_t = 100.0, requires = "outlier_fraction")]
    pub outlier_magnitude: f64,
}

impl MeasurementArgs {
    pub fn resolve(&self, seed: u64) -> MeasurementSpec {
        let mut m = MeasurementSpec { seed, ..MeasurementSpec::default() };
        if let Some(s) = self.sigma_g {
            m.noise.sigma_g = s;
        }
        if let Some(s) = self.sigma_r {
            m.noise.sigma_r = s;
        }
        if let Some(n) = self.n_points {
            m.n_points = n;
        }
        m.occlusions = self.occlusion.clone();
        m.outliers = self.outlier_fraction.map(|fraction| OutlierConfig { fraction, magnitude: self.outlier_magnitude });
        m
    }
}

fn parse_occlusion(s: &str) -> Result<OcclusionWindow, String> {
    let (a, b) = s.split_once(':').ok_or("expected START:END")?;
    let start: f64 = a.trim().parse().map_err(|_| format!("invalid start `{a}`"))?;
    let end: f64 = b.trim().parse().map_err(|_| format!("invalid end `{b}`"))?;
    if !(end > start) {
        return Err("END must exceed START".into());
    }
    Ok(OcclusionWindow { start, end, min_visible: 0 })
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub trajectory: TrajectoryArgs,
    #[command(flatten)]
    pub measurement: MeasurementArgs,
    /// Measurement noise seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Leave out the truth stream, as for recorded data.
    #[arg(long)]
    pub no_truth: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Estimator {
    EkfTight,
    EkfLoose,
    Imm,
}

/// Default settings: `simulation` uses modes `{1e-7, 1e-1}`, `Π` diagonal
/// 0.995 and `P₀ = 1e-1 I`; `experimental` uses modes `{1e-6, 1}`, `Π`
/// diagonal 0.9 and `P₀ = 1e-4 I`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    Simulation,
    Experimental,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Output {
    Mixture,
    MaxWeight,
}

#[derive(Debug, Clone, Args)]
pub struct FilterSettings {
    #[arg(long, value_enum, default_value_t = Profile::Simulation)]
    pub profile: Profile,
    /// Model-confidence PSDs of the modes. The tight EKF uses the smallest,
    /// the loose EKF the largest, the IMM all of them.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub sigma_m2: Vec<f64>,
    /// Mode transition matrix, rows separated by `;`, e.g. `0.9,0.1;0.1,0.9`.
    #[arg(long, value_parser = parse_matrix)]
    pub transition: Option<Vec<Vec<f64>>>,
    /// SC/DCS threshold.
    #[arg(long)]
    pub robust_c: Option<f64>,
    /// Disable the robust loss.
    #[arg(long)]
    pub no_robust: bool,
    /// Which IMM estimate is reported.
    #[arg(long, value_enum, default_value_t = Output::Mixture)]
    pub output: Output,
    /// Initial covariance `v · I` (profile default when omitted).
    #[arg(long)]
    pub initial_variance: Option<f64>,
}

fn parse_matrix(s: &str) -> Result<Vec<Vec<f64>>, String> {
    s.split(';')
        .map(|row| row.split(',').map(|v| v.trim().parse::<f64>().map_err(|_| format!("invalid entry `{v}`"))).collect())
        .collect()
}

impl FilterSettings {
    fn modes(&self) -> Vec<f64> {
        if !self.sigma_m2.is_empty() {
            return self.sigma_m2.clone();
        }
        match self.profile {
            Profile::Simulation => EstimatorConfig::imm_simulation().sigma_m2,
            Profile::Experimental => EstimatorConfig::imm_experimental().sigma_m2,
        }
    }

    pub fn initial_variance(&self) -> f64 {
        self.initial_variance.unwrap_or(match self.profile {
            Profile::Simulation => 1e-1,
            Profile::Experimental => 1e-4,
        })
    }

    /// Resolves one estimator with the given sensor noise.
    pub fn estimator(&self, which: Estimator, noise: NoiseConfig<f64>) -> Result<EstimatorConfig, CliError> {
        let modes = self.modes();
        if modes.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(CliError::Usage("--sigma-m2 values must be positive".into()));
        }
        let min = modes.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = modes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut cfg = match which {
            Estimator::EkfTight => EstimatorConfig::ekf(EstimatorKind::EkfTight, min),
            Estimator::EkfLoose => EstimatorConfig::ekf(EstimatorKind::EkfLoose, max),
            Estimator::Imm => {
                if modes.len() < 2 {
                    return Err(CliError::Usage("imm needs at least two --sigma-m2 values".into()));
                }
                let transition = match (&self.transition, self.profile) {
                    (Some(t), _) => t.clone(),
                    (None, Profile::Experimental) if modes.len() == 2 => ImmConfig::<f64>::experimental_defaults().transition,
                    (None, Profile::Simulation) if modes.len() == 2 => EstimatorConfig::imm_simulation().transition,
                    (None, _) => return Err(CliError::Usage("--transition is required for more than two modes".into())),
                };
                EstimatorConfig::imm(modes.clone(), transition)
            }
        };
        cfg.filter.noise.sigma_g = noise.sigma_g;
        cfg.filter.noise.sigma_r = noise.sigma_r;
        if let Some(c) = self.robust_c {
            cfg.filter.robust_c = c;
        }
        if self.no_robust {
            cfg.filter.robust = false;
        }
        cfg.output = match self.output {
            Output::Mixture => ImmOutput::Mixture,
            Output::MaxWeight => ImmOutput::MaxWeight,
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

/// How the filter is initialised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Init {
    /// Truth at the first sample, perturbed by a draw from the initial covariance.
    Perturbed,
    /// Truth at the first sample.
    Truth,
    /// Identity homography and zero Γ.
    Identity,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    /// Dataset manifest, or the directory holding `manifest.json`.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value_t = Estimator::Imm)]
    pub estimator: Estimator,
    #[command(flatten)]
    pub settings: FilterSettings,
    /// Gyro noise PSD root assumed by the filter (manifest value when omitted).
    #[arg(long)]
    pub sigma_g: Option<f64>,
    /// Pixel noise assumed by the filter (manifest value when omitted).
    #[arg(long)]
    pub sigma_r: Option<f64>,
    /// Initialisation; `perturbed` when the dataset has truth, else `identity`.
    #[arg(long, value_enum)]
    pub init: Option<Init>,
    /// Seed of the initial perturbation.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MonteCarloArgs {
    #[command(flatten)]
    pub trajectory: TrajectoryArgs,
    #[command(flatten)]
    pub measurement: MeasurementArgs,
    /// Estimators to compare.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Estimator::EkfTight, Estimator::EkfLoose, Estimator::Imm])]
    pub estimators: Vec<Estimator>,
    #[command(flatten)]
    pub settings: FilterSettings,
    #[arg(long, default_value_t = 100)]
    pub n_runs: usize,
    /// Master seed; run `i` uses the first word of ChaCha8 stream `i` keyed by it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Start every run from the truth.
    #[arg(long)]
    pub truth_init: bool,
    /// Worker threads (all cores when omitted). Results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Skip the per-step CSV.
    #[arg(long)]
    pub no_steps: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Summary JSON written by `filter` or `montecarlo`.
    pub summary: PathBuf,
}
