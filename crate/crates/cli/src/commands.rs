use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sl3_homography::experiment::{
    monte_carlo, perturbed_initial_belief, run_estimator, truth_initial_belief, EstimatorConfig, ExperimentError,
    MonteCarloConfig, MonteCarloSummary,
};
use sl3_homography::filters::BeliefState;
use sl3_homography::io::{read_dataset, write_dataset, write_estimates, write_json, write_step_records, DatasetManifest, IoError, MANIFEST_FILE};
use sl3_homography::models::{FilterState, NoiseConfig, StateCovariance};
use sl3_homography::sim::{generate_trajectory, synthesize_measurements, SimError};

use crate::args::{FilterArgs, Init, MonteCarloArgs, ReportArgs, SimulateArgs};
use crate::CliError;

pub const SUMMARY_FILE: &str = "summary.json";
pub const STEPS_FILE: &str = "steps.csv";
pub const ESTIMATES_FILE: &str = "estimates.csv";

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(_) | ExperimentError::Sim(SimError::Spec(_)) => CliError::Usage(e.to_string()),
            _ => CliError::Failed(e.to_string()),
        }
    }
}

fn sim_error(e: SimError) -> CliError {
    match e {
        SimError::Spec(_) => CliError::Usage(e.to_string()),
        _ => CliError::Failed(e.to_string()),
    }
}

fn out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

/// Sensor noise assumed by the filters. Missing or non-positive values (a
/// noiseless simulation) fall back to the defaults.
fn filter_noise(sigma_g: Option<f64>, sigma_r: Option<f64>) -> NoiseConfig<f64> {
    let default = NoiseConfig::default();
    let pick = |v: Option<f64>, d: f64, name: &str| match v {
        Some(x) if x > 0.0 => x,
        Some(x) => {
            log::info!("{name} = {x} is not usable by a filter; assuming {d}");
            d
        }
        None => d,
    };
    NoiseConfig {
        sigma_g: pick(sigma_g, default.sigma_g, "sigma_g"),
        sigma_r: pick(sigma_r, default.sigma_r, "sigma_r"),
        ..default
    }
}

/// Result of `filter`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub dataset: PathBuf,
    pub manifest: DatasetManifest,
    pub estimator: EstimatorConfig,
    pub init: String,
    pub initial_variance: f64,
    pub seed: u64,
    pub truth_available: bool,
    pub steps: usize,
    pub mean_r: Option<f64>,
    pub nees_in_band_fraction: Option<f64>,
    pub diverged_steps: usize,
    pub failed_corrections: usize,
}

/// Summary JSON document, tagged by the command that wrote it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Summary {
    Filter(FilterSummary),
    Montecarlo(MonteCarloSummary),
}

pub fn simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let spec = a.trajectory.resolve();
    let meas = a.measurement.resolve(a.seed);
    let truth = generate_trajectory(&spec).map_err(sim_error)?;
    let mut ds = synthesize_measurements(&truth, &spec, &meas).map_err(sim_error)?;
    let max_s_dot = truth.max_s_dot_norm();
    if a.no_truth {
        ds.truth = None;
    }
    let manifest = DatasetManifest::simulated(&spec, &meas, !a.no_truth);
    let path = write_dataset(&a.out, &ds, &manifest)?;
    println!(
        "duration {} s, {} gyro samples, {} frames ({} empty), max |s_dot| {:.4}",
        spec.duration,
        ds.gyro.len(),
        ds.frames.len(),
        ds.frames.iter().filter(|f| f.is_empty()).count(),
        max_s_dot
    );
    log::info!("wrote {}", path.display());
    Ok(())
}

pub fn filter(a: &FilterArgs) -> Result<(), CliError> {
    let manifest_path = if a.dataset.is_dir() { a.dataset.join(MANIFEST_FILE) } else { a.dataset.clone() };
    let loaded = read_dataset(&manifest_path)?;
    let ds = &loaded.dataset;
    let known = loaded.manifest.noise;
    let noise = filter_noise(
        a.sigma_g.or(known.map(|n| n.sigma_g)),
        a.sigma_r.or(known.map(|n| n.sigma_r)),
    );
    let cfg = a.settings.estimator(a.estimator, noise)?;
    let variance = a.settings.initial_variance();
    if !(variance > 0.0) {
        return Err(CliError::Usage("--initial-variance must be positive".into()));
    }
    let init = a.init.unwrap_or(if ds.truth.is_some() { Init::Perturbed } else { Init::Identity });
    let initial = match init {
        Init::Perturbed => perturbed_initial_belief(ds, variance, a.seed),
        Init::Truth => truth_initial_belief(ds, variance),
        Init::Identity => {
            let t0 = ds.gyro.first().map_or(0.0, |g| g.t).min(ds.frames.first().map_or(f64::INFINITY, |f| f.t));
            Some(BeliefState::new(FilterState::identity(t0), StateCovariance::identity() * variance))
        }
    };
    let initial = initial.ok_or_else(|| CliError::Usage(format!("--init {init:?} needs a truth stream")))?;
    let out = run_estimator(ds, &initial, &cfg, &loaded.manifest.intrinsics)?;

    out_dir(&a.out)?;
    write_estimates(&a.out.join(ESTIMATES_FILE), &out.estimates)?;
    write_step_records(&a.out.join(STEPS_FILE), [(cfg.label(), 0, &out.report)])?;
    let summary = FilterSummary {
        dataset: manifest_path,
        manifest: loaded.manifest.clone(),
        estimator: cfg.clone(),
        init: format!("{init:?}").to_lowercase(),
        initial_variance: variance,
        seed: a.seed,
        truth_available: ds.truth.is_some(),
        steps: out.report.records.len(),
        mean_r: out.report.mean_r,
        nees_in_band_fraction: out.report.nees_in_band_fraction,
        diverged_steps: out.report.diverged_steps,
        failed_corrections: out.failed_corrections,
    };
    let summary = Summary::Filter(summary);
    write_json(&a.out.join(SUMMARY_FILE), &summary)?;
    print_summary(&summary);
    Ok(())
}

pub fn montecarlo(a: &MonteCarloArgs) -> Result<(), CliError> {
    if a.n_runs == 0 {
        return Err(CliError::Usage("--n-runs must be at least 1".into()));
    }
    if a.threads == Some(0) {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    let trajectory = a.trajectory.resolve();
    let measurement = a.measurement.resolve(0);
    let noise = filter_noise(Some(measurement.noise.sigma_g), Some(measurement.noise.sigma_r));
    let estimators =
        a.estimators.iter().map(|&e| a.settings.estimator(e, noise)).collect::<Result<Vec<_>, _>>()?;
    let cfg = MonteCarloConfig {
        measurement,
        initial_variance: a.settings.initial_variance(),
        truth_init: a.truth_init,
        ..MonteCarloConfig::new(trajectory, estimators, a.n_runs, a.seed)
    };
    let result = monte_carlo(&cfg, a.threads)?;

    out_dir(&a.out)?;
    if !a.no_steps {
        let rows = result.summary.estimators.iter().zip(&result.runs).flat_map(|(e, runs)| {
            runs.iter().enumerate().map(move |(i, r)| (e.label.as_str(), i, r))
        });
        write_step_records(&a.out.join(STEPS_FILE), rows)?;
    }
    let summary = Summary::Montecarlo(result.summary);
    write_json(&a.out.join(SUMMARY_FILE), &summary)?;
    print_summary(&summary);
    Ok(())
}

pub fn report(a: &ReportArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&a.summary).map_err(|e| CliError::Io(format!("{}: {e}", a.summary.display())))?;
    let summary: Summary =
        serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", a.summary.display())))?;
    print_summary(&summary);
    Ok(())
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.digits$}"))
}

pub fn print_summary(s: &Summary) {
    match s {
        Summary::Filter(f) => {
            println!("dataset {} ({} steps, estimator {})", f.dataset.display(), f.steps, f.estimator.label());
            println!("mean r_k            {}", opt(f.mean_r, 6));
            println!("NEES in band        {}", opt(f.nees_in_band_fraction, 3));
            println!("diverged steps      {}", f.diverged_steps);
            println!("failed corrections  {}", f.failed_corrections);
        }
        Summary::Montecarlo(m) => {
            println!(
                "{} runs, {} s at {}/{} Hz, max |s_dot| {:.4}",
                m.config.n_runs, m.config.trajectory.duration, m.config.trajectory.gyro_rate, m.config.trajectory.cam_rate,
                m.max_s_dot_norm
            );
            println!("{:<10} {:>10} {:>10} {:>13} {:>9} {:>7}", "estimator", "mean r_k", "std r_k", "NEES in band", "diverged", "failed");
            for e in &m.estimators {
                println!(
                    "{:<10} {:>10} {:>10} {:>13} {:>9} {:>7}",
                    e.label,
                    opt(e.summary.mean_r, 6),
                    opt(e.summary.std_r, 6),
                    opt(e.summary.nees_in_band_fraction, 3),
                    e.summary.diverged_runs,
                    e.failed_corrections
                );
            }
            for d in &m.percent_diff {
                println!("% diff {} vs {}: {:.1}%", d.a, d.b, 100.0 * d.value);
            }
        }
    }
}
