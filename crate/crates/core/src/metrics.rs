//! Estimation error, NEES, chi-square bands and Monte Carlo aggregation.

use nalgebra::{Cholesky, SVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::sl3::{GroupElement, Matrix8};

/// Value reported for `r_k` when the error leaves the log domain.
pub const DIVERGENCE_SENTINEL: f64 = 1e3;
/// Two-sided confidence of a 3σ band.
pub const THREE_SIGMA: f64 = 0.9973;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("covariance block is singular")]
    Singular,
    #[error("invalid argument: {0}")]
    Argument(String),
}

/// Homography error `r = ‖vee(log(Ĥ H⁻¹))‖`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomographyError {
    pub value: f64,
    /// Set when the log failed and `value` is the sentinel.
    pub diverged: bool,
    pub xi: Option<SVector<f64, 8>>,
}

pub fn homography_error(h_hat: &GroupElement<f64>, h_true: &GroupElement<f64>) -> HomographyError {
    if h_hat == h_true {
        // Ĥ H⁻¹ would only be the identity up to rounding.
        return HomographyError { value: 0.0, diverged: false, xi: Some(SVector::zeros()) };
    }
    match (*h_hat * h_true.inverse()).log() {
        Ok(a) => {
            let xi = a.vee();
            let value = xi.norm();
            if value.is_finite() && value < DIVERGENCE_SENTINEL {
                HomographyError { value, diverged: false, xi: Some(xi) }
            } else {
                HomographyError { value: DIVERGENCE_SENTINEL, diverged: true, xi: None }
            }
        }
        Err(_) => HomographyError { value: DIVERGENCE_SENTINEL, diverged: true, xi: None },
    }
}

/// `ξᵀ P⁻¹ ξ`.
pub fn nees(xi: &SVector<f64, 8>, p_hh: &Matrix8<f64>) -> Result<f64, MetricsError> {
    let chol = Cholesky::new(*p_hh).ok_or(MetricsError::Singular)?;
    let v = chol.solve(xi);
    Ok(xi.dot(&v).max(0.0))
}

/// Two-sided band for the mean of `n_runs` independent `χ²_dof` values.
pub fn chi2_band(dof: usize, n_runs: usize, confidence: f64) -> Result<(f64, f64), MetricsError> {
    if dof == 0 || n_runs == 0 {
        return Err(MetricsError::Argument("dof and n_runs must be at least 1".into()));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(MetricsError::Argument("confidence must lie in (0, 1)".into()));
    }
    let k = (dof * n_runs) as f64;
    let dist = ChiSquared::new(k).map_err(|e| MetricsError::Argument(e.to_string()))?;
    let tail = 0.5 * (1.0 - confidence);
    let n = n_runs as f64;
    Ok((dist.inverse_cdf(tail) / n, dist.inverse_cdf(1.0 - tail) / n))
}

/// `(b − a)/b`, the relative improvement of `a` over `b`.
pub fn percent_diff(a: f64, b: f64) -> f64 {
    (b - a) / b
}

/// One evaluated filter output at a camera frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    /// `None` when the dataset has no truth.
    pub r_k: Option<f64>,
    pub nees: Option<f64>,
    pub mode_weights: Vec<f64>,
    pub cov_trace: f64,
    pub diverged: bool,
}

/// One filter run over one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub records: Vec<StepRecord>,
    /// Time average of `r_k`; `None` without truth.
    pub mean_r: Option<f64>,
    /// Fraction of steps whose NEES falls in the single-run 3σ band.
    pub nees_in_band_fraction: Option<f64>,
    pub diverged_steps: usize,
}

impl TrialReport {
    pub fn from_records(records: Vec<StepRecord>) -> Self {
        let rs: Vec<f64> = records.iter().filter_map(|r| r.r_k).collect();
        let mean_r = (!rs.is_empty()).then(|| rs.iter().sum::<f64>() / rs.len() as f64);
        let band = chi2_band(8, 1, THREE_SIGMA).expect("valid band");
        let nees: Vec<f64> = records.iter().filter_map(|r| r.nees).collect();
        let nees_in_band_fraction = (!nees.is_empty())
            .then(|| nees.iter().filter(|&&v| v >= band.0 && v <= band.1).count() as f64 / nees.len() as f64);
        let diverged_steps = records.iter().filter(|r| r.diverged).count();
        Self { records, mean_r, nees_in_band_fraction, diverged_steps }
    }
}

/// Cross-run summary for one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateSummary {
    pub n_runs: usize,
    /// Mean over runs of the time-averaged `r_k`.
    pub mean_r: Option<f64>,
    /// Sample standard deviation over runs of the time-averaged `r_k`.
    pub std_r: Option<f64>,
    pub per_step_t: Vec<f64>,
    /// Cross-run mean NEES at each step.
    pub per_step_mean_nees: Vec<Option<f64>>,
    pub nees_band: (f64, f64),
    /// Fraction of steps whose cross-run mean NEES lies in `nees_band`.
    pub nees_in_band_fraction: Option<f64>,
    pub diverged_runs: usize,
}

/// Aggregates runs of one estimator. Runs are aligned by step index and
/// truncated to the shortest run.
pub fn aggregate(runs: &[TrialReport]) -> Result<AggregateSummary, MetricsError> {
    if runs.is_empty() {
        return Err(MetricsError::Argument("no runs to aggregate".into()));
    }
    let n = runs.len();
    let means: Vec<f64> = runs.iter().filter_map(|r| r.mean_r).collect();
    let (mean_r, std_r) = if means.len() == n {
        let m = means.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        (Some(m), Some(var.sqrt()))
    } else {
        (None, None)
    };
    let steps = runs.iter().map(|r| r.records.len()).min().unwrap_or(0);
    let per_step_t = runs[0].records[..steps].iter().map(|r| r.t).collect();
    let per_step_mean_nees: Vec<Option<f64>> = (0..steps)
        .map(|k| {
            let vals: Option<Vec<f64>> = runs.iter().map(|r| r.records[k].nees).collect();
            vals.map(|v| v.iter().sum::<f64>() / n as f64)
        })
        .collect();
    let nees_band = chi2_band(8, n, THREE_SIGMA)?;
    let defined: Vec<f64> = per_step_mean_nees.iter().flatten().copied().collect();
    let nees_in_band_fraction = (!defined.is_empty()).then(|| {
        defined.iter().filter(|&&v| v >= nees_band.0 && v <= nees_band.1).count() as f64 / defined.len() as f64
    });
    let diverged_runs = runs.iter().filter(|r| r.diverged_steps > 0).count();
    Ok(AggregateSummary {
        n_runs: n,
        mean_r,
        std_r,
        per_step_t,
        per_step_mean_nees,
        nees_band,
        nees_in_band_fraction,
        diverged_runs,
    })
}
