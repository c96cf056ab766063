//! Dataset and result file formats.
//!
//! A dataset is a JSON manifest next to three CSV streams:
//!
//! * gyro: `t,wx,wy,wz`
//! * features: `t,feature_id,x_ref,y_ref,u_pix,v_pix`, one row per
//!   correspondence with reference points normalised to `z = 1`. A frame
//!   without correspondences is a single row holding only `t`.
//! * truth (optional): `t`, the nine row-major homography entries `h11..h33`,
//!   the nine Γ entries `g11..g33` and `s_dot_norm`.
//!
//! Reals are written with 17 significant digits so every finite value
//! survives a roundtrip.

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::TrialReport;
use crate::models::{CameraIntrinsics, FeatureCorrespondence, FeatureFrame, FilterState, GyroSample};
use crate::sim::{MeasurementSpec, SimDataset, TrajectorySpec, TruthSample};
use crate::sl3::{project_sl3, AlgebraMatrix, GroupElement};

pub const FORMAT_VERSION: u32 = 1;

pub const MANIFEST_FILE: &str = "manifest.json";

const GYRO_HEADER: [&str; 4] = ["t", "wx", "wy", "wz"];
const FEATURE_HEADER: [&str; 6] = ["t", "feature_id", "x_ref", "y_ref", "u_pix", "v_pix"];
const MATRIX_SUFFIX: [&str; 9] = ["11", "12", "13", "21", "22", "23", "31", "32", "33"];

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: u64, msg: String },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: unsupported dataset version {found} (expected {FORMAT_VERSION})")]
    UnsupportedVersion { path: PathBuf, found: u32 },
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

impl IoError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io { path: path.to_path_buf(), source }
    }

    fn parse(path: &Path, line: u64, msg: impl Into<String>) -> Self {
        IoError::Parse { path: path.to_path_buf(), line, msg: msg.into() }
    }

    fn csv(path: &Path, e: csv::Error) -> Self {
        let line = e.position().map_or(0, |p| p.line());
        match e.into_kind() {
            csv::ErrorKind::Io(source) => IoError::io(path, source),
            kind => IoError::parse(path, line, format!("{kind:?}")),
        }
    }
}

/// Stream file names, relative to the manifest directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFiles {
    pub gyro: String,
    pub features: String,
    #[serde(default)]
    pub truth: Option<String>,
}

/// Sensor noise a dataset was generated with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorNoise {
    /// Gyro noise PSD root (rad/s/√Hz).
    pub sigma_g: f64,
    /// Pixel noise standard deviation.
    pub sigma_r: f64,
}

/// Generator settings kept with simulated datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub trajectory: TrajectorySpec,
    pub measurement: MeasurementSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub intrinsics: CameraIntrinsics<f64>,
    pub gyro_rate: f64,
    pub cam_rate: f64,
    /// Sensor noise the data was generated with, when known.
    #[serde(default)]
    pub noise: Option<SensorNoise>,
    pub files: DatasetFiles,
    #[serde(default)]
    pub simulation: Option<SimulationRecord>,
}

impl DatasetManifest {
    /// Manifest with the default stream names.
    pub fn new(intrinsics: CameraIntrinsics<f64>, gyro_rate: f64, cam_rate: f64, with_truth: bool) -> Self {
        Self {
            version: FORMAT_VERSION,
            intrinsics,
            gyro_rate,
            cam_rate,
            noise: None,
            files: DatasetFiles {
                gyro: "gyro.csv".into(),
                features: "features.csv".into(),
                truth: with_truth.then(|| "truth.csv".into()),
            },
            simulation: None,
        }
    }

    /// Manifest describing a simulated dataset.
    pub fn simulated(trajectory: &TrajectorySpec, measurement: &MeasurementSpec, with_truth: bool) -> Self {
        let mut m = Self::new(measurement.intrinsics, trajectory.gyro_rate, trajectory.cam_rate, with_truth);
        m.noise = Some(SensorNoise { sigma_g: measurement.noise.sigma_g, sigma_r: measurement.noise.sigma_r });
        m.simulation = Some(SimulationRecord { trajectory: trajectory.clone(), measurement: measurement.clone() });
        m
    }
}

/// A dataset read from disk with any cadence warnings raised on the way.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub manifest: DatasetManifest,
    pub dataset: SimDataset,
    pub warnings: Vec<String>,
}

fn real(x: f64) -> String {
    format!("{x:.16e}")
}

fn create(path: &Path) -> Result<csv::Writer<File>, IoError> {
    let file = File::create(path).map_err(|e| IoError::io(path, e))?;
    Ok(csv::WriterBuilder::new().flexible(true).from_writer(file))
}

fn write_row<I, S>(w: &mut csv::Writer<File>, path: &Path, row: I) -> Result<(), IoError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    w.write_record(row).map_err(|e| IoError::csv(path, e))
}

fn finish(mut w: csv::Writer<File>, path: &Path) -> Result<(), IoError> {
    w.flush().map_err(|e| IoError::io(path, e))
}

fn matrix_header(prefix: &str) -> impl Iterator<Item = String> + '_ {
    MATRIX_SUFFIX.iter().map(move |s| format!("{prefix}{s}"))
}

fn matrix_fields(m: &Matrix3<f64>) -> impl Iterator<Item = String> + '_ {
    (0..3).flat_map(move |r| (0..3).map(move |c| real(m[(r, c)])))
}

/// Writes `ds` into `dir` under the names in `manifest`, then the manifest.
/// Returns the manifest path.
pub fn write_dataset(dir: &Path, ds: &SimDataset, manifest: &DatasetManifest) -> Result<PathBuf, IoError> {
    if manifest.version != FORMAT_VERSION {
        return Err(IoError::Invalid(format!("cannot write version {}", manifest.version)));
    }
    if manifest.files.truth.is_some() != ds.truth.is_some() {
        return Err(IoError::Invalid("manifest and dataset disagree on the truth stream".into()));
    }
    fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;

    let path = dir.join(&manifest.files.gyro);
    let mut w = create(&path)?;
    write_row(&mut w, &path, GYRO_HEADER)?;
    for g in &ds.gyro {
        write_row(&mut w, &path, [real(g.t), real(g.omega.x), real(g.omega.y), real(g.omega.z)])?;
    }
    finish(w, &path)?;

    let path = dir.join(&manifest.files.features);
    let mut w = create(&path)?;
    write_row(&mut w, &path, FEATURE_HEADER)?;
    for f in &ds.frames {
        if f.correspondences.is_empty() {
            write_row(&mut w, &path, [real(f.t), String::new(), String::new(), String::new(), String::new(), String::new()])?;
        }
        for c in &f.correspondences {
            if c.p_ref.z.abs() < f64::MIN_POSITIVE || !c.p_ref.iter().all(|v| v.is_finite()) {
                return Err(IoError::Invalid(format!("feature {} at t = {} has no finite normalisation", c.id, f.t)));
            }
            let p = c.p_ref / c.p_ref.z;
            write_row(
                &mut w,
                &path,
                [real(f.t), c.id.to_string(), real(p.x), real(p.y), real(c.y_pix.x), real(c.y_pix.y)],
            )?;
        }
    }
    finish(w, &path)?;

    if let (Some(name), Some(truth)) = (&manifest.files.truth, &ds.truth) {
        let path = dir.join(name);
        let mut w = create(&path)?;
        let header = std::iter::once("t".to_string())
            .chain(matrix_header("h"))
            .chain(matrix_header("g"))
            .chain(std::iter::once("s_dot_norm".to_string()));
        write_row(&mut w, &path, header)?;
        for s in truth {
            let row = std::iter::once(real(s.t))
                .chain(matrix_fields(s.h.matrix()))
                .chain(matrix_fields(s.gamma.matrix()))
                .chain(std::iter::once(real(s.s_dot_norm)));
            write_row(&mut w, &path, row)?;
        }
        finish(w, &path)?;
    }

    let path = dir.join(MANIFEST_FILE);
    write_json(&path, manifest)?;
    Ok(path)
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<V: Serialize + ?Sized>(path: &Path, value: &V) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| IoError::Json { path: path.to_path_buf(), source: e })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| IoError::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| IoError::Json { path: path.to_path_buf(), source: e })?;
    let version = value.get("version").and_then(|v| v.as_u64());
    match version {
        Some(v) if v == FORMAT_VERSION as u64 => {}
        Some(v) => return Err(IoError::UnsupportedVersion { path: path.to_path_buf(), found: v as u32 }),
        None => return Err(IoError::parse(path, 1, "manifest has no integer `version`")),
    }
    let m: DatasetManifest =
        serde_json::from_value(value).map_err(|e| IoError::Json { path: path.to_path_buf(), source: e })?;
    if !(m.gyro_rate > 0.0 && m.cam_rate > 0.0) {
        return Err(IoError::Invalid(format!("{}: rates must be positive", path.display())));
    }
    Ok(m)
}

/// Rows of a CSV file with their 1-based line numbers, header skipped.
fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<(u64, csv::StringRecord)>, IoError> {
    let file = File::open(path).map_err(|e| IoError::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(file);
    let found = r.headers().map_err(|e| IoError::csv(path, e))?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(IoError::parse(path, 1, format!("expected header `{}`", header.join(","))));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| IoError::csv(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(IoError::parse(path, line, format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        rows.push((line, rec));
    }
    Ok(rows)
}

fn field<V: std::str::FromStr>(path: &Path, line: u64, rec: &csv::StringRecord, i: usize, name: &str) -> Result<V, IoError> {
    rec[i].parse().map_err(|_| IoError::parse(path, line, format!("invalid {name} `{}`", &rec[i])))
}

fn finite(path: &Path, line: u64, rec: &csv::StringRecord, i: usize, name: &str) -> Result<f64, IoError> {
    let v: f64 = field(path, line, rec, i, name)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(IoError::parse(path, line, format!("{name} is not finite")))
    }
}

fn matrix_at(path: &Path, line: u64, rec: &csv::StringRecord, start: usize, name: &str) -> Result<Matrix3<f64>, IoError> {
    let mut m = Matrix3::zeros();
    for k in 0..9 {
        m[(k / 3, k % 3)] = finite(path, line, rec, start + k, name)?;
    }
    Ok(m)
}

/// Checks that `t` is strictly after `prev`.
fn increasing(path: &Path, line: u64, prev: Option<f64>, t: f64) -> Result<(), IoError> {
    match prev {
        Some(p) if t <= p => Err(IoError::parse(path, line, format!("timestamp {t} does not increase past {p}"))),
        _ => Ok(()),
    }
}

/// Warns about gaps longer than 1.5 nominal periods.
fn cadence(name: &str, times: &[f64], rate: f64, warnings: &mut Vec<String>) {
    let period = 1.0 / rate;
    let gaps = times.windows(2).filter(|w| w[1] - w[0] > 1.5 * period).count();
    if gaps > 0 {
        let msg = format!("{name}: {gaps} gap(s) longer than 1.5 periods at {rate} Hz");
        log::warn!("{msg}");
        warnings.push(msg);
    }
}

pub fn read_gyro(path: &Path) -> Result<Vec<GyroSample<f64>>, IoError> {
    let mut out: Vec<GyroSample<f64>> = Vec::new();
    for (line, rec) in read_rows(path, &GYRO_HEADER)? {
        let t = finite(path, line, &rec, 0, "t")?;
        increasing(path, line, out.last().map(|g| g.t), t)?;
        let w = Vector3::new(
            finite(path, line, &rec, 1, "wx")?,
            finite(path, line, &rec, 2, "wy")?,
            finite(path, line, &rec, 3, "wz")?,
        );
        out.push(GyroSample { t, omega: w });
    }
    Ok(out)
}

/// Rows sharing a timestamp form one frame; a row with only `t` is an empty frame.
pub fn read_features(path: &Path) -> Result<Vec<FeatureFrame<f64>>, IoError> {
    let mut frames: Vec<FeatureFrame<f64>> = Vec::new();
    let mut open_empty = false;
    for (line, rec) in read_rows(path, &FEATURE_HEADER)? {
        let t = finite(path, line, &rec, 0, "t")?;
        let empty = rec.iter().skip(1).all(str::is_empty);
        let same = frames.last().is_some_and(|f| f.t == t);
        if same && (empty || open_empty) {
            return Err(IoError::parse(path, line, format!("empty frame at t = {t} also lists correspondences")));
        }
        if !same {
            increasing(path, line, frames.last().map(|f| f.t), t)?;
            frames.push(FeatureFrame::empty(t));
        }
        open_empty = empty;
        if empty {
            continue;
        }
        let id: u32 = field(path, line, &rec, 1, "feature_id")?;
        let p_ref = Vector3::new(finite(path, line, &rec, 2, "x_ref")?, finite(path, line, &rec, 3, "y_ref")?, 1.0);
        let y_pix = Vector2::new(finite(path, line, &rec, 4, "u_pix")?, finite(path, line, &rec, 5, "v_pix")?);
        frames.last_mut().expect("frame pushed above").correspondences.push(FeatureCorrespondence { id, p_ref, y_pix });
    }
    Ok(frames)
}

/// Homographies are accepted when `det = 1` within the group tolerance and
/// otherwise rescaled onto `SL(3)`; Γ has its trace removed likewise.
pub fn read_truth(path: &Path) -> Result<Vec<TruthSample>, IoError> {
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain(matrix_header("h"))
        .chain(matrix_header("g"))
        .chain(std::iter::once("s_dot_norm".to_string()))
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut out: Vec<TruthSample> = Vec::new();
    for (line, rec) in read_rows(path, &header)? {
        let t = finite(path, line, &rec, 0, "t")?;
        increasing(path, line, out.last().map(|s| s.t), t)?;
        let hm = matrix_at(path, line, &rec, 1, "homography entry")?;
        let h = GroupElement::new(hm)
            .or_else(|_| project_sl3(&hm))
            .map_err(|e| IoError::parse(path, line, format!("homography: {e}")))?;
        let gm = matrix_at(path, line, &rec, 10, "Γ entry")?;
        let gamma = AlgebraMatrix::new(gm).unwrap_or_else(|_| AlgebraMatrix::project(gm));
        let s_dot_norm = finite(path, line, &rec, 19, "s_dot_norm")?;
        out.push(TruthSample { t, h, gamma, s_dot_norm });
    }
    Ok(out)
}

/// Reads the dataset described by the manifest at `path`. Stream files are
/// resolved relative to the manifest.
pub fn read_dataset(path: &Path) -> Result<LoadedDataset, IoError> {
    let manifest = read_manifest(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let gyro = read_gyro(&dir.join(&manifest.files.gyro))?;
    let frames = read_features(&dir.join(&manifest.files.features))?;
    let truth = match &manifest.files.truth {
        Some(name) => Some(read_truth(&dir.join(name))?),
        None => None,
    };
    let mut warnings = Vec::new();
    cadence("gyro", &gyro.iter().map(|g| g.t).collect::<Vec<_>>(), manifest.gyro_rate, &mut warnings);
    cadence("features", &frames.iter().map(|f| f.t).collect::<Vec<_>>(), manifest.cam_rate, &mut warnings);
    Ok(LoadedDataset { manifest, dataset: SimDataset { gyro, frames, truth }, warnings })
}

/// Writes one row per step and run: `estimator,run,t,r_k,nees,cov_trace,diverged,mode_weights`.
/// Unavailable metrics are empty; mode weights are `;`-separated.
pub fn write_step_records<'a, I>(path: &Path, runs: I) -> Result<(), IoError>
where
    I: IntoIterator<Item = (&'a str, usize, &'a TrialReport)>,
{
    let mut w = create(path)?;
    write_row(&mut w, path, ["estimator", "run", "t", "r_k", "nees", "cov_trace", "diverged", "mode_weights"])?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, real);
    for (label, run, report) in runs {
        for r in &report.records {
            let weights = r.mode_weights.iter().map(|x| real(*x)).collect::<Vec<_>>().join(";");
            write_row(
                &mut w,
                path,
                [
                    label.to_string(),
                    run.to_string(),
                    real(r.t),
                    opt(r.r_k),
                    opt(r.nees),
                    real(r.cov_trace),
                    r.diverged.to_string(),
                    weights,
                ],
            )?;
        }
    }
    finish(w, path)
}

/// Writes filter estimates: `t`, the homography `h11..h33` and Γ `g11..g33`.
pub fn write_estimates(path: &Path, estimates: &[FilterState<f64>]) -> Result<(), IoError> {
    let mut w = create(path)?;
    write_row(&mut w, path, std::iter::once("t".to_string()).chain(matrix_header("h")).chain(matrix_header("g")))?;
    for e in estimates {
        let row = std::iter::once(real(e.t)).chain(matrix_fields(e.h.matrix())).chain(matrix_fields(e.gamma.matrix()));
        write_row(&mut w, path, row)?;
    }
    finish(w, path)
}
