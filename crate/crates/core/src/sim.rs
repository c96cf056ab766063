//! Seeded trajectory and measurement synthesis.
//!
//! The plane is fixed in the reference camera frame `a`: points satisfy
//! `n_aᵀ ρ_a = −d_a`. The camera starts at the reference pose, so `H(0) = I`.
//! Angular velocity is held constant between gyro samples and the attitude is
//! advanced with the exact rotation for each interval, which makes the
//! process model exact whenever `s_a = ṙ_a / d_b` is constant.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::expm;
use crate::models::{
    gamma_from_velocity, homography_from_pose, predict_pixel, CameraIntrinsics, FeatureCorrespondence, FeatureFrame,
    FilterState, GyroSample, ModelError, NoiseConfig, PlanePose,
};
use crate::sl3::{skew, AlgebraMatrix, GroupElement};

/// Image size used to drop features that leave the view (pixels).
pub const IMAGE_WIDTH: f64 = 640.0;
pub const IMAGE_HEIGHT: f64 = 480.0;
/// Default threshold on `‖ṡ_a‖` above which a profile counts as aggressive (1/s²).
pub const AGGRESSIVE_THRESHOLD: f64 = 155.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid trajectory specification: {0}")]
    Spec(String),
    #[error("camera crossed the plane at t = {t:.4} s")]
    CrossedPlane { t: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One harmonic term `amplitude · sin(2π f t + phase)` per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    pub amplitude: [f64; 3],
    pub freq: f64,
    #[serde(default)]
    pub phase: f64,
}

/// Raised-cosine displacement `A(1 − cos 2πf(t − start))` on `[start, end]`.
///
/// `f (end − start)` is rounded to a whole number of cycles so velocity is
/// continuous at both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Burst {
    pub amplitude: [f64; 3],
    pub freq: f64,
    pub start: f64,
    pub end: f64,
}

impl Burst {
    fn cycles_freq(&self) -> f64 {
        let cycles = (self.freq * (self.end - self.start)).round().max(1.0);
        cycles / (self.end - self.start)
    }
}

/// Camera translation in the reference frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MotionProfile {
    Static,
    /// `s_a` constant: `r(t) = s d_a (e^{λt} − 1)/λ` with `λ = n_aᵀ s`.
    ConstantS { s: [f64; 3] },
    /// Motion parallel to the plane: constant velocity, constant acceleration,
    /// harmonics and bursts. Only the constant-velocity part keeps `s_a`
    /// constant. Vectors are projected onto the plane.
    Parallel {
        #[serde(default)]
        velocity: [f64; 3],
        #[serde(default)]
        accel: [f64; 3],
        #[serde(default)]
        harmonics: Vec<Harmonic>,
        #[serde(default)]
        bursts: Vec<Burst>,
    },
}

/// Angular velocity `ω(t) = bias + Σ harmonics`, in the camera frame (rad/s).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RotationProfile {
    #[serde(default)]
    pub bias: [f64; 3],
    #[serde(default)]
    pub harmonics: Vec<Harmonic>,
}

impl RotationProfile {
    pub fn omega(&self, t: f64) -> Vector3<f64> {
        let mut w = Vector3::from(self.bias);
        for h in &self.harmonics {
            w += Vector3::from(h.amplitude) * (2.0 * std::f64::consts::PI * h.freq * t + h.phase).sin();
        }
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneSpec {
    /// Normal in the reference frame, pointing from the plane to the camera.
    pub n_a: [f64; 3],
    /// Distance from the reference camera to the plane (m).
    pub d_a: f64,
}

impl Default for PlaneSpec {
    fn default() -> Self {
        Self { n_a: [0.0, 0.0, -1.0], d_a: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub duration: f64,
    pub gyro_rate: f64,
    pub cam_rate: f64,
    pub motion: MotionProfile,
    #[serde(default)]
    pub rotation: RotationProfile,
    #[serde(default)]
    pub plane: PlaneSpec,
}

/// Named presets, from assumption-compliant (`traj1`, `traj2`) to severely
/// violating (`traj8`), plus `switching`: compliant, violating, compliant.
pub const PRESET_NAMES: [&str; 9] = ["traj1", "traj2", "traj3", "traj4", "traj5", "traj6", "traj7", "traj8", "switching"];

/// Onset and end of the violating segment of the `switching` preset (s).
pub const SWITCHING_WINDOW: (f64, f64) = (4.0, 7.0);

impl TrajectorySpec {
    pub fn new(motion: MotionProfile, duration: f64) -> Self {
        Self {
            duration,
            gyro_rate: 90.0,
            cam_rate: 30.0,
            motion,
            rotation: RotationProfile::default(),
            plane: PlaneSpec::default(),
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        let gentle = RotationProfile {
            bias: [0.0; 3],
            harmonics: vec![
                Harmonic { amplitude: [0.06, 0.0, 0.0], freq: 0.25, phase: FRAC_PI_2 },
                Harmonic { amplitude: [0.0, 0.05, 0.0], freq: 0.2, phase: FRAC_PI_2 },
                Harmonic { amplitude: [0.0, 0.0, 0.08], freq: 0.15, phase: FRAC_PI_2 },
            ],
        };
        let tilted = PlaneSpec { n_a: [0.1, -0.05, -1.0], d_a: 1.0 };
        let harmonic = |a: [f64; 3], f: f64| Harmonic { amplitude: a, freq: f, phase: 0.0 };
        let bursts = |a: [f64; 3], f: f64, period: f64, len: f64, duration: f64| {
            let mut out = Vec::new();
            let mut t = 1.0;
            while t + len <= duration {
                out.push(Burst { amplitude: a, freq: f, start: t, end: t + len });
                t += period;
            }
            out
        };
        let duration = 10.0;
        let (motion, rotation, plane) = match name {
            "traj1" => (MotionProfile::ConstantS { s: [0.004, -0.003, -0.02] }, gentle, PlaneSpec::default()),
            "traj2" => (MotionProfile::ConstantS { s: [-0.003, 0.004, 0.015] }, gentle, tilted),
            "traj3" => (
                MotionProfile::Parallel {
                    velocity: [-0.05, 0.0, 0.0],
                    accel: [0.01, 0.0, 0.0],
                    harmonics: vec![],
                    bursts: vec![],
                },
                gentle,
                PlaneSpec::default(),
            ),
            "traj4" => (
                MotionProfile::Parallel {
                    velocity: [0.0; 3],
                    accel: [0.0; 3],
                    harmonics: vec![harmonic([0.05, 0.03, 0.0], 0.2)],
                    bursts: vec![],
                },
                gentle,
                PlaneSpec::default(),
            ),
            "traj5" => (
                MotionProfile::Parallel {
                    velocity: [0.0; 3],
                    accel: [0.0; 3],
                    harmonics: vec![harmonic([0.05, 0.04, 0.0], 0.5)],
                    bursts: vec![],
                },
                gentle,
                tilted,
            ),
            "traj6" => (
                MotionProfile::Parallel {
                    velocity: [0.01, 0.0, 0.0],
                    accel: [0.0; 3],
                    harmonics: vec![harmonic([0.04, 0.0, 0.0], 0.8), harmonic([0.0, 0.04, 0.0], 1.1)],
                    bursts: vec![],
                },
                gentle,
                PlaneSpec::default(),
            ),
            "traj7" => (
                MotionProfile::Parallel {
                    velocity: [0.0; 3],
                    accel: [0.0; 3],
                    harmonics: vec![],
                    bursts: bursts([0.02, 0.015, 0.0], 3.0, 2.0, 1.0, duration),
                },
                gentle,
                PlaneSpec::default(),
            ),
            "traj8" => (
                MotionProfile::Parallel {
                    velocity: [0.0; 3],
                    accel: [0.0; 3],
                    harmonics: vec![harmonic([0.0, 0.06, 0.0], 0.3)],
                    bursts: bursts([0.09, 0.0, 0.0], 7.0, 2.0, 1.0, duration),
                },
                gentle,
                PlaneSpec::default(),
            ),
            "switching" => (
                MotionProfile::Parallel {
                    velocity: [0.005, 0.0, 0.0],
                    accel: [0.0; 3],
                    harmonics: vec![],
                    bursts: vec![Burst {
                        amplitude: [0.03, 0.02, 0.0],
                        freq: 3.0,
                        start: SWITCHING_WINDOW.0,
                        end: SWITCHING_WINDOW.1,
                    }],
                },
                gentle,
                PlaneSpec::default(),
            ),
            _ => return None,
        };
        let duration = if name == "switching" { 12.0 } else { duration };
        Some(Self { rotation, plane, ..Self::new(motion, duration) })
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Spec(m.into()));
        if !(self.duration > 0.0) {
            return bad("duration must be positive");
        }
        if !(self.gyro_rate > 0.0 && self.cam_rate > 0.0) {
            return bad("rates must be positive");
        }
        let ratio = self.gyro_rate / self.cam_rate;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return bad("gyro rate must be an integer multiple of the camera rate");
        }
        if !(self.plane.d_a > 0.0) || Vector3::from(self.plane.n_a).norm() == 0.0 {
            return bad("plane needs a positive distance and a non-zero normal");
        }
        if let MotionProfile::Parallel { bursts, .. } = &self.motion {
            if bursts.iter().any(|b| !(b.end > b.start) || !(b.freq > 0.0)) {
                return bad("bursts need end > start and positive frequency");
            }
        }
        Ok(())
    }

    /// Gyro samples per camera frame.
    pub fn ratio(&self) -> usize {
        (self.gyro_rate / self.cam_rate).round() as usize
    }

    pub fn n_gyro(&self) -> usize {
        (self.duration * self.gyro_rate).floor() as usize + 1
    }

    pub fn gyro_time(&self, j: usize) -> f64 {
        j as f64 / self.gyro_rate
    }

    fn normal(&self) -> Vector3<f64> {
        Vector3::from(self.plane.n_a).normalize()
    }

    /// Position, velocity and acceleration of the camera in frame `a`.
    pub fn translation(&self, t: f64) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let n = self.normal();
        let d_a = self.plane.d_a;
        let tau = 2.0 * std::f64::consts::PI;
        match &self.motion {
            MotionProfile::Static => (Vector3::zeros(), Vector3::zeros(), Vector3::zeros()),
            MotionProfile::ConstantS { s } => {
                let s = Vector3::from(*s);
                let lambda = n.dot(&s);
                let e = (lambda * t).exp();
                // (e^{λt} − 1)/λ, continuous through λ = 0.
                let growth = if lambda.abs() * t.abs().max(1.0) < 1e-8 { t * (1.0 + 0.5 * lambda * t) } else { (e - 1.0) / lambda };
                (s * (d_a * growth), s * (d_a * e), s * (d_a * lambda * e))
            }
            MotionProfile::Parallel { velocity, accel, harmonics, bursts } => {
                let proj = |v: &[f64; 3]| {
                    let v = Vector3::from(*v);
                    v - n * n.dot(&v)
                };
                let v0 = proj(velocity);
                let a0 = proj(accel);
                let mut r = v0 * t + a0 * (0.5 * t * t);
                let mut v = v0 + a0 * t;
                let mut a = a0;
                for h in harmonics {
                    let amp = proj(&h.amplitude);
                    let w = tau * h.freq;
                    let ph = w * t + h.phase;
                    r += amp * (ph.sin() - h.phase.sin());
                    v += amp * (w * ph.cos());
                    a -= amp * (w * w * ph.sin());
                }
                for b in bursts {
                    if t > b.start && t < b.end {
                        let amp = proj(&b.amplitude);
                        let w = tau * b.cycles_freq();
                        let ph = w * (t - b.start);
                        r += amp * (1.0 - ph.cos());
                        v += amp * (w * ph.sin());
                        a += amp * (w * w * ph.cos());
                    }
                }
                (r, v, a)
            }
        }
    }

    /// `‖ṡ_a‖` with `s_a = ṙ_a / d_b` and `d_b = d_a + n_aᵀ r`.
    pub fn s_dot_norm(&self, t: f64) -> f64 {
        let (r, v, a) = self.translation(t);
        let n = self.normal();
        let d = self.plane.d_a + n.dot(&r);
        let d_dot = n.dot(&v);
        (a / d - v * (d_dot / (d * d))).norm()
    }
}

/// Ground truth at one gyro timestamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthSample {
    pub t: f64,
    pub h: GroupElement<f64>,
    pub gamma: AlgebraMatrix<f64>,
    pub s_dot_norm: f64,
}

impl TruthSample {
    pub fn state(&self) -> FilterState<f64> {
        FilterState::new(self.h, self.gamma, self.t)
    }
}

/// Gyro stream, camera frames and optional truth.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimDataset {
    pub gyro: Vec<GyroSample<f64>>,
    pub frames: Vec<FeatureFrame<f64>>,
    pub truth: Option<Vec<TruthSample>>,
}

impl SimDataset {
    /// Truth sample with timestamp `t` (within 1 µs).
    pub fn truth_at(&self, t: f64) -> Option<&TruthSample> {
        let truth = self.truth.as_ref()?;
        let i = truth.partition_point(|s| s.t < t - 1e-6);
        truth.get(i).filter(|s| (s.t - t).abs() <= 1e-6)
    }

    pub fn max_s_dot_norm(&self) -> f64 {
        self.truth.as_ref().map_or(0.0, |tr| tr.iter().map(|s| s.s_dot_norm).fold(0.0, f64::max))
    }
}

/// Truth trajectory with noiseless gyro samples and no frames.
pub fn generate_trajectory(spec: &TrajectorySpec) -> Result<SimDataset, SimError> {
    spec.validate()?;
    let n = spec.normal();
    let dt = 1.0 / spec.gyro_rate;
    let count = spec.n_gyro();
    let mut c = Matrix3::<f64>::identity();
    let mut gyro = Vec::with_capacity(count);
    let mut truth = Vec::with_capacity(count);
    for j in 0..count {
        let t = spec.gyro_time(j);
        let (r, v, _) = spec.translation(t);
        let d_b = spec.plane.d_a + n.dot(&r);
        if !(d_b > 0.0) {
            return Err(SimError::CrossedPlane { t });
        }
        let n_b = c.transpose() * n;
        let pose = PlanePose { c_ab: c, r_a_ba: r, n_b, d_b };
        let h = homography_from_pose(&pose).map_err(|_| SimError::CrossedPlane { t })?;
        let gamma = gamma_from_velocity(&(c.transpose() * v), &n_b, d_b)?;
        truth.push(TruthSample { t, h, gamma, s_dot_norm: spec.s_dot_norm(t) });
        let omega = spec.rotation.omega(t);
        gyro.push(GyroSample { t, omega });
        c *= expm(&(skew(&omega) * dt));
    }
    Ok(SimDataset { gyro, frames: Vec::new(), truth: Some(truth) })
}

/// `[start, end)` window during which only `min_visible` features remain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcclusionWindow {
    pub start: f64,
    pub end: f64,
    #[serde(default)]
    pub min_visible: usize,
}

impl OcclusionWindow {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t < self.end
    }
}

/// Gross pixel outliers injected into the feature stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierConfig {
    /// Probability that a correspondence is replaced by an outlier.
    pub fraction: f64,
    /// Offset magnitude in pixels, in a uniformly random direction.
    pub magnitude: f64,
}

/// Measurement synthesis options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSpec {
    pub noise: NoiseConfig<f64>,
    pub intrinsics: CameraIntrinsics<f64>,
    pub n_points: usize,
    /// Half-width of the square of normalised reference coordinates holding the points.
    pub point_spread: f64,
    #[serde(default)]
    pub occlusions: Vec<OcclusionWindow>,
    #[serde(default)]
    pub outliers: Option<OutlierConfig>,
    pub seed: u64,
}

impl Default for MeasurementSpec {
    fn default() -> Self {
        Self {
            noise: NoiseConfig::default(),
            intrinsics: CameraIntrinsics::default(),
            n_points: 4,
            point_spread: 0.2,
            occlusions: Vec::new(),
            outliers: None,
            seed: 0,
        }
    }
}

/// Reference points: the four corners of the spread square, then uniform
/// samples inside it.
pub fn reference_points(n: usize, spread: f64, rng: &mut impl Rng) -> Vec<Vector3<f64>> {
    let corners = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
    (0..n)
        .map(|i| {
            if i < 4 {
                Vector3::new(corners[i].0 * spread, corners[i].1 * spread, 1.0)
            } else {
                Vector3::new(rng.random_range(-spread..spread), rng.random_range(-spread..spread), 1.0)
            }
        })
        .collect()
}

fn in_image(y: &Vector2<f64>) -> bool {
    y.x >= 0.0 && y.x < IMAGE_WIDTH && y.y >= 0.0 && y.y < IMAGE_HEIGHT
}

/// Adds gyro and pixel noise to a truth trajectory and builds camera frames.
///
/// Gyro samples get `N(0, σ_g²/dt · I)`; pixels get `N(0, σ_r² I)`. Features
/// outside the image, behind the camera, or hidden by an occlusion window are
/// removed. A zero noise intensity disables that noise source.
pub fn synthesize_measurements(
    truth: &SimDataset,
    spec: &TrajectorySpec,
    meas: &MeasurementSpec,
) -> Result<SimDataset, SimError> {
    if meas.n_points < 4 {
        return Err(SimError::Spec("at least 4 points are needed to define a homography".into()));
    }
    let truth_samples = truth.truth.as_ref().ok_or_else(|| SimError::Spec("dataset has no truth stream".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(meas.seed);
    let points = reference_points(meas.n_points, meas.point_spread, &mut rng);
    let dt = 1.0 / spec.gyro_rate;
    let gyro_sd = meas.noise.sigma_g / dt.sqrt();
    let pix_sd = meas.noise.sigma_r;
    let gauss = |sd: f64, rng: &mut ChaCha8Rng| {
        let z: f64 = StandardNormal.sample(rng);
        z * sd
    };

    let gyro = truth
        .gyro
        .iter()
        .map(|g| {
            let noise = Vector3::new(gauss(gyro_sd, &mut rng), gauss(gyro_sd, &mut rng), gauss(gyro_sd, &mut rng));
            GyroSample { t: g.t, omega: g.omega + noise }
        })
        .collect();

    let ratio = spec.ratio();
    let mut frames = Vec::new();
    for (j, sample) in truth_samples.iter().enumerate() {
        if j % ratio != 0 || j == 0 {
            continue;
        }
        let state = sample.state();
        let occlusion = meas.occlusions.iter().filter(|o| o.contains(sample.t)).map(|o| o.min_visible).min();
        let mut correspondences = Vec::with_capacity(points.len());
        for (id, p) in points.iter().enumerate() {
            // Draw noise for every point so the stream does not depend on visibility.
            let noise = Vector2::new(gauss(pix_sd, &mut rng), gauss(pix_sd, &mut rng));
            let outlier = meas.outliers.map(|o| {
                let hit = rng.random::<f64>() < o.fraction;
                let angle = rng.random::<f64>() * 2.0 * std::f64::consts::PI;
                (hit, Vector2::new(angle.cos(), angle.sin()) * o.magnitude)
            });
            let Ok(y) = predict_pixel(&state, p, &meas.intrinsics) else { continue };
            let mut y_pix = y + noise;
            if let Some((true, offset)) = outlier {
                y_pix += offset;
            }
            if !in_image(&y) || !in_image(&y_pix) {
                continue;
            }
            if occlusion.is_some_and(|keep| correspondences.len() >= keep) {
                continue;
            }
            correspondences.push(FeatureCorrespondence { id: id as u32, p_ref: *p, y_pix });
        }
        frames.push(FeatureFrame { t: sample.t, correspondences });
    }
    Ok(SimDataset { gyro, frames, truth: truth.truth.clone() })
}

/// Draws `ξ ~ N(0, σ² I)` on all 16 error coordinates and applies it to the
/// truth: `H = exp(−ξ_H^) H_true`, `Γ = Γ_true − ξ_Γ^`, so the true state
/// has error `ξ` about the returned estimate.
pub fn perturb_initial_state(truth: &FilterState<f64>, variance: f64, rng: &mut impl Rng) -> FilterState<f64> {
    let normal = Normal::new(0.0, variance.sqrt()).expect("finite variance");
    let xi = crate::sl3::AlgebraVector::<f64>::from_fn(|_, _| normal.sample(rng));
    let g = crate::sl3::AlgebraVector::<f64>::from_fn(|_, _| normal.sample(rng));
    let h = crate::sl3::exp_sl3(&crate::sl3::wedge(&xi)) * truth.h;
    FilterState::new(h, truth.gamma.sub(&crate::sl3::wedge(&g)), truth.t)
}

/// Truth trajectory plus synthesised measurements.
pub fn simulate(spec: &TrajectorySpec, meas: &MeasurementSpec) -> Result<SimDataset, SimError> {
    let truth = generate_trajectory(spec)?;
    synthesize_measurements(&truth, spec, meas)
}
