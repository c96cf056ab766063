//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{Matrix3, SMatrix, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sl3_homography::experiment::{
    monte_carlo, run_estimator, truth_initial_belief, EstimatorConfig, MonteCarloConfig, MonteCarloResult,
};
use sl3_homography::metrics::chi2_band;
use sl3_homography::models::{
    linearize_process, measurement_jacobian, predict_pixel, CameraIntrinsics, FilterState, NoiseConfig,
};
use sl3_homography::sim::{
    simulate, MeasurementSpec, OcclusionWindow, OutlierConfig, TrajectorySpec, PRESET_NAMES, SWITCHING_WINDOW,
};
use sl3_homography::sl3::{adjoint_matrix, exp_sl3, log_sl3, odot, skew, vee, wedge, AlgebraMatrix, AlgebraVector, GroupElement};

const MASTER_SEED: u64 = 20240611;
const RUNS: usize = 100;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_xi(rng: &mut ChaCha8Rng, max_norm: f64) -> AlgebraVector<f64> {
    let v = AlgebraVector::<f64>::from_fn(|_, _| rng.random_range(-1.0..1.0));
    v * (max_norm * rng.random_range(0.0..1.0) / v.norm())
}

/// Algebra identities over random algebra elements with `‖ξ‖ ≤ 0.5`.
fn algebra_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut wedge_vee, mut det, mut roundtrip, mut hom, mut ad_def, mut od) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..2000 {
        let xi = random_xi(&mut rng, 0.5);
        let w = wedge(&xi);
        wedge_vee = wedge_vee.max((vee(w.matrix()).unwrap() - xi).norm());
        let h = exp_sl3(&w);
        det = det.max((h.matrix().determinant() - 1.0).abs());
        roundtrip = roundtrip.max((log_sl3(&h).unwrap().vee() - xi).norm());

        let g = exp_sl3(&wedge(&random_xi(&mut rng, 0.5)));
        let lhs = adjoint_matrix(&(h * g));
        let rhs = adjoint_matrix(&h) * adjoint_matrix(&g);
        hom = hom.max((lhs - rhs).norm() / rhs.norm());
        let eta = random_xi(&mut rng, 1.0);
        let conj = h.matrix() * wedge(&eta).matrix() * h.inverse().matrix();
        ad_def = ad_def.max((adjoint_matrix(&h) * eta - vee(&conj).unwrap()).norm());

        let p = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.5..1.5));
        let direct = w.matrix() * p;
        od = od.max((direct - odot(&p) * xi).norm() / (xi.norm() * p.norm()).max(f64::MIN_POSITIVE));
    }
    let pass = wedge_vee < 1e-15
        && det < 1e-12
        && roundtrip < 1e-9
        && hom < 1e-9
        && ad_def < 1e-9
        && od < 8.0 * f64::EPSILON;
    outcome(
        pass,
        format!(
            "wedge/vee {wedge_vee:.1e}, |det-1| {det:.1e}, exp/log {roundtrip:.1e}, Ad hom {hom:.1e}, Ad def {ad_def:.1e}, odot {od:.1e}"
        ),
    )
}

/// Flow of `Ḣ = H(ω× + Γ)`, `Γ̇ = [Γ, ω×] + M` by RK4 over `dt` (either sign).
fn flow(h: &Matrix3<f64>, g: &Matrix3<f64>, omega: &Vector3<f64>, m: &Matrix3<f64>, dt: f64) -> (Matrix3<f64>, Matrix3<f64>) {
    let w = Matrix3::new(0.0, -omega.z, omega.y, omega.z, 0.0, -omega.x, -omega.y, omega.x, 0.0);
    let f = |h: &Matrix3<f64>, g: &Matrix3<f64>| (h * (w + g), g * w - w * g + m);
    let steps = 4;
    let dt = dt / steps as f64;
    let (mut h, mut g) = (*h, *g);
    for _ in 0..steps {
        let (a1, b1) = f(&h, &g);
        let (a2, b2) = f(&(h + a1 * (dt / 2.0)), &(g + b1 * (dt / 2.0)));
        let (a3, b3) = f(&(h + a2 * (dt / 2.0)), &(g + b2 * (dt / 2.0)));
        let (a4, b4) = f(&(h + a3 * dt), &(g + b3 * dt));
        h += (a1 + a2 * 2.0 + a3 * 2.0 + a4) * (dt / 6.0);
        g += (b1 + b2 * 2.0 + b3 * 2.0 + b4) * (dt / 6.0);
    }
    (h, g)
}

/// Time derivative at `t = 0` of the error between the mean flow (gyro
/// reading `omega`) and a true flow started at `H = exp(−δξ^)H̄`,
/// `Γ = Γ̄ + δγ^` driven by `omega − δw` and model noise `δwᵐ`. The error is
/// `(vee log(H̄ H⁻¹), vee(Γ − Γ̄))`.
fn error_rate(mean: &FilterState<f64>, omega: &Vector3<f64>, delta: &SMatrix<f64, 16, 1>, noise: &SMatrix<f64, 11, 1>) -> SMatrix<f64, 16, 1> {
    let dxi: AlgebraVector<f64> = delta.fixed_rows::<8>(0).into_owned();
    let dg: AlgebraVector<f64> = delta.fixed_rows::<8>(8).into_owned();
    let dw: Vector3<f64> = noise.fixed_rows::<3>(0).into_owned();
    let wm: AlgebraVector<f64> = noise.fixed_rows::<8>(3).into_owned();
    let h_true = exp_sl3(&wedge(&-dxi)).into_inner() * mean.h.matrix();
    let g_true = mean.gamma.matrix() + wedge(&dg).matrix();
    let zero = Matrix3::zeros();
    let error = |dt: f64| {
        let (hb, gb) = flow(mean.h.matrix(), mean.gamma.matrix(), omega, &zero, dt);
        let (ht, gt) = flow(&h_true, &g_true, &(omega - dw), wedge(&wm).matrix(), dt);
        let e = GroupElement::new(hb * ht.try_inverse().unwrap()).unwrap();
        let mut out = SMatrix::<f64, 16, 1>::zeros();
        out.fixed_rows_mut::<8>(0).copy_from(&log_sl3(&e).unwrap().vee());
        out.fixed_rows_mut::<8>(8).copy_from(&AlgebraMatrix::project(gt - gb).vee());
        out
    };
    let dt = 1e-4;
    (error(dt) - error(-dt)) / (2.0 * dt)
}

fn random_state(rng: &mut ChaCha8Rng) -> FilterState<f64> {
    let h = exp_sl3(&wedge(&random_xi(rng, 0.5)));
    let g = wedge(&random_xi(rng, 0.3));
    FilterState::new(h, g, 0.0)
}

fn rel(a: f64, b: f64) -> f64 {
    a / b.max(1e-12)
}

/// Process Jacobians `A`, `L` and the measurement Jacobian against central
/// differences of independently integrated flows and of the pixel model.
fn jacobian_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let k = CameraIntrinsics::default();
    let eps = 1e-5;
    let (mut worst_a, mut worst_l, mut worst_g) = (0.0f64, 0.0f64, 0.0f64);
    let mut checked = 0;
    for _ in 0..100 {
        let state = random_state(&mut rng);
        let omega = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let (a, l) = linearize_process(&state, &omega);

        let mut a_fd = SMatrix::<f64, 16, 16>::zeros();
        for j in 0..16 {
            let mut d = SMatrix::<f64, 16, 1>::zeros();
            d[j] = eps;
            let z = SMatrix::<f64, 11, 1>::zeros();
            a_fd.set_column(j, &((error_rate(&state, &omega, &d, &z) - error_rate(&state, &omega, &-d, &z)) / (2.0 * eps)));
        }
        worst_a = worst_a.max(rel((a_fd - a).norm(), a.norm()));

        let mut l_fd = SMatrix::<f64, 16, 11>::zeros();
        for j in 0..11 {
            let mut n = SMatrix::<f64, 11, 1>::zeros();
            n[j] = eps;
            let z = SMatrix::<f64, 16, 1>::zeros();
            l_fd.set_column(j, &((error_rate(&state, &omega, &z, &n) - error_rate(&state, &omega, &z, &-n)) / (2.0 * eps)));
        }
        worst_l = worst_l.max(rel((l_fd - l).norm(), l.norm()));

        let p = Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 1.0);
        let Ok(jac) = measurement_jacobian(&state, &p, &k) else { continue };
        let pixel = |d: &AlgebraVector<f64>| {
            let s = FilterState::new(exp_sl3(&wedge(&-d)) * state.h, state.gamma, 0.0);
            predict_pixel(&s, &p, &k).unwrap()
        };
        let mut g_fd = SMatrix::<f64, 2, 16>::zeros();
        for j in 0..8 {
            let mut d = AlgebraVector::zeros();
            d[j] = eps;
            let col: Vector2<f64> = (pixel(&d) - pixel(&-d)) / (2.0 * eps);
            g_fd.set_column(j, &col);
        }
        worst_g = worst_g.max(rel((g_fd - jac).norm(), jac.norm()));
        checked += 1;
    }
    let pass = checked == 100 && worst_a < 1e-5 && worst_l < 1e-5 && worst_g < 1e-5;
    outcome(pass, format!("{checked} states, max relative error A {worst_a:.1e}, L {worst_l:.1e}, G {worst_g:.1e}"))
}

fn preset(name: &str) -> TrajectorySpec {
    TrajectorySpec::preset(name).unwrap()
}

fn estimators() -> Vec<EstimatorConfig> {
    vec![EstimatorConfig::ekf_tight(), EstimatorConfig::ekf_loose(), EstimatorConfig::imm_simulation()]
}

fn exactness() -> Result<Outcome, Box<dyn std::error::Error>> {
    let spec = TrajectorySpec { duration: 30.0, ..preset("traj1") };
    let meas = MeasurementSpec { noise: NoiseConfig { sigma_g: 0.0, sigma_r: 0.0, sigma_m2: 0.0 }, ..Default::default() };
    let ds = simulate(&spec, &meas)?;
    let init = truth_initial_belief(&ds, 1e-1).unwrap();
    let mut parts = Vec::new();
    let mut pass = true;
    for e in estimators() {
        let out = run_estimator(&ds, &init, &e, &meas.intrinsics)?;
        let r = out.report.mean_r.unwrap();
        pass &= r < 1e-6;
        parts.push(format!("{} {r:.1e}", e.label()));
    }
    Ok(outcome(pass, format!("30 s, {}", parts.join(", "))))
}

fn batch(spec: TrajectorySpec, est: Vec<EstimatorConfig>, meas: MeasurementSpec, runs: usize) -> Result<(MonteCarloResult, Duration), Box<dyn std::error::Error>> {
    let cfg = MonteCarloConfig { measurement: meas, ..MonteCarloConfig::new(spec, est, runs, MASTER_SEED) };
    let start = Instant::now();
    let r = monte_carlo(&cfg, None)?;
    Ok((r, start.elapsed()))
}

fn consistency() -> Result<Outcome, Box<dyn std::error::Error>> {
    let (r, took) = batch(preset("traj1"), vec![EstimatorConfig::ekf_tight()], MeasurementSpec::default(), RUNS)?;
    let s = &r.summary.estimators[0].summary;
    let band = chi2_band(8, RUNS, 0.9973)?;
    let per_step: Vec<f64> = s.per_step_mean_nees.iter().flatten().copied().collect();
    let inside = per_step.iter().filter(|v| **v >= band.0 && **v <= band.1).count() as f64 / per_step.len() as f64;
    let pass = inside >= 0.9 && took < Duration::from_secs(300) && s.nees_band == band;
    Ok(outcome(
        pass,
        format!(
            "traj1, {RUNS} runs, band ({:.3}, {:.3}), {:.1}% of {} steps inside, {:.0} s",
            band.0,
            band.1,
            100.0 * inside,
            per_step.len(),
            took.as_secs_f64()
        ),
    ))
}

struct PresetResult {
    name: &'static str,
    compliant: bool,
    mean_r: [f64; 3],
    result: MonteCarloResult,
}

fn preset_batches() -> Result<Vec<PresetResult>, Box<dyn std::error::Error>> {
    let mut out = Vec::new();
    for name in PRESET_NAMES {
        let (r, took) = batch(preset(name), estimators(), MeasurementSpec::default(), RUNS)?;
        let m = |i: usize| r.summary.estimators[i].summary.mean_r.unwrap_or(f64::INFINITY);
        let mean_r = [m(0), m(1), m(2)];
        eprintln!(
            "  {name:<9} max|s_dot| {:>8.3}  tight {:.4}  loose {:.4}  imm {:.4}  ({:.0} s)",
            r.summary.max_s_dot_norm,
            mean_r[0],
            mean_r[1],
            mean_r[2],
            took.as_secs_f64()
        );
        out.push(PresetResult { name, compliant: r.summary.max_s_dot_norm < 1e-6, mean_r, result: r });
    }
    Ok(out)
}

fn ordering(presets: &[PresetResult]) -> Outcome {
    let mut failures = Vec::new();
    for p in presets {
        let [tight, loose, imm] = p.mean_r;
        if p.compliant && !(tight < loose) {
            failures.push(format!("{}: tight {tight:.4} >= loose {loose:.4}", p.name));
        }
        if !p.compliant && !(imm < tight) {
            failures.push(format!("{}: imm {imm:.4} >= tight {tight:.4}", p.name));
        }
        if !(imm <= 1.1 * tight.min(loose)) {
            failures.push(format!("{}: imm {imm:.4} > 1.1 x {:.4}", p.name, tight.min(loose)));
        }
    }
    let worst = presets.iter().map(|p| p.mean_r[2] / p.mean_r[0].min(p.mean_r[1])).fold(0.0, f64::max);
    let compliant: Vec<&str> = presets.iter().filter(|p| p.compliant).map(|p| p.name).collect();
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{} presets ({} compliant: {}), worst imm/min ratio {worst:.3}", presets.len(), compliant.len(), compliant.join(", "))
        } else {
            failures.join("; ")
        },
    )
}

fn magnitude(presets: &[PresetResult]) -> Outcome {
    let compliant: Vec<&PresetResult> = presets.iter().filter(|p| p.compliant).collect();
    let pass = !compliant.is_empty() && compliant.iter().all(|p| (0.003..=0.06).contains(&p.mean_r[0]));
    let parts: Vec<String> = compliant.iter().map(|p| format!("{} {:.4}", p.name, p.mean_r[0])).collect();
    outcome(pass, format!("tight mean r_k {} within [0.003, 0.06]", parts.join(", ")))
}

fn switching(presets: &[PresetResult]) -> Outcome {
    let p = presets.iter().find(|p| p.name == "switching").expect("switching preset is batched");
    let runs = &p.result.runs[2];
    let steps = runs[0].records.len();
    let weight: Vec<(f64, f64)> = (0..steps)
        .map(|k| {
            let w = runs.iter().map(|r| r.records[k].mode_weights[1]).sum::<f64>() / runs.len() as f64;
            (runs[0].records[k].t, w)
        })
        .collect();
    let (onset, back) = SWITCHING_WINDOW;
    let rise = weight.iter().find(|(t, w)| *t >= onset && *w > 0.5).map(|(t, _)| t - onset);
    let fall = weight.iter().find(|(t, w)| *t >= back && *w < 0.5).map(|(t, _)| t - back);
    let pass = rise.is_some_and(|d| d <= 1.0) && fall.is_some_and(|d| d <= 3.0);
    let show = |d: Option<f64>| d.map_or("never".to_string(), |d| format!("{d:.2} s"));
    outcome(pass, format!("mean loose weight > 0.5 after {}, < 0.5 after {} of return", show(rise), show(fall)))
}

fn occlusion() -> Result<Outcome, Box<dyn std::error::Error>> {
    let (start, end) = (4.0, 6.0);
    let meas = MeasurementSpec {
        occlusions: vec![OcclusionWindow { start, end, min_visible: 0 }],
        ..MeasurementSpec::default()
    };
    let sigma_g = meas.noise.sigma_g;
    let runs = 20;
    let frames = simulate(&preset("traj1"), &meas)?.frames.len();
    let (r, _) = batch(preset("traj1"), estimators(), meas, runs)?;
    let mut complete = true;
    let mut monotone = true;
    for est in &r.runs {
        for run in est {
            complete &= run.records.len() == frames && run.records.iter().all(|s| s.r_k.is_some_and(f64::is_finite) && !s.diverged);
            let inside: Vec<f64> = run.records.iter().filter(|s| s.t > start && s.t < end).map(|s| s.cov_trace).collect();
            monotone &= !inside.is_empty() && inside.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-12));
        }
    }
    let imm = &r.runs[2];
    let mean_at = |pick: &dyn Fn(f64) -> bool| {
        let idx = imm[0].records.iter().rposition(|s| pick(s.t)).unwrap();
        imm.iter().map(|run| run.records[idx].r_k.unwrap()).sum::<f64>() / imm.len() as f64
    };
    let before = mean_at(&|t| t < start);
    let after = mean_at(&|t| t < end);
    let ratio = after / before;
    // Attitude random walk of the gyro alone over the window: each axis is
    // N(0, σ_g² T), mapped to the algebra as (δθ×)^∨.
    let sigma = sigma_g * (end - start).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(MASTER_SEED);
    let draws = 20_000;
    let floor = (0..draws)
        .map(|_| {
            let d: Vector3<f64> = Vector3::from_fn(|_, _| sigma * rng.sample::<f64, _>(rand_distr::StandardNormal));
            vee(&skew(&d)).unwrap().norm()
        })
        .sum::<f64>()
        / draws as f64;
    let pass = complete && monotone && ratio < 5.0;
    Ok(outcome(
        pass,
        format!(
            "2 s occlusion, {runs} runs: estimates throughout {complete}, trace non-decreasing {monotone}, imm r_k {before:.4} -> {after:.4} (x{ratio:.2}); gyro-only drift over the window alone {floor:.4} (x{:.2})",
            floor / before
        ),
    ))
}

fn robust_loss() -> Result<Outcome, Box<dyn std::error::Error>> {
    let runs = 30;
    let clean = MeasurementSpec { n_points: 20, ..MeasurementSpec::default() };
    let dirty = MeasurementSpec { outliers: Some(OutlierConfig { fraction: 0.2, magnitude: 100.0 }), ..clean.clone() };
    let mut plain = EstimatorConfig::imm_simulation();
    plain.filter.robust = false;
    let mean = |spec: &MeasurementSpec, e: &EstimatorConfig| -> Result<f64, Box<dyn std::error::Error>> {
        let (r, _) = batch(preset("traj1"), vec![e.clone()], spec.clone(), runs)?;
        Ok(r.summary.estimators[0].summary.mean_r.unwrap())
    };
    let robust = EstimatorConfig::imm_simulation();
    let (rc, rd) = (mean(&clean, &robust)?, mean(&dirty, &robust)?);
    let (pc, pd) = (mean(&clean, &plain)?, mean(&dirty, &plain)?);
    let pass = rd / rc < 2.0 && pd / pc > 2.0;
    Ok(outcome(
        pass,
        format!(
            "traj1, 20 points, 20% at 100 px, {runs} runs: robust {rc:.4} -> {rd:.4} (x{:.2}), without {pc:.4} -> {pd:.4} (x{:.1})",
            rd / rc,
            pd / pc
        ),
    ))
}

fn determinism() -> Result<Outcome, Box<dyn std::error::Error>> {
    let spec = TrajectorySpec { duration: 3.0, ..preset("traj5") };
    let cfg = MonteCarloConfig::new(spec, estimators(), 8, MASTER_SEED);
    let json = |threads| -> Result<String, Box<dyn std::error::Error>> {
        Ok(serde_json::to_string_pretty(&monte_carlo(&cfg, Some(threads))?.summary)?)
    };
    let a = json(1)?;
    let b = json(1)?;
    let c = json(4)?;
    Ok(outcome(a == b && a == c, format!("{} byte summary, repeated and 1 vs 4 threads", a.len())))
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, r: Result<Outcome, Box<dyn std::error::Error>>, took: Duration| {
        let o = r.unwrap_or_else(|e| outcome(false, format!("error: {e}")));
        failed += usize::from(!o.pass);
        println!("{} criterion {n:>2} {name}: {} [{:.1} s]", if o.pass { "PASS" } else { "FAIL" }, o.detail, took.as_secs_f64());
    };
    let timed = |f: &dyn Fn() -> Result<Outcome, Box<dyn std::error::Error>>| {
        let t = Instant::now();
        let r = f();
        (r, t.elapsed())
    };

    let (r, t) = timed(&|| Ok(algebra_suite()));
    let r = r.map(|o| Outcome { pass: o.pass && t < Duration::from_secs(5), ..o });
    report(1, "algebra", r, t);
    let (r, t) = timed(&|| Ok(jacobian_suite()));
    let r = r.map(|o| Outcome { pass: o.pass && t < Duration::from_secs(10), ..o });
    report(2, "jacobians", r, t);
    let (r, t) = timed(&exactness);
    report(3, "exactness", r, t);
    let (r, t) = timed(&consistency);
    report(4, "consistency", r, t);

    let start = Instant::now();
    match preset_batches() {
        Ok(presets) => {
            let t = start.elapsed();
            report(5, "ordering", Ok(ordering(&presets)), t);
            report(6, "magnitude", Ok(magnitude(&presets)), Duration::ZERO);
            report(7, "switching", Ok(switching(&presets)), Duration::ZERO);
        }
        Err(e) => {
            for (n, name) in [(5, "ordering"), (6, "magnitude"), (7, "switching")] {
                report(n, name, Err(e.to_string().into()), start.elapsed());
            }
        }
    }
    let (r, t) = timed(&occlusion);
    report(8, "occlusion", r, t);
    let (r, t) = timed(&robust_loss);
    report(9, "robust loss", r, t);
    let (r, t) = timed(&determinism);
    report(10, "determinism", r, t);

    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
