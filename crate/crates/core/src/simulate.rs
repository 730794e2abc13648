//! Fixed-step closed-loop runner, trace export, metrics and the training
//! pipeline.
//!
//! Each control step evaluates the true target velocity, synthesizes the
//! image residual from ground truth, recovers the estimation error, runs the
//! switching estimator, applies the control law and integrates target,
//! camera and observer on SE(3).

use std::io::Write;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{PursuitError, Result};
use crate::geometry::{exp_se3, ErrorVector, Pose, Rotation, Twist, Vec3, Vec6};
use crate::gpmodel::{self, Dataset, FitOptions, GpModel};
use crate::motion::{limit_cycle_inputs, sample_training_data, MotionProfile, SwitchSchedule, SwitchingSignal};
use crate::pursuit::{
    control_input, ellipse_membership, lambda_k, output_matrix, storage_function, vmo_step, BoundParameters,
    ControllerGains, EllipseMode, Vec12,
};
use crate::vision::{image_jacobian, pseudo_inverse, visual_measurement, FeatureModel};

/// Steps between re-projections of the integrated rotations onto SO(3).
const REORTHONORMALIZE_EVERY: usize = 1000;

/// Which GP models drive the feedforward term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    /// One model trained on all data.
    Single,
    /// One model per profile, selected online.
    Switched,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationPolicy {
    /// Stop at the first event and return the partial trace.
    #[default]
    Abort,
    /// Record the event and keep going with the last usable estimate.
    Continue,
}

/// Source of `λ_K` for the ellipse evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSource {
    /// Use `BoundParameters::lambda_k` as given.
    Fixed,
    /// Running minimum of the smallest eigenvalue of `NᵀKN` along the run.
    Computed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub g_wo0: Pose,
    pub g_wc0: Pose,
    pub g_bar_co0: Pose,
    pub g_d: Pose,
    pub gains: ControllerGains,
    pub profiles: Vec<MotionProfile>,
    pub schedule: SwitchSchedule,
    pub features: FeatureModel,
    pub dt: f64,
    pub duration: f64,
    /// Target integration substeps per control step.
    pub target_substeps: usize,
    pub seed: u64,
    pub threshold: f64,
    pub bound: BoundParameters,
    pub ellipse_mode: EllipseMode,
    pub lambda_source: LambdaSource,
    /// Standard deviation of additive image noise; zero disables it.
    pub pixel_noise: f64,
    /// When false the GP feedforward is dropped (`μ ≡ 0`).
    pub feedforward: bool,
    pub policy: ViolationPolicy,
}

impl Scenario {
    /// The nominal two-profile pursuit: Van der Pol profiles switching at
    /// `(±2, 0, 0)`, gains 10/17, 50 Hz for 20 s.
    pub fn reference() -> Self {
        Scenario {
            g_wo0: Pose::from_translation(Vec3::new(-2.0, 0.0, 0.0)),
            g_wc0: Pose::from_translation(Vec3::new(-2.0, -3.0, 0.0)),
            g_bar_co0: Pose::from_translation(Vec3::new(0.0, 1.0, 0.0)),
            g_d: Pose::from_translation(Vec3::new(0.0, 2.0, 0.0)),
            gains: ControllerGains::scalar(10.0, 17.0).expect("positive gains"),
            profiles: vec![MotionProfile::van_der_pol(0.5, 1.0), MotionProfile::van_der_pol(1.5, 0.5)],
            schedule: SwitchSchedule::symmetric_positions(0, 2.0, 1, 0, 0.05),
            features: FeatureModel::default(),
            dt: 0.02,
            duration: 20.0,
            target_substeps: 10,
            seed: 0,
            threshold: 0.05,
            bound: BoundParameters::default(),
            ellipse_mode: EllipseMode::AxisKnown,
            lambda_source: LambdaSource::Fixed,
            pixel_noise: 0.0,
            feedforward: true,
            policy: ViolationPolicy::Abort,
        }
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PursuitError::InvalidArgument(msg));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad(format!("duration must be positive, got {}", self.duration));
        }
        if ((self.duration / self.dt).round() * self.dt - self.duration).abs() > 1e-9 * self.duration.max(1.0) {
            return bad(format!("duration {} is not a multiple of dt {}", self.duration, self.dt));
        }
        if self.target_substeps == 0 {
            return bad("target_substeps must be at least 1".into());
        }
        if self.profiles.is_empty() {
            return bad("at least one motion profile is required".into());
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return bad(format!("threshold must lie in [0, 1), got {}", self.threshold));
        }
        if !(self.pixel_noise >= 0.0) {
            return bad(format!("pixel noise must be non-negative, got {}", self.pixel_noise));
        }
        self.schedule.validate(self.profiles.len())?;
        self.features.validate()?;
        Ok(())
    }
}

/// A step that could not be processed normally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub step: usize,
    pub t: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub t: f64,
    pub g_wo: Pose,
    pub g_wc: Pose,
    pub g_bar_co: Pose,
    pub e_c: Vec6,
    /// Estimation error from ground truth, `vec(ḡ_co⁻¹ g_co)`.
    pub e_e: Vec6,
    /// Estimation error recovered from the image residual.
    pub e_e_measured: Vec6,
    pub e_norm: f64,
    pub nu: Vec12,
    pub u: Vec12,
    pub profile: usize,
    pub estimate: usize,
    pub storage: f64,
    /// `‖β ∘ σ(x̄)‖` of the active model.
    pub spread: f64,
    pub ellipse: f64,
    pub lambda_k: f64,
    pub uncertainties: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub records: Vec<Record>,
    pub models: usize,
    pub events: Vec<Event>,
    pub aborted: bool,
}

fn derive_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Unit-bounded rotation error used when the recovered one is out of range.
fn clamp_small_error(e: &Vec3) -> Vec3 {
    let n = e.norm();
    if n > 1.0 {
        e / n
    } else {
        *e
    }
}

/// Runs the closed loop. `models` may be empty, in which case `μ ≡ 0`.
///
/// Records are taken at `t = k dt` for `k = 0..=steps`, before the step's
/// integration.
pub fn run_scenario(scenario: &Scenario, models: &[GpModel]) -> Result<Trace> {
    scenario.validate()?;
    let steps = scenario.steps();
    let dt = scenario.dt;
    let use_models = scenario.feedforward && !models.is_empty();
    let mut g_wo = scenario.g_wo0;
    let mut g_wc = scenario.g_wc0;
    let mut g_bar_co = scenario.g_bar_co0;
    let g_d = scenario.g_d;
    let g_d_inv = g_d.inverse();
    let ad_g_d = g_d.adjoint();
    let mut signal = SwitchingSignal::new(scenario.schedule.clone(), &g_wo.translation);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(scenario.seed, 1));
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut estimate: Option<usize> = None;
    let mut last_e_e = ErrorVector::zero();
    let mut lambda_running = f64::INFINITY;
    let mut records = Vec::with_capacity(steps + 1);
    let mut events = Vec::new();
    let mut aborted = false;

    for k in 0..=steps {
        let t = k as f64 * dt;
        let mut flag = |msg: String| {
            log::warn!("t = {t:.2}: {msg}");
            events.push(Event { step: k, t, message: msg });
        };

        let profile = signal.update(t, &g_wo.translation);
        let v_wo = scenario.profiles[profile].velocity_at(&g_wo);

        // estimation error: from the image when possible, else the last one
        let g_co = g_wc.inverse() * g_wo;
        let measured = (|| -> Result<ErrorVector> {
            let mut f_e = visual_measurement(&g_co, &scenario.features)?.0 - visual_measurement(&g_bar_co, &scenario.features)?.0;
            if scenario.pixel_noise > 0.0 {
                for v in f_e.iter_mut() {
                    let z: f64 = noise.sample(&mut noise_rng);
                    *v += scenario.pixel_noise * z;
                }
            }
            let j = image_jacobian(&g_bar_co, &scenario.features)?;
            let e = pseudo_inverse(&j)? * f_e;
            Ok(ErrorVector(Vec6::from_iterator(e.iter().copied())))
        })();
        let e_e_meas = match measured {
            Ok(e) => e,
            Err(err) => {
                flag(err.to_string());
                if scenario.policy == ViolationPolicy::Abort {
                    aborted = true;
                    break;
                }
                last_e_e
            }
        };
        last_e_e = e_e_meas;

        let g_ce = g_d_inv * g_bar_co;
        if !g_ce.rotation_within_half_pi() {
            flag(format!("control rotation error {:.4} rad is not below π/2", g_ce.rotation.angle()));
            if scenario.policy == ViolationPolicy::Abort {
                aborted = true;
                break;
            }
        }
        let e_c = g_ce.vec_transform();
        let mut e_meas = Vec12::zeros();
        e_meas.fixed_rows_mut::<6>(0).copy_from(&e_c.0);
        e_meas.fixed_rows_mut::<6>(6).copy_from(&e_e_meas.0);
        let nu = output_matrix(&g_ce.rotation) * e_meas;

        let w_ee = e_e_meas.rotation_part();
        if w_ee.norm() > 1.0 {
            flag(format!("estimated rotation error |sk(R)∨| = {:.4} exceeds 1", w_ee.norm()));
            if scenario.policy == ViolationPolicy::Abort {
                aborted = true;
                break;
            }
        }
        let r_ee = crate::geometry::rotation_from_small_error(&clamp_small_error(&w_ee))?;

        // switching estimation and feedforward at the estimated target pose
        let x_bar = (g_wc * g_bar_co).vector_form();
        let (mu, uncertainties, spread) = if use_models {
            let unc: Vec<f64> = models.iter().map(|m| m.normalized_uncertainty(&x_bar)).collect();
            let current = match estimate {
                None => crate::pursuit::least_uncertain(&unc),
                Some(c) => {
                    let cand = crate::pursuit::least_uncertain(&unc);
                    if unc[c] > unc[cand] + scenario.threshold {
                        cand
                    } else {
                        c
                    }
                }
            };
            estimate = Some(current);
            let post = models[current].posterior(&x_bar);
            let spread = models[current].beta().component_mul(&post.std()).norm();
            (post.mean, unc, spread)
        } else {
            (Vec6::zeros(), Vec::new(), 0.0)
        };

        let (u_c, u_e) = control_input(&nu, &g_ce.rotation, &r_ee, &mu, &scenario.gains);
        let v_wc = Twist::from_vector(&(-(ad_g_d * u_c.to_vector())));

        // ground-truth errors for metrics and bounds
        let g_ee = g_bar_co.inverse() * g_co;
        let e_e_true = g_ee.vec_transform().0;
        let e_norm = (e_c.0.norm_squared() + e_e_true.norm_squared()).sqrt();
        let lk_now = lambda_k(&scenario.gains, &g_ce.rotation);
        lambda_running = lambda_running.min(lk_now);
        let bound = match scenario.lambda_source {
            LambdaSource::Fixed => scenario.bound,
            LambdaSource::Computed => BoundParameters {
                lambda_k: lambda_running,
                ..scenario.bound
            },
        };
        let ellipse = ellipse_from_spread(&e_c.0, &e_e_true, &bound, spread, scenario.ellipse_mode).unwrap_or(f64::NAN);
        let mut u = Vec12::zeros();
        u.fixed_rows_mut::<6>(0).copy_from(&u_c.to_vector());
        u.fixed_rows_mut::<6>(6).copy_from(&u_e.to_vector());

        records.push(Record {
            t,
            g_wo,
            g_wc,
            g_bar_co,
            e_c: e_c.0,
            e_e: e_e_true,
            e_e_measured: e_e_meas.0,
            e_norm,
            nu,
            u,
            profile,
            estimate: estimate.unwrap_or(profile),
            storage: storage_function(&g_ce, &g_ee),
            spread,
            ellipse,
            lambda_k: lk_now,
            uncertainties,
        });

        if k == steps {
            break;
        }
        let h = dt / scenario.target_substeps as f64;
        for s in 0..scenario.target_substeps {
            let v = if s == 0 { v_wo } else { scenario.profiles[profile].velocity_at(&g_wo) };
            g_wo = g_wo * exp_se3(&v, h);
        }
        g_wc = g_wc * exp_se3(&v_wc, dt);
        g_bar_co = vmo_step(&g_bar_co, &v_wc, &u_e, dt);
        if (k + 1) % REORTHONORMALIZE_EVERY == 0 {
            g_wo = g_wo.orthonormalized();
            g_wc = g_wc.orthonormalized();
            g_bar_co = g_bar_co.orthonormalized();
        }
    }
    Ok(Trace {
        records,
        models: if use_models { models.len() } else { 0 },
        events,
        aborted,
    })
}

/// Ellipse value from the precomputed `‖β ∘ σ‖`.
fn ellipse_from_spread(e_c: &Vec6, e_e: &Vec6, params: &BoundParameters, spread: f64, mode: EllipseMode) -> Result<f64> {
    // a unit β with σ = spread on one axis reproduces ‖β ∘ σ‖ = spread
    let mut beta = Vec6::zeros();
    beta[0] = 1.0;
    let mut variance = Vec6::zeros();
    variance[0] = spread * spread;
    Ok(ellipse_membership(e_c, e_e, params, &beta, &variance, mode)?.value)
}

/// Mean of `‖e‖²` over all records.
pub fn mse(trace: &Trace) -> Result<f64> {
    if trace.records.is_empty() {
        return Err(PursuitError::InvalidArgument("empty trace".into()));
    }
    Ok(trace.records.iter().map(|r| r.e_norm * r.e_norm).sum::<f64>() / trace.records.len() as f64)
}

/// A change of the true or the estimated profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchEvent {
    pub t: f64,
    pub from: usize,
    pub to: usize,
}

pub fn true_switches(trace: &Trace) -> Vec<SwitchEvent> {
    changes(trace, |r| r.profile)
}

pub fn estimated_switches(trace: &Trace) -> Vec<SwitchEvent> {
    changes(trace, |r| r.estimate)
}

fn changes(trace: &Trace, key: impl Fn(&Record) -> usize) -> Vec<SwitchEvent> {
    trace
        .records
        .windows(2)
        .filter(|w| key(&w[0]) != key(&w[1]))
        .map(|w| SwitchEvent {
            t: w[1].t,
            from: key(&w[0]),
            to: key(&w[1]),
        })
        .collect()
}

/// Empirical check of the ultimate-boundedness claims on a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub lambda_k: f64,
    pub lambda_tilde: f64,
    /// Smallest eigenvalue of `NᵀKN` observed along the trace.
    pub lambda_k_observed: f64,
    /// Set when the parameters do not satisfy the bound's precondition;
    /// the statistics below are then absent.
    pub violation: Option<String>,
    pub entry_time: Option<f64>,
    pub inside_fraction_after_entry: Option<f64>,
    pub inside_fraction_after_transient: Option<f64>,
    pub max_error_after_transient: Option<f64>,
    pub transient: f64,
}

/// Recomputes `E` along the trace with `params` and summarizes membership.
pub fn bound_report(trace: &Trace, params: &BoundParameters, mode: EllipseMode, transient: f64) -> BoundReport {
    let lambda_k_observed = trace.records.iter().map(|r| r.lambda_k).fold(f64::INFINITY, f64::min);
    let mut report = BoundReport {
        lambda_k: params.lambda_k,
        lambda_tilde: params.lambda_tilde(),
        lambda_k_observed,
        violation: None,
        entry_time: None,
        inside_fraction_after_entry: None,
        inside_fraction_after_transient: None,
        max_error_after_transient: None,
        transient,
    };
    if let Err(e) = params.check(mode) {
        report.violation = Some(e.to_string());
        return report;
    }
    let inside: Vec<bool> = trace
        .records
        .iter()
        .map(|r| ellipse_from_spread(&r.e_c, &r.e_e, params, r.spread, mode).is_ok_and(|v| v <= 0.0))
        .collect();
    let fraction = |from: usize| {
        let tail = &inside[from..];
        (!tail.is_empty()).then(|| tail.iter().filter(|&&b| b).count() as f64 / tail.len() as f64)
    };
    if let Some(first) = inside.iter().position(|&b| b) {
        report.entry_time = Some(trace.records[first].t);
        report.inside_fraction_after_entry = fraction(first);
    }
    let start = trace.records.iter().position(|r| r.t >= transient - 1e-9).unwrap_or(trace.records.len());
    report.inside_fraction_after_transient = fraction(start);
    report.max_error_after_transient = trace.records[start..].iter().map(|r| r.e_norm).reduce(f64::max);
    report
}

/// Column names of the trace CSV, for `models` models.
pub fn trace_header(models: usize) -> Vec<String> {
    let mut h: Vec<String> = vec!["t".into(), "profile".into(), "estimate".into()];
    let six = ["px", "py", "pz", "rx", "ry", "rz"];
    for prefix in ["wo", "wc", "co_est", "ec", "ee", "ee_meas"] {
        h.extend(six.iter().map(|s| format!("{prefix}_{s}")));
    }
    h.push("e_norm".into());
    for prefix in ["nu", "u"] {
        h.extend((1..=12).map(|i| format!("{prefix}_{i}")));
    }
    h.extend(["storage", "spread", "ellipse", "lambda_k"].map(String::from));
    h.extend((1..=models).map(|i| format!("uncertainty_{i}")));
    h
}

/// Writes one row per record. Profile indices are written one-based.
pub fn write_trace_csv<W: Write>(trace: &Trace, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(trace_header(trace.models))?;
    let mut row: Vec<String> = Vec::new();
    for r in &trace.records {
        row.clear();
        row.push(r.t.to_string());
        row.push((r.profile + 1).to_string());
        row.push((r.estimate + 1).to_string());
        for v in [
            r.g_wo.vector_form(),
            r.g_wc.vector_form(),
            r.g_bar_co.vector_form(),
            r.e_c,
            r.e_e,
            r.e_e_measured,
        ] {
            row.extend(v.iter().map(f64::to_string));
        }
        row.push(r.e_norm.to_string());
        row.extend(r.nu.iter().chain(r.u.iter()).map(f64::to_string));
        for v in [r.storage, r.spread, r.ellipse, r.lambda_k] {
            row.push(v.to_string());
        }
        row.extend(r.uncertainties.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub records: usize,
    pub aborted: bool,
    pub mse: f64,
    pub final_error: f64,
    pub true_switches: Vec<SwitchEvent>,
    pub estimated_switches: Vec<SwitchEvent>,
    pub bound: BoundReport,
    pub events: Vec<Event>,
}

/// Post-run summary. Switch events carry one-based profile indices.
pub fn summarize(trace: &Trace, scenario: &Scenario, transient: f64) -> Result<Summary> {
    let one_based = |v: Vec<SwitchEvent>| {
        v.into_iter()
            .map(|e| SwitchEvent {
                from: e.from + 1,
                to: e.to + 1,
                ..e
            })
            .collect()
    };
    Ok(Summary {
        seed: scenario.seed,
        records: trace.records.len(),
        aborted: trace.aborted,
        mse: mse(trace)?,
        final_error: trace.records.last().map_or(f64::NAN, |r| r.e_norm),
        true_switches: one_based(true_switches(trace)),
        estimated_switches: if trace.models > 0 { one_based(estimated_switches(trace)) } else { Vec::new() },
        bound: bound_report(trace, &scenario.bound, scenario.ellipse_mode, transient),
        events: trace.events.clone(),
    })
}

/// How training data is generated for each profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSpec {
    pub per_profile: usize,
    pub noise_std: Vec6,
    /// Start point of the orbit search.
    pub start: Vec3,
    pub delta: f64,
    pub alpha: Vec6,
    pub restarts: usize,
}

impl Default for TrainingSpec {
    fn default() -> Self {
        TrainingSpec {
            per_profile: 30,
            noise_std: Vec6::repeat(0.01),
            start: Vec3::new(-2.0, 0.0, 0.0),
            delta: 0.05,
            alpha: Vec6::new(0.0, 1.0, 0.0, 0.0, 0.0, 0.0),
            restarts: FitOptions::default().restarts,
        }
    }
}

/// One noisy dataset per profile, sampled on the profile's closed orbit.
pub fn generate_training(profiles: &[MotionProfile], spec: &TrainingSpec, seed: u64) -> Result<Vec<Dataset>> {
    if spec.per_profile < 2 {
        return Err(PursuitError::InvalidArgument(format!(
            "need at least 2 points per profile, got {}",
            spec.per_profile
        )));
    }
    profiles
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let inputs = limit_cycle_inputs(p, &spec.start, spec.per_profile)?;
            sample_training_data(p, &inputs, &spec.noise_std, derive_seed(seed, 100 + i as u64))
        })
        .collect()
}

/// Planar poses on a grid over `[−3, 3]²` with yaw covering the circle; the
/// domain over which the switching normalization is taken.
pub fn planar_domain() -> Vec<Vec6> {
    let mut out = Vec::new();
    for i in 0..=12 {
        for j in 0..=12 {
            for k in 0..12 {
                let yaw = -std::f64::consts::PI + (k as f64 + 1.0) * std::f64::consts::PI / 6.0;
                let pose = Pose::new(Vec3::new(-3.0 + 0.5 * i as f64, -3.0 + 0.5 * j as f64, 0.0), Rotation::rotation_z(yaw));
                out.push(pose.vector_form());
            }
        }
    }
    out
}

/// Fits a model to `data` and fills in `β` and the switching normalization.
pub fn train_model(data: &Dataset, spec: &TrainingSpec, seed: u64) -> Result<GpModel> {
    let opts = FitOptions {
        restarts: spec.restarts,
        fixed_noise: Some(spec.noise_std.into()),
        ..FitOptions::default()
    };
    let report = gpmodel::fit_with_options(data, seed, &opts)?;
    for (i, ll) in report.log_likelihoods.iter().enumerate() {
        log::info!("output {}: log marginal likelihood {ll:.4}", i + 1);
    }
    let mut model = GpModel::new(data.clone(), report.hyperparameters)?;
    let b = gpmodel::beta(&model, spec.delta, &model.rkhs_norm_estimates())?;
    model.set_beta(b, spec.delta);
    let sigma_bar = gpmodel::normalization_factor(&model, &spec.alpha, &planar_domain())?;
    model.set_switching_weights(spec.alpha, sigma_bar)?;
    Ok(model)
}

/// Models for a case: one per dataset, or one on the concatenation.
pub fn train_models(datasets: &[Dataset], case: Case, spec: &TrainingSpec, seed: u64) -> Result<Vec<GpModel>> {
    match case {
        Case::Single => Ok(vec![train_model(&Dataset::concat(datasets), spec, derive_seed(seed, 200))?]),
        Case::Switched => datasets
            .iter()
            .enumerate()
            .map(|(i, d)| train_model(d, spec, derive_seed(seed, 201 + i as u64)))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub seed: u64,
    pub mse_single: f64,
    pub mse_switched: f64,
    /// `(MSE_single − MSE_switched) / MSE_single`.
    pub improvement: f64,
    /// Events recorded by each run; under the abort policy a non-zero count
    /// means that run's MSE covers only the steps before the first event.
    pub events_single: usize,
    pub events_switched: usize,
}

/// Generates data, trains both cases and runs them on the same scenario.
pub fn compare_cases(scenario: &Scenario, spec: &TrainingSpec) -> Result<(Comparison, Trace, Trace)> {
    let data = generate_training(&scenario.profiles, spec, scenario.seed)?;
    let single = train_models(&data, Case::Single, spec, scenario.seed)?;
    let switched = train_models(&data, Case::Switched, spec, scenario.seed)?;
    let t1 = run_scenario(scenario, &single)?;
    let t2 = run_scenario(scenario, &switched)?;
    let (m1, m2) = (mse(&t1)?, mse(&t2)?);
    Ok((
        Comparison {
            seed: scenario.seed,
            mse_single: m1,
            mse_switched: m2,
            improvement: relative_improvement(m1, m2),
            events_single: t1.events.len(),
            events_switched: t2.events.len(),
        },
        t1,
        t2,
    ))
}

pub fn relative_improvement(mse_single: f64, mse_switched: f64) -> f64 {
    if mse_single == 0.0 {
        0.0
    } else {
        (mse_single - mse_switched) / mse_single
    }
}

/// Plot-ready columns: `t, e_norm_single, e_norm_switched, profile, estimate`.
pub fn write_comparison_csv<W: Write>(single: &Trace, switched: &Trace, writer: W) -> Result<()> {
    if single.records.len() != switched.records.len() {
        return Err(PursuitError::InvalidArgument("traces differ in length".into()));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "e_norm_single", "e_norm_switched", "profile", "estimate"])?;
    for (a, b) in single.records.iter().zip(&switched.records) {
        w.write_record([
            a.t.to_string(),
            a.e_norm.to_string(),
            b.e_norm.to_string(),
            (b.profile + 1).to_string(),
            (b.estimate + 1).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Image-space residual of a pose pair, exposed for diagnostics.
pub fn image_residual(g_co: &Pose, g_bar_co: &Pose, features: &FeatureModel) -> Result<DVector<f64>> {
    Ok(visual_measurement(g_co, features)?.0 - visual_measurement(g_bar_co, features)?.0)
}
