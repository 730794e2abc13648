//! Scenario configuration file. Every key is optional and falls back to the
//! reference scenario; unknown keys are rejected.
//!
//! Profile indices in the file are one-based, matching the trace and summary
//! outputs.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use pursuit_core::pursuit::{BoundParameters, ControllerGains, EllipseMode};
use pursuit_core::simulate::{Case, LambdaSource, Scenario, TrainingSpec, ViolationPolicy};
use pursuit_core::{FeatureModel, Mat6, MotionProfile, Pose, Rotation, SwitchSchedule, Trigger, Vec3, Vec6};

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub scenario: ScenarioConfig,
    pub training: TrainingConfig,
    pub paths: PathsConfig,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: Option<u64>,
    pub dt: Option<f64>,
    pub duration: Option<f64>,
    pub target_substeps: Option<usize>,
    pub case: Option<Case>,
    /// `g_wo(0)`
    pub target: Option<PoseConfig>,
    /// `g_wc(0)`
    pub camera: Option<PoseConfig>,
    /// Initial observer estimate `ḡ_co(0)`.
    pub estimate: Option<PoseConfig>,
    pub desired: Option<PoseConfig>,
    pub gains: Option<GainsConfig>,
    pub profiles: Option<Vec<ProfileConfig>>,
    pub schedule: Option<ScheduleConfig>,
    pub features: Option<FeaturesConfig>,
    pub threshold: Option<f64>,
    pub bound: Option<BoundParameters>,
    pub ellipse_mode: Option<EllipseMode>,
    pub lambda_source: Option<LambdaSource>,
    pub pixel_noise: Option<f64>,
    pub feedforward: Option<bool>,
    pub policy: Option<ViolationPolicy>,
    /// Seconds excluded from the bound report's steady-state statistics.
    pub transient: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseConfig {
    pub position: [f64; 3],
    pub axis_angle: [f64; 3],
}

impl PoseConfig {
    fn to_pose(self) -> Pose {
        Pose::new(Vec3::from(self.position), Rotation::from_axis_angle(&Vec3::from(self.axis_angle)))
    }
}

/// A scalar (times identity) or a diagonal.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(untagged)]
pub enum Diagonal {
    Scalar(f64),
    Full([f64; 6]),
}

impl Diagonal {
    fn vector(self) -> Vec6 {
        match self {
            Diagonal::Scalar(v) => Vec6::repeat(v),
            Diagonal::Full(v) => Vec6::from(v),
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsConfig {
    pub k_c: Diagonal,
    pub k_e: Diagonal,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileConfig {
    VanDerPol { eta: f64, speed: f64 },
    /// Gridded flow field; see `TabulatedFlow::read_csv` for the layout.
    Tabulated { csv: PathBuf },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub initial: usize,
    #[serde(default)]
    pub triggers: Vec<TriggerConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TriggerConfig {
    Time {
        at: f64,
        to: usize,
    },
    Position {
        point: [f64; 3],
        tolerance: f64,
        /// Defaults to twice the tolerance.
        rearm: Option<f64>,
        to: usize,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeaturesConfig {
    pub points: Vec<[f64; 3]>,
    pub focal_length: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub per_profile: Option<usize>,
    pub noise_std: Option<Diagonal>,
    pub start: Option<[f64; 3]>,
    pub delta: Option<f64>,
    pub alpha: Option<[f64; 6]>,
    pub restarts: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub models: Vec<PathBuf>,
    pub datasets: Vec<PathBuf>,
    pub out: Option<PathBuf>,
}

/// A validated configuration with paths resolved against the config file.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub scenario: Scenario,
    pub case: Case,
    pub training: TrainingSpec,
    pub transient: f64,
    pub models: Vec<PathBuf>,
    pub datasets: Vec<PathBuf>,
    pub out: Option<PathBuf>,
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                CliError::Missing(format!("config file {}", path.display()))
            } else {
                CliError::Io(format!("{}: {e}", path.display()))
            }
        })?;
        serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
    }

    /// Applies the file over the reference scenario and validates the result.
    /// Relative paths are taken from `base`.
    pub fn resolve(self, base: &Path) -> Result<Resolved, CliError> {
        let s = self.scenario;
        let mut scenario = Scenario::reference();
        let rel = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };

        if let Some(v) = s.seed {
            scenario.seed = v;
        }
        if let Some(v) = s.dt {
            scenario.dt = v;
        }
        if let Some(v) = s.duration {
            scenario.duration = v;
        }
        if let Some(v) = s.target_substeps {
            scenario.target_substeps = v;
        }
        for (slot, pose) in [
            (&mut scenario.g_wo0, s.target),
            (&mut scenario.g_wc0, s.camera),
            (&mut scenario.g_bar_co0, s.estimate),
            (&mut scenario.g_d, s.desired),
        ] {
            if let Some(p) = pose {
                *slot = p.to_pose();
            }
        }
        if let Some(g) = s.gains {
            scenario.gains = ControllerGains::new(
                Mat6::from_diagonal(&g.k_c.vector()),
                Mat6::from_diagonal(&g.k_e.vector()),
            )
            .map_err(|e| config_error(e.to_string()))?;
        }
        if let Some(profiles) = s.profiles {
            scenario.profiles = profiles.into_iter().map(|p| load_profile(p, &rel)).collect::<Result<_, _>>()?;
        }
        if let Some(schedule) = s.schedule {
            scenario.schedule = convert_schedule(schedule)?;
        }
        if let Some(f) = s.features {
            scenario.features = FeatureModel {
                points: f.points.into_iter().map(Vec3::from).collect(),
                focal_length: f.focal_length,
            };
        }
        if let Some(v) = s.threshold {
            scenario.threshold = v;
        }
        if let Some(v) = s.bound {
            scenario.bound = v;
        }
        if let Some(v) = s.ellipse_mode {
            scenario.ellipse_mode = v;
        }
        if let Some(v) = s.lambda_source {
            scenario.lambda_source = v;
        }
        if let Some(v) = s.pixel_noise {
            scenario.pixel_noise = v;
        }
        if let Some(v) = s.feedforward {
            scenario.feedforward = v;
        }
        if let Some(v) = s.policy {
            scenario.policy = v;
        }

        let t = self.training;
        let mut training = TrainingSpec::default();
        if let Some(v) = t.per_profile {
            training.per_profile = v;
        }
        if let Some(v) = t.noise_std {
            training.noise_std = v.vector();
        }
        if let Some(v) = t.start {
            training.start = Vec3::from(v);
        }
        if let Some(v) = t.delta {
            training.delta = v;
        }
        if let Some(v) = t.alpha {
            training.alpha = Vec6::from(v);
        }
        if let Some(v) = t.restarts {
            training.restarts = v;
        }

        let resolved = Resolved {
            scenario,
            case: s.case.unwrap_or(Case::Switched),
            training,
            transient: s.transient.unwrap_or(2.0),
            models: self.paths.models.into_iter().map(rel).collect(),
            datasets: self.paths.datasets.into_iter().map(rel).collect(),
            out: self.paths.out.map(rel),
        };
        resolved.validate()?;
        Ok(resolved)
    }
}

impl Resolved {
    /// The reference scenario with default training.
    pub fn reference() -> Resolved {
        Config::default().resolve(Path::new(".")).expect("reference scenario is valid")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.scenario.validate().map_err(|e| config_error(e.to_string()))?;
        let t = &self.training;
        if t.per_profile < 2 {
            return Err(config_error(format!("training.per_profile must be at least 2, got {}", t.per_profile)));
        }
        if !t.noise_std.iter().all(|v| *v > 0.0 && v.is_finite()) {
            return Err(config_error("training.noise_std must be positive"));
        }
        if !(t.delta > 0.0 && t.delta < 1.0) {
            return Err(config_error(format!("training.delta must lie in (0, 1), got {}", t.delta)));
        }
        if t.restarts == 0 {
            return Err(config_error("training.restarts must be at least 1"));
        }
        if !(self.transient >= 0.0 && self.transient.is_finite()) {
            return Err(config_error(format!("scenario.transient must be non-negative, got {}", self.transient)));
        }
        Ok(())
    }
}

fn load_profile(p: ProfileConfig, rel: &impl Fn(PathBuf) -> PathBuf) -> Result<MotionProfile, CliError> {
    match p {
        ProfileConfig::VanDerPol { eta, speed } => {
            if !(eta.is_finite() && speed.is_finite()) {
                return Err(config_error("van_der_pol parameters must be finite"));
            }
            Ok(MotionProfile::van_der_pol(eta, speed))
        }
        ProfileConfig::Tabulated { csv } => {
            let path = rel(csv);
            let file = std::fs::File::open(&path)
                .map_err(|_| CliError::Missing(format!("flow table {}", path.display())))?;
            let flow = pursuit_core::motion::TabulatedFlow::read_csv(file)
                .map_err(|e| config_error(format!("{}: {e}", path.display())))?;
            Ok(MotionProfile::Tabulated(flow))
        }
    }
}

fn zero_based(index: usize, what: &str) -> Result<usize, CliError> {
    index
        .checked_sub(1)
        .ok_or_else(|| config_error(format!("{what}: profile indices start at 1")))
}

fn convert_schedule(s: ScheduleConfig) -> Result<SwitchSchedule, CliError> {
    let triggers = s
        .triggers
        .into_iter()
        .map(|t| {
            Ok(match t {
                TriggerConfig::Time { at, to } => Trigger::Time {
                    at,
                    to: zero_based(to, "trigger")?,
                },
                TriggerConfig::Position {
                    point,
                    tolerance,
                    rearm,
                    to,
                } => Trigger::Position {
                    point: Vec3::from(point),
                    tolerance,
                    rearm: rearm.unwrap_or(2.0 * tolerance),
                    to: zero_based(to, "trigger")?,
                },
            })
        })
        .collect::<Result<_, CliError>>()?;
    Ok(SwitchSchedule {
        initial: zero_based(s.initial, "schedule.initial")?,
        triggers,
    })
}
