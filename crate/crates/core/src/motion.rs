//! Target motion profiles, the switching signal, and noisy training data.
//!
//! A profile is a planar flow `a(p)` the target follows with its forward
//! (`+y`) axis aligned to the flow direction. The body velocity is therefore
//! `v = Rᵀ (a_x, a_y, 0)` and a yaw rate equal to the rate of change of the
//! flow heading.

use nalgebra::{Matrix2, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{PursuitError, Result};
use crate::geometry::{Pose, Rotation, Twist, Vec3, Vec6};
use crate::gpmodel::Dataset;

/// Below this flow speed the heading is undefined and the yaw rate is zero.
const STAGNATION: f64 = 1e-12;

/// The Van der Pol flow `a_x = v p_y`, `a_y = −v p_x + v η (1 − p_x²) p_y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VanDerPol {
    pub eta: f64,
    pub speed: f64,
}

impl VanDerPol {
    pub fn new(eta: f64, speed: f64) -> Self {
        VanDerPol { eta, speed }
    }

    /// Flow and its Jacobian `∂a/∂(p_x, p_y)`.
    pub fn flow(&self, p: &Vec3) -> (Vector2<f64>, Matrix2<f64>) {
        let (x, y) = (p.x, p.y);
        let (v, eta) = (self.speed, self.eta);
        let a = Vector2::new(v * y, -v * x + v * eta * (1.0 - x * x) * y);
        #[rustfmt::skip]
        let jac = Matrix2::new(
            0.0, v,
            -v - 2.0 * v * eta * x * y, v * eta * (1.0 - x * x),
        );
        (a, jac)
    }
}

/// A planar flow tabulated on a regular grid, bilinearly interpolated.
///
/// Outside the grid the flow is clamped to the border cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedFlow {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Row-major `[iy][ix]` samples of `(a_x, a_y)`.
    values: Vec<[f64; 2]>,
}

impl TabulatedFlow {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, values: Vec<[f64; 2]>) -> Result<Self> {
        let increasing = |v: &[f64]| v.len() >= 2 && v.windows(2).all(|w| w[1] > w[0]);
        if !increasing(&xs) || !increasing(&ys) {
            return Err(PursuitError::InvalidArgument(
                "tabulated flow axes need at least two strictly increasing values".into(),
            ));
        }
        if values.len() != xs.len() * ys.len() {
            return Err(PursuitError::InvalidArgument(format!(
                "tabulated flow has {} values for a {}x{} grid",
                values.len(),
                xs.len(),
                ys.len()
            )));
        }
        Ok(TabulatedFlow { xs, ys, values })
    }

    /// Reads CSV rows `x,y,ax,ay` (with header) covering a full grid.
    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let v = rec
                .iter()
                .map(|s| s.trim().parse::<f64>().map_err(|e| PursuitError::Format(format!("'{s}': {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            if v.len() != 4 {
                return Err(PursuitError::Format(format!("flow row needs 4 columns, got {}", v.len())));
            }
            rows.push([v[0], v[1], v[2], v[3]]);
        }
        let mut xs: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let mut ys: Vec<f64> = rows.iter().map(|r| r[1]).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        ys.sort_by(f64::total_cmp);
        ys.dedup();
        let mut values = vec![[f64::NAN; 2]; xs.len() * ys.len()];
        for r in &rows {
            let ix = xs.partition_point(|&x| x < r[0]);
            let iy = ys.partition_point(|&y| y < r[1]);
            values[iy * xs.len() + ix] = [r[2], r[3]];
        }
        if values.iter().any(|v| v[0].is_nan()) {
            return Err(PursuitError::Format("tabulated flow grid is incomplete".into()));
        }
        TabulatedFlow::new(xs, ys, values)
    }

    fn cell(axis: &[f64], v: f64) -> (usize, f64) {
        let i = axis.partition_point(|&a| a <= v).clamp(1, axis.len() - 1) - 1;
        let t = ((v - axis[i]) / (axis[i + 1] - axis[i])).clamp(0.0, 1.0);
        (i, t)
    }

    pub fn flow(&self, p: &Vec3) -> (Vector2<f64>, Matrix2<f64>) {
        let (ix, tx) = Self::cell(&self.xs, p.x);
        let (iy, ty) = Self::cell(&self.ys, p.y);
        let nx = self.xs.len();
        let at = |i: usize, j: usize| Vector2::from(self.values[j * nx + i]);
        let (f00, f10, f01, f11) = (at(ix, iy), at(ix + 1, iy), at(ix, iy + 1), at(ix + 1, iy + 1));
        let a = f00 * ((1.0 - tx) * (1.0 - ty)) + f10 * (tx * (1.0 - ty)) + f01 * ((1.0 - tx) * ty) + f11 * (tx * ty);
        let hx = self.xs[ix + 1] - self.xs[ix];
        let hy = self.ys[iy + 1] - self.ys[iy];
        let inside_x = p.x > self.xs[0] && p.x < self.xs[nx - 1];
        let inside_y = p.y > self.ys[0] && p.y < self.ys[self.ys.len() - 1];
        let dx = if inside_x { ((f10 - f00) * (1.0 - ty) + (f11 - f01) * ty) / hx } else { Vector2::zeros() };
        let dy = if inside_y { ((f01 - f00) * (1.0 - tx) + (f11 - f10) * tx) / hy } else { Vector2::zeros() };
        (a, Matrix2::from_columns(&[dx, dy]))
    }
}

/// One learned behavior of the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MotionProfile {
    VanDerPol(VanDerPol),
    Tabulated(TabulatedFlow),
}

impl MotionProfile {
    pub fn van_der_pol(eta: f64, speed: f64) -> Self {
        MotionProfile::VanDerPol(VanDerPol::new(eta, speed))
    }

    pub fn flow(&self, p: &Vec3) -> (Vector2<f64>, Matrix2<f64>) {
        match self {
            MotionProfile::VanDerPol(v) => v.flow(p),
            MotionProfile::Tabulated(t) => t.flow(p),
        }
    }

    /// Body velocity at the pose given in vector form `ǧ_wo`.
    pub fn velocity(&self, g_check: &Vec6) -> Twist {
        self.velocity_at(&Pose::from_vector_form(g_check))
    }

    pub fn velocity_at(&self, g_wo: &Pose) -> Twist {
        let (a, jac) = self.flow(&g_wo.translation);
        let linear = g_wo.rotation.inverse() * Vec3::new(a.x, a.y, 0.0);
        Twist::new(linear, Vec3::new(0.0, 0.0, heading_rate(&a, &jac)))
    }

    /// Target pose at `p` heading along the flow.
    pub fn heading_pose(&self, p: &Vec3) -> Pose {
        let (a, _) = self.flow(p);
        Pose::new(*p, Rotation::rotation_z(flow_heading(&a)))
    }
}

/// Yaw that turns `+y` onto the flow direction: `atan2(−a_x, a_y)`.
pub fn flow_heading(a: &Vector2<f64>) -> f64 {
    if a.norm() < STAGNATION {
        0.0
    } else {
        (-a.x).atan2(a.y)
    }
}

/// Rate of change of [`flow_heading`] along the flow, `(a_x ȧ_y − a_y ȧ_x)/|a|²`
/// with `ȧ = (∂a/∂p) a`. Zero at stagnation points.
pub fn heading_rate(a: &Vector2<f64>, jac: &Matrix2<f64>) -> f64 {
    let n2 = a.norm_squared();
    if n2 < STAGNATION * STAGNATION {
        return 0.0;
    }
    let a_dot = jac * a;
    (a.x * a_dot.y - a.y * a_dot.x) / n2
}

/// `d/dt atan2(a_x, a_y) = (ȧ_x a_y − a_x ȧ_y)/|a|²`, the clockwise-positive
/// form of the same rate; equals `−heading_rate`.
pub fn atan2_rate(a: &Vector2<f64>, jac: &Matrix2<f64>) -> f64 {
    let n2 = a.norm_squared();
    if n2 < STAGNATION * STAGNATION {
        return 0.0;
    }
    let a_dot = jac * a;
    (a_dot.x * a.y - a.x * a_dot.y) / n2
}

/// Van der Pol body velocity at `ǧ_wo`.
pub fn vanderpol_velocity(g_check_wo: &Vec6, eta: f64, v: f64) -> Twist {
    MotionProfile::van_der_pol(eta, v).velocity(g_check_wo)
}

/// Integrates the planar flow with classical RK4.
fn rk4(profile: &MotionProfile, p: Vector2<f64>, h: f64) -> Vector2<f64> {
    let f = |q: Vector2<f64>| profile.flow(&Vec3::new(q.x, q.y, 0.0)).0;
    let k1 = f(p);
    let k2 = f(p + k1 * (h / 2.0));
    let k3 = f(p + k2 * (h / 2.0));
    let k4 = f(p + k3 * h);
    p + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Training inputs on the profile's closed orbit through `start`.
///
/// The flow is integrated from `start` until three upward crossings of
/// `p_y = 0` on the `p_x < 0` side have passed; the period between the last
/// two fixes the orbit. `count` samples equally spaced in time are then taken
/// starting at the last crossing, each with the heading along the flow.
pub fn limit_cycle_inputs(profile: &MotionProfile, start: &Vec3, count: usize) -> Result<Vec<Vec6>> {
    const H: f64 = 1e-3;
    const MAX_TIME: f64 = 2000.0;
    if count == 0 {
        return Err(PursuitError::InvalidArgument("need at least one sample".into()));
    }
    let mut p = Vector2::new(start.x, start.y);
    let mut t = 0.0;
    let mut crossings: Vec<(f64, Vector2<f64>)> = Vec::new();
    while crossings.len() < 3 {
        let next = rk4(profile, p, H);
        if p.y < 0.0 && next.y >= 0.0 && next.x < 0.0 {
            let s = -p.y / (next.y - p.y);
            crossings.push((t + s * H, p + (next - p) * s));
        }
        p = next;
        t += H;
        if t > MAX_TIME || !p.iter().all(|v| v.is_finite()) {
            return Err(PursuitError::InvalidArgument(
                "profile has no closed orbit through the start point".into(),
            ));
        }
    }
    let period = crossings[2].0 - crossings[1].0;
    let spacing = period / count as f64;
    let substeps = (spacing / H).ceil().max(1.0) as usize;
    let h = spacing / substeps as f64;
    let mut q = crossings[2].1;
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        if k > 0 {
            for _ in 0..substeps {
                q = rk4(profile, q, h);
            }
        }
        let pose = profile.heading_pose(&Vec3::new(q.x, q.y, 0.0));
        out.push(pose.vector_form());
    }
    Ok(out)
}

/// Profile outputs at `inputs` plus independent Gaussian noise per output.
pub fn sample_training_data(
    profile: &MotionProfile,
    inputs: &[Vec6],
    noise_std: &Vec6,
    seed: u64,
) -> Result<Dataset> {
    if noise_std.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
        return Err(PursuitError::InvalidArgument(format!(
            "noise standard deviations must be finite and non-negative: {noise_std:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let outputs = inputs
        .iter()
        .map(|x| {
            let v = profile.velocity(x).to_vector();
            Vec6::from_fn(|i, _| {
                let z: f64 = normal.sample(&mut rng);
                v[i] + noise_std[i] * z
            })
        })
        .collect();
    Dataset::new(inputs.to_vec(), outputs)
}

/// Rule that changes the active profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    /// Fires once when `t` reaches `at`.
    Time { at: f64, to: usize },
    /// Fires when the target passes within `tolerance` of `point`; re-arms
    /// once it is farther than `rearm` away again.
    Position {
        point: Vec3,
        tolerance: f64,
        rearm: f64,
        to: usize,
    },
}

/// Initial profile plus triggers. Profile indices are zero-based.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SwitchSchedule {
    pub initial: usize,
    pub triggers: Vec<Trigger>,
}

impl SwitchSchedule {
    pub fn constant(profile: usize) -> Self {
        SwitchSchedule {
            initial: profile,
            triggers: Vec::new(),
        }
    }

    /// Position triggers at `(±x, 0, 0)`: `+x` selects `to_pos`, `−x` selects `to_neg`.
    pub fn symmetric_positions(initial: usize, x: f64, to_pos: usize, to_neg: usize, tolerance: f64) -> Self {
        let trig = |px: f64, to| Trigger::Position {
            point: Vec3::new(px, 0.0, 0.0),
            tolerance,
            rearm: 2.0 * tolerance,
            to,
        };
        SwitchSchedule {
            initial,
            triggers: vec![trig(x, to_pos), trig(-x, to_neg)],
        }
    }

    pub fn validate(&self, profiles: usize) -> Result<()> {
        if self.initial >= profiles {
            return Err(PursuitError::InvalidArgument(format!(
                "initial profile {} out of range ({profiles} profiles)",
                self.initial + 1
            )));
        }
        for t in &self.triggers {
            let (to, ok) = match t {
                Trigger::Time { at, to } => (*to, *at >= 0.0 && at.is_finite()),
                Trigger::Position { tolerance, rearm, to, .. } => {
                    (*to, *tolerance > 0.0 && *rearm > *tolerance)
                }
            };
            if to >= profiles || !ok {
                return Err(PursuitError::InvalidArgument(format!("invalid trigger {t:?}")));
            }
        }
        Ok(())
    }
}

/// Distance from `c` to the segment `[a, b]`.
fn segment_distance(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let s = if len2 > 0.0 { ((c - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (a + ab * s - c).norm()
}

/// Stateful evaluation of a [`SwitchSchedule`].
#[derive(Debug, Clone)]
pub struct SwitchingSignal {
    schedule: SwitchSchedule,
    current: usize,
    armed: Vec<bool>,
    last_position: Vec3,
}

impl SwitchingSignal {
    /// Position triggers start disarmed when the target begins inside their
    /// re-arm shell.
    pub fn new(schedule: SwitchSchedule, start: &Vec3) -> Self {
        let armed = schedule
            .triggers
            .iter()
            .map(|t| match t {
                Trigger::Time { .. } => true,
                Trigger::Position { point, rearm, .. } => (start - point).norm() > *rearm,
            })
            .collect();
        SwitchingSignal {
            current: schedule.initial,
            schedule,
            armed,
            last_position: *start,
        }
    }

    pub fn current(&self) -> usize {
        self.current
    }

    /// Advances to time `t` with the target at `position`. Triggers fire in
    /// declaration order; time intervals are left-closed.
    pub fn update(&mut self, t: f64, position: &Vec3) -> usize {
        for (k, trig) in self.schedule.triggers.iter().enumerate() {
            match trig {
                Trigger::Time { at, to } => {
                    if self.armed[k] && t >= *at - 1e-9 {
                        self.current = *to;
                        self.armed[k] = false;
                    }
                }
                Trigger::Position { point, tolerance, rearm, to } => {
                    if self.armed[k] {
                        if segment_distance(&self.last_position, position, point) < *tolerance {
                            self.current = *to;
                            self.armed[k] = false;
                        }
                    } else if (position - point).norm() > *rearm {
                        self.armed[k] = true;
                    }
                }
            }
        }
        self.last_position = *position;
        self.current
    }
}

/// Evaluates the schedule over a sampled path and returns the profile index
/// at every sample.
pub fn switching_signal(schedule: &SwitchSchedule, times: &[f64], positions: &[Vec3]) -> Vec<usize> {
    let Some(first) = positions.first() else {
        return Vec::new();
    };
    let mut sig = SwitchingSignal::new(schedule.clone(), first);
    times.iter().zip(positions).map(|(t, p)| sig.update(*t, p)).collect()
}
