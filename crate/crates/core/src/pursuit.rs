//! Observer, control law, switching estimation, storage function and the
//! ultimate-boundedness ellipses.
//!
//! Error vectors are ordered control first: `e = [e_c; e_e]`, each half laid
//! out `[p; sk(R)∨]`.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{PursuitError, Result};
use crate::geometry::{adjoint_rotation, exp_se3, rotation_from_small_error, ErrorVector, Mat6, Pose, Rotation, Twist, Vec6};
use crate::gpmodel::GpModel;

pub type Vec12 = SVector<f64, 12>;
pub type Mat12 = SMatrix<f64, 12, 12>;

/// Block-diagonal gains `K = diag(K_c, K_e)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerGains {
    k_c: Mat6,
    k_e: Mat6,
}

impl ControllerGains {
    /// Both blocks must be symmetric positive definite.
    pub fn new(k_c: Mat6, k_e: Mat6) -> Result<Self> {
        for (name, k) in [("K_c", &k_c), ("K_e", &k_e)] {
            let asym = (k - k.transpose()).norm();
            if asym > 1e-12 * k.norm().max(1.0) || k.cholesky().is_none() {
                return Err(PursuitError::InvalidArgument(format!(
                    "{name} must be symmetric positive definite"
                )));
            }
        }
        Ok(ControllerGains { k_c, k_e })
    }

    pub fn scalar(k_c: f64, k_e: f64) -> Result<Self> {
        Self::new(Mat6::identity() * k_c, Mat6::identity() * k_e)
    }

    pub fn k_c(&self) -> &Mat6 {
        &self.k_c
    }

    pub fn k_e(&self) -> &Mat6 {
        &self.k_e
    }

    pub fn combined(&self) -> Mat12 {
        let mut k = Mat12::zeros();
        k.fixed_view_mut::<6, 6>(0, 0).copy_from(&self.k_c);
        k.fixed_view_mut::<6, 6>(6, 6).copy_from(&self.k_e);
        k
    }

    /// `νᵀ K ν`, the dissipation rate of the passive error system.
    pub fn dissipation(&self, nu: &Vec12) -> f64 {
        nu.dot(&(self.combined() * nu))
    }
}

/// Observer estimate, active model and the desired relative pose.
#[derive(Debug, Clone, PartialEq)]
pub struct PursuitState {
    pub g_bar_co: Pose,
    pub estimate: usize,
    pub g_d: Pose,
}

/// `N = [[I, 0], [−Ad_{R_ce⁻¹}, I]]`.
pub fn output_matrix(r_ce: &Rotation) -> Mat12 {
    let mut n = Mat12::identity();
    n.fixed_view_mut::<6, 6>(6, 0).copy_from(&(-adjoint_rotation(&r_ce.inverse())));
    n
}

/// Smallest eigenvalue of `Nᵀ K N` at the given control rotation.
pub fn lambda_k(gains: &ControllerGains, r_ce: &Rotation) -> f64 {
    let n = output_matrix(r_ce);
    let m = n.transpose() * gains.combined() * n;
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlErrors {
    pub e_c: ErrorVector,
    pub e_e: ErrorVector,
    pub e: Vec12,
    pub nu: Vec12,
    pub r_ce: Rotation,
}

/// `e_c = vec(g_d⁻¹ ḡ_co)`, `e = [e_c; e_e]`, `ν = N e`.
///
/// Fails when the control rotation error reaches `π/2`.
pub fn control_errors(g_bar_co: &Pose, g_d: &Pose, e_e: &ErrorVector) -> Result<ControlErrors> {
    let g_ce = g_d.inverse() * *g_bar_co;
    if !g_ce.rotation_within_half_pi() {
        return Err(PursuitError::AssumptionViolation(format!(
            "control rotation error {:.4} rad is not below π/2",
            g_ce.rotation.angle()
        )));
    }
    let e_c = g_ce.vec_transform();
    let mut e = Vec12::zeros();
    e.fixed_rows_mut::<6>(0).copy_from(&e_c.0);
    e.fixed_rows_mut::<6>(6).copy_from(&e_e.0);
    let nu = output_matrix(&g_ce.rotation) * e;
    Ok(ControlErrors {
        e_c,
        e_e: *e_e,
        e,
        nu,
        r_ce: g_ce.rotation,
    })
}

/// Rotation error `R_ee` rebuilt from the recovered estimation error.
pub fn estimation_rotation(e_e: &ErrorVector) -> Result<Rotation> {
    rotation_from_small_error(&e_e.rotation_part())
}

/// `u = −Kν − Ã μ` with `Ã = [Ad_{R_ce}; I] Ad_{R_ee}`, split into `(u_c, u_e)`.
pub fn control_input(nu: &Vec12, r_ce: &Rotation, r_ee: &Rotation, mu: &Vec6, gains: &ControllerGains) -> (Twist, Twist) {
    let feed = adjoint_rotation(r_ee) * mu;
    let nu_c: Vec6 = nu.fixed_rows::<6>(0).into();
    let nu_e: Vec6 = nu.fixed_rows::<6>(6).into();
    let u_c = -(gains.k_c * nu_c) - adjoint_rotation(r_ce) * feed;
    let u_e = -(gains.k_e * nu_e) - feed;
    (Twist::from_vector(&u_c), Twist::from_vector(&u_e))
}

/// One observer step `ḡ_co ← exp(−V_wc dt) · ḡ_co · exp(−u_e dt)`.
pub fn vmo_step(g_bar_co: &Pose, v_wc: &Twist, u_e: &Twist, dt: f64) -> Pose {
    exp_se3(&(-*v_wc), dt) * *g_bar_co * exp_se3(&(-*u_e), dt)
}

/// Outcome of one switching-estimation step.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchDecision {
    pub selected: usize,
    pub uncertainties: Vec<f64>,
}

/// Model with the smallest normalized uncertainty; ties go to the lower index.
pub fn least_uncertain(uncertainties: &[f64]) -> usize {
    uncertainties
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) })
        .0
}

/// One pass of the hysteresis rule: the current model is replaced only when
/// its normalized uncertainty exceeds the best candidate's by more than `T`.
pub fn estimate_switching(models: &[GpModel], x_bar: &Vec6, current: usize, threshold: f64) -> Result<SwitchDecision> {
    if models.is_empty() {
        return Err(PursuitError::InvalidArgument("switching needs at least one model".into()));
    }
    if current >= models.len() {
        return Err(PursuitError::InvalidArgument(format!(
            "current model {current} out of range"
        )));
    }
    if !(0.0..1.0).contains(&threshold) {
        return Err(PursuitError::InvalidArgument(format!(
            "threshold must lie in [0, 1), got {threshold}"
        )));
    }
    let uncertainties: Vec<f64> = models.iter().map(|m| m.normalized_uncertainty(x_bar)).collect();
    let candidate = least_uncertain(&uncertainties);
    let selected = if uncertainties[current] > uncertainties[candidate] + threshold {
        candidate
    } else {
        current
    };
    Ok(SwitchDecision { selected, uncertainties })
}

/// `S = ½ Σ_{j∈{c,e}} (‖p_je‖² + tr(I − R_je))`.
pub fn storage_function(g_ce: &Pose, g_ee: &Pose) -> f64 {
    [g_ce, g_ee]
        .iter()
        .map(|g| g.translation.norm_squared() + 3.0 - g.rotation.matrix().trace())
        .sum::<f64>()
        * 0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EllipseMode {
    /// Bound for unknown switching driven by a maximum model error `ρ̄`.
    WorstCase,
    /// Known switching with separate translational and rotational constants.
    PerModel,
    /// Known switching with a fixed rotation axis and one combined constant.
    AxisKnown,
}

/// Constants entering the ellipse evaluators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundParameters {
    pub lambda_k: f64,
    /// `L_p` for [`EllipseMode::PerModel`], the combined `L` for
    /// [`EllipseMode::AxisKnown`].
    pub lipschitz_p: f64,
    pub lipschitz_theta: f64,
    pub delta: f64,
    /// Maximum model error for [`EllipseMode::WorstCase`].
    pub rho_bar: f64,
}

impl Default for BoundParameters {
    fn default() -> Self {
        BoundParameters {
            lambda_k: 10.0,
            lipschitz_p: 8.0,
            lipschitz_theta: 0.0,
            delta: 0.05,
            rho_bar: 1.0,
        }
    }
}

impl BoundParameters {
    /// `λ̃_K = λ_K − L`.
    pub fn lambda_tilde(&self) -> f64 {
        self.lambda_k - self.lipschitz_p
    }

    /// Checks the preconditions of the chosen mode.
    pub fn check(&self, mode: EllipseMode) -> Result<()> {
        if !(self.lambda_k > 0.0) {
            return Err(PursuitError::AssumptionViolation(format!(
                "λ_K = {} must be positive",
                self.lambda_k
            )));
        }
        if mode != EllipseMode::WorstCase && !(self.lambda_tilde() > 0.0) {
            return Err(PursuitError::AssumptionViolation(format!(
                "λ̃_K = λ_K − L = {} − {} is not positive",
                self.lambda_k, self.lipschitz_p
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    /// `E`; the error lies in the set when `E ≤ 0`.
    pub value: f64,
    pub inside: bool,
    /// Radius constant `c`.
    pub c: f64,
}

/// Evaluates the ellipse value for errors `(e_c, e_e)`.
///
/// `beta` and `variance` (the diagonal of `Σ`) belong to the active model;
/// the worst-case mode ignores them.
pub fn ellipse_membership(
    e_c: &Vec6,
    e_e: &Vec6,
    params: &BoundParameters,
    beta: &Vec6,
    variance: &Vec6,
    mode: EllipseMode,
) -> Result<Ellipse> {
    params.check(mode)?;
    let ec = e_c.norm();
    let ee = e_e.norm();
    let (value, c) = match mode {
        EllipseMode::WorstCase => {
            let c = params.rho_bar / (2.0 * params.lambda_k);
            ((ec * ec + (ee - c).powi(2)).sqrt() - c, c)
        }
        EllipseMode::PerModel | EllipseMode::AxisKnown => {
            let lt = params.lambda_tilde();
            let spread = beta.component_mul(&variance.map(|v| v.max(0.0).sqrt())).norm();
            let mut c = spread / (2.0 * lt);
            if mode == EllipseMode::PerModel {
                c += std::f64::consts::PI * params.lipschitz_theta / lt;
            }
            let r = lt / params.lambda_k;
            ((ec * ec + r * (ee - c).powi(2)).sqrt() - r.sqrt() * c, c)
        }
    };
    Ok(Ellipse {
        value,
        inside: value <= 0.0,
        c,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzEstimate {
    /// `max |fᵢ(x) − fᵢ(x′)| / ‖x − x′‖` per output.
    pub per_output: Vec6,
    /// `max ‖f(x) − f(x′)‖ / ‖x − x′‖`.
    pub vector: f64,
}

/// Empirical Lipschitz constants of `f` over the given input pairs.
/// Coincident pairs are skipped.
pub fn lipschitz_estimate<F: Fn(&Vec6) -> Vec6>(f: F, pairs: &[(Vec6, Vec6)]) -> Result<LipschitzEstimate> {
    if pairs.is_empty() {
        return Err(PursuitError::InvalidArgument("need at least one input pair".into()));
    }
    let mut per_output = Vec6::zeros();
    let mut vector: f64 = 0.0;
    for (x, x2) in pairs {
        let d = (x - x2).norm();
        if d == 0.0 {
            continue;
        }
        let diff = f(x) - f(x2);
        vector = vector.max(diff.norm() / d);
        for i in 0..6 {
            per_output[i] = per_output[i].max(diff[i].abs() / d);
        }
    }
    Ok(LipschitzEstimate { per_output, vector })
}
