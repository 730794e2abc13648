//! Rigid-body kinematics on SE(3).
//!
//! Twists are ordered `(v, ω)`: linear part first, angular part second. The
//! adjoint follows the same ordering, `Ad_g = [[R, p̂R], [0, R]]`.

use std::ops::{Mul, Neg};

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{PursuitError, Result};

pub type Vec3 = Vector3<f64>;
pub type Vec6 = Vector6<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Mat6 = Matrix6<f64>;

/// Below this rotation angle the logarithm uses the skew part directly.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Below this angle the exponential uses its Taylor coefficients.
const SERIES_ANGLE: f64 = 1e-4;

const ORTHO_TOL: f64 = 1e-9;

/// Skew-symmetric matrix with `wedge(w) * b == w × b`.
#[rustfmt::skip]
pub fn wedge(w: &Vec3) -> Mat3 {
    Mat3::new(
        0.0, -w.z,  w.y,
        w.z,  0.0, -w.x,
       -w.y,  w.x,  0.0,
    )
}

/// Inverse of [`wedge`]; rejects matrices that are not skew-symmetric.
pub fn vee(s: &Mat3) -> Result<Vec3> {
    let sym = (s + s.transpose()).norm();
    if sym >= 1e-9 {
        return Err(PursuitError::InvalidArgument(format!(
            "vee of a non-skew matrix (|S + Sᵀ| = {sym:.3e})"
        )));
    }
    Ok(vee_unchecked(s))
}

#[inline]
fn vee_unchecked(s: &Mat3) -> Vec3 {
    Vec3::new(s[(2, 1)], s[(0, 2)], s[(1, 0)])
}

/// `sk(R)∨` with `sk(R) = (R − Rᵀ)/2`; equals `sin θ · ξ` for a rotation.
#[inline]
pub fn skew_part_vee(m: &Mat3) -> Vec3 {
    vee_unchecked(&((m - m.transpose()) * 0.5))
}

/// Rodrigues coefficients `(sin θ/θ, (1 − cos θ)/θ², (θ − sin θ)/θ³)`.
fn rodrigues_coefficients(theta: f64) -> (f64, f64, f64) {
    // `(θ − sin θ)/θ³` cancels catastrophically long before SMALL_ANGLE, so
    // the series takes over earlier; its truncation error is below 1e-23.
    if theta < SERIES_ANGLE {
        let t2 = theta * theta;
        let t4 = t2 * t2;
        (
            1.0 - t2 / 6.0 + t4 / 120.0,
            0.5 - t2 / 24.0 + t4 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0,
        )
    } else {
        let t2 = theta * theta;
        (
            theta.sin() / theta,
            (1.0 - theta.cos()) / t2,
            (theta - theta.sin()) / (t2 * theta),
        )
    }
}

/// An element of SO(3).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Rotation(Mat3);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    /// Validates orthonormality and a positive determinant.
    pub fn from_matrix(m: Mat3) -> Result<Self> {
        let ortho = (m.transpose() * m - Mat3::identity()).norm();
        let det = m.determinant();
        if ortho > ORTHO_TOL || (det - 1.0).abs() > ORTHO_TOL {
            return Err(PursuitError::InvalidArgument(format!(
                "not a rotation (|RᵀR − I| = {ortho:.3e}, det = {det:.12})"
            )));
        }
        Ok(Rotation(m))
    }

    /// Wraps a matrix without checks. Callers guarantee it is a rotation.
    pub(crate) fn from_matrix_unchecked(m: Mat3) -> Self {
        Rotation(m)
    }

    /// Rotation by the axis-angle vector `ξθ`.
    pub fn from_axis_angle(w: &Vec3) -> Self {
        let theta = w.norm();
        let (a, b, _) = rodrigues_coefficients(theta);
        let k = wedge(w);
        Rotation(Mat3::identity() + k * a + k * k * b)
    }

    pub fn rotation_z(angle: f64) -> Self {
        Self::from_axis_angle(&Vec3::new(0.0, 0.0, angle))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Rotation(self.0.transpose())
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let s = skew_part_vee(&self.0).norm();
        s.atan2((self.0.trace() - 1.0) * 0.5)
    }

    /// Axis-angle vector `ξθ` with `θ ∈ [0, π]`.
    pub fn log(&self) -> Vec3 {
        let r = &self.0;
        let theta = self.angle();
        if theta < SMALL_ANGLE {
            return skew_part_vee(r);
        }
        if std::f64::consts::PI - theta > 1e-6 {
            let s = skew_part_vee(r);
            return s * (theta / s.norm());
        }
        // Near π: the axis is the dominant column of (R + I)/2.
        let b = (r + Mat3::identity()) * 0.5;
        let i = (0..3)
            .max_by(|&a, &c| b[(a, a)].total_cmp(&b[(c, c)]))
            .unwrap_or(0);
        let mut axis = b.column(i) / b[(i, i)].max(1e-300).sqrt();
        axis.normalize_mut();
        // Resolve the sign from the (small) antisymmetric part when present.
        let s = skew_part_vee(r);
        if s.dot(&axis) < 0.0 {
            axis = -axis;
        }
        axis * theta
    }

    /// Nearest rotation in the Frobenius sense (polar projection).
    pub fn orthonormalized(&self) -> Self {
        let svd = self.0.svd(true, true);
        let (u, vt) = match (svd.u, svd.v_t) {
            (Some(u), Some(vt)) => (u, vt),
            _ => return *self,
        };
        let mut r = u * vt;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * vt;
        }
        Rotation(r)
    }

    pub fn is_valid(&self) -> bool {
        Self::from_matrix(self.0).is_ok()
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vec3> for Rotation {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

/// Rigid body pose `g = (p, R)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vec3,
}

impl Pose {
    pub fn new(translation: Vec3, rotation: Rotation) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn from_translation(p: Vec3) -> Self {
        Pose::new(p, Rotation::identity())
    }

    /// Pose from the vector form `[pᵀ, (ξθ)ᵀ]ᵀ`.
    pub fn from_vector_form(v: &Vec6) -> Self {
        Pose::new(
            Vec3::new(v[0], v[1], v[2]),
            Rotation::from_axis_angle(&Vec3::new(v[3], v[4], v[5])),
        )
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.inverse();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `g_ij = g_wi⁻¹ g_wj`: pose of frame j seen from frame i.
    pub fn relative(g_wi: &Pose, g_wj: &Pose) -> Pose {
        g_wi.inverse().compose(g_wj)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * *p + self.translation
    }

    /// `Ad_g = [[R, p̂R], [0, R]]`.
    pub fn adjoint(&self) -> Mat6 {
        let r = self.rotation.matrix();
        let mut ad = Mat6::zeros();
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
        ad.fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&(wedge(&self.translation) * r));
        ad.fixed_view_mut::<3, 3>(3, 3).copy_from(r);
        ad
    }

    /// `vec(g) = [pᵀ, (sk(R)∨)ᵀ]ᵀ`, the error-vector form.
    pub fn vec_transform(&self) -> ErrorVector {
        let s = skew_part_vee(self.rotation.matrix());
        let p = self.translation;
        ErrorVector(Vec6::new(p.x, p.y, p.z, s.x, s.y, s.z))
    }

    /// `ǧ = [pᵀ, (ξθ)ᵀ]ᵀ`, the axis-angle vector form used as GP input.
    pub fn vector_form(&self) -> Vec6 {
        let w = self.rotation.log();
        let p = self.translation;
        Vec6::new(p.x, p.y, p.z, w.x, w.y, w.z)
    }

    /// Whether the rotation angle is strictly below π/2.
    pub fn rotation_within_half_pi(&self) -> bool {
        // tr R = 1 + 2 cos θ > 1
        self.rotation.matrix().trace() > 1.0
    }

    pub fn orthonormalized(&self) -> Pose {
        Pose::new(self.translation, self.rotation.orthonormalized())
    }

    pub fn distance(&self, other: &Pose) -> f64 {
        (self.translation - other.translation).norm()
            + (self.rotation.matrix() - other.rotation.matrix()).norm()
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

/// Adjoint of the pure rotation `(0, R)`: `diag(R, R)`.
pub fn adjoint_rotation(r: &Rotation) -> Mat6 {
    let mut ad = Mat6::zeros();
    ad.fixed_view_mut::<3, 3>(0, 0).copy_from(r.matrix());
    ad.fixed_view_mut::<3, 3>(3, 3).copy_from(r.matrix());
    ad
}

/// Body velocity `(v, ω)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist {
    pub linear: Vec3,
    pub angular: Vec3,
}

impl Twist {
    pub fn new(linear: Vec3, angular: Vec3) -> Self {
        Twist { linear, angular }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(v: &Vec6) -> Self {
        Twist {
            linear: Vec3::new(v[0], v[1], v[2]),
            angular: Vec3::new(v[3], v[4], v[5]),
        }
    }

    pub fn to_vector(&self) -> Vec6 {
        let (v, w) = (self.linear, self.angular);
        Vec6::new(v.x, v.y, v.z, w.x, w.y, w.z)
    }

    pub fn is_finite(&self) -> bool {
        self.linear.iter().chain(self.angular.iter()).all(|x| x.is_finite())
    }
}

impl Neg for Twist {
    type Output = Twist;
    fn neg(self) -> Twist {
        Twist::new(-self.linear, -self.angular)
    }
}

/// Exponential of the twist `ξ` scaled by `dt`: `exp(ξ̂ dt)`.
///
/// Right-multiplying a pose by this integrates `ġ = g ξ̂` exactly for a
/// constant body velocity.
pub fn exp_se3(xi: &Twist, dt: f64) -> Pose {
    let w = xi.angular * dt;
    let v = xi.linear * dt;
    let theta = w.norm();
    let (a, b, c) = rodrigues_coefficients(theta);
    let k = wedge(&w);
    let k2 = k * k;
    let rot = Mat3::identity() + k * a + k2 * b;
    let left_jacobian = Mat3::identity() + k * b + k2 * c;
    Pose::new(left_jacobian * v, Rotation::from_matrix_unchecked(rot))
}

/// Rotation whose `sk(R)∨` equals `w`, taking the angle in `[0, π/2]`.
///
/// `w = sin θ · ξ`, so the inversion is unique while `|θ| < π/2`.
pub fn rotation_from_small_error(w: &Vec3) -> Result<Rotation> {
    let s = w.norm();
    if s > 1.0 + 1e-12 {
        return Err(PursuitError::AssumptionViolation(format!(
            "rotation error |sk(R)∨| = {s:.6} exceeds 1 (angle beyond π/2)"
        )));
    }
    if s < 1e-12 {
        return Ok(Rotation::identity());
    }
    let theta = s.min(1.0).asin();
    Ok(Rotation::from_axis_angle(&(w * (theta / s))))
}

/// 6-vector `[p; sk(R)∨]` describing a control or estimation error.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ErrorVector(pub Vec6);

impl ErrorVector {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn translation(&self) -> Vec3 {
        Vec3::new(self.0[0], self.0[1], self.0[2])
    }

    pub fn rotation_part(&self) -> Vec3 {
        Vec3::new(self.0[3], self.0[4], self.0[5])
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn as_vector(&self) -> &Vec6 {
        &self.0
    }

    /// Pose `(p, R)` with `R` rebuilt from the rotation part.
    pub fn to_pose(&self) -> Result<Pose> {
        Ok(Pose::new(
            self.translation(),
            rotation_from_small_error(&self.rotation_part())?,
        ))
    }
}
