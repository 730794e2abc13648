//! Pinhole projection of target features and recovery of the estimation
//! error from the image-space residual.
//!
//! The optical axis is the camera's `+y` axis: a point `(x, y, z)` in the
//! camera frame lands at `λ/y · (x, z)` on the image plane.

use nalgebra::{DMatrix, DVector, SMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{PursuitError, Result};
use crate::geometry::{wedge, ErrorVector, Mat3, Pose, Vec3, Vec6};

/// Relative singular-value cutoff for the pseudo-inverse.
pub const PINV_CUTOFF: f64 = 1e-8;

/// Feature points in the target frame plus the focal length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureModel {
    pub points: Vec<Vec3>,
    pub focal_length: f64,
}

impl Default for FeatureModel {
    /// A non-coplanar tetrahedron of about 0.2 m with unit focal length.
    fn default() -> Self {
        FeatureModel {
            points: vec![
                Vec3::new(0.0, 0.0, 0.1),
                Vec3::new(0.1, 0.0, -0.1),
                Vec3::new(-0.1, 0.1, -0.1),
                Vec3::new(-0.1, -0.1, -0.1),
            ],
            focal_length: 1.0,
        }
    }
}

impl FeatureModel {
    pub fn new(points: Vec<Vec3>, focal_length: f64) -> Result<Self> {
        let model = FeatureModel {
            points,
            focal_length,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() < 4 {
            return Err(PursuitError::InvalidArgument(format!(
                "need at least 4 feature points, got {}",
                self.points.len()
            )));
        }
        if !(self.focal_length > 0.0 && self.focal_length.is_finite()) {
            return Err(PursuitError::InvalidArgument(format!(
                "focal length must be positive, got {}",
                self.focal_length
            )));
        }
        if self.points.iter().any(|p| !p.iter().all(|x| x.is_finite())) {
            return Err(PursuitError::InvalidArgument(
                "feature points must be finite".into(),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Stacked image coordinates `[m_1ᵀ … m_nᵀ]ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualMeasurement(pub DVector<f64>);

impl VisualMeasurement {
    pub fn residual(&self, other: &VisualMeasurement) -> DVector<f64> {
        &self.0 - &other.0
    }
}

/// `λ/y · (x, z)`.
pub fn project_point(p: &Vec3, lambda: f64) -> Result<[f64; 2]> {
    if p.y <= 0.0 {
        return Err(PursuitError::FeatureBehindCamera {
            index: 0,
            depth: p.y,
        });
    }
    let s = lambda / p.y;
    Ok([s * p.x, s * p.z])
}

pub fn visual_measurement(g_co: &Pose, features: &FeatureModel) -> Result<VisualMeasurement> {
    let mut out = DVector::zeros(2 * features.len());
    for (i, p_o) in features.points.iter().enumerate() {
        let p_c = g_co.transform_point(p_o);
        let m = project_point(&p_c, features.focal_length).map_err(|e| match e {
            PursuitError::FeatureBehindCamera { depth, .. } => {
                PursuitError::FeatureBehindCamera { index: i, depth }
            }
            other => other,
        })?;
        out[2 * i] = m[0];
        out[2 * i + 1] = m[1];
    }
    Ok(VisualMeasurement(out))
}

/// Linearization of the measurement with respect to an error vector applied
/// on the right of `ḡ_co`: `f(ḡ_co · (p, R(w))) ≈ f(ḡ_co) + J [p; w]`.
pub fn image_jacobian(g_bar_co: &Pose, features: &FeatureModel) -> Result<DMatrix<f64>> {
    let n = features.len();
    let lambda = features.focal_length;
    let r = g_bar_co.rotation.matrix();
    let mut jac = DMatrix::zeros(2 * n, 6);
    for (i, p_o) in features.points.iter().enumerate() {
        let p_c = g_bar_co.transform_point(p_o);
        let (x, y, z) = (p_c.x, p_c.y, p_c.z);
        if y <= 0.0 {
            return Err(PursuitError::FeatureBehindCamera { index: i, depth: y });
        }
        let s = lambda / y;
        #[rustfmt::skip]
        let proj = SMatrix::<f64, 2, 3>::new(
            s, -s * x / y, 0.0,
            0.0, -s * z / y, s,
        );
        let mut body = SMatrix::<f64, 3, 6>::zeros();
        body.fixed_view_mut::<3, 3>(0, 0).copy_from(&Mat3::identity());
        body.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-wedge(p_o)));
        let block = proj * r * body;
        jac.view_mut((2 * i, 0), (2, 6)).copy_from(&block);
    }
    Ok(jac)
}

/// Moore–Penrose pseudo-inverse via SVD with a relative singular-value cutoff.
///
/// Fails with [`PursuitError::DegenerateView`] when the matrix does not have
/// full column rank.
pub fn pseudo_inverse(j: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    // The default convergence threshold of `svd` can stop with a
    // reconstruction error near 1e-3 on well-conditioned 8×6 inputs.
    let svd = j
        .clone()
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or(PursuitError::DegenerateView {
            sigma_min: f64::NAN,
            sigma_max: f64::NAN,
        })?;
    let sigma_max = svd.singular_values.max();
    let sigma_min = svd.singular_values.min();
    if !(sigma_max > 0.0) || sigma_min <= PINV_CUTOFF * sigma_max || sigma_min <= PINV_CUTOFF {
        return Err(PursuitError::DegenerateView {
            sigma_min,
            sigma_max,
        });
    }
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let inv = DMatrix::from_diagonal(&svd.singular_values.map(|s| 1.0 / s));
    Ok(vt.transpose() * inv * u.transpose())
}

/// `e_e = J† f_e`.
pub fn recover_estimation_error(f_e: &DVector<f64>, j: &DMatrix<f64>) -> Result<ErrorVector> {
    if f_e.len() != j.nrows() || j.ncols() != 6 {
        return Err(PursuitError::InvalidArgument(format!(
            "residual of length {} does not match a {}x{} Jacobian",
            f_e.len(),
            j.nrows(),
            j.ncols()
        )));
    }
    let e = pseudo_inverse(j)? * f_e;
    Ok(ErrorVector(Vec6::from_iterator(e.iter().copied())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn projection_examples() {
        assert_eq!(project_point(&Vec3::new(0.0, 2.0, 0.0), 1.0).unwrap(), [0.0, 0.0]);
        assert_eq!(project_point(&Vec3::new(1.0, 2.0, 3.0), 2.0).unwrap(), [1.0, 3.0]);
        let a = project_point(&Vec3::new(1.0, 2.0, 3.0), 1.0).unwrap();
        let b = project_point(&Vec3::new(2.0, 4.0, 6.0), 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn behind_camera_is_an_error() {
        assert!(matches!(
            project_point(&Vec3::new(0.0, 0.0, 1.0), 1.0),
            Err(PursuitError::FeatureBehindCamera { .. })
        ));
        let features = FeatureModel::default();
        let g = Pose::from_translation(Vec3::new(0.0, -3.0, 0.0));
        match visual_measurement(&g, &features) {
            Err(PursuitError::FeatureBehindCamera { index, .. }) => assert_eq!(index, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn measurement_of_single_axis_feature() {
        let features = FeatureModel {
            points: vec![Vec3::new(0.0, 1.0, 0.0); 4],
            ..FeatureModel::default()
        };
        let f = visual_measurement(&Pose::identity(), &features).unwrap();
        assert!(f.0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn measurement_at_nominal_pose() {
        let features = FeatureModel::default();
        let g = Pose::from_translation(Vec3::new(0.0, 3.0, 0.0));
        let f = visual_measurement(&g, &features).unwrap();
        // (x, 3 + y, z) projected with λ = 1
        let expected = [
            0.0, 0.1 / 3.0,
            0.1 / 3.0, -0.1 / 3.0,
            -0.1 / 3.1, -0.1 / 3.1,
            -0.1 / 2.9, -0.1 / 2.9,
        ];
        for (a, b) in f.0.iter().zip(expected) {
            assert_relative_eq!(*a, b, epsilon = 1e-15);
        }
        assert!(f.residual(&f).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn jacobian_translation_block_for_origin_feature() {
        let features = FeatureModel::new(
            vec![
                Vec3::zeros(),
                Vec3::new(0.1, 0.0, -0.1),
                Vec3::new(-0.1, 0.1, -0.1),
                Vec3::new(-0.1, -0.1, -0.1),
            ],
            1.0,
        )
        .unwrap();
        let g = Pose::from_translation(Vec3::new(0.0, 3.0, 0.0));
        let j = image_jacobian(&g, &features).unwrap();
        let block = j.view((0, 0), (2, 3));
        let s = 1.0 / 3.0;
        assert_relative_eq!(block[(0, 0)], s);
        assert_eq!(block[(0, 1)], 0.0);
        assert_eq!(block[(0, 2)], 0.0);
        assert_eq!(block[(1, 0)], 0.0);
        assert_eq!(block[(1, 1)], 0.0);
        assert_relative_eq!(block[(1, 2)], s);
    }

    #[test]
    fn default_features_give_full_rank() {
        let g = Pose::from_translation(Vec3::new(0.0, 3.0, 0.0));
        let j = image_jacobian(&g, &FeatureModel::default()).unwrap();
        let sv = j.singular_values();
        assert_eq!(sv.iter().filter(|&&s| s > 1e-8 * sv.max()).count(), 6);
    }

    #[test]
    fn zero_residual_recovers_zero() {
        let g = Pose::from_translation(Vec3::new(0.0, 3.0, 0.0));
        let j = image_jacobian(&g, &FeatureModel::default()).unwrap();
        let e = recover_estimation_error(&DVector::zeros(8), &j).unwrap();
        assert_eq!(e.0, Vec6::zeros());
    }

    #[test]
    fn rank_deficient_jacobian_is_degenerate() {
        let j = DMatrix::from_fn(8, 6, |r, c| if c == 5 { 0.0 } else { (r * 7 + c) as f64 });
        assert!(matches!(
            recover_estimation_error(&DVector::zeros(8), &j),
            Err(PursuitError::DegenerateView { .. })
        ));
    }

    #[test]
    fn too_few_features_rejected() {
        assert!(FeatureModel::new(vec![Vec3::zeros(); 3], 1.0).is_err());
        assert!(FeatureModel::new(vec![Vec3::zeros(); 4], 0.0).is_err());
    }
}
