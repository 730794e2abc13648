use proptest::prelude::*;

use pursuit_core::geometry::{adjoint_rotation, exp_se3, rotation_from_small_error, vee, wedge};
use pursuit_core::{Mat3, Pose, Rotation, Twist, Vec3, Vec6};

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn pose() -> impl Strategy<Value = Pose> {
    (vec3(5.0), vec3(1.8)).prop_map(|(p, w)| Pose::new(p, Rotation::from_axis_angle(&w)))
}

fn twist() -> impl Strategy<Value = Twist> {
    (vec3(2.0), vec3(2.0)).prop_map(|(v, w)| Twist::new(v, w))
}

/// 4×4 homogeneous matrix of a pose.
fn homogeneous(g: &Pose) -> nalgebra::Matrix4<f64> {
    let mut m = nalgebra::Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(g.rotation.matrix());
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&g.translation);
    m
}

fn twist_hat(xi: &Vec6) -> nalgebra::Matrix4<f64> {
    let mut m = nalgebra::Matrix4::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&wedge(&Vec3::new(xi[3], xi[4], xi[5])));
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&Vec3::new(xi[0], xi[1], xi[2]));
    m
}

proptest! {
    #[test]
    fn wedge_is_cross_product(a in vec3(10.0), b in vec3(10.0)) {
        prop_assert!((wedge(&a) * b - a.cross(&b)).norm() <= 1e-12 * (1.0 + a.norm() * b.norm()));
        prop_assert!((vee(&wedge(&a)).unwrap() - a).norm() == 0.0);
    }

    #[test]
    fn log_inverts_exp(w in vec3(1.8)) {
        prop_assume!(w.norm() < std::f64::consts::PI - 1e-3);
        prop_assert!((Rotation::from_axis_angle(&w).log() - w).norm() < 1e-9);
    }

    #[test]
    fn inverse_and_associativity(a in pose(), b in pose(), c in pose()) {
        prop_assert!(a.compose(&a.inverse()).distance(&Pose::identity()) < 1e-9);
        prop_assert!(a.compose(&b).compose(&c).distance(&a.compose(&b.compose(&c))) < 1e-9);
        prop_assert!((a.compose(&b)).inverse().distance(&b.inverse().compose(&a.inverse())) < 1e-9);
    }

    #[test]
    fn vector_form_round_trip(g in pose()) {
        prop_assume!(g.rotation.angle() < std::f64::consts::PI - 1e-3);
        prop_assert!(Pose::from_vector_form(&g.vector_form()).distance(&g) < 1e-9);
    }

    #[test]
    fn adjoint_conjugates_twists(g in pose(), xi in twist()) {
        // (Ad_g ξ)^ = g ξ̂ g⁻¹
        let lhs = twist_hat(&(g.adjoint() * xi.to_vector()));
        let h = homogeneous(&g);
        let rhs = h * twist_hat(&xi.to_vector()) * h.try_inverse().unwrap();
        prop_assert!((lhs - rhs).abs().max() < 1e-9);
    }

    #[test]
    fn adjoint_is_a_homomorphism(a in pose(), b in pose()) {
        let d = a.compose(&b).adjoint() - a.adjoint() * b.adjoint();
        prop_assert!(d.abs().max() < 1e-9 * (1.0 + a.adjoint().abs().max() * b.adjoint().abs().max()));
        let r = adjoint_rotation(&a.rotation) - Pose::new(Vec3::zeros(), a.rotation).adjoint();
        prop_assert!(r.abs().max() == 0.0);
    }

    #[test]
    fn exp_is_a_one_parameter_subgroup(xi in twist(), s in 0.0..1.0f64, t in 0.0..1.0f64) {
        let split = exp_se3(&xi, s).compose(&exp_se3(&xi, t));
        prop_assert!(split.distance(&exp_se3(&xi, s + t)) < 1e-9);
        prop_assert!(exp_se3(&xi, t).compose(&exp_se3(&(-xi), t)).distance(&Pose::identity()) < 1e-9);
    }

    #[test]
    fn exp_matches_matrix_exponential(xi in twist(), t in 0.0..0.5f64) {
        let reference = (twist_hat(&xi.to_vector()) * t).exp();
        prop_assert!((homogeneous(&exp_se3(&xi, t)) - reference).abs().max() < 1e-9);
    }

    #[test]
    fn small_error_rotation_round_trip(w in vec3(1.0)) {
        prop_assume!(w.norm() < std::f64::consts::FRAC_PI_2 - 1e-3);
        let r = Rotation::from_axis_angle(&w);
        let e = Pose::new(Vec3::zeros(), r).vec_transform();
        let back = rotation_from_small_error(&e.rotation_part()).unwrap();
        prop_assert!((back.matrix() - r.matrix()).norm() < 1e-9);
    }
}

#[test]
fn rotation_error_beyond_half_pi_is_rejected() {
    assert!(rotation_from_small_error(&Vec3::new(0.8, 0.7, 0.0)).is_err());
    assert!(rotation_from_small_error(&Vec3::new(0.0, 0.0, 1.0)).is_ok());
}

#[test]
fn vee_rejects_symmetric_input() {
    assert!(vee(&Mat3::identity()).is_err());
}

#[test]
fn round_trips_are_fast() {
    let start = std::time::Instant::now();
    let mut acc = 0.0;
    for k in 0..10_000 {
        let t = k as f64 * 1e-4;
        let g = Pose::new(Vec3::new(t, -t, 2.0 * t), Rotation::from_axis_angle(&Vec3::new(t, 0.5, -t)));
        acc += g.compose(&g.inverse()).distance(&Pose::identity());
    }
    assert!(acc < 1e-9 * 10_000.0);
    assert!(start.elapsed().as_secs_f64() < 1.0);
}
