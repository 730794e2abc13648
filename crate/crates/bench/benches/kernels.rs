use criterion::{black_box, criterion_group, criterion_main, Criterion};

use pursuit_core::geometry::exp_se3;
use pursuit_core::simulate::{generate_training, run_scenario, train_models, Case, Scenario, TrainingSpec};
use pursuit_core::vision::{image_jacobian, pseudo_inverse};
use pursuit_core::{FeatureModel, Pose, Rotation, Twist, Vec3, Vec6};

fn geometry(c: &mut Criterion) {
    let xi = Twist::new(Vec3::new(0.3, -0.1, 0.2), Vec3::new(0.4, -0.7, 1.1));
    c.bench_function("exp_se3", |b| b.iter(|| exp_se3(black_box(&xi), 0.02)));
    let g = exp_se3(&xi, 1.0);
    c.bench_function("rotation_log", |b| b.iter(|| black_box(&g.rotation).log()));
    c.bench_function("vector_form", |b| b.iter(|| black_box(&g).vector_form()));
}

fn vision(c: &mut Criterion) {
    let features = FeatureModel::default();
    let g = Pose::new(Vec3::new(0.1, 2.0, -0.1), Rotation::from_axis_angle(&Vec3::new(0.1, 0.2, -0.1)));
    c.bench_function("image_jacobian", |b| b.iter(|| image_jacobian(black_box(&g), &features).unwrap()));
    let j = image_jacobian(&g, &features).unwrap();
    c.bench_function("pseudo_inverse_8x6", |b| b.iter(|| pseudo_inverse(black_box(&j)).unwrap()));
}

fn gp(c: &mut Criterion) {
    let scenario = Scenario::reference();
    let spec = TrainingSpec::default();
    let data = generate_training(&scenario.profiles, &spec, 0).unwrap();
    let models = train_models(&data, Case::Switched, &spec, 0).unwrap();
    let x = Vec6::new(-1.5, 0.3, 0.0, 0.0, 0.0, 0.8);
    c.bench_function("gp_posterior_30pts", |b| b.iter(|| models[0].posterior(black_box(&x))));

    let mut group = c.benchmark_group("slow");
    group.sample_size(10);
    group.bench_function("train_one_model", |b| {
        b.iter(|| train_models(&data[..1], Case::Switched, &spec, 0).unwrap())
    });
    let short = Scenario { duration: 2.0, ..scenario };
    group.bench_function("run_2s_switched", |b| b.iter(|| run_scenario(&short, &models).unwrap()));
    group.finish();
}

criterion_group!(benches, geometry, vision, gp);
criterion_main!(benches);
