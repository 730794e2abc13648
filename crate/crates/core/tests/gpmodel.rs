use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pursuit_core::gpmodel::{
    self, beta_coefficient, fit_with_options, log_marginal_likelihood, normalization_factor, FitOptions, Sharing,
};
use pursuit_core::{Dataset, GpModel, Hyperparameters, Vec6};

fn toy_data(m: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Vec6> = (0..m)
        .map(|_| Vec6::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), 0.0, 0.0, 0.0, rng.random_range(-3.0..3.0)))
        .collect();
    let outputs = inputs
        .iter()
        .map(|x| Vec6::new(x[1], -x[0] + 0.3 * x[1], 0.0, 0.0, 0.0, (0.5 * x[5]).sin()) + Vec6::from_fn(|_, _| rng.random_range(-0.01..0.01)))
        .collect();
    Dataset::new(inputs, outputs).unwrap()
}

fn query() -> impl Strategy<Value = Vec6> {
    proptest::array::uniform6(-4.0..4.0f64).prop_map(|a| Vec6::from_row_slice(&a))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn posterior_variance_bounded_by_prior(x in query(), l in 0.2..3.0f64, sf in 0.1..3.0f64, sn in 1e-4..0.5f64) {
        let hp = Hyperparameters::isotropic(l, sf, sn);
        let model = GpModel::new(toy_data(20, 3), [hp; 6]).unwrap();
        let p = model.posterior(&x);
        for v in p.variance.iter() {
            prop_assert!(*v > 0.0 && *v <= hp.signal_variance() + 1e-12);
        }
    }

    #[test]
    fn beta_matches_scalar_formula(norm in 0.0..50.0f64, gamma in 0.0..40.0f64, m in 1usize..200, delta in 0.001..0.999f64) {
        let l = ((m as f64 + 1.0) / delta).ln();
        let expected = (2.0 * norm * norm + 300.0 * gamma * l.powi(3)).sqrt();
        prop_assert!((beta_coefficient(norm, gamma, m, delta) - expected).abs() <= 1e-12 * expected.max(1.0));
    }
}

#[test]
fn thirty_point_beta_example() {
    // M = 30, δ = 0.05: log(620) = 6.4297...
    let b = beta_coefficient(2.0, 1.5, 30, 0.05);
    let l = 620f64.ln();
    assert!((b - (8.0 + 450.0 * l * l * l).sqrt()).abs() < 1e-12);
    assert!(b > 0.0);
}

#[test]
fn fit_never_ends_below_its_starting_points() {
    let data = toy_data(30, 11);
    for sharing in [Sharing::PerOutput, Sharing::Shared] {
        let opts = FitOptions { sharing, restarts: 4, ..FitOptions::default() };
        let report = fit_with_options(&data, 5, &opts).unwrap();
        for (best, starts) in report.objectives.iter().zip(&report.initial_objectives) {
            assert_eq!(starts.len(), 4);
            for s in starts {
                assert!(best >= s, "{sharing:?}: best {best} below start {s}");
            }
        }
        // the reported per-output likelihoods belong to the returned values
        for i in 0..6 {
            let y = nalgebra::DVector::from_vec(data.output_column(i));
            let ll = log_marginal_likelihood(&data.inputs, &y, &report.hyperparameters[i]).unwrap();
            assert!((ll - report.log_likelihoods[i]).abs() < 1e-6 * ll.abs().max(1.0));
        }
    }
}

#[test]
fn shared_fit_ties_lengthscales_and_signal() {
    let opts = FitOptions { sharing: Sharing::Shared, restarts: 2, ..FitOptions::default() };
    let hps = fit_with_options(&toy_data(25, 2), 1, &opts).unwrap().hyperparameters;
    for hp in &hps[1..] {
        assert_eq!(hp.lengthscales, hps[0].lengthscales);
        assert_eq!(hp.signal_std, hps[0].signal_std);
    }
}

#[test]
fn fixed_noise_is_respected() {
    let opts = FitOptions { fixed_noise: Some([0.01; 6]), restarts: 2, ..FitOptions::default() };
    let hps = fit_with_options(&toy_data(25, 2), 1, &opts).unwrap().hyperparameters;
    assert!(hps.iter().all(|hp| hp.noise_std == 0.01));
}

#[test]
fn fit_is_deterministic_per_seed() {
    let data = toy_data(20, 4);
    let a = fit_with_options(&data, 9, &FitOptions::default()).unwrap();
    let b = fit_with_options(&data, 9, &FitOptions::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn fit_rejects_tiny_datasets() {
    let one = Dataset::new(vec![Vec6::zeros()], vec![Vec6::zeros()]).unwrap();
    assert!(fit_with_options(&one, 0, &FitOptions::default()).is_err());
    let opts = FitOptions { restarts: 0, ..FitOptions::default() };
    assert!(fit_with_options(&toy_data(5, 0), 0, &opts).is_err());
}

#[test]
fn normalization_of_an_empty_model_is_prior_std() {
    let hp = Hyperparameters::isotropic(1.0, 2.5, 0.1);
    let model = GpModel::new(Dataset::empty(), [hp; 6]).unwrap();
    let alpha = Vec6::new(0.0, 1.0, 0.0, 0.0, 2.0, 0.0);
    let s = normalization_factor(&model, &alpha, &[Vec6::zeros(), Vec6::repeat(1.0)]).unwrap();
    assert!((s - 2.5 * alpha.norm()).abs() < 1e-12);
    assert!(normalization_factor(&model, &Vec6::zeros(), &[Vec6::zeros()]).is_err());
}

#[test]
fn model_file_round_trip() {
    let hp = Hyperparameters::isotropic(0.8, 1.2, 0.05);
    let mut model = GpModel::new(toy_data(12, 1), [hp; 6]).unwrap();
    model.set_beta(Vec6::repeat(3.0), 0.05);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    let back = GpModel::load(&path).unwrap();
    let x = Vec6::new(0.1, 0.2, 0.0, 0.0, 0.0, 0.3);
    assert_eq!(back.posterior(&x), model.posterior(&x));
    assert_eq!(back.beta(), model.beta());
    assert_eq!(back.hyperparameters(), model.hyperparameters());
}

#[test]
fn dataset_csv_round_trip() {
    let data = toy_data(7, 8);
    let mut buf = Vec::new();
    data.write_csv(&mut buf).unwrap();
    let back = Dataset::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back, data);
    assert!(Dataset::read_csv("x1,x2\n1,2\n".as_bytes()).is_err());
}

#[test]
fn information_gain_and_rkhs_surrogate_are_nonnegative() {
    let model = GpModel::new(toy_data(15, 6), [Hyperparameters::isotropic(1.0, 1.0, 0.05); 6]).unwrap();
    assert!(model.information_gain().iter().all(|&g| g >= 0.0));
    assert!(model.rkhs_norm_estimates().iter().all(|&n| n >= 0.0));
    let b = gpmodel::beta(&model, 0.05, &model.rkhs_norm_estimates()).unwrap();
    assert!(b.iter().all(|&v| v > 0.0));
    assert!(gpmodel::beta(&model, 1.0, &model.rkhs_norm_estimates()).is_err());
}
