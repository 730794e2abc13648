//! Gaussian-process models of a 6-D body-velocity field.
//!
//! Each of the six outputs is an independent zero-mean GP with a squared
//! exponential kernel and its own hyperparameters. A [`GpModel`] also carries
//! what the switching estimator and the error bounds need: the confidence
//! scaling `β`, the switching weights `ᾱ` and the normalization `Σ̄`.

mod dataset;
mod fit;

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{PursuitError, Result};
use crate::geometry::Vec6;

pub use dataset::{Dataset, DATASET_HEADER};
pub use fit::{fit_hyperparameters, fit_with_options, log_marginal_likelihood, FitOptions, FitReport, Sharing};

pub const OUTPUTS: usize = 6;

/// Relative diagonal jitter added to every Gram matrix before factorization.
pub const JITTER: f64 = 1e-10;

const MODEL_FORMAT: &str = "pursuit-gp-model/1";

/// Hyperparameters of one output: diagonal lengthscales (`Λ = diag(ℓ⁻²)`),
/// signal standard deviation `σ_f` and noise standard deviation `σ_n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub lengthscales: [f64; 6],
    pub signal_std: f64,
    pub noise_std: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            lengthscales: [1.0; 6],
            signal_std: 1.0,
            noise_std: 0.01,
        }
    }
}

impl Hyperparameters {
    pub fn isotropic(lengthscale: f64, signal_std: f64, noise_std: f64) -> Self {
        Hyperparameters {
            lengthscales: [lengthscale; 6],
            signal_std,
            noise_std,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !self.lengthscales.iter().all(|&l| pos(l)) || !pos(self.signal_std) || !pos(self.noise_std)
        {
            return Err(PursuitError::InvalidArgument(format!(
                "hyperparameters must be positive and finite: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn signal_variance(&self) -> f64 {
        self.signal_std * self.signal_std
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_std * self.noise_std
    }

    /// Largest eigenvalue of `Λ`, i.e. `1/ℓ_min²`.
    pub fn lambda_max(&self) -> f64 {
        self.lengthscales
            .iter()
            .map(|l| 1.0 / (l * l))
            .fold(0.0, f64::max)
    }

    #[inline]
    fn inverse_sq_lengthscales(&self) -> [f64; 6] {
        self.lengthscales.map(|l| 1.0 / (l * l))
    }
}

/// `σ_f² exp(−½ (x − x′)ᵀ Λ (x − x′))`.
pub fn kernel(x: &Vec6, x2: &Vec6, hp: &Hyperparameters) -> f64 {
    let inv = hp.inverse_sq_lengthscales();
    kernel_with(x, x2, hp.signal_variance(), &inv)
}

#[inline]
fn kernel_with(x: &Vec6, x2: &Vec6, sf2: f64, inv_l2: &[f64; 6]) -> f64 {
    let mut q = 0.0;
    for d in 0..6 {
        let diff = x[d] - x2[d];
        q += diff * diff * inv_l2[d];
    }
    sf2 * (-0.5 * q).exp()
}

pub(crate) fn gram(inputs: &[Vec6], hp: &Hyperparameters) -> DMatrix<f64> {
    let m = inputs.len();
    let sf2 = hp.signal_variance();
    let inv = hp.inverse_sq_lengthscales();
    let mut k = DMatrix::zeros(m, m);
    for i in 0..m {
        k[(i, i)] = sf2;
        for j in 0..i {
            let v = kernel_with(&inputs[i], &inputs[j], sf2, &inv);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Factorizes `K + (σ_n² + jitter·σ_f²) I`.
pub(crate) fn factorize(k: DMatrix<f64>, hp: &Hyperparameters) -> Option<Cholesky<f64, Dyn>> {
    let m = k.nrows();
    let mut a = k;
    let d = hp.noise_variance() + JITTER * hp.signal_variance();
    for i in 0..m {
        a[(i, i)] += d;
    }
    Cholesky::new(a)
}

/// One output dimension: factorization and the solve `(K + σ²I)⁻¹ y`.
#[derive(Debug, Clone)]
struct OutputGp {
    hp: Hyperparameters,
    inv_l2: [f64; 6],
    chol: Option<Cholesky<f64, Dyn>>,
    weights: DVector<f64>,
    /// `yᵀ(K + σ²I)⁻¹y`
    quad_form: f64,
    /// `½ log det(I + σ⁻²K)`
    info_gain: f64,
}

impl OutputGp {
    fn build(inputs: &[Vec6], y: DVector<f64>, hp: Hyperparameters) -> Result<Self> {
        hp.validate()?;
        let inv_l2 = hp.inverse_sq_lengthscales();
        if inputs.is_empty() {
            return Ok(OutputGp {
                hp,
                inv_l2,
                chol: None,
                weights: DVector::zeros(0),
                quad_form: 0.0,
                info_gain: 0.0,
            });
        }
        let chol = factorize(gram(inputs, &hp), &hp).ok_or_else(|| {
            PursuitError::IllConditionedModel(format!(
                "Gram matrix of {} points not positive definite for {hp:?}",
                inputs.len()
            ))
        })?;
        let weights = chol.solve(&y);
        let quad_form = y.dot(&weights);
        let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let info_gain = 0.5 * (log_det - inputs.len() as f64 * hp.noise_variance().ln());
        Ok(OutputGp {
            hp,
            inv_l2,
            chol: Some(chol),
            weights,
            quad_form,
            info_gain: info_gain.max(0.0),
        })
    }

    fn cross_covariance(&self, inputs: &[Vec6], x: &Vec6) -> DVector<f64> {
        let sf2 = self.hp.signal_variance();
        DVector::from_iterator(
            inputs.len(),
            inputs.iter().map(|xi| kernel_with(xi, x, sf2, &self.inv_l2)),
        )
    }

    fn mean_from(&self, k_star: &DVector<f64>) -> f64 {
        if self.chol.is_none() {
            0.0
        } else {
            k_star.dot(&self.weights)
        }
    }

    fn variance_from(&self, k_star: &DVector<f64>) -> f64 {
        let sf2 = self.hp.signal_variance();
        match &self.chol {
            None => sf2,
            Some(chol) => {
                let l = chol.l_dirty();
                let v = l
                    .solve_lower_triangular(k_star)
                    .unwrap_or_else(|| DVector::zeros(k_star.len()));
                (sf2 - v.norm_squared()).clamp(f64::EPSILON * sf2, sf2)
            }
        }
    }
}

/// Posterior mean and diagonal posterior variance at one input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub mean: Vec6,
    pub variance: Vec6,
}

impl Posterior {
    pub fn std(&self) -> Vec6 {
        self.variance.map(f64::sqrt)
    }
}

/// The GP model of one motion profile.
#[derive(Debug, Clone)]
pub struct GpModel {
    dataset: Dataset,
    outputs: Vec<OutputGp>,
    beta: Vec6,
    alpha: Vec6,
    sigma_bar: f64,
    delta: f64,
}

impl GpModel {
    /// Builds the per-output factorizations. `β` starts at zero, `ᾱ` at `e₂`
    /// and `Σ̄` at one until set explicitly.
    pub fn new(dataset: Dataset, hyperparameters: [Hyperparameters; OUTPUTS]) -> Result<Self> {
        let outputs = (0..OUTPUTS)
            .map(|i| {
                let y = DVector::from_vec(dataset.output_column(i));
                OutputGp::build(&dataset.inputs, y, hyperparameters[i])
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GpModel {
            dataset,
            outputs,
            beta: Vec6::zeros(),
            alpha: Vec6::new(0.0, 1.0, 0.0, 0.0, 0.0, 0.0),
            sigma_bar: 1.0,
            delta: 0.05,
        })
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn hyperparameters(&self) -> [Hyperparameters; OUTPUTS] {
        std::array::from_fn(|i| self.outputs[i].hp)
    }

    /// Log marginal likelihood of each output under its own hyperparameters.
    pub fn log_marginal_likelihoods(&self) -> [Option<f64>; OUTPUTS] {
        std::array::from_fn(|i| {
            let y = DVector::from_vec(self.dataset.output_column(i));
            log_marginal_likelihood(&self.dataset.inputs, &y, &self.outputs[i].hp)
        })
    }

    pub fn beta(&self) -> &Vec6 {
        &self.beta
    }

    pub fn alpha(&self) -> &Vec6 {
        &self.alpha
    }

    pub fn sigma_bar(&self) -> f64 {
        self.sigma_bar
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn set_beta(&mut self, beta: Vec6, delta: f64) {
        self.beta = beta;
        self.delta = delta;
    }

    pub fn set_switching_weights(&mut self, alpha: Vec6, sigma_bar: f64) -> Result<()> {
        if !(sigma_bar > 0.0 && sigma_bar.is_finite()) {
            return Err(PursuitError::InvalidArgument(format!(
                "normalization factor must be positive, got {sigma_bar}"
            )));
        }
        self.alpha = alpha;
        self.sigma_bar = sigma_bar;
        Ok(())
    }

    pub fn posterior(&self, x: &Vec6) -> Posterior {
        let mut mean = Vec6::zeros();
        let mut variance = Vec6::zeros();
        for (i, out) in self.outputs.iter().enumerate() {
            let ks = out.cross_covariance(&self.dataset.inputs, x);
            mean[i] = out.mean_from(&ks);
            variance[i] = out.variance_from(&ks);
        }
        Posterior { mean, variance }
    }

    pub fn mean(&self, x: &Vec6) -> Vec6 {
        Vec6::from_fn(|i, _| {
            let out = &self.outputs[i];
            out.mean_from(&out.cross_covariance(&self.dataset.inputs, x))
        })
    }

    /// `‖wᵀ Σ^{1/2}(x)‖`, skipping outputs with zero weight.
    pub fn weighted_std(&self, x: &Vec6, weights: &Vec6) -> f64 {
        let mut acc = 0.0;
        for (i, out) in self.outputs.iter().enumerate() {
            if weights[i] == 0.0 {
                continue;
            }
            let var = out.variance_from(&out.cross_covariance(&self.dataset.inputs, x));
            acc += weights[i] * weights[i] * var;
        }
        acc.sqrt()
    }

    /// `‖ᾱᵀ Σ^{1/2}(x)‖ / Σ̄`, the quantity minimized by the switching estimator.
    pub fn normalized_uncertainty(&self, x: &Vec6) -> f64 {
        self.weighted_std(x, &self.alpha) / self.sigma_bar
    }

    /// `yᵢᵀ (K + σᵢ²I)⁻¹ yᵢ` per output; the square of the RKHS-norm surrogate.
    pub fn rkhs_norm_sq_estimates(&self) -> Vec6 {
        Vec6::from_fn(|i, _| self.outputs[i].quad_form)
    }

    pub fn rkhs_norm_estimates(&self) -> Vec6 {
        self.rkhs_norm_sq_estimates().map(|v| v.max(0.0).sqrt())
    }

    /// `½ log det(I + σᵢ⁻² K)` per output, standing in for the maximum
    /// information gain.
    pub fn information_gain(&self) -> Vec6 {
        Vec6::from_fn(|i, _| self.outputs[i].info_gain)
    }

    /// Per-output Lipschitz constants `σ_f √λ_max(Λ) ‖μᵢ‖_k` of the posterior
    /// mean, using the RKHS-norm surrogate (which upper-bounds the norm of
    /// the mean itself).
    pub fn mean_lipschitz_bound(&self) -> Vec6 {
        let norms = self.rkhs_norm_estimates();
        Vec6::from_fn(|i, _| {
            let hp = &self.outputs[i].hp;
            hp.signal_std * hp.lambda_max().sqrt() * norms[i]
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), &self.to_file())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mf: ModelFile = serde_json::from_reader(std::io::BufReader::new(file))?;
        Self::from_file(mf)
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            format: MODEL_FORMAT.to_string(),
            hyperparameters: self.hyperparameters().to_vec(),
            delta: self.delta,
            beta: self.beta,
            alpha: self.alpha,
            sigma_bar: self.sigma_bar,
            dataset: self.dataset.clone(),
        }
    }

    pub fn from_file(mf: ModelFile) -> Result<Self> {
        if mf.format != MODEL_FORMAT {
            return Err(PursuitError::Format(format!(
                "unknown model format '{}'",
                mf.format
            )));
        }
        let hps: [Hyperparameters; OUTPUTS] = mf.hyperparameters.try_into().map_err(|v: Vec<_>| {
            PursuitError::Format(format!("expected 6 hyperparameter sets, found {}", v.len()))
        })?;
        let dataset = Dataset::new(mf.dataset.inputs, mf.dataset.outputs)?;
        let mut model = GpModel::new(dataset, hps)?;
        model.set_beta(mf.beta, mf.delta);
        model.set_switching_weights(mf.alpha, mf.sigma_bar)?;
        Ok(model)
    }
}

/// On-disk model: hyperparameters, bound coefficients, switching weights and
/// the embedded training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format: String,
    pub hyperparameters: Vec<Hyperparameters>,
    pub delta: f64,
    pub beta: Vec6,
    pub alpha: Vec6,
    pub sigma_bar: f64,
    pub dataset: Dataset,
}

/// `√(2‖V‖²_k + 300 γ log³((M + 1)/δ))` for one output.
pub fn beta_coefficient(rkhs_norm: f64, info_gain: f64, num_points: usize, delta: f64) -> f64 {
    let l = ((num_points as f64 + 1.0) / delta).ln();
    (2.0 * rkhs_norm * rkhs_norm + 300.0 * info_gain * l * l * l).sqrt()
}

/// High-probability scaling `β` of the model error bound.
pub fn beta(model: &GpModel, delta: f64, rkhs_norm_estimate: &Vec6) -> Result<Vec6> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(PursuitError::InvalidArgument(format!(
            "δ must lie in (0, 1), got {delta}"
        )));
    }
    let gamma = model.information_gain();
    let m = model.dataset().len();
    Ok(Vec6::from_fn(|i, _| {
        beta_coefficient(rkhs_norm_estimate[i], gamma[i], m, delta)
    }))
}

/// `Σ̄ = max_x ‖αᵀ Σ^{1/2}(x)‖` over the supplied samples of the field.
pub fn normalization_factor(model: &GpModel, alpha: &Vec6, domain_samples: &[Vec6]) -> Result<f64> {
    if domain_samples.is_empty() {
        return Err(PursuitError::InvalidArgument(
            "normalization needs at least one domain sample".into(),
        ));
    }
    let max = domain_samples
        .iter()
        .map(|x| model.weighted_std(x, alpha))
        .fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(PursuitError::InvalidArgument(
            "normalization factor is zero; α selects no output".into(),
        ));
    }
    Ok(max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn hp(l: f64, sf: f64, sn: f64) -> [Hyperparameters; 6] {
        [Hyperparameters::isotropic(l, sf, sn); 6]
    }

    #[test]
    fn kernel_values() {
        let h = Hyperparameters::isotropic(1.0, 1.0, 0.1);
        let x = Vec6::new(0.3, -1.0, 2.0, 0.0, 0.5, 0.1);
        assert_eq!(kernel(&x, &x, &h), 1.0);
        let x2 = x + Vec6::new(1.0, 1.0, 0.0, 0.0, 0.0, 0.0);
        assert_relative_eq!(kernel(&x, &x2, &h), (-1.0f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(kernel(&x, &x2, &h), 0.36787944117144233, epsilon = 1e-15);
        assert_eq!(kernel(&x, &x2, &h), kernel(&x2, &x, &h));
    }

    #[test]
    fn prior_on_empty_data() {
        let m = GpModel::new(Dataset::empty(), hp(1.0, 1.5, 0.1)).unwrap();
        let p = m.posterior(&Vec6::repeat(0.4));
        assert_eq!(p.mean, Vec6::zeros());
        assert_eq!(p.variance, Vec6::repeat(2.25));
    }

    #[test]
    fn single_point_closed_form() {
        let (sf, sn) = (1.3, 0.2);
        let x = Vec6::new(0.1, 0.2, 0.0, 0.0, 0.0, 0.3);
        let y = Vec6::new(1.0, -2.0, 0.5, 0.0, 3.0, 0.25);
        let d = Dataset::new(vec![x], vec![y]).unwrap();
        let m = GpModel::new(d, hp(0.7, sf, sn)).unwrap();
        let p = m.posterior(&x);
        let sf2 = sf * sf;
        // jitter enters the diagonal exactly as in `factorize`
        let denom = sf2 + sn * sn + JITTER * sf2;
        for i in 0..6 {
            assert_relative_eq!(p.mean[i], sf2 / denom * y[i], epsilon = 1e-12);
            assert_relative_eq!(p.variance[i], sf2 - sf2 * sf2 / denom, epsilon = 1e-12);
        }
    }

    #[test]
    fn far_query_reverts_to_prior() {
        let d = Dataset::new(vec![Vec6::zeros()], vec![Vec6::repeat(2.0)]).unwrap();
        let m = GpModel::new(d, hp(0.5, 1.0, 0.01)).unwrap();
        // Mahalanobis distance 12
        let p = m.posterior(&Vec6::new(6.0, 0.0, 0.0, 0.0, 0.0, 0.0));
        assert!(p.mean.norm() < 1e-10 * 2.0 * 6f64.sqrt());
        for v in p.variance.iter() {
            assert!((v - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn beta_formula_and_monotonicity() {
        let d = Dataset::new(
            (0..30).map(|k| Vec6::new(k as f64 * 0.2, 0.0, 0.0, 0.0, 0.0, 0.0)).collect(),
            (0..30).map(|k| Vec6::repeat((k as f64 * 0.2).sin())).collect(),
        )
        .unwrap();
        let m = GpModel::new(d, hp(0.8, 1.0, 0.01)).unwrap();
        let rkhs = Vec6::new(0.5, 1.0, 1.5, 2.0, 2.5, 3.0);
        let b = beta(&m, 0.05, &rkhs).unwrap();
        let gamma = m.information_gain();
        for i in 0..6 {
            let l = (31.0f64 / 0.05).ln();
            let expect = (2.0 * rkhs[i] * rkhs[i] + 300.0 * gamma[i] * l.powi(3)).sqrt();
            assert_relative_eq!(b[i], expect, epsilon = 1e-12);
        }
        let tight = beta(&m, 0.01, &rkhs).unwrap();
        let loose = beta(&m, 0.1, &rkhs).unwrap();
        assert!(tight.iter().zip(loose.iter()).all(|(a, b)| a >= b));
        assert!(beta(&m, 1.0, &rkhs).is_err());
    }

    #[test]
    fn beta_vanishes_without_information() {
        let m = GpModel::new(Dataset::empty(), hp(1.0, 1.0, 0.1)).unwrap();
        let b = beta(&m, 1.0 - 1e-12, &Vec6::zeros()).unwrap();
        assert_eq!(b, Vec6::zeros());
    }

    #[test]
    fn normalization_on_prior_model() {
        let m = GpModel::new(Dataset::empty(), hp(1.0, 0.7, 0.1)).unwrap();
        let alpha = Vec6::new(1.0, 2.0, 0.0, 0.0, 2.0, 0.0);
        let s = normalization_factor(&m, &alpha, &[Vec6::zeros(), Vec6::repeat(1.0)]).unwrap();
        assert_relative_eq!(s, 0.7 * 3.0, epsilon = 1e-12);
        assert!(normalization_factor(&m, &alpha, &[]).is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let d = Dataset::new(vec![Vec6::zeros(), Vec6::repeat(0.5)], vec![Vec6::repeat(1.0), Vec6::repeat(-1.0)])
            .unwrap();
        let mut m = GpModel::new(d, hp(0.9, 1.1, 0.05)).unwrap();
        m.set_beta(Vec6::repeat(3.0), 0.05);
        m.set_switching_weights(Vec6::new(0.0, 1.0, 0.0, 0.0, 0.0, 0.0), 0.8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.save(&path).unwrap();
        let back = GpModel::load(&path).unwrap();
        assert_eq!(back.to_file(), m.to_file());
        let x = Vec6::repeat(0.2);
        assert_eq!(back.posterior(&x), m.posterior(&x));
    }
}
