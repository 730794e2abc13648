//! Evidence maximization by multi-start compass search in log-parameter space.
//!
//! A fit job covers a group of outputs that share the lengthscales and the
//! signal standard deviation; every output keeps its own noise level. The
//! job objective is the sum of the group's log marginal likelihoods.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{factorize, Dataset, Hyperparameters, OUTPUTS};
use crate::error::{PursuitError, Result};
use crate::geometry::Vec6;

/// Lengthscale given to input dimensions that never vary in the data.
const FROZEN_LENGTHSCALE: f64 = 1.0;

/// How hyperparameters are tied across the six outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sharing {
    /// One `Λ` and `σ_f` per model, noise per output.
    Shared,
    /// Independent hyperparameters for every output.
    #[default]
    PerOutput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub sharing: Sharing,
    /// Known noise std per output; fitted when `None`.
    pub fixed_noise: Option<[f64; OUTPUTS]>,
    pub restarts: usize,
    pub max_sweeps: usize,
    pub initial_step: f64,
    pub min_step: f64,
    pub lengthscale_bounds: (f64, f64),
    pub signal_bounds: (f64, f64),
    pub noise_bounds: (f64, f64),
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            sharing: Sharing::default(),
            fixed_noise: None,
            restarts: 8,
            max_sweeps: 200,
            initial_step: 1.0,
            min_step: 1e-3,
            lengthscale_bounds: (0.05, 100.0),
            signal_bounds: (1e-4, 100.0),
            noise_bounds: (1e-6, 10.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub hyperparameters: [Hyperparameters; OUTPUTS],
    /// Log marginal likelihood of each output at the returned values.
    pub log_likelihoods: [f64; OUTPUTS],
    /// Best objective of each job (one job when shared, six otherwise).
    pub objectives: Vec<f64>,
    /// Objective at every restart's starting point, per job.
    pub initial_objectives: Vec<Vec<f64>>,
}

/// `−½ yᵀ(K + σ²I)⁻¹y − ½ log det(K + σ²I) − (M/2) log 2π`, or `None` when
/// the Gram matrix cannot be factorized.
pub fn log_marginal_likelihood(inputs: &[Vec6], y: &DVector<f64>, hp: &Hyperparameters) -> Option<f64> {
    let k = super::gram(inputs, hp);
    lml_from_gram(k, y, hp)
}

fn lml_from_gram(k: DMatrix<f64>, y: &DVector<f64>, hp: &Hyperparameters) -> Option<f64> {
    let m = y.len() as f64;
    let chol = factorize(k, hp)?;
    let alpha = chol.solve(y);
    let half_log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
    let v = -0.5 * y.dot(&alpha) - half_log_det - 0.5 * m * (2.0 * std::f64::consts::PI).ln();
    v.is_finite().then_some(v)
}

/// Evidence maximization with the default options.
pub fn fit_hyperparameters(data: &Dataset, seed: u64) -> Result<[Hyperparameters; OUTPUTS]> {
    fit_with_options(data, seed, &FitOptions::default()).map(|r| r.hyperparameters)
}

/// Squared input differences per active dimension, reused across evaluations.
struct Problem<'a> {
    sq_diffs: &'a [(usize, DMatrix<f64>)],
    /// Output columns fitted jointly.
    ys: Vec<DVector<f64>>,
    /// Known noise per output column, `None` where it is fitted.
    noise: Vec<Option<f64>>,
    m: usize,
}

impl Problem<'_> {
    /// Noise-free Gram matrix for the shared part of `params`.
    fn gram(&self, params: &Params) -> DMatrix<f64> {
        let hp = &params.hps[0];
        let sf2 = hp.signal_variance();
        let inv: Vec<f64> = self
            .sq_diffs
            .iter()
            .map(|(d, _)| 1.0 / (hp.lengthscales[*d] * hp.lengthscales[*d]))
            .collect();
        let mut k = DMatrix::zeros(self.m, self.m);
        for j in 0..self.m {
            k[(j, j)] = sf2;
            for i in (j + 1)..self.m {
                let mut q = 0.0;
                for (s, (_, sq)) in self.sq_diffs.iter().enumerate() {
                    q += sq[(i, j)] * inv[s];
                }
                let v = sf2 * (-0.5 * q).exp();
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }

    fn per_output(&self, params: &Params) -> Vec<f64> {
        let k = self.gram(params);
        self.ys
            .iter()
            .zip(&params.hps)
            .map(|(y, hp)| lml_from_gram(k.clone(), y, hp).unwrap_or(f64::NEG_INFINITY))
            .collect()
    }

    fn objective(&self, params: &Params) -> f64 {
        self.per_output(params).iter().sum()
    }
}

/// Log-parameter vector: active log-lengthscales, log σ_f, then one log σ_n
/// per output of the job.
#[derive(Debug, Clone)]
struct Params {
    theta: Vec<f64>,
    hps: Vec<Hyperparameters>,
}

impl Params {
    fn from_theta(theta: Vec<f64>, active: &[usize], noise: &[Option<f64>]) -> Self {
        let mut shared = Hyperparameters {
            lengthscales: [FROZEN_LENGTHSCALE; 6],
            signal_std: 1.0,
            noise_std: 1.0,
        };
        for (k, &d) in active.iter().enumerate() {
            shared.lengthscales[d] = theta[k].exp();
        }
        let n = active.len();
        shared.signal_std = theta[n].exp();
        let hps = noise
            .iter()
            .enumerate()
            .map(|(o, fixed)| Hyperparameters {
                noise_std: fixed.unwrap_or_else(|| theta[n + 1 + o].exp()),
                ..shared
            })
            .collect();
        Params { theta, hps }
    }
}

fn bounds_for(opts: &FitOptions, n_active: usize, fitted_noise: usize) -> Vec<(f64, f64)> {
    let ln = |(a, b): (f64, f64)| (a.ln(), b.ln());
    let mut b = vec![ln(opts.lengthscale_bounds); n_active];
    b.push(ln(opts.signal_bounds));
    b.extend(std::iter::repeat_n(ln(opts.noise_bounds), fitted_noise));
    b
}

fn compass_search(
    problem: &Problem,
    start: Vec<f64>,
    active: &[usize],
    bounds: &[(f64, f64)],
    opts: &FitOptions,
) -> (Params, f64, f64) {
    let mut best = Params::from_theta(start, active, &problem.noise);
    let mut best_val = problem.objective(&best);
    let initial = best_val;
    let mut step = opts.initial_step;
    for _ in 0..opts.max_sweeps {
        if step < opts.min_step {
            break;
        }
        let mut improved = false;
        for k in 0..best.theta.len() {
            for dir in [1.0, -1.0] {
                let mut theta = best.theta.clone();
                theta[k] = (theta[k] + dir * step).clamp(bounds[k].0, bounds[k].1);
                if theta[k] == best.theta[k] {
                    continue;
                }
                let cand = Params::from_theta(theta, active, &problem.noise);
                let val = problem.objective(&cand);
                if val > best_val + 1e-12 {
                    best = cand;
                    best_val = val;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (best, best_val, initial)
}

/// Input spread per active dimension, output scale for `σ_f`, a tenth of
/// each output's scale for its noise.
fn initial_theta(data: &Dataset, problem: &Problem, active: &[usize], bounds: &[(f64, f64)]) -> Vec<f64> {
    let m = data.len() as f64;
    let mut theta: Vec<f64> = active
        .iter()
        .map(|&d| {
            let mean = data.inputs.iter().map(|x| x[d]).sum::<f64>() / m;
            let var = data.inputs.iter().map(|x| (x[d] - mean).powi(2)).sum::<f64>() / m;
            var.sqrt().max(1e-3).ln()
        })
        .collect();
    let rms: Vec<f64> = problem.ys.iter().map(|y| (y.norm_squared() / m).sqrt().max(1e-3)).collect();
    theta.push(rms.iter().cloned().fold(0.0, f64::max).ln());
    theta.extend(
        rms.iter()
            .zip(&problem.noise)
            .filter(|(_, fixed)| fixed.is_none())
            .map(|(r, _)| (0.1 * r).max(1e-4).ln()),
    );
    for (t, b) in theta.iter_mut().zip(bounds) {
        *t = t.clamp(b.0, b.1);
    }
    theta
}

fn restart_rng(seed: u64, job: usize, restart: usize) -> ChaCha8Rng {
    let stream = ((job as u64) << 32) | restart as u64;
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ stream)
}

/// Fits all six outputs. Jobs and restarts run in parallel; the result
/// depends only on `data`, `seed` and `opts`.
pub fn fit_with_options(data: &Dataset, seed: u64, opts: &FitOptions) -> Result<FitReport> {
    if data.len() < 2 {
        return Err(PursuitError::InvalidArgument(format!(
            "fitting needs at least 2 points, got {}",
            data.len()
        )));
    }
    if opts.restarts == 0 {
        return Err(PursuitError::InvalidArgument("need at least one restart".into()));
    }
    let m = data.len();
    let active: Vec<usize> = (0..6)
        .filter(|&d| {
            let (lo, hi) = data
                .inputs
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x[d]), hi.max(x[d])));
            hi - lo > 1e-12
        })
        .collect();
    let sq_diffs: Vec<(usize, DMatrix<f64>)> = active
        .iter()
        .map(|&d| {
            (
                d,
                DMatrix::from_fn(m, m, |i, j| (data.inputs[i][d] - data.inputs[j][d]).powi(2)),
            )
        })
        .collect();
    let groups: Vec<Vec<usize>> = match opts.sharing {
        Sharing::Shared => vec![(0..OUTPUTS).collect()],
        Sharing::PerOutput => (0..OUTPUTS).map(|o| vec![o]).collect(),
    };
    let columns: Vec<DVector<f64>> = (0..OUTPUTS).map(|o| DVector::from_vec(data.output_column(o))).collect();

    if let Some(noise) = &opts.fixed_noise {
        if noise.iter().any(|n| !(n.is_finite() && *n > 0.0)) {
            return Err(PursuitError::InvalidArgument(format!("fixed noise must be positive, got {noise:?}")));
        }
    }
    let make_problem = |g: usize| Problem {
        sq_diffs: &sq_diffs,
        ys: groups[g].iter().map(|&o| columns[o].clone()).collect(),
        noise: groups[g].iter().map(|&o| opts.fixed_noise.map(|n| n[o])).collect(),
        m,
    };
    let jobs: Vec<(usize, usize)> = (0..groups.len())
        .flat_map(|g| (0..opts.restarts).map(move |r| (g, r)))
        .collect();
    let results: Vec<(Params, f64, f64)> = jobs
        .par_iter()
        .map(|&(g, r)| {
            let problem = make_problem(g);
            let fitted = problem.noise.iter().filter(|n| n.is_none()).count();
            let bounds = bounds_for(opts, active.len(), fitted);
            let mut start = initial_theta(data, &problem, &active, &bounds);
            if r > 0 {
                let mut rng = restart_rng(seed, g, r);
                for (t, b) in start.iter_mut().zip(&bounds) {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *t = (*t + z).clamp(b.0, b.1);
                }
            }
            compass_search(&problem, start, &active, &bounds, opts)
        })
        .collect();

    let mut best: Vec<Option<(Params, f64)>> = vec![None; groups.len()];
    let mut initial_objectives = vec![Vec::with_capacity(opts.restarts); groups.len()];
    for (&(g, _), (params, val, init)) in jobs.iter().zip(results) {
        initial_objectives[g].push(init);
        if best[g].as_ref().is_none_or(|(_, b)| val > *b) {
            best[g] = Some((params, val));
        }
    }
    let mut hyperparameters = [Hyperparameters::default(); OUTPUTS];
    let mut log_likelihoods = [f64::NEG_INFINITY; OUTPUTS];
    let mut objectives = Vec::with_capacity(groups.len());
    for (g, outputs) in groups.iter().enumerate() {
        let (params, val) = best[g].take().expect("every job has at least one restart");
        if !val.is_finite() {
            return Err(PursuitError::FitFailure(format!(
                "outputs {:?}: no restart produced a factorizable Gram matrix (M = {m}, starts {:?})",
                outputs.iter().map(|o| o + 1).collect::<Vec<_>>(),
                initial_objectives[g]
            )));
        }
        let problem = make_problem(g);
        for ((&o, hp), ll) in outputs.iter().zip(&params.hps).zip(problem.per_output(&params)) {
            hyperparameters[o] = *hp;
            log_likelihoods[o] = ll;
        }
        objectives.push(val);
    }
    Ok(FitReport {
        hyperparameters,
        log_likelihoods,
        objectives,
        initial_objectives,
    })
}
