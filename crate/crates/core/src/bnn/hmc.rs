//! Hamiltonian Monte Carlo with an identity mass matrix, multiplicative
//! step-size adaptation and Monte-Carlo EM hyperparameter updates during burn-in.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mlp::{log_joint_and_grad, mlp_forward, MlpArch};
use super::samples::FunctionSampleSet;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded_rng};

/// Hyperparameter floor for both the prior and noise variances.
pub const MCEM_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HmcConfig {
    pub n_chains: usize,
    pub burn_in: usize,
    pub leapfrog_steps: usize,
    pub initial_step_size: f64,
    pub thin: usize,
    pub target_samples: usize,
    pub acceptance_window: [f64; 2],
    /// Iterations per step-size adaptation block and per MC-EM update.
    pub adapt_interval: usize,
    pub initial_prior_variance: f64,
    pub initial_noise_variance: f64,
    /// Keeps σ_n² fixed instead of updating it by MC-EM.
    pub fixed_noise_variance: Option<f64>,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self {
            n_chains: 4,
            burn_in: 2000,
            leapfrog_steps: 5,
            initial_step_size: 0.01,
            thin: 20,
            target_samples: 250,
            acceptance_window: [0.6, 0.9],
            adapt_interval: 10,
            initial_prior_variance: 1.0,
            initial_noise_variance: 0.1,
            fixed_noise_variance: None,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_chains", self.n_chains),
            ("burn_in", self.burn_in),
            ("leapfrog_steps", self.leapfrog_steps),
            ("thin", self.thin),
            ("target_samples", self.target_samples),
            ("adapt_interval", self.adapt_interval),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be >= 1")));
            }
        }
        let [lo, hi] = self.acceptance_window;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(Error::InvalidArgument(format!("acceptance window must satisfy 0 < low < high < 1, got [{lo}, {hi}]")));
        }
        if !(self.initial_step_size > 0.0 && self.initial_prior_variance > 0.0 && self.initial_noise_variance > 0.0) {
            return Err(Error::InvalidArgument("step size and initial variances must be > 0".into()));
        }
        if matches!(self.fixed_noise_variance, Some(v) if v <= 0.0) {
            return Err(Error::InvalidArgument("fixed noise variance must be > 0".into()));
        }
        Ok(())
    }
}

/// An unnormalized log density with gradient.
pub trait LogDensity {
    fn dim(&self) -> usize;
    fn log_density_and_grad(&self, q: &[f64]) -> (f64, Vec<f64>);

    /// Called with the states visited in the last adaptation block of burn-in.
    fn burn_in_update(&mut self, _recent: &[Vec<f64>]) {}
}

/// Per-chain summary.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    /// Mean acceptance probability after burn-in.
    pub acceptance_rate: f64,
    pub final_step_size: f64,
    pub prior_variance: f64,
    pub noise_variance: f64,
}

/// Result of one leapfrog trajectory plus Metropolis correction.
pub struct Transition {
    pub accepted: bool,
    pub accept_prob: f64,
}

/// One HMC transition from `q` (with cached log density and gradient), updated in place.
pub fn hmc_transition<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &T,
    q: &mut Vec<f64>,
    logp: &mut f64,
    grad: &mut Vec<f64>,
    step_size: f64,
    leapfrog_steps: usize,
    rng: &mut R,
) -> Transition {
    let p0: Vec<f64> = (0..q.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let mut qn = q.clone();
    let mut p = p0.clone();
    let mut g = grad.clone();
    let mut lp = *logp;
    for _ in 0..leapfrog_steps {
        for i in 0..p.len() {
            p[i] += 0.5 * step_size * g[i];
            qn[i] += step_size * p[i];
        }
        (lp, g) = target.log_density_and_grad(&qn);
        for i in 0..p.len() {
            p[i] += 0.5 * step_size * g[i];
        }
    }
    let kin = |p: &[f64]| 0.5 * p.iter().map(|v| v * v).sum::<f64>();
    let log_ratio = (lp - kin(&p)) - (*logp - kin(&p0));
    let accept_prob = if log_ratio.is_nan() { 0.0 } else { log_ratio.exp().min(1.0) };
    let accepted = rng.random::<f64>() < accept_prob;
    if accepted {
        *q = qn;
        *logp = lp;
        *grad = g;
    }
    Transition { accepted, accept_prob }
}

/// Runs one chain and returns the thinned post-burn-in states with diagnostics.
pub fn run_chain<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &mut T,
    init: Vec<f64>,
    config: &HmcConfig,
    chain: usize,
    rng: &mut R,
) -> Result<(Vec<Vec<f64>>, ChainDiagnostics)> {
    config.validate()?;
    let [lo, hi] = config.acceptance_window;
    let mut q = init;
    let (mut logp, mut grad) = target.log_density_and_grad(&q);
    let mut step = config.initial_step_size;
    let mut entered = false;
    let mut block_acc = 0.0;
    let mut last_block = f64::NAN;
    let mut recent = Vec::with_capacity(config.adapt_interval);
    for it in 1..=config.burn_in {
        let t = hmc_transition(&*target, &mut q, &mut logp, &mut grad, step, config.leapfrog_steps, rng);
        block_acc += t.accept_prob;
        recent.push(q.clone());
        if it % config.adapt_interval == 0 {
            let rate = block_acc / config.adapt_interval as f64;
            last_block = rate;
            if rate > hi {
                step *= 1.1;
            } else if rate < lo {
                step *= 0.9;
            } else {
                entered = true;
            }
            target.burn_in_update(&recent);
            (logp, grad) = target.log_density_and_grad(&q);
            recent.clear();
            block_acc = 0.0;
        }
    }
    if !entered {
        return Err(Error::AdaptationFailed { chain, acceptance: last_block });
    }
    let mut samples = Vec::with_capacity(config.target_samples);
    let mut acc = 0.0;
    let mut iters = 0usize;
    while samples.len() < config.target_samples {
        let t = hmc_transition(&*target, &mut q, &mut logp, &mut grad, step, config.leapfrog_steps, rng);
        acc += t.accept_prob;
        iters += 1;
        if iters.is_multiple_of(config.thin) {
            samples.push(q.clone());
        }
    }
    let diag = ChainDiagnostics {
        acceptance_rate: acc / iters as f64,
        final_step_size: step,
        prior_variance: f64::NAN,
        noise_variance: f64::NAN,
    };
    Ok((samples, diag))
}

/// Regression data for the sample-based models.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub x: &'a DMatrix<f64>,
    pub y: &'a DVector<f64>,
}

/// Posterior of MLP weights under `N(0, η I)` prior and Gaussian noise, with
/// `(η, σ_n²)` refitted by MC-EM at every burn-in update.
pub struct BnnPosterior<'a> {
    pub arch: &'a MlpArch,
    pub data: TrainData<'a>,
    pub prior_variance: f64,
    pub noise_variance: f64,
    pub fixed_noise: bool,
    /// Average log joint at the samples of each MC-EM update.
    pub em_trace: Vec<f64>,
}

impl LogDensity for BnnPosterior<'_> {
    fn dim(&self) -> usize {
        self.arch.n_weights()
    }

    fn log_density_and_grad(&self, q: &[f64]) -> (f64, Vec<f64>) {
        log_joint_and_grad(self.arch, q, self.data.x, self.data.y, self.prior_variance, self.noise_variance)
            .expect("shapes checked when the posterior was built")
    }

    fn burn_in_update(&mut self, recent: &[Vec<f64>]) {
        let (eta, s2) = mcem_update(self.arch, recent, self.data).expect("shapes checked");
        self.prior_variance = eta;
        if !self.fixed_noise {
            self.noise_variance = s2;
        }
        let avg = recent.iter().map(|w| self.log_density_and_grad(w).0).sum::<f64>() / recent.len() as f64;
        if let Some(prev) = self.em_trace.last() {
            if avg < *prev {
                log::debug!("MC-EM average log joint decreased: {prev:.4} -> {avg:.4}");
            }
        }
        self.em_trace.push(avg);
    }
}

/// Maximum-likelihood `(η, σ_n²)` under the given weight samples.
pub fn mcem_update(arch: &MlpArch, samples: &[Vec<f64>], data: TrainData<'_>) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("MC-EM needs at least one weight sample".into()));
    }
    let mut eta = 0.0;
    let mut s2 = 0.0;
    for w in samples {
        eta += w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        let f = mlp_forward(arch, w, data.x)?;
        s2 += (data.y - f).norm_squared() / data.y.len() as f64;
    }
    let m = samples.len() as f64;
    Ok(((eta / m).max(MCEM_FLOOR), (s2 / m).max(MCEM_FLOOR)))
}

/// Samples the BNN posterior with `config.n_chains` independent chains and
/// evaluates the retained networks at `xq`. Samples are ordered by chain.
pub fn hmc_sample(
    arch: &MlpArch,
    data: TrainData<'_>,
    config: &HmcConfig,
    xq: &DMatrix<f64>,
    seed: u64,
) -> Result<(FunctionSampleSet, Vec<ChainDiagnostics>)> {
    config.validate()?;
    if arch.outputs() != 1 {
        return Err(Error::InvalidArgument("HMC needs a scalar-output network".into()));
    }
    crate::error::check_dim(data.x.nrows(), data.y.len())?;
    crate::error::check_dim(arch.input_dim(), data.x.ncols())?;
    crate::error::check_dim(arch.input_dim(), xq.ncols())?;
    let runs: Vec<Result<(Vec<DVector<f64>>, ChainDiagnostics)>> = (0..config.n_chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = seeded_rng(derive_seed(seed, c as u64));
            let mut target = BnnPosterior {
                arch,
                data,
                prior_variance: config.initial_prior_variance,
                noise_variance: config.fixed_noise_variance.unwrap_or(config.initial_noise_variance),
                fixed_noise: config.fixed_noise_variance.is_some(),
                em_trace: Vec::new(),
            };
            let init = arch.sample_weights(&mut rng, config.initial_prior_variance);
            let (ws, mut diag) = run_chain(&mut target, init, config, c, &mut rng)?;
            diag.prior_variance = target.prior_variance;
            diag.noise_variance = target.noise_variance;
            let fs = ws.iter().map(|w| mlp_forward(arch, w, xq)).collect::<Result<Vec<_>>>()?;
            Ok((fs, diag))
        })
        .collect();
    let mut rows = Vec::new();
    let mut diags = Vec::new();
    for r in runs {
        let (fs, d) = r?;
        rows.extend(fs);
        diags.push(d);
    }
    let noise = diags.iter().map(|d| d.noise_variance).sum::<f64>() / diags.len() as f64;
    let samples = DMatrix::from_fn(rows.len(), xq.nrows(), |i, j| rows[i][j]);
    Ok((FunctionSampleSet::new(samples, xq.clone(), noise, None)?, diags))
}
