//! Exact Gaussian-process regression.
//!
//! Hyperparameters are fitted by maximizing the log marginal likelihood with
//! Adam in log-parameter space (analytic gradients for RBF-ARD), from several
//! restarts run in parallel. The best iterate seen is kept, so a fit never ends
//! below its starting likelihood.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::gaussian::{cholesky, mvn_logpdf, CholFactor, MvnDist, SymMatrix, DEFAULT_JITTER_SCHEDULE};
use crate::kernels::{gram, gram_diag, gram_log_param_grads, gram_sym, KernelFamily, KernelSpec};
use crate::rng::{derive_seed, seeded_rng};

/// Minimum observation noise variance accepted by [`gp_fit`].
pub const NOISE_FLOOR: f64 = 1e-5;

/// A GP conditioned on training data.
#[derive(Clone, Debug)]
pub struct GpModel {
    kernel: KernelSpec,
    noise_variance: f64,
    x_train: DMatrix<f64>,
    y_train: DVector<f64>,
    chol: Option<CholFactor>,
    alpha: DVector<f64>,
}

/// Joint predictive distribution at query locations.
#[derive(Clone, Debug)]
pub struct GpPrediction {
    pub locations: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub cov: SymMatrix,
    pub includes_noise: bool,
}

impl GpPrediction {
    pub fn dist(&self) -> Result<MvnDist> {
        MvnDist::new(self.mean.clone(), &self.cov)
    }
}

impl GpModel {
    /// Conditions a GP prior on `(x, y)`. An empty training set gives the prior.
    pub fn new(kernel: KernelSpec, noise_variance: f64, x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        check_dim(x.nrows(), y.len())?;
        kernel.validate(Some(x.ncols()))?;
        if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise variance must be >= 0, got {noise_variance}")));
        }
        let (chol, alpha) = if x.nrows() == 0 {
            (None, DVector::zeros(0))
        } else {
            let k = gram_sym(&kernel, &x)?.add_diagonal(noise_variance);
            let chol = cholesky(&k, &DEFAULT_JITTER_SCHEDULE)?;
            let alpha = chol.solve(&y);
            (Some(chol), alpha)
        };
        Ok(Self { kernel, noise_variance, x_train: x, y_train: y, chol, alpha })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn x_train(&self) -> &DMatrix<f64> {
        &self.x_train
    }

    pub fn y_train(&self) -> &DVector<f64> {
        &self.y_train
    }

    /// Factor of `K_XX + σ_n² I` (None for an empty training set).
    pub fn chol(&self) -> Option<&CholFactor> {
        self.chol.as_ref()
    }

    pub fn n_train(&self) -> usize {
        self.x_train.nrows()
    }

    /// `log N(y_tr | 0, K_XX + σ_n² I)`.
    pub fn log_marginal_likelihood(&self) -> f64 {
        match &self.chol {
            None => 0.0,
            Some(chol) => {
                let dist = MvnDist::from_factor(DVector::zeros(self.n_train()), chol.clone())
                    .expect("factor matches training size");
                mvn_logpdf(&self.y_train, &dist).expect("dimensions agree")
            }
        }
    }

    /// Same conditioning with additional training points appended.
    pub fn with_extra_data(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Self> {
        check_dim(self.x_train.ncols(), x.ncols())?;
        let n = self.n_train();
        let xs = DMatrix::from_fn(n + x.nrows(), x.ncols(), |i, j| {
            if i < n { self.x_train[(i, j)] } else { x[(i - n, j)] }
        });
        let ys = DVector::from_fn(n + y.len(), |i, _| if i < n { self.y_train[i] } else { y[i - n] });
        Self::new(self.kernel.clone(), self.noise_variance, xs, ys)
    }

    /// Closed-form joint prediction; `σ_n² I` is added to the covariance iff
    /// `include_noise`.
    pub fn predict_joint(&self, xq: &DMatrix<f64>, include_noise: bool) -> Result<GpPrediction> {
        if xq.nrows() == 0 {
            return Err(Error::InvalidArgument("no query locations".into()));
        }
        check_dim(self.x_train.ncols(), xq.ncols())?;
        let kqq = gram_sym(&self.kernel, xq)?;
        let (mean, cov) = match &self.chol {
            None => (DVector::zeros(xq.nrows()), kqq.into_inner()),
            Some(chol) => {
                let kxq = gram(&self.kernel, &self.x_train, xq)?;
                let mean = kxq.transpose() * &self.alpha;
                let v = chol.solve_lower_mat(&kxq);
                (mean, kqq.into_inner() - v.transpose() * v)
            }
        };
        let mut cov = SymMatrix::symmetrize(cov)?;
        if include_noise {
            cov = cov.add_diagonal(self.noise_variance);
        }
        Ok(GpPrediction { locations: xq.clone(), mean, cov, includes_noise: include_noise })
    }

    /// Predictive mean and noise-free function variance, pointwise.
    pub fn predict_marginal(&self, xq: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        check_dim(self.x_train.ncols(), xq.ncols())?;
        let prior = gram_diag(&self.kernel, xq)?;
        match &self.chol {
            None => Ok((DVector::zeros(xq.nrows()), prior)),
            Some(chol) => {
                let kxq = gram(&self.kernel, &self.x_train, xq)?;
                let mean = kxq.transpose() * &self.alpha;
                let v = chol.solve_lower_mat(&kxq);
                let var = DVector::from_fn(xq.nrows(), |j, _| {
                    (prior[j] - v.column(j).norm_squared()).max(0.0)
                });
                Ok((mean, var))
            }
        }
    }
}

/// Settings for [`gp_fit`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpFitConfig {
    pub restarts: usize,
    pub budget: usize,
    pub learning_rate: f64,
    pub noise_floor: f64,
    pub seed: u64,
}

impl Default for GpFitConfig {
    fn default() -> Self {
        Self { restarts: 3, budget: 500, learning_rate: 0.05, noise_floor: NOISE_FLOOR, seed: 0 }
    }
}

/// Log marginal likelihood at the start and at the best iterate of a restart.
#[derive(Clone, Copy, Debug)]
pub struct RestartTrace {
    pub initial_log_ml: f64,
    pub best_log_ml: f64,
}

struct Objective<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    template: KernelSpec,
}

impl Objective<'_> {
    fn kernel(&self, p: &[f64]) -> KernelSpec {
        self.template.with_log_params(&p[..p.len() - 1])
    }

    /// Log-ML and its gradient in log-parameter space.
    fn value_and_grad(&self, p: &[f64]) -> Option<(f64, Vec<f64>)> {
        let kernel = self.kernel(p);
        let noise = p[p.len() - 1].exp();
        let k = gram_sym(&kernel, self.x).ok()?.add_diagonal(noise);
        let chol = cholesky(&k, &DEFAULT_JITTER_SCHEDULE).ok()?;
        let alpha = chol.solve(self.y);
        let n = self.y.len() as f64;
        let value = -0.5 * self.y.dot(&alpha) - 0.5 * chol.log_det()
            - 0.5 * n * (2.0 * std::f64::consts::PI).ln();
        let w = &alpha * alpha.transpose() - chol.inverse();
        let mut grad: Vec<f64> = gram_log_param_grads(&kernel, self.x)
            .ok()?
            .iter()
            .map(|dk| 0.5 * w.component_mul(dk).sum())
            .collect();
        grad.push(0.5 * noise * w.trace());
        value.is_finite().then_some((value, grad))
    }
}

fn column_sd(x: &DMatrix<f64>, j: usize) -> f64 {
    let c = x.column(j);
    let m = c.mean();
    (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / c.len() as f64).sqrt()
}

fn bounds(family: KernelFamily, d: usize, noise_floor: f64) -> Vec<(f64, f64)> {
    let mut b = match family {
        KernelFamily::RbfArd => {
            let mut b = vec![(1e-3f64.ln(), 1e3f64.ln()); d];
            b.push((1e-6f64.ln(), 1e6f64.ln()));
            b
        }
        KernelFamily::ReluLimit => vec![
            (1e-6f64.ln(), 1e6f64.ln()),
            (1e-6f64.ln(), 1e6f64.ln()),
            (1e-3f64.ln(), 1e3f64.ln()),
        ],
    };
    b.push((noise_floor.ln(), 1e3f64.ln()));
    b
}

fn initial_params(family: KernelFamily, x: &DMatrix<f64>, y: &DVector<f64>, noise_floor: f64) -> (KernelSpec, Vec<f64>) {
    let n = y.len() as f64;
    let ym = y.mean();
    let yvar = (y.iter().map(|v| (v - ym) * (v - ym)).sum::<f64>() / n).max(1e-6);
    let template = match family {
        KernelFamily::RbfArd => KernelSpec::rbf(
            (0..x.ncols())
                .map(|j| {
                    let sd = column_sd(x, j);
                    if sd > 0.0 { sd } else { 1.0 }
                })
                .collect(),
            yvar,
        ),
        KernelFamily::ReluLimit => KernelSpec::ReluLimit {
            weight_variance: yvar,
            bias_variance: 1.0,
            lengthscale: 1.0,
        },
    };
    let mut p = template.log_params();
    p.push((0.1 * yvar).max(noise_floor).ln());
    (template, p)
}

/// Fits kernel hyperparameters and noise variance by marginal-likelihood
/// maximization and returns the best restart.
pub fn gp_fit(x: &DMatrix<f64>, y: &DVector<f64>, family: KernelFamily, config: &GpFitConfig) -> Result<GpModel> {
    gp_fit_with_trace(x, y, family, config).map(|(m, _)| m)
}

pub fn gp_fit_with_trace(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    family: KernelFamily,
    config: &GpFitConfig,
) -> Result<(GpModel, Vec<RestartTrace>)> {
    check_dim(x.nrows(), y.len())?;
    if y.len() < 2 {
        return Err(Error::InvalidArgument("gp_fit needs at least two training points".into()));
    }
    if config.restarts == 0 {
        return Err(Error::InvalidArgument("restarts must be >= 1".into()));
    }
    let (template, base) = initial_params(family, x, y, config.noise_floor);
    let bounds = bounds(family, x.ncols(), config.noise_floor);
    let objective = Objective { x, y, template };

    let runs: Vec<Option<(f64, Vec<f64>, RestartTrace)>> = (0..config.restarts)
        .into_par_iter()
        .map(|r| {
            let mut p = base.clone();
            if r > 0 {
                let mut rng = seeded_rng(derive_seed(config.seed, r as u64));
                for v in p.iter_mut() {
                    *v += rng.random_range(-1.0..1.0);
                }
            }
            for (v, (lo, hi)) in p.iter_mut().zip(&bounds) {
                *v = v.clamp(*lo, *hi);
            }
            adam_ascent(&objective, p, &bounds, config)
        })
        .collect();

    let (best_value, best_p, _) = runs
        .iter()
        .flatten()
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .cloned()
        .ok_or(Error::NotPositiveDefinite { max_jitter: DEFAULT_JITTER_SCHEDULE[4] })?;
    log::debug!("gp_fit: best log-ML {best_value:.6}");
    let traces = runs.iter().flatten().map(|r| r.2).collect();

    let noise = best_p[best_p.len() - 1].exp();
    let kernel = objective.kernel(&best_p);
    let ym = y.mean();
    let constant = y.iter().all(|v| *v == ym);
    // the optimum for constant targets is noise -> floor; Adam approaches it slowly
    if constant && ym != 0.0 && noise <= 100.0 * config.noise_floor {
        return Err(Error::DegenerateData(format!(
            "targets are constant ({ym}) and the noise variance collapsed to its floor"
        )));
    }
    Ok((GpModel::new(kernel, noise, x.clone(), y.clone())?, traces))
}

fn adam_ascent(
    objective: &Objective<'_>,
    mut p: Vec<f64>,
    bounds: &[(f64, f64)],
    config: &GpFitConfig,
) -> Option<(f64, Vec<f64>, RestartTrace)> {
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let k = p.len();
    let (mut m, mut v) = (vec![0.0; k], vec![0.0; k]);
    let (initial, mut grad) = objective.value_and_grad(&p)?;
    let (mut best, mut best_p) = (initial, p.clone());
    let mut lr = config.learning_rate;
    for t in 1..=config.budget {
        for i in 0..k {
            m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
            v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
            let mh = m[i] / (1.0 - b1.powi(t as i32));
            let vh = v[i] / (1.0 - b2.powi(t as i32));
            p[i] = (p[i] + lr * mh / (vh.sqrt() + eps)).clamp(bounds[i].0, bounds[i].1);
        }
        match objective.value_and_grad(&p) {
            Some((val, g)) => {
                if val > best {
                    best = val;
                    best_p.clone_from(&p);
                }
                grad = g;
            }
            None => {
                // numerically invalid region: step back to the best point
                p.clone_from(&best_p);
                lr *= 0.5;
                grad = objective.value_and_grad(&p)?.1;
            }
        }
    }
    Some((best, best_p, RestartTrace { initial_log_ml: initial, best_log_ml: best }))
}
