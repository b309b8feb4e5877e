//! Deep ensembles: independently initialized MLPs trained full-batch with Adam.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::hmc::TrainData;
use super::mlp::MlpArch;
use super::samples::FunctionSampleSet;
use crate::error::{check_dim, Error, Result};
use crate::rng::{derive_seed, seeded_rng};

const VARIANCE_FLOOR: f64 = 1e-6;
const NOISE_FLOOR: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleObjective {
    /// Mean and softplus variance heads trained by Gaussian negative log-likelihood.
    GaussianNll,
    /// Mean head only, squared error.
    MeanSquared,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    pub n_members: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub objective: EnsembleObjective,
    /// Initializes every member from the same seed (test hook).
    pub same_seed: bool,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            n_members: 20,
            epochs: 1000,
            learning_rate: 0.01,
            objective: EnsembleObjective::GaussianNll,
            same_seed: false,
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 { x } else { x.exp().ln_1p() }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct Member {
    means: DVector<f64>,
    variances: Option<DVector<f64>>,
    noise: f64,
}

fn train_member(
    arch: &MlpArch,
    data: TrainData<'_>,
    config: &EnsembleConfig,
    xq: &DMatrix<f64>,
    seed: u64,
) -> Result<Member> {
    let mut rng = seeded_rng(seed);
    let mut w = arch.sample_weights(&mut rng, 1.0);
    let n = data.y.len() as f64;
    let nll = config.objective == EnsembleObjective::GaussianNll;
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let mut m = vec![0.0; w.len()];
    let mut v = vec![0.0; w.len()];
    for t in 1..=config.epochs {
        let (_, g) = arch.forward_and_vjp(&w, data.x, |out| {
            DMatrix::from_fn(out.nrows(), out.ncols(), |i, k| {
                let r = data.y[i] - out[(i, 0)];
                if !nll {
                    return -2.0 * r / n;
                }
                let var = softplus(out[(i, 1)]) + VARIANCE_FLOOR;
                if k == 0 {
                    -r / var / n
                } else {
                    (0.5 / var - 0.5 * r * r / (var * var)) * sigmoid(out[(i, 1)]) / n
                }
            })
        })?;
        for i in 0..w.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = m[i] / (1.0 - b1.powi(t as i32));
            let vh = v[i] / (1.0 - b2.powi(t as i32));
            w[i] -= config.learning_rate * mh / (vh.sqrt() + eps);
        }
    }
    let out_q = arch.forward_all(&w, xq)?;
    let out_tr = arch.forward_all(&w, data.x)?;
    let means = out_q.column(0).into_owned();
    if nll {
        let var = |o: &DMatrix<f64>| o.column(1).map(|r| softplus(r) + VARIANCE_FLOOR);
        Ok(Member { means, variances: Some(var(&out_q)), noise: var(&out_tr).mean() })
    } else {
        let mse = (data.y - out_tr.column(0)).norm_squared() / n;
        Ok(Member { means, variances: None, noise: mse })
    }
}

/// Trains `config.n_members` networks and returns their mean predictions at `xq`
/// as function samples (row `i` is member `i`).
pub fn ensemble_train(
    arch: &MlpArch,
    data: TrainData<'_>,
    config: &EnsembleConfig,
    xq: &DMatrix<f64>,
    seed: u64,
) -> Result<FunctionSampleSet> {
    if config.n_members < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 ensemble members, got {}", config.n_members)));
    }
    if arch.outputs() != 1 {
        return Err(Error::InvalidArgument("ensemble architecture must have a scalar output".into()));
    }
    check_dim(data.x.nrows(), data.y.len())?;
    check_dim(arch.input_dim(), data.x.ncols())?;
    check_dim(arch.input_dim(), xq.ncols())?;
    let net = match config.objective {
        EnsembleObjective::GaussianNll => {
            let w = arch.widths();
            MlpArch::with_outputs(w[0], &w[1..w.len() - 1], 2)?
        }
        EnsembleObjective::MeanSquared => arch.clone(),
    };
    let members = (0..config.n_members)
        .into_par_iter()
        .map(|i| {
            let s = if config.same_seed { seed } else { derive_seed(seed, i as u64) };
            train_member(&net, data, config, xq, s)
        })
        .collect::<Result<Vec<_>>>()?;
    let samples = DMatrix::from_fn(members.len(), xq.nrows(), |i, j| members[i].means[j]);
    let noise = (members.iter().map(|m| m.noise).sum::<f64>() / members.len() as f64).max(NOISE_FLOOR);
    let aleatoric = match config.objective {
        EnsembleObjective::GaussianNll => Some(
            members.iter().map(|m| m.variances.clone().unwrap()).sum::<DVector<f64>>() / members.len() as f64,
        ),
        EnsembleObjective::MeanSquared => None,
    };
    FunctionSampleSet::new(samples, xq.clone(), noise, aleatoric)
}
