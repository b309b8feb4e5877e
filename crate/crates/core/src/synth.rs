//! Synthetic regression data drawn from a known GP, and that GP's exact
//! posterior (the oracle).

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{mvn_sample, MvnDist, DEFAULT_JITTER_SCHEDULE};
use crate::gp::GpModel;
use crate::kernels::{gram_sym, KernelSpec};
use crate::posterior::{summary_from_gaussian, PredictiveSummary};
use crate::rng::{derive_tagged, seeded_rng};

pub const SYNTH_NOISE_VARIANCE: f64 = 0.01;
pub const TRAIN_PER_DIM: usize = 5;
pub const N_TEST: usize = 500;
pub const N_POOL: usize = 200;

/// Generator settings. The sizes are fixed; only the prior is configurable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub weight_variance: f64,
    pub bias_variance: f64,
    pub noise_variance: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { weight_variance: 1.0, bias_variance: 1.0, noise_variance: SYNTH_NOISE_VARIANCE }
    }
}

impl SynthConfig {
    pub fn kernel(&self) -> KernelSpec {
        KernelSpec::relu_limit(self.weight_variance, self.bias_variance)
    }
}

/// Inputs, latent values and noisy targets for one split.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub x: DMatrix<f64>,
    pub f: DVector<f64>,
    pub noise: DVector<f64>,
    pub y: DVector<f64>,
}

impl Split {
    fn len(&self) -> usize {
        self.x.nrows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub d: usize,
    pub train: Split,
    pub test: Split,
    pub pool: Split,
    pub kernel: KernelSpec,
    pub noise_variance: f64,
    pub seed: u64,
}

fn standard_normal_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = seeded_rng(seed);
    DMatrix::from_fn(rows, cols, |_, _| -> f64 { StandardNormal.sample(&mut rng) })
}

pub fn synth_generate(d: usize, seed: u64) -> Result<SyntheticDataset> {
    synth_generate_with(d, &SynthConfig::default(), seed)
}

/// Draws `5d` train, 500 test and 200 pool inputs from `N(0, I)`, one joint
/// function draw over all of them, and independent `N(0, σ_n²)` noise.
pub fn synth_generate_with(d: usize, config: &SynthConfig, seed: u64) -> Result<SyntheticDataset> {
    if d == 0 {
        return Err(Error::InvalidArgument("input dimension must be >= 1".into()));
    }
    if !(config.noise_variance >= 0.0 && config.noise_variance.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise variance must be >= 0, got {}", config.noise_variance)));
    }
    let kernel = config.kernel();
    kernel.validate(Some(d))?;
    let sizes = [TRAIN_PER_DIM * d, N_TEST, N_POOL];
    let total: usize = sizes.iter().sum();
    let x_all = standard_normal_matrix(total, d, derive_tagged(seed, "inputs", 0));

    let prior = MvnDist::with_schedule(DVector::zeros(total), &gram_sym(&kernel, &x_all)?, &DEFAULT_JITTER_SCHEDULE)?;
    let f_all = mvn_sample(&prior, &mut seeded_rng(derive_tagged(seed, "function", 0)), 1).row(0).transpose();
    let sd = config.noise_variance.sqrt();
    let mut noise_rng = seeded_rng(derive_tagged(seed, "noise", 0));
    let eps = DVector::from_fn(total, |_, _| {
        let z: f64 = StandardNormal.sample(&mut noise_rng);
        sd * z
    });

    let mut start = 0;
    let mut parts = sizes.iter().map(|&n| {
        let split = Split {
            x: x_all.rows(start, n).into_owned(),
            f: f_all.rows(start, n).into_owned(),
            noise: eps.rows(start, n).into_owned(),
            y: f_all.rows(start, n) + eps.rows(start, n),
        };
        start += n;
        split
    });
    let (train, test, pool) = (parts.next().unwrap(), parts.next().unwrap(), parts.next().unwrap());
    Ok(SyntheticDataset { d, train, test, pool, kernel, noise_variance: config.noise_variance, seed })
}

/// Datasets for several seeds, generated in parallel.
pub fn synth_generate_many(d: usize, config: &SynthConfig, seeds: &[u64]) -> Result<Vec<SyntheticDataset>> {
    seeds.par_iter().map(|&s| synth_generate_with(d, config, s)).collect()
}

impl SyntheticDataset {
    pub fn sizes(&self) -> [usize; 3] {
        [self.train.len(), self.test.len(), self.pool.len()]
    }

    /// The generating GP conditioned on the training split.
    pub fn oracle_model(&self) -> Result<GpModel> {
        GpModel::new(self.kernel.clone(), self.noise_variance, self.train.x.clone(), self.train.y.clone())
    }

    /// Pool rows followed by test rows.
    pub fn pool_and_test_inputs(&self) -> DMatrix<f64> {
        let mut x = DMatrix::zeros(self.pool.len() + self.test.len(), self.d);
        x.rows_mut(0, self.pool.len()).copy_from(&self.pool.x);
        x.rows_mut(self.pool.len(), self.test.len()).copy_from(&self.test.x);
        x
    }
}

/// Exact posterior of the generating GP at `xq`, given the training split.
pub fn oracle_summary(ds: &SyntheticDataset, xq: &DMatrix<f64>) -> Result<PredictiveSummary> {
    if xq.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("query locations must be finite".into()));
    }
    let pred = ds.oracle_model()?.predict_joint(xq, false)?;
    summary_from_gaussian(&pred, ds.noise_variance)
}
