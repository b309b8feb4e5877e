//! Transductive active-learning loop.
//!
//! Every iteration retrains the prediction model on the current training set
//! and evaluates it on the test split, then (except after the last
//! evaluation) retrains the selection model, scores the remaining pool against
//! the test inputs and moves `m` pool points into the training set. Models are
//! rebuilt from scratch each time.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::acquisition::{greedy_batch, mig, random_select, tig, top_q, AcquisitionContext};
use crate::error::{check_dim, Error, Result};
use crate::metrics::{marginal_ll, mean_ranks_desc, ModelPrediction};
use crate::models::{fit_model, ModelSpec};
use crate::rng::{derive_tagged, seeded_rng};
use crate::synth::SyntheticDataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Acquisition {
    Tig,
    Mig,
    BatchMig,
    Random,
}

impl Acquisition {
    pub const ALL: [Acquisition; 4] = [Acquisition::Tig, Acquisition::Mig, Acquisition::BatchMig, Acquisition::Random];

    pub fn name(self) -> &'static str {
        match self {
            Acquisition::Tig => "tig",
            Acquisition::Mig => "mig",
            Acquisition::BatchMig => "batch_mig",
            Acquisition::Random => "random",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TalConfig {
    pub iterations: usize,
    pub per_iteration_query: usize,
    pub selection_model: ModelSpec,
    pub prediction_model: ModelSpec,
    pub acquisition: Acquisition,
    pub seed: u64,
}

/// Train, test and pool splits.
#[derive(Clone, Debug, PartialEq)]
pub struct TalData {
    pub x_train: DMatrix<f64>,
    pub y_train: DVector<f64>,
    pub x_test: DMatrix<f64>,
    pub y_test: DVector<f64>,
    pub x_pool: DMatrix<f64>,
    pub y_pool: DVector<f64>,
}

impl TalData {
    pub fn validate(&self) -> Result<()> {
        let d = self.x_test.ncols();
        for (x, y) in [(&self.x_train, &self.y_train), (&self.x_test, &self.y_test), (&self.x_pool, &self.y_pool)] {
            check_dim(x.nrows(), y.len())?;
            check_dim(d, x.ncols())?;
        }
        if self.x_test.nrows() == 0 {
            return Err(Error::InvalidArgument("test split is empty".into()));
        }
        Ok(())
    }
}

impl From<&SyntheticDataset> for TalData {
    fn from(ds: &SyntheticDataset) -> Self {
        Self {
            x_train: ds.train.x.clone(),
            y_train: ds.train.y.clone(),
            x_test: ds.test.x.clone(),
            y_test: ds.test.y.clone(),
            x_pool: ds.pool.x.clone(),
            y_pool: ds.pool.y.clone(),
        }
    }
}

/// Evaluation at one iteration and the pool points queried right after it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TalRecord {
    pub iteration: usize,
    pub n_train: usize,
    pub rmse: f64,
    /// Mean per-point predictive log-density of the test targets.
    pub loglik: f64,
    /// Row indices into the original pool split.
    pub queried: Vec<usize>,
    pub selection_hyperparameters: Option<serde_json::Value>,
}

/// Records for iterations `0..=T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TalTrace {
    pub records: Vec<TalRecord>,
}

impl TalTrace {
    pub fn last(&self) -> &TalRecord {
        self.records.last().expect("a trace always holds the iteration-0 record")
    }

    pub fn iterations(&self) -> usize {
        self.records.len() - 1
    }
}

fn gather(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

fn stack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols().max(b.ncols()));
    out.rows_mut(0, a.nrows()).copy_from(a);
    out.rows_mut(a.nrows(), b.nrows()).copy_from(b);
    out
}

fn evaluate(config: &TalConfig, data: &TalData, x: &DMatrix<f64>, y: &DVector<f64>, t: usize) -> Result<(f64, f64)> {
    let seed = derive_tagged(config.seed, "prediction", t as u64);
    let fitted = fit_model(&config.prediction_model, x, y, &data.x_test, seed)?;
    let n = data.y_test.len() as f64;
    let rmse = ((fitted.summary.mean() - &data.y_test).norm_squared() / n).sqrt();
    let ll = marginal_ll(&ModelPrediction::new("prediction", fitted.summary), &data.y_test)?;
    Ok((rmse, ll))
}

/// Positions into `remaining` chosen at iteration `t`, plus the selection
/// model's hyperparameters when one was trained.
fn select(
    config: &TalConfig,
    data: &TalData,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    remaining: &[usize],
    t: usize,
) -> Result<(Vec<usize>, Option<serde_json::Value>)> {
    let m = config.per_iteration_query;
    if config.acquisition == Acquisition::Random {
        let mut rng = seeded_rng(derive_tagged(config.seed, "random", t as u64));
        return Ok((random_select(remaining.len(), m, &mut rng)?.indices, None));
    }
    let r = remaining.len();
    let xq = stack(&gather(&data.x_pool, remaining), &data.x_test);
    let seed = derive_tagged(config.seed, "selection", t as u64);
    let fitted = fit_model(&config.selection_model, x, y, &xq, seed)?;
    let ctx = AcquisitionContext::from_summary(fitted.summary, (0..r).collect(), (r..xq.nrows()).collect())?;
    let batch = match config.acquisition {
        Acquisition::Tig => top_q(&tig(&ctx), m)?,
        Acquisition::Mig => top_q(&mig(&ctx)?, m)?,
        Acquisition::BatchMig => greedy_batch(&ctx, m)?,
        Acquisition::Random => unreachable!(),
    };
    Ok((batch.indices, Some(fitted.hyperparameters)))
}

pub fn tal_run(config: &TalConfig, data: &TalData) -> Result<TalTrace> {
    data.validate()?;
    let requested = config.iterations * config.per_iteration_query;
    if requested > data.x_pool.nrows() {
        return Err(Error::PoolExhausted { requested, available: data.x_pool.nrows() });
    }
    if config.iterations > 0 && config.per_iteration_query == 0 {
        return Err(Error::InvalidArgument("per_iteration_query must be >= 1".into()));
    }
    let mut x = data.x_train.clone();
    let mut y = data.y_train.clone();
    let mut remaining: Vec<usize> = (0..data.x_pool.nrows()).collect();
    let mut records = Vec::with_capacity(config.iterations + 1);
    for t in 0..=config.iterations {
        let (rmse, loglik) = evaluate(config, data, &x, &y, t)?;
        let (queried, hyper) = if t < config.iterations {
            let (positions, hyper) = select(config, data, &x, &y, &remaining, t)?;
            let queried: Vec<usize> = positions.iter().map(|&p| remaining[p]).collect();
            let mut drop = positions;
            drop.sort_unstable_by(|a, b| b.cmp(a));
            for p in drop {
                remaining.remove(p);
            }
            x = stack(&x, &gather(&data.x_pool, &queried));
            y = DVector::from_iterator(y.len() + queried.len(), y.iter().copied().chain(queried.iter().map(|&i| data.y_pool[i])));
            (queried, hyper)
        } else {
            (Vec::new(), None)
        };
        let n_train = data.x_train.nrows() + t * config.per_iteration_query;
        log::debug!("tal {} t={t} n={n_train} rmse={rmse:.4} ll={loglik:.4}", config.acquisition.name());
        records.push(TalRecord { iteration: t, n_train, rmse, loglik, queried, selection_hyperparameters: hyper });
    }
    Ok(TalTrace { records })
}

/// Row indices of a seeded 20/20/60 train/test/pool split, plus the
/// per-iteration query size and iteration count.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct UciSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub pool: Vec<usize>,
    pub per_iteration_query: usize,
    pub iterations: usize,
}

pub const UCI_MIN_ROWS: usize = 50;
pub const UCI_ITERATIONS: usize = 10;

/// Splits `n_rows` rows: `⌊N/5⌋` train, `⌊N/5⌋` test, the rest pool;
/// `m = ⌈N/100⌉`, `T = 10`.
pub fn uci_protocol(n_rows: usize, seed: u64) -> Result<UciSplit> {
    if n_rows < UCI_MIN_ROWS {
        return Err(Error::TooSmall { rows: n_rows, min: UCI_MIN_ROWS });
    }
    let mut perm: Vec<usize> = (0..n_rows).collect();
    perm.shuffle(&mut seeded_rng(derive_tagged(seed, "uci_split", 0)));
    let n_tr = n_rows / 5;
    let n_te = n_rows / 5;
    Ok(UciSplit {
        train: perm[..n_tr].to_vec(),
        test: perm[n_tr..n_tr + n_te].to_vec(),
        pool: perm[n_tr + n_te..].to_vec(),
        per_iteration_query: n_rows.div_ceil(100),
        iterations: UCI_ITERATIONS,
    })
}

impl UciSplit {
    pub fn data(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<TalData> {
        check_dim(x.nrows(), y.len())?;
        let pick_y = |rows: &[usize]| DVector::from_iterator(rows.len(), rows.iter().map(|&i| y[i]));
        Ok(TalData {
            x_train: gather(x, &self.train),
            y_train: pick_y(&self.train),
            x_test: gather(x, &self.test),
            y_test: pick_y(&self.test),
            x_pool: gather(x, &self.pool),
            y_pool: pick_y(&self.pool),
        })
    }

    pub fn config(&self, selection: ModelSpec, prediction: ModelSpec, acquisition: Acquisition, seed: u64) -> TalConfig {
        TalConfig {
            iterations: self.iterations,
            per_iteration_query: self.per_iteration_query,
            selection_model: selection,
            prediction_model: prediction,
            acquisition,
            seed,
        }
    }
}

/// Traces of one experimental condition. Trace `k` of every condition must
/// come from the same dataset and seed.
#[derive(Clone, Debug)]
pub struct ConditionTraces {
    pub condition: String,
    pub traces: Vec<TalTrace>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankingRow {
    pub condition: String,
    pub n: usize,
    pub rmse_mean: f64,
    pub rmse_se: f64,
    pub loglik_mean: f64,
    pub loglik_se: f64,
    /// Average rank of the final log-likelihood (1 = best).
    pub loglik_rank: f64,
    /// Average rank of the final RMSE (1 = best).
    pub rmse_rank: f64,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Final-iteration summary and average ranks per condition.
pub fn tal_aggregate(groups: &[ConditionTraces]) -> Result<Vec<RankingRow>> {
    let Some(first) = groups.first() else {
        return Ok(Vec::new());
    };
    let k = first.traces.len();
    if k == 0 {
        return Err(Error::InvalidArgument("conditions need at least one trace".into()));
    }
    let t = first.traces[0].iterations();
    for g in groups {
        check_dim(k, g.traces.len())?;
        if g.traces.iter().any(|tr| tr.iterations() != t) {
            return Err(Error::InvalidArgument(format!("condition {} has traces with T != {t}", g.condition)));
        }
    }
    let mut ll_rank = vec![0.0; groups.len()];
    let mut rmse_rank = vec![0.0; groups.len()];
    for i in 0..k {
        let ll: Vec<f64> = groups.iter().map(|g| g.traces[i].last().loglik).collect();
        let neg_rmse: Vec<f64> = groups.iter().map(|g| -g.traces[i].last().rmse).collect();
        for (c, (a, b)) in mean_ranks_desc(&ll).into_iter().zip(mean_ranks_desc(&neg_rmse)).enumerate() {
            ll_rank[c] += a / k as f64;
            rmse_rank[c] += b / k as f64;
        }
    }
    Ok(groups
        .iter()
        .enumerate()
        .map(|(c, g)| {
            let (rmse_mean, rmse_se) = mean_se(&g.traces.iter().map(|tr| tr.last().rmse).collect::<Vec<_>>());
            let (loglik_mean, loglik_se) = mean_se(&g.traces.iter().map(|tr| tr.last().loglik).collect::<Vec<_>>());
            RankingRow {
                condition: g.condition.clone(),
                n: k,
                rmse_mean,
                rmse_se,
                loglik_mean,
                loglik_se,
                loglik_rank: ll_rank[c],
                rmse_rank: rmse_rank[c],
            }
        })
        .collect())
}
