//! Evaluation metrics for predictive correlations.

pub mod ranks;
pub mod theorem;
pub mod xll;

use nalgebra::DVector;
use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::gaussian::{cholesky, mvn_logpdf, pearson, MvnDist, SymMatrix, DEFAULT_JITTER_SCHEDULE};
use crate::posterior::PredictiveSummary;

pub use ranks::{kendall_tau_b, mean_ranks_desc};
pub use theorem::{theorem_check, TheoremInstance, TheoremReport};
pub use xll::{build_top_correlated_batches, xll, xll_report, xll_via_normalization, XllReport};

/// Default number of test pairs entering a metacorrelation.
pub const DEFAULT_PAIR_BUDGET: usize = 2000;

/// A model's predictive summary on the shared test locations.
#[derive(Clone, Debug)]
pub struct ModelPrediction {
    pub model_id: String,
    pub summary: PredictiveSummary,
}

impl ModelPrediction {
    pub fn new(model_id: impl Into<String>, summary: PredictiveSummary) -> Self {
        Self { model_id: model_id.into(), summary }
    }
}

pub(crate) fn check_shared_locations(a: &PredictiveSummary, b: &PredictiveSummary) -> Result<()> {
    check_dim(a.dim(), b.dim())?;
    if a.locations() != b.locations() {
        return Err(Error::InvalidArgument("predictions are not on identical locations".into()));
    }
    Ok(())
}

/// Number of pairs a metacorrelation over `n` locations uses.
pub fn pair_count(n: usize, budget: usize) -> usize {
    (n * n.saturating_sub(1) / 2).min(budget)
}

/// Uniform sample of `budget` distinct pairs `i < j` (all pairs, in order, if
/// there are no more than `budget`).
pub fn sample_pairs<R: Rng + ?Sized>(n: usize, budget: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let total = n * n.saturating_sub(1) / 2;
    let linear: Vec<usize> = if budget >= total {
        (0..total).collect()
    } else {
        let mut v = rand::seq::index::sample(rng, total, budget).into_vec();
        v.sort_unstable();
        v
    };
    let mut out = Vec::with_capacity(linear.len());
    let (mut i, mut row_start) = (0usize, 0usize);
    for k in linear {
        while k >= row_start + (n - 1 - i) {
            row_start += n - 1 - i;
            i += 1;
        }
        out.push((i, i + 1 + (k - row_start)));
    }
    out
}

/// Pearson correlation between off-diagonal entries of two correlation
/// matrices over a seeded sample of pairs.
pub fn metacorrelation_of<R: Rng + ?Sized>(
    candidate: &SymMatrix,
    oracle: &SymMatrix,
    pair_budget: usize,
    rng: &mut R,
) -> Result<f64> {
    check_dim(oracle.dim(), candidate.dim())?;
    if pair_budget < 2 {
        return Err(Error::InvalidArgument("pair budget must be >= 2".into()));
    }
    let pairs = sample_pairs(candidate.dim(), pair_budget, rng);
    let a: Vec<f64> = pairs.iter().map(|&(i, j)| candidate.get(i, j)).collect();
    let b: Vec<f64> = pairs.iter().map(|&(i, j)| oracle.get(i, j)).collect();
    pearson(&a, &b)
}

/// Metacorrelation of a candidate's function correlations against the oracle's.
pub fn metacorrelation<R: Rng + ?Sized>(
    candidate: &ModelPrediction,
    oracle: &ModelPrediction,
    pair_budget: usize,
    rng: &mut R,
) -> Result<f64> {
    check_shared_locations(&candidate.summary, &oracle.summary)?;
    metacorrelation_of(candidate.summary.corr(), oracle.summary.corr(), pair_budget, rng)
}

fn batch_logpdf(summary: &PredictiveSummary, y: &DVector<f64>, idx: &[usize]) -> Result<f64> {
    let cov = summary.observation_cov().submatrix(idx);
    let mean = DVector::from_fn(idx.len(), |i, _| summary.mean()[idx[i]]);
    let yb = DVector::from_fn(idx.len(), |i, _| y[idx[i]]);
    let chol = cholesky(&cov, &DEFAULT_JITTER_SCHEDULE).map_err(|_| Error::SingularBatch)?;
    mvn_logpdf(&yb, &MvnDist::from_factor(mean, chol)?)
}

/// Mean per-point joint log-likelihood `log N(y_B | μ_B, Σ_B + σ_n² I) / b`
/// over `n_batches` random batches. Batches within one pass over the test set
/// are disjoint; further passes reshuffle.
pub fn joint_ll_random_batches<R: Rng + ?Sized>(
    pred: &ModelPrediction,
    y: &DVector<f64>,
    b: usize,
    n_batches: usize,
    rng: &mut R,
) -> Result<f64> {
    let n = pred.summary.dim();
    check_dim(n, y.len())?;
    if b == 0 || b > n || n_batches == 0 {
        return Err(Error::InvalidArgument(format!("need 1 <= b <= {n} and at least one batch, got b = {b}")));
    }
    let mut total = 0.0;
    let mut done = 0;
    while done < n_batches {
        let perm = rand::seq::index::sample(rng, n, n).into_vec();
        for chunk in perm.chunks_exact(b) {
            if done == n_batches {
                break;
            }
            total += batch_logpdf(&pred.summary, y, chunk)? / b as f64;
            done += 1;
        }
    }
    Ok(total / n_batches as f64)
}

/// Mean marginal predictive log-density of the observations.
pub fn marginal_ll(pred: &ModelPrediction, y: &DVector<f64>) -> Result<f64> {
    check_dim(pred.summary.dim(), y.len())?;
    let sd = pred.summary.observation_sd();
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let n = y.len();
    Ok((0..n)
        .map(|i| {
            let z = (y[i] - pred.summary.mean()[i]) / sd[i];
            -0.5 * (ln2pi + z * z) - sd[i].ln()
        })
        .sum::<f64>()
        / n as f64)
}

/// `KL(N(0, C_gen) ‖ N(0, C)) = ½(log|C|/|C_gen| − b + tr(C⁻¹ C_gen))`.
pub fn logdet_divergence(c_gen: &SymMatrix, c: &SymMatrix) -> Result<f64> {
    check_dim(c_gen.dim(), c.dim())?;
    let lg = cholesky(c_gen, &[0.0]).map_err(|_| Error::SingularMatrix)?;
    let lc = cholesky(c, &[0.0]).map_err(|_| Error::SingularMatrix)?;
    let tr = lc.solve_mat(c_gen.as_matrix()).trace();
    Ok(0.5 * (lc.log_det() - lg.log_det() - c.dim() as f64 + tr))
}
