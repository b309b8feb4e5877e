//! Cross-normalized log-likelihood (XLL) and its rank summary (XLLR).
//!
//! A candidate's correlations are scored under a reference model's marginals,
//! on batches of test points the reference considers most correlated. The
//! candidate enters only through its observation-level correlation matrix, so
//! its own marginal scale is irrelevant.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::ranks::mean_ranks_desc;
use super::{check_shared_locations, ModelPrediction};
use crate::error::{check_dim, Error, Result};
use crate::gaussian::{cholesky, mvn_logpdf, MvnDist, SymMatrix, DEFAULT_JITTER_SCHEDULE};
use crate::posterior::{PredictiveSummary, CORR_CLAMP};

/// Default batch size.
pub const DEFAULT_BATCH_SIZE: usize = 5;

/// One batch per anchor `x`: `x` followed by the `b − 1` other indices with the
/// largest `|C(x, ·)|`, ties to the lowest index.
pub fn top_correlated_batches(corr: &SymMatrix, b: usize) -> Result<Vec<Vec<usize>>> {
    let n = corr.dim();
    if b == 0 || b > n {
        return Err(Error::InvalidArgument(format!("batch size {b} must be in 1..={n}")));
    }
    Ok((0..n)
        .map(|x| {
            let mut others: Vec<usize> = (0..n).filter(|&j| j != x).collect();
            // stable sort keeps index order among exact ties
            others.sort_by(|&i, &j| corr.get(x, j).abs().total_cmp(&corr.get(x, i).abs()));
            let mut batch = vec![x];
            batch.extend_from_slice(&others[..b - 1]);
            batch
        })
        .collect())
}

/// Batches chosen by the reference model's function correlations.
pub fn build_top_correlated_batches(reference: &ModelPrediction, b: usize) -> Result<Vec<Vec<usize>>> {
    top_correlated_batches(reference.summary.corr(), b)
}

/// Mean over batches of `log N(y_B | μ_ref,B, diag(σ_ref) C_BB diag(σ_ref))`.
pub fn xll(
    candidate_corr: &SymMatrix,
    ref_mean: &DVector<f64>,
    ref_sd: &DVector<f64>,
    batches: &[Vec<usize>],
    y: &DVector<f64>,
) -> Result<f64> {
    let n = candidate_corr.dim();
    check_dim(n, ref_mean.len())?;
    check_dim(n, ref_sd.len())?;
    check_dim(n, y.len())?;
    if batches.is_empty() {
        return Err(Error::InvalidArgument("no batches".into()));
    }
    let mut total = 0.0;
    for batch in batches {
        let k = batch.len();
        let cov = DMatrix::from_fn(k, k, |a, b| {
            let (i, j) = (batch[a], batch[b]);
            let c = if a == b { 1.0 } else { candidate_corr.get(i, j).clamp(-CORR_CLAMP, CORR_CLAMP) };
            ref_sd[i] * c * ref_sd[j]
        });
        let chol = cholesky(&SymMatrix::symmetrize(cov)?, &DEFAULT_JITTER_SCHEDULE).map_err(|_| Error::SingularBatch)?;
        let mean = DVector::from_fn(k, |a, _| ref_mean[batch[a]]);
        let yb = DVector::from_fn(k, |a, _| y[batch[a]]);
        total += mvn_logpdf(&yb, &MvnDist::from_factor(mean, chol)?)?;
    }
    Ok(total / batches.len() as f64)
}

/// XLL of `candidate` against `reference` computed by rescaling the
/// candidate's observation covariance to the reference marginals,
/// `D⁰ Σ D⁰` with `D⁰ = √diag(Σ_ref)/√diag(Σ_cand)`.
pub fn xll_via_normalization(
    candidate: &PredictiveSummary,
    reference: &PredictiveSummary,
    batches: &[Vec<usize>],
    y: &DVector<f64>,
) -> Result<f64> {
    check_shared_locations(candidate, reference)?;
    let d0 = reference.observation_sd().component_div(&candidate.observation_sd());
    let normalized = candidate.observation_cov().scale_both(&d0)?;
    let mut total = 0.0;
    for batch in batches {
        let cov = normalized.submatrix(batch);
        let chol = cholesky(&cov, &DEFAULT_JITTER_SCHEDULE).map_err(|_| Error::SingularBatch)?;
        let mean = DVector::from_fn(batch.len(), |a, _| reference.mean()[batch[a]]);
        let yb = DVector::from_fn(batch.len(), |a, _| y[batch[a]]);
        total += mvn_logpdf(&yb, &MvnDist::from_factor(mean, chol)?)?;
    }
    Ok(total / batches.len() as f64)
}

/// XLL of every candidate under every reference.
#[derive(Clone, Debug)]
pub struct XllReport {
    pub models: Vec<String>,
    /// `xll[(i, j)]`: candidate `i` scored with reference `j`.
    pub xll: DMatrix<f64>,
    /// Rank of candidate `i` among all candidates under reference `j` (1 = best).
    pub rank: DMatrix<f64>,
    pub avg_xll: DVector<f64>,
    pub avg_xllr: DVector<f64>,
}

/// Scores every model against every reference (itself included) and averages
/// XLL and rank over references.
pub fn xll_report(preds: &[ModelPrediction], y: &DVector<f64>, b: usize) -> Result<XllReport> {
    let m = preds.len();
    if m < 2 {
        return Err(Error::InvalidArgument("need at least two models".into()));
    }
    for p in &preds[1..] {
        check_shared_locations(&preds[0].summary, &p.summary)?;
    }
    check_dim(preds[0].summary.dim(), y.len())?;
    let corrs: Vec<SymMatrix> = preds.iter().map(|p| p.summary.observation_corr()).collect();
    let columns: Vec<Vec<f64>> = preds
        .par_iter()
        .map(|reference| {
            let batches = build_top_correlated_batches(reference, b)?;
            let mean = reference.summary.mean();
            let sd = reference.summary.observation_sd();
            corrs.iter().map(|c| xll(c, mean, &sd, &batches, y)).collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let xll_m = DMatrix::from_fn(m, m, |i, j| columns[j][i]);
    let rank = DMatrix::from_fn(m, m, |i, j| mean_ranks_desc(&columns[j])[i]);
    let avg_xll = DVector::from_fn(m, |i, _| xll_m.row(i).mean());
    let avg_xllr = DVector::from_fn(m, |i, _| rank.row(i).mean());
    Ok(XllReport { models: preds.iter().map(|p| p.model_id.clone()).collect(), xll: xll_m, rank, avg_xll, avg_xllr })
}
