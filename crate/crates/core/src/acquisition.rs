//! Information-gain acquisition functions for Gaussian predictive summaries.
//!
//! All scores use the noise-free function covariance `Σ` of a joint summary
//! over pool and test locations plus an explicit homoscedastic `σ_n²`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::gaussian::{cholesky, DEFAULT_JITTER_SCHEDULE};
use crate::posterior::{PredictiveSummary, MIN_VARIANCE};

/// Largest explained-variance ratio allowed inside `log(1 − ratio)`.
const RATIO_CLAMP: f64 = 1.0 - 1e-12;

/// Joint predictive summary plus the roles of its locations.
#[derive(Clone, Debug)]
pub struct AcquisitionContext {
    summary: PredictiveSummary,
    pool: Vec<usize>,
    test: Vec<usize>,
    noise_variance: f64,
}

impl AcquisitionContext {
    pub fn new(summary: PredictiveSummary, pool: Vec<usize>, test: Vec<usize>, noise_variance: f64) -> Result<Self> {
        let n = summary.dim();
        if pool.is_empty() || test.is_empty() {
            return Err(Error::InvalidArgument("pool and test index sets must be nonempty".into()));
        }
        let mut seen = vec![false; n];
        for &i in pool.iter().chain(&test) {
            if i >= n {
                return Err(Error::InvalidArgument(format!("index {i} outside summary of size {n}")));
            }
            if seen[i] {
                return Err(Error::InvalidArgument(format!("index {i} repeated or shared by pool and test")));
            }
            seen[i] = true;
        }
        if !(noise_variance > 0.0) {
            return Err(Error::InvalidArgument(format!("noise variance must be > 0, got {noise_variance}")));
        }
        Ok(Self { summary, pool, test, noise_variance })
    }

    /// Uses the summary's own noise estimate.
    pub fn from_summary(summary: PredictiveSummary, pool: Vec<usize>, test: Vec<usize>) -> Result<Self> {
        let noise = summary.noise_variance();
        Self::new(summary, pool, test, noise)
    }

    pub fn summary(&self) -> &PredictiveSummary {
        &self.summary
    }

    pub fn pool(&self) -> &[usize] {
        &self.pool
    }

    pub fn test(&self) -> &[usize] {
        &self.test
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    fn cov(&self, i: usize, j: usize) -> f64 {
        self.summary.cov().get(i, j)
    }

    fn test_variances(&self) -> Result<Vec<f64>> {
        self.test
            .iter()
            .enumerate()
            .map(|(k, &u)| {
                let v = self.cov(u, u);
                if v > MIN_VARIANCE { Ok(v) } else { Err(Error::DegenerateTest { index: k }) }
            })
            .collect()
    }
}

/// Selected pool positions (indices into `ctx.pool()`) in selection order.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryBatch {
    pub indices: Vec<usize>,
    /// BatchMIG of the first `k+1` selections, per greedy step (empty for random selection).
    pub scores: Vec<f64>,
}

fn info(ratio: f64) -> f64 {
    -0.5 * (1.0 - ratio.clamp(0.0, RATIO_CLAMP)).ln()
}

/// Total information gain `½ log(1 + σ_x²/σ_n²)` for every pool point.
pub fn tig(ctx: &AcquisitionContext) -> DVector<f64> {
    DVector::from_iterator(
        ctx.pool.len(),
        ctx.pool.iter().map(|&i| 0.5 * (ctx.cov(i, i).max(0.0) / ctx.noise_variance).ln_1p()),
    )
}

/// Marginal information gain about the test points, averaged over them.
pub fn mig(ctx: &AcquisitionContext) -> Result<DVector<f64>> {
    let tv = ctx.test_variances()?;
    Ok(DVector::from_iterator(
        ctx.pool.len(),
        ctx.pool.iter().map(|&i| {
            let denom_x = ctx.cov(i, i) + ctx.noise_variance;
            ctx.test
                .iter()
                .zip(&tv)
                .map(|(&u, vu)| {
                    let c = ctx.cov(i, u);
                    info(c * c / (vu * denom_x))
                })
                .sum::<f64>()
                / ctx.test.len() as f64
        }),
    ))
}

/// BatchMIG of the pool positions in `batch`, via a Cholesky factor of the
/// batch covariance.
pub fn batch_mig_score(ctx: &AcquisitionContext, batch: &[usize]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut seen = vec![false; ctx.pool.len()];
    for &b in batch {
        if b >= ctx.pool.len() || std::mem::replace(&mut seen[b], true) {
            return Err(Error::InvalidArgument(format!("batch position {b} out of range or repeated")));
        }
    }
    let tv = ctx.test_variances()?;
    let idx: Vec<usize> = batch.iter().map(|&b| ctx.pool[b]).collect();
    let kaa = ctx.summary.cov().submatrix(&idx).add_diagonal(ctx.noise_variance);
    let chol = cholesky(&kaa, &DEFAULT_JITTER_SCHEDULE).map_err(|_| Error::SingularBatch)?;
    let cau = DMatrix::from_fn(idx.len(), ctx.test.len(), |a, u| ctx.cov(idx[a], ctx.test[u]));
    let w = chol.solve_lower_mat(&cau);
    Ok((0..ctx.test.len()).map(|u| info(w.column(u).norm_squared() / tv[u])).sum::<f64>() / ctx.test.len() as f64)
}

/// Greedy BatchMIG maximization. The factor of the selected batch covariance
/// and `W = L⁻¹ Σ_{A,U}` are extended by one row per step, so each step costs
/// `O(|A|·P·T)` for `P` pool and `T` test points.
pub fn greedy_batch(ctx: &AcquisitionContext, q: usize) -> Result<QueryBatch> {
    let p = ctx.pool.len();
    if q > p {
        return Err(Error::PoolExhausted { requested: q, available: p });
    }
    let tv = ctx.test_variances()?;
    let t = ctx.test.len();
    let s2 = ctx.noise_variance;
    // per-test explained variance q_u of the current batch
    let mut explained = vec![0.0; t];
    let mut l: Vec<Vec<f64>> = Vec::new(); // rows of the lower factor
    let mut w: Vec<Vec<f64>> = Vec::new(); // rows of W, one per selected point
    let mut chosen: Vec<usize> = Vec::new();
    let mut taken = vec![false; p];
    let mut scores = Vec::with_capacity(q);
    for _ in 0..q {
        let mut best: Option<(f64, usize, Vec<f64>, f64, Vec<f64>)> = None;
        for c in 0..p {
            if taken[c] {
                continue;
            }
            let xc = ctx.pool[c];
            // l_c = L⁻¹ Σ_{A,c}
            let mut lc = vec![0.0; chosen.len()];
            for k in 0..chosen.len() {
                let s: f64 = (0..k).map(|j| l[k][j] * lc[j]).sum();
                lc[k] = (ctx.cov(ctx.pool[chosen[k]], xc) - s) / l[k][k];
            }
            let delta2 = ctx.cov(xc, xc) + s2 - lc.iter().map(|v| v * v).sum::<f64>();
            if !(delta2 > 0.0) {
                continue;
            }
            let delta = delta2.sqrt();
            let wc: Vec<f64> = (0..t)
                .map(|u| {
                    let s: f64 = (0..chosen.len()).map(|k| lc[k] * w[k][u]).sum();
                    (ctx.cov(xc, ctx.test[u]) - s) / delta
                })
                .collect();
            let score = (0..t).map(|u| info((explained[u] + wc[u] * wc[u]) / tv[u])).sum::<f64>() / t as f64;
            if best.as_ref().is_none_or(|b| score > b.0) {
                best = Some((score, c, lc, delta, wc));
            }
        }
        let (score, c, mut lc, delta, wc) = best.ok_or(Error::SingularBatch)?;
        lc.push(delta);
        l.push(lc);
        for u in 0..t {
            explained[u] += wc[u] * wc[u];
        }
        w.push(wc);
        chosen.push(c);
        taken[c] = true;
        scores.push(score);
    }
    Ok(QueryBatch { indices: chosen, scores })
}

/// Picks the `q` best pool positions by a per-point score (TIG or MIG), ties
/// to the lowest position.
pub fn top_q(scores: &DVector<f64>, q: usize) -> Result<QueryBatch> {
    if q > scores.len() {
        return Err(Error::PoolExhausted { requested: q, available: scores.len() });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(q);
    Ok(QueryBatch { indices: order, scores: Vec::new() })
}

/// Uniform sample of `q` distinct positions out of `pool_size`.
pub fn random_select<R: Rng + ?Sized>(pool_size: usize, q: usize, rng: &mut R) -> Result<QueryBatch> {
    if q > pool_size {
        return Err(Error::PoolExhausted { requested: q, available: pool_size });
    }
    let indices = rand::seq::index::sample(rng, pool_size, q).into_vec();
    Ok(QueryBatch { indices, scores: Vec::new() })
}
