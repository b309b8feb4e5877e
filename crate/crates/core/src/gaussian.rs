//! Dense symmetric linear algebra and multivariate-Gaussian primitives.
//!
//! Densities are always evaluated in log space from a Cholesky factor; there is
//! no code path that forms a raw likelihood or an explicit inverse.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};

/// Jitter values tried in order by [`cholesky`] when no schedule is given.
pub const DEFAULT_JITTER_SCHEDULE: [f64; 5] = [0.0, 1e-10, 1e-8, 1e-6, 1e-4];

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A square matrix that is exactly symmetric.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Wraps `m`, failing unless it is square, non-empty and bit-for-bit
    /// symmetric.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch { expected: m.nrows(), found: m.ncols() });
        }
        if m.nrows() == 0 {
            return Err(Error::InvalidArgument("symmetric matrix must have n >= 1".into()));
        }
        for j in 0..m.ncols() {
            for i in (j + 1)..m.nrows() {
                if m[(i, j)] != m[(j, i)] {
                    return Err(Error::InvalidArgument(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self(m))
    }

    /// Replaces `m` by `(m + mᵀ)/2`, which is exactly symmetric in floating point.
    pub fn symmetrize(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch { expected: m.nrows(), found: m.ncols() });
        }
        if m.nrows() == 0 {
            return Err(Error::InvalidArgument("symmetric matrix must have n >= 1".into()));
        }
        let n = m.nrows();
        let mut out = m;
        for j in 0..n {
            for i in (j + 1)..n {
                let v = 0.5 * (out[(i, j)] + out[(j, i)]);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        Ok(Self(out))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(d: &DVector<f64>) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(d))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn diagonal(&self) -> DVector<f64> {
        self.0.diagonal()
    }

    /// Principal submatrix on `idx` (in the given order).
    pub fn submatrix(&self, idx: &[usize]) -> SymMatrix {
        let k = idx.len();
        SymMatrix(DMatrix::from_fn(k, k, |a, b| self.0[(idx[a], idx[b])]))
    }

    /// `self + c·I`.
    pub fn add_diagonal(&self, c: f64) -> SymMatrix {
        let mut m = self.0.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += c;
        }
        SymMatrix(m)
    }

    /// `D·self·D` for the diagonal matrix `D = diag(d)`.
    pub fn scale_both(&self, d: &DVector<f64>) -> Result<SymMatrix> {
        check_dim(self.dim(), d.len())?;
        let n = self.dim();
        Ok(SymMatrix(DMatrix::from_fn(n, n, |i, j| d[i] * self.0[(i, j)] * d[j])))
    }

    pub fn scale(&self, c: f64) -> SymMatrix {
        SymMatrix(&self.0 * c)
    }
}

/// Lower Cholesky factor `L` with `L·Lᵀ = A + jitter_used·I`.
#[derive(Clone, Debug)]
pub struct CholFactor {
    lower: DMatrix<f64>,
    jitter_used: f64,
}

impl CholFactor {
    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// `L·Lᵀ`.
    pub fn reconstruct(&self) -> SymMatrix {
        SymMatrix::symmetrize(&self.lower * self.lower.transpose())
            .expect("factor is square and non-empty")
    }

    /// `ln |L·Lᵀ|`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    /// Solves `L·x = b`.
    pub fn solve_lower(&self, b: &DVector<f64>) -> DVector<f64> {
        self.lower
            .solve_lower_triangular(b)
            .expect("cholesky diagonal is strictly positive")
    }

    /// Solves `L·X = B` column-wise.
    pub fn solve_lower_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.lower
            .solve_lower_triangular(b)
            .expect("cholesky diagonal is strictly positive")
    }

    /// Solves `(L·Lᵀ)·x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let z = self.solve_lower(b);
        self.lower
            .tr_solve_lower_triangular(&z)
            .expect("cholesky diagonal is strictly positive")
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let z = self.solve_lower_mat(b);
        self.lower
            .tr_solve_lower_triangular(&z)
            .expect("cholesky diagonal is strictly positive")
    }

    /// `(L·Lᵀ)⁻¹`.
    pub fn inverse(&self) -> DMatrix<f64> {
        self.solve_mat(&DMatrix::identity(self.dim(), self.dim()))
    }
}

/// Factorizes `a`, trying each jitter of `jitter_schedule` in order and keeping
/// the first that succeeds.
pub fn cholesky(a: &SymMatrix, jitter_schedule: &[f64]) -> Result<CholFactor> {
    let mut tried = 0.0;
    for &jitter in jitter_schedule {
        tried = jitter;
        let m = if jitter == 0.0 { a.0.clone() } else { a.add_diagonal(jitter).0 };
        if let Some(ch) = nalgebra::Cholesky::new(m) {
            let lower = ch.unpack();
            if lower.diagonal().iter().all(|v| v.is_finite() && *v > 0.0) {
                return Ok(CholFactor { lower, jitter_used: jitter });
            }
        }
    }
    Err(Error::NotPositiveDefinite { max_jitter: tried })
}

/// A multivariate normal distribution held as mean and covariance factor.
#[derive(Clone, Debug)]
pub struct MvnDist {
    mean: DVector<f64>,
    chol: CholFactor,
}

impl MvnDist {
    pub fn new(mean: DVector<f64>, cov: &SymMatrix) -> Result<Self> {
        Self::with_schedule(mean, cov, &DEFAULT_JITTER_SCHEDULE)
    }

    pub fn with_schedule(mean: DVector<f64>, cov: &SymMatrix, schedule: &[f64]) -> Result<Self> {
        check_dim(cov.dim(), mean.len())?;
        let chol = cholesky(cov, schedule)?;
        Ok(Self { mean, chol })
    }

    pub fn from_factor(mean: DVector<f64>, chol: CholFactor) -> Result<Self> {
        check_dim(chol.dim(), mean.len())?;
        Ok(Self { mean, chol })
    }

    /// Standard normal in `n` dimensions.
    pub fn standard(n: usize) -> Self {
        Self {
            mean: DVector::zeros(n),
            chol: CholFactor { lower: DMatrix::identity(n, n), jitter_used: 0.0 },
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn chol(&self) -> &CholFactor {
        &self.chol
    }

    pub fn covariance(&self) -> SymMatrix {
        self.chol.reconstruct()
    }
}

/// Exact log-density of `y` under `dist`.
pub fn mvn_logpdf(y: &DVector<f64>, dist: &MvnDist) -> Result<f64> {
    check_dim(dist.dim(), y.len())?;
    let z = dist.chol.solve_lower(&(y - &dist.mean));
    let n = y.len() as f64;
    Ok(-0.5 * z.norm_squared() - 0.5 * dist.chol.log_det() - 0.5 * n * LN_2PI)
}

/// Draws `m` samples; row `i` of the result is the `i`-th draw `mean + L·z`.
pub fn mvn_sample<R: Rng + ?Sized>(dist: &MvnDist, rng: &mut R, m: usize) -> DMatrix<f64> {
    let n = dist.dim();
    let z = DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut draws = &dist.chol.lower * z;
    for mut col in draws.column_iter_mut() {
        col += &dist.mean;
    }
    draws.transpose()
}

/// Closed-form `KL(p ‖ q)` between two Gaussians of equal dimension.
pub fn mvn_kl(p: &MvnDist, q: &MvnDist) -> Result<f64> {
    check_dim(q.dim(), p.dim())?;
    let n = p.dim() as f64;
    // tr(Σq⁻¹ Σp) = ‖Lq⁻¹ Lp‖²_F
    let m = q.chol.solve_lower_mat(&p.chol.lower);
    let trace = m.norm_squared();
    let diff = q.chol.solve_lower(&(&q.mean - &p.mean));
    let kl = 0.5 * (trace + diff.norm_squared() - n + q.chol.log_det() - p.chol.log_det());
    Ok(kl.max(0.0))
}

/// Pearson correlation of two equally long vectors.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dim(a.len(), b.len())?;
    if a.len() < 2 {
        return Err(Error::DegenerateInput("pearson needs at least two values".into()));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return Err(Error::DegenerateInput("zero variance in pearson input".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Sample covariance of the rows of `samples` with `1/m` normalization.
pub fn empirical_covariance(samples: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let m = samples.nrows() as f64;
    let mean = samples.row_mean().transpose();
    let mut centered = samples.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / m;
    (mean, cov)
}
