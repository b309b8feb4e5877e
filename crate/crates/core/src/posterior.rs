//! Predictive summaries shared by every model family: mean, function
//! covariance, marginal deviations and correlations at a set of locations.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::bnn::FunctionSampleSet;
use crate::error::{check_dim, Error, Result};
use crate::gaussian::{cholesky, empirical_covariance, SymMatrix};
use crate::gp::GpPrediction;

/// Default eigenvalue floor used by [`psd_repair`].
pub const PSD_FLOOR: f64 = 1e-6;
/// Variances at or below this make correlations undefined.
pub const MIN_VARIANCE: f64 = 1e-12;
/// Bound applied to correlations before any likelihood evaluation.
pub const CORR_CLAMP: f64 = 1.0 - 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveSummary {
    locations: DMatrix<f64>,
    mean: DVector<f64>,
    cov: SymMatrix,
    marginal_sd: DVector<f64>,
    corr: SymMatrix,
    noise_variance: f64,
}

fn correlation_from(cov: &SymMatrix) -> Result<(DVector<f64>, SymMatrix)> {
    let var = cov.diagonal();
    if let Some(index) = var.iter().position(|v| !(*v > MIN_VARIANCE)) {
        return Err(Error::ZeroVariance { index });
    }
    let sd = var.map(f64::sqrt);
    let corr = cov.scale_both(&sd.map(|s| 1.0 / s))?.into_inner();
    let n = corr.nrows();
    let corr = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { corr[(i, j)].clamp(-1.0, 1.0) });
    Ok((sd, SymMatrix::symmetrize(corr)?))
}

impl PredictiveSummary {
    /// Builds a summary from an explicit mean and noise-free covariance.
    pub fn from_moments(
        locations: DMatrix<f64>,
        mean: DVector<f64>,
        cov: SymMatrix,
        noise_variance: f64,
    ) -> Result<Self> {
        check_dim(cov.dim(), mean.len())?;
        check_dim(mean.len(), locations.nrows())?;
        if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise variance must be >= 0, got {noise_variance}")));
        }
        let (marginal_sd, corr) = correlation_from(&cov)?;
        Ok(Self { locations, mean, cov, marginal_sd, corr, noise_variance })
    }

    pub fn locations(&self) -> &DMatrix<f64> {
        &self.locations
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Noise-free function covariance.
    pub fn cov(&self) -> &SymMatrix {
        &self.cov
    }

    pub fn marginal_sd(&self) -> &DVector<f64> {
        &self.marginal_sd
    }

    /// Function correlation matrix.
    pub fn corr(&self) -> &SymMatrix {
        &self.corr
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Predictive covariance of observations, `Σ + σ_n² I`.
    pub fn observation_cov(&self) -> SymMatrix {
        self.cov.add_diagonal(self.noise_variance)
    }

    /// Marginal standard deviations of observations.
    pub fn observation_sd(&self) -> DVector<f64> {
        self.cov.diagonal().map(|v| (v + self.noise_variance).sqrt())
    }

    /// Correlations of observations, clamped to `±(1 − 1e−12)` off the diagonal.
    pub fn observation_corr(&self) -> SymMatrix {
        let inv = self.observation_sd().map(|s| 1.0 / s);
        let c = self.observation_cov().scale_both(&inv).expect("dimensions agree").into_inner();
        let n = c.nrows();
        SymMatrix::symmetrize(DMatrix::from_fn(n, n, |i, j| {
            if i == j { 1.0 } else { c[(i, j)].clamp(-CORR_CLAMP, CORR_CLAMP) }
        }))
        .expect("square")
    }

    /// Reassembles a summary from stored parts; used when reading cached files.
    pub(crate) fn from_parts(
        locations: DMatrix<f64>,
        mean: DVector<f64>,
        cov: SymMatrix,
        corr: SymMatrix,
        noise_variance: f64,
    ) -> Result<Self> {
        let mut s = Self::from_moments(locations, mean, cov, noise_variance)?;
        check_dim(s.dim(), corr.dim())?;
        s.corr = corr;
        Ok(s)
    }

    /// Summary of `shift + scale·f` reported at `locations`; correlations are unchanged.
    pub fn rescaled(&self, locations: DMatrix<f64>, shift: f64, scale: f64) -> Result<Self> {
        check_dim(self.dim(), locations.nrows())?;
        if !(scale > 0.0 && scale.is_finite() && shift.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid affine map ({shift}, {scale})")));
        }
        Ok(Self {
            locations,
            mean: self.mean.map(|m| shift + scale * m),
            cov: self.cov.scale(scale * scale),
            marginal_sd: &self.marginal_sd * scale,
            corr: self.corr.clone(),
            noise_variance: self.noise_variance * scale * scale,
        })
    }

    /// Summary restricted to `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let locations = DMatrix::from_fn(idx.len(), self.locations.ncols(), |i, j| self.locations[(idx[i], j)]);
        Self {
            locations,
            mean: DVector::from_fn(idx.len(), |i, _| self.mean[idx[i]]),
            cov: self.cov.submatrix(idx),
            marginal_sd: DVector::from_fn(idx.len(), |i, _| self.marginal_sd[idx[i]]),
            corr: self.corr.submatrix(idx),
            noise_variance: self.noise_variance,
        }
    }
}

/// Summary of a noise-free GP prediction.
pub fn summary_from_gaussian(pred: &GpPrediction, noise_variance: f64) -> Result<PredictiveSummary> {
    if pred.includes_noise {
        return Err(Error::InvalidArgument("expected a noise-free prediction".into()));
    }
    PredictiveSummary::from_moments(pred.locations.clone(), pred.mean.clone(), pred.cov.clone(), noise_variance)
}

/// Monte Carlo summary with `1/m` covariance normalization; the correlation
/// matrix is passed through [`psd_repair`].
pub fn summary_from_samples(s: &FunctionSampleSet) -> Result<PredictiveSummary> {
    let (mean, cov) = empirical_covariance(s.samples());
    let cov = SymMatrix::symmetrize(cov)?;
    let mut summary = PredictiveSummary::from_moments(s.locations().clone(), mean, cov, s.noise_variance())?;
    summary.corr = psd_repair(&summary.corr, PSD_FLOOR)?;
    Ok(summary)
}

fn unit_diagonal(m: DMatrix<f64>) -> DMatrix<f64> {
    let d = m.diagonal().map(|v| 1.0 / v.sqrt());
    let n = m.nrows();
    DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { m[(i, j)] * d[i] * d[j] })
}

fn clip_and_rescale(eig: &SymmetricEigen<f64, nalgebra::Dyn>, clip: f64) -> DMatrix<f64> {
    let vals = eig.eigenvalues.map(|v| v.max(clip));
    let v = &eig.eigenvectors;
    let m = v * DMatrix::from_diagonal(&vals) * v.transpose();
    unit_diagonal((&m + m.transpose()) * 0.5)
}

/// Nearest-in-spirit PSD correlation matrix: eigenvalues are clipped and the
/// result rescaled to unit diagonal. Inputs that already factor (with `1e−8`
/// on the diagonal) are returned unchanged.
pub fn psd_repair(c: &SymMatrix, floor: f64) -> Result<SymMatrix> {
    if let Some(i) = (0..c.dim()).find(|&i| (c.get(i, i) - 1.0).abs() > 1e-8) {
        return Err(Error::InvalidArgument(format!("diagonal entry {i} is {} (expected 1)", c.get(i, i))));
    }
    if cholesky(&c.add_diagonal(1e-8), &[0.0]).is_ok() {
        return Ok(c.clone());
    }
    let eig = SymmetricEigen::new(c.as_matrix().clone());
    // rescaling can pull the smallest eigenvalue back under the floor, so the
    // clip level is raised until the rescaled matrix clears it
    let mut clip = floor;
    for _ in 0..60 {
        let out = clip_and_rescale(&eig, clip);
        let min = SymmetricEigen::new(out.clone()).eigenvalues.min();
        if min >= floor {
            return SymMatrix::symmetrize(out);
        }
        clip *= (floor / min.max(floor * 1e-3)).max(1.0 + 1e-6);
    }
    Err(Error::NotPositiveDefinite { max_jitter: clip })
}
