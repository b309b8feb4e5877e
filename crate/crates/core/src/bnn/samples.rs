use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

/// Function values `f_i(x_j)` of `m` posterior samples at `n` locations.
#[derive(Clone, Debug, PartialEq)]
pub struct FunctionSampleSet {
    samples: DMatrix<f64>,
    locations: DMatrix<f64>,
    noise_variance: f64,
    aleatoric_variances: Option<DVector<f64>>,
}

impl FunctionSampleSet {
    pub fn new(
        samples: DMatrix<f64>,
        locations: DMatrix<f64>,
        noise_variance: f64,
        aleatoric_variances: Option<DVector<f64>>,
    ) -> Result<Self> {
        if samples.nrows() < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 samples, got {}", samples.nrows())));
        }
        check_dim(locations.nrows(), samples.ncols())?;
        if let Some(a) = &aleatoric_variances {
            check_dim(samples.ncols(), a.len())?;
        }
        let finite = samples.iter().all(|v| v.is_finite())
            && aleatoric_variances.as_ref().is_none_or(|a| a.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::DegenerateInput("function samples contain non-finite values".into()));
        }
        if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise variance must be >= 0, got {noise_variance}")));
        }
        Ok(Self { samples, locations, noise_variance, aleatoric_variances })
    }

    /// `m × n`, one row per sample.
    pub fn samples(&self) -> &DMatrix<f64> {
        &self.samples
    }

    pub fn locations(&self) -> &DMatrix<f64> {
        &self.locations
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn aleatoric_variances(&self) -> Option<&DVector<f64>> {
        self.aleatoric_variances.as_ref()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_locations(&self) -> usize {
        self.samples.ncols()
    }
}
