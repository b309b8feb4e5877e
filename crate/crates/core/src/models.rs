//! One entry point for every model family: train on `(x, y)`, report a joint
//! predictive summary at query locations.
//!
//! Learned models see inputs and targets standardized with training-set
//! statistics, and their summaries are mapped back to the original target
//! scale. A [`ModelSpec::FixedGp`] uses the data as given unless it carries
//! its own frozen [`Standardizer`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bnn::{ensemble_train, hmc_sample, EnsembleConfig, HmcConfig, MlpArch, TrainData};
use crate::error::{check_dim, Error, Result};
use crate::gp::{gp_fit, GpFitConfig, GpModel};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::posterior::{summary_from_gaussian, summary_from_samples, PredictiveSummary};

fn default_hidden() -> Vec<usize> {
    vec![50]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// GP with fixed hyperparameters, conditioned on the current training set.
    FixedGp {
        kernel: KernelSpec,
        noise_variance: f64,
        #[serde(default)]
        scaling: Option<Standardizer>,
    },
    /// GP with hyperparameters fitted by marginal likelihood.
    GpFit {
        family: KernelFamily,
        #[serde(default)]
        fit: GpFitConfig,
    },
    Hmc {
        #[serde(default = "default_hidden")]
        hidden: Vec<usize>,
        #[serde(default)]
        hmc: HmcConfig,
    },
    Ensemble {
        #[serde(default = "default_hidden")]
        hidden: Vec<usize>,
        #[serde(default)]
        ensemble: EnsembleConfig,
    },
}

impl ModelSpec {
    pub fn fixed_gp(kernel: KernelSpec, noise_variance: f64) -> Self {
        ModelSpec::FixedGp { kernel, noise_variance, scaling: None }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ModelSpec::FixedGp { .. } => "fixed_gp",
            ModelSpec::GpFit { .. } => "gp_fit",
            ModelSpec::Hmc { .. } => "hmc",
            ModelSpec::Ensemble { .. } => "ensemble",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::FixedGp { kernel, noise_variance, scaling } => {
                kernel.validate(None)?;
                if !(*noise_variance > 0.0 && noise_variance.is_finite()) {
                    return Err(Error::InvalidArgument(format!("noise_variance must be > 0, got {noise_variance}")));
                }
                if let Some(s) = scaling {
                    s.validate()?;
                }
                Ok(())
            }
            ModelSpec::GpFit { fit, .. } => {
                if fit.restarts == 0 || !(fit.learning_rate > 0.0) || !(fit.noise_floor > 0.0) {
                    return Err(Error::InvalidArgument("gp fit needs restarts >= 1, learning_rate > 0, noise_floor > 0".into()));
                }
                Ok(())
            }
            ModelSpec::Hmc { hidden, hmc } => {
                check_hidden(hidden)?;
                hmc.validate()
            }
            ModelSpec::Ensemble { hidden, ensemble } => {
                check_hidden(hidden)?;
                if ensemble.n_members < 2 || !(ensemble.learning_rate > 0.0) {
                    return Err(Error::InvalidArgument("ensemble needs >= 2 members and learning_rate > 0".into()));
                }
                Ok(())
            }
        }
    }
}

fn check_hidden(hidden: &[usize]) -> Result<()> {
    if hidden.is_empty() || hidden.contains(&0) {
        return Err(Error::InvalidArgument(format!("hidden widths must be nonempty and positive, got {hidden:?}")));
    }
    Ok(())
}

/// Per-column input shift/scale and target shift/scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Standardizer {
    pub x_mean: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub y_mean: f64,
    pub y_scale: f64,
}

fn mean_and_scale<'a>(v: impl ExactSizeIterator<Item = &'a f64> + Clone) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.clone().sum::<f64>() / n;
    let sd = (v.map(|a| (a - m) * (a - m)).sum::<f64>() / n).sqrt();
    // Constant columns are centred but not scaled.
    (m, if sd > 1e-12 { sd } else { 1.0 })
}

impl Standardizer {
    pub fn from_data(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Self> {
        check_dim(x.nrows(), y.len())?;
        if y.is_empty() {
            return Err(Error::InvalidArgument("cannot standardize an empty training set".into()));
        }
        let (x_mean, x_scale) = x.column_iter().map(|c| mean_and_scale(c.iter())).unzip();
        let (y_mean, y_scale) = mean_and_scale(y.iter());
        Ok(Self { x_mean, x_scale, y_mean, y_scale })
    }

    fn validate(&self) -> Result<()> {
        check_dim(self.x_mean.len(), self.x_scale.len())?;
        if self.x_scale.iter().chain([&self.y_scale]).any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument("standardizer scales must be positive".into()));
        }
        Ok(())
    }

    pub fn transform_x(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.x_mean.len(), x.ncols())?;
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.x_mean[j]) / self.x_scale[j]))
    }

    pub fn transform_y(&self, y: &DVector<f64>) -> DVector<f64> {
        y.map(|v| (v - self.y_mean) / self.y_scale)
    }

    /// Maps a summary computed on the standardized scale back to original units.
    pub fn restore(&self, summary: &PredictiveSummary, locations: &DMatrix<f64>) -> Result<PredictiveSummary> {
        summary.rescaled(locations.clone(), self.y_mean, self.y_scale)
    }
}

/// Predictive summary plus whatever the model learned about its hyperparameters.
#[derive(Clone, Debug)]
pub struct FittedModel {
    pub summary: PredictiveSummary,
    pub hyperparameters: serde_json::Value,
}

/// Trains `spec` on `(x, y)` and summarizes its predictions at `xq`.
pub fn fit_model(
    spec: &ModelSpec,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    xq: &DMatrix<f64>,
    seed: u64,
) -> Result<FittedModel> {
    check_dim(x.nrows(), y.len())?;
    check_dim(x.ncols(), xq.ncols())?;
    spec.validate()?;
    match spec {
        ModelSpec::FixedGp { kernel, noise_variance, scaling } => {
            let summary = match scaling {
                None => {
                    let gp = GpModel::new(kernel.clone(), *noise_variance, x.clone(), y.clone())?;
                    summary_from_gaussian(&gp.predict_joint(xq, false)?, *noise_variance)?
                }
                Some(st) => {
                    let gp = GpModel::new(kernel.clone(), *noise_variance, st.transform_x(x)?, st.transform_y(y))?;
                    let s = summary_from_gaussian(&gp.predict_joint(&st.transform_x(xq)?, false)?, *noise_variance)?;
                    st.restore(&s, xq)?
                }
            };
            Ok(FittedModel { summary, hyperparameters: json!({ "kernel": kernel, "noise_variance": noise_variance }) })
        }
        ModelSpec::GpFit { family, fit } => {
            let st = Standardizer::from_data(x, y)?;
            let config = GpFitConfig { seed, ..fit.clone() };
            let gp = gp_fit(&st.transform_x(x)?, &st.transform_y(y), *family, &config)?;
            let s = summary_from_gaussian(&gp.predict_joint(&st.transform_x(xq)?, false)?, gp.noise_variance())?;
            Ok(FittedModel {
                summary: st.restore(&s, xq)?,
                hyperparameters: json!({
                    "kernel": gp.kernel(),
                    "noise_variance": gp.noise_variance(),
                    "log_marginal_likelihood": gp.log_marginal_likelihood(),
                }),
            })
        }
        ModelSpec::Hmc { hidden, hmc } => {
            let st = Standardizer::from_data(x, y)?;
            let (xs, ys) = (st.transform_x(x)?, st.transform_y(y));
            let arch = MlpArch::new(x.ncols(), hidden)?;
            let (set, diags) = hmc_sample(&arch, TrainData { x: &xs, y: &ys }, hmc, &st.transform_x(xq)?, seed)?;
            let s = summary_from_samples(&set)?;
            Ok(FittedModel {
                summary: st.restore(&s, xq)?,
                hyperparameters: json!({
                    "prior_variance": diags.iter().map(|d| d.prior_variance).collect::<Vec<_>>(),
                    "noise_variance": diags.iter().map(|d| d.noise_variance).collect::<Vec<_>>(),
                    "acceptance_rate": diags.iter().map(|d| d.acceptance_rate).collect::<Vec<_>>(),
                    "step_size": diags.iter().map(|d| d.final_step_size).collect::<Vec<_>>(),
                }),
            })
        }
        ModelSpec::Ensemble { hidden, ensemble } => {
            let st = Standardizer::from_data(x, y)?;
            let (xs, ys) = (st.transform_x(x)?, st.transform_y(y));
            let arch = MlpArch::new(x.ncols(), hidden)?;
            let set = ensemble_train(&arch, TrainData { x: &xs, y: &ys }, ensemble, &st.transform_x(xq)?, seed)?;
            let s = summary_from_samples(&set)?;
            Ok(FittedModel {
                summary: st.restore(&s, xq)?,
                hyperparameters: json!({ "noise_variance": set.noise_variance() }),
            })
        }
    }
}

/// RBF-ARD GP fitted on all of `(x, y)` and frozen, with its own standardizer.
/// Used as the reference predictor on real data, where no generating model exists.
pub fn fit_reference_gp(x: &DMatrix<f64>, y: &DVector<f64>, config: &GpFitConfig) -> Result<ModelSpec> {
    let st = Standardizer::from_data(x, y)?;
    let gp = gp_fit(&st.transform_x(x)?, &st.transform_y(y), KernelFamily::RbfArd, config)?;
    Ok(ModelSpec::FixedGp { kernel: gp.kernel().clone(), noise_variance: gp.noise_variance(), scaling: Some(st) })
}
