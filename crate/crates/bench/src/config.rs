//! Experiment configuration: one JSON document, unknown keys rejected.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ppc_core::gp::GpFitConfig;
use ppc_core::metrics::DEFAULT_PAIR_BUDGET;
use ppc_core::models::ModelSpec;
use ppc_core::synth::SynthConfig;
use ppc_core::tal::Acquisition;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    SynthGen,
    TalRun,
    XllEval,
    MetacorrEval,
    TheoremCheck,
    JointLlDiag,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::SynthGen,
        Experiment::TalRun,
        Experiment::XllEval,
        Experiment::MetacorrEval,
        Experiment::TheoremCheck,
        Experiment::JointLlDiag,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::SynthGen => "synth-gen",
            Experiment::TalRun => "tal-run",
            Experiment::XllEval => "xll-eval",
            Experiment::MetacorrEval => "metacorr-eval",
            Experiment::TheoremCheck => "theorem-check",
            Experiment::JointLlDiag => "joint-ll-diag",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| format!("unknown experiment {s:?}"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// Fresh synthetic dataset per seed.
    Synthetic {
        d: usize,
        #[serde(default)]
        generator: SynthConfig,
    },
    /// Numeric CSV, split per seed with the 20/20/60 protocol.
    Csv { path: PathBuf },
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// The generating GP on synthetic data; a frozen RBF-ARD GP fitted on
    /// train ∪ pool on CSV data. The factors build mis-specified variants.
    Oracle {
        #[serde(default = "one")]
        lengthscale_factor: f64,
        #[serde(default = "one")]
        noise_factor: f64,
    },
    Spec { spec: ModelSpec },
}

impl ModelConfig {
    pub fn is_exact_oracle(&self) -> bool {
        matches!(self, ModelConfig::Oracle { lengthscale_factor, noise_factor } if *lengthscale_factor == 1.0 && *noise_factor == 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub id: String,
    pub model: ModelConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TalSection {
    /// Defaults to the CSV protocol value; required for synthetic data.
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub per_iteration_query: Option<usize>,
    pub acquisitions: Vec<Acquisition>,
    pub selection_models: Vec<String>,
    pub prediction_model: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    pub batch_size: usize,
    pub n_batches: usize,
    pub pair_budget: usize,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self { batch_size: 5, n_batches: 200, pair_budget: DEFAULT_PAIR_BUDGET }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoremSection {
    /// Random instances per seed; instance `i` uses `block_sizes[i % len]`.
    pub instances: usize,
    pub block_sizes: Vec<usize>,
    /// Perturbation families for the ξ sweep (0 disables it).
    pub families: usize,
    pub xi: Vec<f64>,
}

impl Default for TheoremSection {
    fn default() -> Self {
        Self { instances: 1000, block_sizes: vec![2, 5, 10], families: 0, xi: vec![1e-2, 1e-4, 1e-6] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Must match the command-line experiment when present.
    #[serde(default)]
    pub experiment: Option<Experiment>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Maximum concurrent tasks; defaults to the number of cores.
    #[serde(default)]
    pub parallelism: Option<usize>,
    #[serde(default)]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub models: Vec<ModelEntry>,
    /// Hyperparameter fit for the CSV oracle.
    #[serde(default)]
    pub reference_fit: GpFitConfig,
    #[serde(default)]
    pub tal: Option<TalSection>,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub theorem: TheoremSection,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| BenchError::Config(vec![e.to_string()]))
    }

    /// Reads a config; a relative CSV path is resolved against the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(format!("reading {}", path.display()), e))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(DataConfig::Csv { path: p }) = &mut cfg.data {
            if p.is_relative() {
                *p = path.parent().unwrap_or(Path::new(".")).join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn model(&self, id: &str) -> Option<&ModelEntry> {
        self.models.iter().find(|m| m.id == id)
    }

    /// First model that is the unmodified oracle.
    pub fn oracle_id(&self) -> Option<&str> {
        self.models.iter().find(|m| m.model.is_exact_oracle()).map(|m| m.id.as_str())
    }

    /// Collects every problem before anything is computed.
    pub fn validate(&self, experiment: Experiment) -> Result<()> {
        let mut errs = Vec::new();
        if let Some(e) = self.experiment {
            if e != experiment {
                errs.push(format!("config is for {e}, but {experiment} was requested"));
            }
        }
        if self.seeds.is_empty() {
            errs.push("seeds must be nonempty".into());
        }
        if self.seeds.iter().collect::<HashSet<_>>().len() != self.seeds.len() {
            errs.push("seeds must be distinct".into());
        }
        if self.parallelism == Some(0) {
            errs.push("parallelism must be >= 1".into());
        }
        match &self.data {
            Some(DataConfig::Synthetic { d, generator }) => {
                if *d == 0 {
                    errs.push("data.d must be >= 1".into());
                }
                if !(generator.weight_variance > 0.0 && generator.bias_variance > 0.0 && generator.noise_variance > 0.0) {
                    errs.push("data.generator variances must be > 0".into());
                }
            }
            Some(DataConfig::Csv { path }) => {
                if !path.is_file() {
                    errs.push(format!("data.path {} does not exist", path.display()));
                }
            }
            None => {}
        }
        let mut ids = HashSet::new();
        for m in &self.models {
            if !ids.insert(m.id.as_str()) {
                errs.push(format!("model id {:?} is repeated", m.id));
            }
            if m.id.is_empty() || m.id.contains([',', '"', '\n']) {
                errs.push(format!("model id {:?} must be nonempty without commas, quotes or newlines", m.id));
            }
            match &m.model {
                ModelConfig::Oracle { lengthscale_factor, noise_factor } => {
                    if !(*lengthscale_factor > 0.0 && *noise_factor > 0.0) {
                        errs.push(format!("model {}: oracle factors must be > 0", m.id));
                    }
                }
                ModelConfig::Spec { spec } => {
                    if let Err(e) = spec.validate() {
                        errs.push(format!("model {}: {e}", m.id));
                    }
                }
            }
        }
        let needs_data = experiment != Experiment::TheoremCheck;
        if needs_data && self.data.is_none() {
            errs.push(format!("{experiment} needs a data section"));
        }
        let synthetic = matches!(self.data, Some(DataConfig::Synthetic { .. }));
        if experiment == Experiment::SynthGen && !synthetic && self.data.is_some() {
            errs.push("synth-gen needs synthetic data".into());
        }
        if matches!(experiment, Experiment::XllEval | Experiment::MetacorrEval | Experiment::JointLlDiag) {
            if self.models.is_empty() {
                errs.push(format!("{experiment} needs at least one model"));
            }
            if experiment == Experiment::XllEval && self.models.len() < 2 {
                errs.push("xll-eval needs at least two models".into());
            }
            if experiment == Experiment::MetacorrEval && self.oracle_id().is_none() {
                errs.push("metacorr-eval needs an oracle model with unit factors".into());
            }
            let m = &self.metrics;
            if m.batch_size < 1 || m.n_batches < 1 || m.pair_budget < 1 {
                errs.push("metrics.batch_size, n_batches and pair_budget must be >= 1".into());
            }
            if let Some(DataConfig::Synthetic { .. }) = self.data {
                if m.batch_size > ppc_core::synth::N_TEST {
                    errs.push(format!("metrics.batch_size exceeds the {} test points", ppc_core::synth::N_TEST));
                }
            }
        }
        if experiment == Experiment::TalRun {
            match &self.tal {
                None => errs.push("tal-run needs a tal section".into()),
                Some(t) => {
                    if t.acquisitions.is_empty() {
                        errs.push("tal.acquisitions must be nonempty".into());
                    }
                    if t.selection_models.is_empty() {
                        errs.push("tal.selection_models must be nonempty".into());
                    }
                    for id in t.selection_models.iter().chain([&t.prediction_model]) {
                        if self.model(id).is_none() {
                            errs.push(format!("tal refers to unknown model {id:?}"));
                        }
                    }
                    if synthetic {
                        match (t.iterations, t.per_iteration_query) {
                            (Some(it), Some(m)) => {
                                if it * m > ppc_core::synth::N_POOL {
                                    errs.push(format!(
                                        "tal: iterations × per_iteration_query = {} exceeds the pool of {}",
                                        it * m,
                                        ppc_core::synth::N_POOL
                                    ));
                                }
                                if it > 0 && m == 0 {
                                    errs.push("tal.per_iteration_query must be >= 1".into());
                                }
                            }
                            _ => errs.push("tal.iterations and tal.per_iteration_query are required for synthetic data".into()),
                        }
                    }
                }
            }
        }
        if experiment == Experiment::TheoremCheck {
            let t = &self.theorem;
            if t.block_sizes.is_empty() && t.instances > 0 {
                errs.push("theorem.block_sizes must be nonempty".into());
            }
            if t.block_sizes.iter().any(|&b| b < 2) {
                errs.push("theorem.block_sizes must all be >= 2".into());
            }
            if t.instances == 0 && t.families == 0 {
                errs.push("theorem-check needs instances > 0 or families > 0".into());
            }
            if t.families > 0 && (t.xi.is_empty() || t.xi.iter().any(|x| !(*x > 0.0))) {
                errs.push("theorem.xi must be nonempty and positive".into());
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(BenchError::Config(errs))
        }
    }
}
