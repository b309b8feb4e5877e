//! Experiment drivers. Each returns its result tables; nothing here touches
//! the filesystem except `synth-gen`, which also caches datasets.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use ppc_core::gp::GpFitConfig;
use ppc_core::io::save_dataset;
use ppc_core::metrics::theorem::{random_instance, PerturbationFamily};
use ppc_core::metrics::{
    joint_ll_random_batches, marginal_ll, metacorrelation, theorem_check, xll_report, ModelPrediction, XllReport,
};
use ppc_core::models::{fit_model, fit_reference_gp, ModelSpec};
use ppc_core::rng::{derive_seed, derive_tagged, seeded_rng};
use ppc_core::synth::{synth_generate_with, SynthConfig};
use ppc_core::tal::{tal_aggregate, tal_run, uci_protocol, ConditionTraces, TalConfig, TalData, TalTrace};
use rayon::prelude::*;

use crate::config::{DataConfig, ExperimentConfig, ModelConfig, TalSection};
use crate::error::{BenchError, Result};
use crate::output::{fmt_f64, Table};

/// Data loaded once per run.
#[derive(Clone, Debug)]
pub enum Source {
    Synthetic { d: usize, generator: SynthConfig },
    Csv { name: String, x: DMatrix<f64>, y: DVector<f64>, reference_fit: GpFitConfig },
}

impl Source {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Option<Self>> {
        Ok(match &cfg.data {
            None => None,
            Some(DataConfig::Synthetic { d, generator }) => Some(Source::Synthetic { d: *d, generator: generator.clone() }),
            Some(DataConfig::Csv { path }) => {
                let (x, y) = crate::dataset::load_dataset(path)?;
                let name = path.file_stem().map_or_else(|| "csv".into(), |s| s.to_string_lossy().into_owned());
                Some(Source::Csv { name, x, y, reference_fit: cfg.reference_fit.clone() })
            }
        })
    }

    pub fn label(&self) -> String {
        match self {
            Source::Synthetic { d, .. } => format!("synthetic_d{d}"),
            Source::Csv { name, .. } => name.clone(),
        }
    }

    /// Splits and oracle for one root seed.
    pub fn instance(&self, seed: u64) -> Result<Instance> {
        match self {
            Source::Synthetic { d, generator } => {
                let ds = synth_generate_with(*d, generator, seed)?;
                Ok(Instance {
                    seed,
                    data: TalData::from(&ds),
                    oracle: ModelSpec::fixed_gp(ds.kernel.clone(), ds.noise_variance),
                    protocol: None,
                })
            }
            Source::Csv { x, y, reference_fit, .. } => {
                let split = uci_protocol(x.nrows(), seed)?;
                let data = split.data(x, y)?;
                let rows: Vec<usize> = split.train.iter().chain(&split.pool).copied().collect();
                let xr = DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)]);
                let yr = DVector::from_iterator(rows.len(), rows.iter().map(|&i| y[i]));
                let fit = GpFitConfig { seed: derive_tagged(seed, "reference", 0), ..reference_fit.clone() };
                let oracle = fit_reference_gp(&xr, &yr, &fit)?;
                Ok(Instance { seed, data, oracle, protocol: Some((split.iterations, split.per_iteration_query)) })
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Instance {
    pub seed: u64,
    pub data: TalData,
    pub oracle: ModelSpec,
    /// `(T, m)` from the split protocol, for CSV data.
    pub protocol: Option<(usize, usize)>,
}

impl Instance {
    pub fn resolve(&self, model: &ModelConfig) -> ModelSpec {
        match model {
            ModelConfig::Spec { spec } => spec.clone(),
            ModelConfig::Oracle { lengthscale_factor, noise_factor } => match &self.oracle {
                ModelSpec::FixedGp { kernel, noise_variance, scaling } => ModelSpec::FixedGp {
                    kernel: kernel.scale_lengthscales(*lengthscale_factor),
                    noise_variance: noise_variance * noise_factor,
                    scaling: scaling.clone(),
                },
                other => other.clone(),
            },
        }
    }

    /// Every configured model trained on the train split and summarized on the test split.
    pub fn predictions(&self, cfg: &ExperimentConfig) -> Result<Vec<ModelPrediction>> {
        cfg.models
            .par_iter()
            .map(|m| {
                let spec = self.resolve(&m.model);
                let seed = derive_tagged(self.seed, &format!("model:{}", m.id), 0);
                let fitted = fit_model(&spec, &self.data.x_train, &self.data.y_train, &self.data.x_test, seed)?;
                Ok(ModelPrediction::new(m.id.clone(), fitted.summary))
            })
            .collect()
    }
}

fn instances(source: &Source, seeds: &[u64]) -> Result<Vec<Instance>> {
    seeds.par_iter().map(|&s| source.instance(s)).collect()
}

pub fn synth_gen(source: &Source, seeds: &[u64], dataset_dir: &Path) -> Result<(Table, Vec<String>)> {
    let Source::Synthetic { d, generator } = source else {
        return Err(BenchError::Config(vec!["synth-gen needs synthetic data".into()]));
    };
    std::fs::create_dir_all(dataset_dir).map_err(|e| BenchError::io("creating dataset directory", e))?;
    let written: Vec<(u64, String, ppc_core::synth::SyntheticDataset)> = seeds
        .par_iter()
        .map(|&s| {
            let ds = synth_generate_with(*d, generator, s)?;
            let name = format!("synth_d{d}_seed{s}.bin");
            save_dataset(&dataset_dir.join(&name), &ds)?;
            Ok((s, name, ds))
        })
        .collect::<Result<_>>()?;
    let mut t = Table::new("synth_gen", &["seed", "d", "split", "n", "y_mean", "y_var", "f_var", "noise_var", "file"]);
    let mut files = Vec::new();
    for (s, name, ds) in written {
        for (label, split) in [("train", &ds.train), ("test", &ds.test), ("pool", &ds.pool)] {
            let n = split.y.len() as f64;
            let ym = split.y.mean();
            let var = |v: &DVector<f64>, m: f64| v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / n;
            t.push(vec![
                s.to_string(),
                d.to_string(),
                label.into(),
                split.y.len().to_string(),
                fmt_f64(ym),
                fmt_f64(var(&split.y, ym)),
                fmt_f64(var(&split.f, split.f.mean())),
                fmt_f64(var(&split.noise, 0.0)),
                format!("datasets/{name}"),
            ]);
        }
        files.push(format!("datasets/{name}"));
    }
    Ok((t, files))
}

struct TalTask<'a> {
    instance: &'a Instance,
    selection: &'a str,
    acquisition: ppc_core::tal::Acquisition,
}

pub const TAL_COLUMNS: [&str; 10] = [
    "dataset",
    "seed",
    "prediction_model",
    "selection_model",
    "acquisition",
    "iteration",
    "n_train",
    "rmse",
    "loglik",
    "queried",
];

pub fn tal_experiment(cfg: &ExperimentConfig, source: &Source, seeds: &[u64]) -> Result<Vec<Table>> {
    let sec: &TalSection = cfg.tal.as_ref().expect("validated");
    let insts = instances(source, seeds)?;
    let tasks: Vec<TalTask> = insts
        .iter()
        .flat_map(|inst| {
            sec.selection_models.iter().flat_map(move |sel| {
                sec.acquisitions.iter().map(move |&a| TalTask { instance: inst, selection: sel, acquisition: a })
            })
        })
        .collect();
    let prediction = &cfg.model(&sec.prediction_model).expect("validated").model;
    let traces: Vec<TalTrace> = tasks
        .par_iter()
        .map(|task| {
            let inst = task.instance;
            let (iterations, m) = match (sec.iterations, sec.per_iteration_query, inst.protocol) {
                (Some(t), Some(m), _) => (t, m),
                (t, m, Some((pt, pm))) => (t.unwrap_or(pt), m.unwrap_or(pm)),
                _ => unreachable!("validated"),
            };
            let config = TalConfig {
                iterations,
                per_iteration_query: m,
                selection_model: inst.resolve(&cfg.model(task.selection).expect("validated").model),
                prediction_model: inst.resolve(prediction),
                acquisition: task.acquisition,
                seed: inst.seed,
            };
            let tr = tal_run(&config, &inst.data)?;
            log::info!("tal seed={} sel={} acq={} done", inst.seed, task.selection, task.acquisition.name());
            Ok(tr)
        })
        .collect::<Result<_>>()?;

    let label = source.label();
    let mut results = Table::new("tal_results", &TAL_COLUMNS);
    for (task, tr) in tasks.iter().zip(&traces) {
        for r in &tr.records {
            results.push(vec![
                label.clone(),
                task.instance.seed.to_string(),
                sec.prediction_model.clone(),
                task.selection.to_string(),
                task.acquisition.name().into(),
                r.iteration.to_string(),
                r.n_train.to_string(),
                fmt_f64(r.rmse),
                fmt_f64(r.loglik),
                r.queried.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(";"),
            ]);
        }
    }

    let per_seed = sec.selection_models.len() * sec.acquisitions.len();
    let groups: Vec<ConditionTraces> = (0..per_seed)
        .map(|c| ConditionTraces {
            condition: format!("{}/{}", tasks[c].selection, tasks[c].acquisition.name()),
            traces: (0..insts.len()).map(|k| traces[k * per_seed + c].clone()).collect(),
        })
        .collect();
    let mut ranking = Table::new(
        "tal_ranking",
        &["condition", "n", "rmse_mean", "rmse_se", "loglik_mean", "loglik_se", "loglik_rank", "rmse_rank"],
    );
    for row in tal_aggregate(&groups)? {
        ranking.push(vec![
            row.condition,
            row.n.to_string(),
            fmt_f64(row.rmse_mean),
            fmt_f64(row.rmse_se),
            fmt_f64(row.loglik_mean),
            fmt_f64(row.loglik_se),
            fmt_f64(row.loglik_rank),
            fmt_f64(row.rmse_rank),
        ]);
    }
    Ok(vec![results, ranking])
}

fn all_predictions(cfg: &ExperimentConfig, source: &Source, seeds: &[u64]) -> Result<Vec<(Instance, Vec<ModelPrediction>)>> {
    let insts = instances(source, seeds)?;
    insts
        .into_iter()
        .map(|inst| {
            let preds = inst.predictions(cfg)?;
            Ok((inst, preds))
        })
        .collect()
}

pub fn xll_experiment(cfg: &ExperimentConfig, source: &Source, seeds: &[u64]) -> Result<Vec<Table>> {
    let runs = all_predictions(cfg, source, seeds)?;
    let reports: Vec<XllReport> = runs
        .par_iter()
        .map(|(inst, preds)| xll_report(preds, &inst.data.y_test, cfg.metrics.batch_size).map_err(BenchError::from))
        .collect::<Result<_>>()?;
    let mut pairs = Table::new("xll", &["seed", "candidate", "reference", "xll", "rank"]);
    let mut summary = Table::new("xll_summary", &["seed", "model", "avg_xll", "avg_xllr"]);
    for ((inst, _), rep) in runs.iter().zip(&reports) {
        for (i, cand) in rep.models.iter().enumerate() {
            for (j, refm) in rep.models.iter().enumerate() {
                pairs.push(vec![
                    inst.seed.to_string(),
                    cand.clone(),
                    refm.clone(),
                    fmt_f64(rep.xll[(i, j)]),
                    fmt_f64(rep.rank[(i, j)]),
                ]);
            }
            summary.push(vec![inst.seed.to_string(), cand.clone(), fmt_f64(rep.avg_xll[i]), fmt_f64(rep.avg_xllr[i])]);
        }
    }
    Ok(vec![pairs, summary])
}

fn metacorr_column(
    cfg: &ExperimentConfig,
    inst: &Instance,
    preds: &[ModelPrediction],
) -> Result<Option<Vec<f64>>> {
    let Some(oid) = cfg.oracle_id() else {
        return Ok(None);
    };
    let oracle = preds.iter().find(|p| p.model_id == oid).expect("oracle is a configured model");
    preds
        .iter()
        .map(|p| {
            // Same pairs for every model.
            let mut rng = seeded_rng(derive_tagged(inst.seed, "pairs", 0));
            Ok(metacorrelation(p, oracle, cfg.metrics.pair_budget, &mut rng)?)
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

pub fn metacorr_experiment(cfg: &ExperimentConfig, source: &Source, seeds: &[u64]) -> Result<Vec<Table>> {
    let runs = all_predictions(cfg, source, seeds)?;
    let mut t = Table::new("metacorrelation", &["seed", "model", "metacorrelation"]);
    for (inst, preds) in &runs {
        let mc = metacorr_column(cfg, inst, preds)?.expect("validated");
        for (p, v) in preds.iter().zip(mc) {
            t.push(vec![inst.seed.to_string(), p.model_id.clone(), fmt_f64(v)]);
        }
    }
    Ok(vec![t])
}

pub fn joint_ll_experiment(cfg: &ExperimentConfig, source: &Source, seeds: &[u64]) -> Result<Vec<Table>> {
    let runs = all_predictions(cfg, source, seeds)?;
    let mut t = Table::new("joint_ll", &["seed", "model", "joint_ll", "marginal_ll", "metacorrelation"]);
    for (inst, preds) in &runs {
        let mc = metacorr_column(cfg, inst, preds)?;
        for (k, p) in preds.iter().enumerate() {
            let mut rng = seeded_rng(derive_tagged(inst.seed, "batches", 0));
            let m = &cfg.metrics;
            let joint = joint_ll_random_batches(p, &inst.data.y_test, m.batch_size, m.n_batches, &mut rng)?;
            let marg = marginal_ll(p, &inst.data.y_test)?;
            t.push(vec![
                inst.seed.to_string(),
                p.model_id.clone(),
                fmt_f64(joint),
                fmt_f64(marg),
                mc.as_ref().map_or_else(String::new, |v| fmt_f64(v[k])),
            ]);
        }
    }
    Ok(vec![t])
}

pub fn theorem_experiment(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<Vec<Table>> {
    let sec = &cfg.theorem;
    let mut tables = Vec::new();
    if sec.instances > 0 {
        let jobs: Vec<(u64, usize)> = seeds.iter().flat_map(|&s| (0..sec.instances).map(move |i| (s, i))).collect();
        let reports = jobs
            .par_iter()
            .map(|&(s, i)| {
                let b = sec.block_sizes[i % sec.block_sizes.len()];
                let inst = random_instance(&mut seeded_rng(derive_seed(s, i as u64)), b);
                theorem_check(&inst).map_err(BenchError::from)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut t = Table::new(
            "theorem",
            &[
                "seed", "instance", "b", "xi", "lambda", "kl_full", "kl_corr", "kl_marg", "term1", "term2", "term3",
                "residual", "gap", "bound",
            ],
        );
        for ((s, i), r) in jobs.iter().zip(reports) {
            let mut row = vec![s.to_string(), i.to_string(), r.b.to_string()];
            row.extend(
                [r.xi, r.lambda, r.kl_full, r.kl_corr, r.kl_marg, r.term1, r.term2, r.term3, r.residual, r.gap, r.bound]
                    .map(fmt_f64),
            );
            t.push(row);
        }
        tables.push(t);
    }
    if sec.families > 0 {
        let jobs: Vec<(u64, usize)> = seeds.iter().flat_map(|&s| (0..sec.families).map(move |f| (s, f))).collect();
        let rows = jobs
            .par_iter()
            .map(|&(s, f)| {
                let b = sec.block_sizes.get(f % sec.block_sizes.len().max(1)).copied().unwrap_or(5);
                let fam = PerturbationFamily::random(&mut seeded_rng(derive_tagged(s, "family", f as u64)), b);
                sec.xi
                    .iter()
                    .map(|&target| {
                        let r = theorem_check(&fam.instance_with_xi(target)?)?;
                        Ok(vec![
                            s.to_string(),
                            f.to_string(),
                            b.to_string(),
                            fmt_f64(target),
                            fmt_f64(r.xi),
                            fmt_f64(r.gap),
                            fmt_f64(r.bound),
                            fmt_f64(r.gap / r.bound),
                        ])
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let mut t = Table::new("theorem_scaling", &["seed", "family", "b", "target_xi", "xi", "gap", "bound", "ratio"]);
        rows.into_iter().flatten().for_each(|r| t.push(r));
        tables.push(t);
    }
    Ok(tables)
}
