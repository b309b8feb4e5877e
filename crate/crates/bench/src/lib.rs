//! Experiment runner behind the `ppc-bench` command.
//!
//! A run reads one JSON config, validates all of it, computes, and writes
//! CSV tables plus `manifest.json` and `run.log` into the output directory.
//! See the book's CLI chapter for the config schema and CSV columns.

pub mod config;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod output;

use std::path::PathBuf;

pub use config::{Experiment, ExperimentConfig};
pub use error::{BenchError, Result};

use experiments::Source;
use output::RunOutput;

/// Environment variable overriding the output directory (below `--out`).
pub const OUT_ENV: &str = "PPC_BENCH_OUT";

#[derive(Clone, Debug)]
pub struct RunArgs {
    pub experiment: Experiment,
    pub config: PathBuf,
    pub seed_offset: u64,
    pub out: Option<PathBuf>,
}

fn output_dir(args: &RunArgs, cfg: &ExperimentConfig) -> PathBuf {
    args.out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("ppc-out").join(args.experiment.name()))
}

/// Runs one experiment and returns the output directory.
pub fn run(args: &RunArgs) -> Result<PathBuf> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    cfg.validate(args.experiment)?;
    cfg.experiment = Some(args.experiment);
    let seeds: Vec<u64> = cfg.seeds.iter().map(|s| s.wrapping_add(args.seed_offset)).collect();
    cfg.seeds = seeds.clone();
    let dir = output_dir(args, &cfg);
    cfg.output_dir = Some(dir.clone());

    let source = Source::from_config(&cfg)?;
    let threads = cfg.parallelism.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| BenchError::Config(vec![format!("cannot start {threads} worker threads: {e}")]))?;

    let mut out = RunOutput::create(&dir)?;
    out.log(&format!("{} with {} seeds on {threads} threads", args.experiment, seeds.len()));
    if let Some(s) = &source {
        out.log(&format!("data: {}", s.label()));
    }
    let dataset_dir = dir.join("datasets");
    let tables = pool.install(|| -> Result<Vec<output::Table>> {
        let src = || source.as_ref().expect("validated: data section present");
        match args.experiment {
            Experiment::SynthGen => {
                let (t, files) = experiments::synth_gen(src(), &seeds, &dataset_dir)?;
                for f in files {
                    out.record_file(f);
                }
                Ok(vec![t])
            }
            Experiment::TalRun => experiments::tal_experiment(&cfg, src(), &seeds),
            Experiment::XllEval => experiments::xll_experiment(&cfg, src(), &seeds),
            Experiment::MetacorrEval => experiments::metacorr_experiment(&cfg, src(), &seeds),
            Experiment::TheoremCheck => experiments::theorem_experiment(&cfg, &seeds),
            Experiment::JointLlDiag => experiments::joint_ll_experiment(&cfg, src(), &seeds),
        }
    })?;
    for t in &tables {
        out.write_table(t)?;
    }
    out.finish(args.experiment, &cfg, args.seed_offset)?;
    Ok(dir)
}
