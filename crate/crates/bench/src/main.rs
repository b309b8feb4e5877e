use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use ppc_bench::{run, Experiment, RunArgs};

/// Posterior predictive correlation benchmarks.
#[derive(Parser, Debug)]
#[command(name = "ppc-bench", version)]
struct Cli {
    /// synth-gen | tal-run | xll-eval | metacorr-eval | theorem-check | joint-ll-diag
    experiment: Experiment,
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Added to every configured seed.
    #[arg(long, default_value_t = 0)]
    seed_offset: u64,
    /// Output directory; overrides PPC_BENCH_OUT and the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let args = RunArgs { experiment: cli.experiment, config: cli.config, seed_offset: cli.seed_offset, out: cli.out };
    match run(&args) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let messages = match &e {
                ppc_bench::BenchError::Config(v) => v.clone(),
                other => vec![other.to_string()],
            };
            let report = serde_json::json!({ "error": e.kind(), "messages": messages });
            eprintln!("{report}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
