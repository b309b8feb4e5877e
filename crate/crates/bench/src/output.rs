//! Result files: CSV tables, the run manifest and the run log.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::config::{Experiment, ExperimentConfig};
use crate::error::{BenchError, Result};

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// A CSV file with fixed columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: impl Into<String>, header: &[&'static str]) -> Self {
        Self { name: name.into(), header: header.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len(), "row width for {}", self.name);
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| *h == name)
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    experiment: Experiment,
    library_version: &'static str,
    /// Config as run, with seeds already shifted by the offset; rerunnable as is.
    config: &'a ExperimentConfig,
    seeds: &'a [u64],
    seed_offset: u64,
    seed_rule: &'static str,
    tal_evaluation: &'static str,
    started_unix_seconds: u64,
    wall_time_seconds: f64,
    outputs: &'a [String],
}

pub const SEED_RULE: &str = "each root seed is the config seed plus --seed-offset; synthetic datasets and \
CSV splits use the root seed; a model's seed is derive_tagged(root, \"model:<id>\", 0); TAL iteration t uses \
derive_tagged(root, \"prediction\" | \"selection\" | \"random\", t); pair and batch draws use \
derive_tagged(root, \"pairs\" | \"batches\", 0); theorem instance i uses derive_seed(root, i)";

pub const TAL_EVALUATION: &str = "the prediction model is evaluated at iterations 0..=T inclusive; the \
row for iteration t precedes the queries made at t, so the last row follows all T batches";

/// Output directory plus log, manifest and file bookkeeping for one run.
pub struct RunOutput {
    dir: PathBuf,
    log: File,
    files: Vec<String>,
    start: Instant,
    started: u64,
}

impl RunOutput {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| BenchError::io(format!("creating {}", dir.display()), e))?;
        let log_path = dir.join("run.log");
        let log = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(&log_path)
            .map_err(|e| BenchError::io(format!("opening {}", log_path.display()), e))?;
        let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        Ok(Self { dir: dir.to_path_buf(), log, files: Vec::new(), start: Instant::now(), started })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn log(&mut self, msg: &str) {
        log::info!("{msg}");
        let _ = writeln!(self.log, "[{:>9.3}s] {msg}", self.start.elapsed().as_secs_f64());
    }

    /// Registers a file written by the experiment itself.
    pub fn record_file(&mut self, relative: impl Into<String>) {
        self.files.push(relative.into());
    }

    pub fn write_table(&mut self, table: &Table) -> Result<()> {
        let name = format!("{}.csv", table.name);
        let path = self.dir.join(&name);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(&table.header)?;
        for row in &table.rows {
            w.write_record(row)?;
        }
        w.flush().map_err(|e| BenchError::io(format!("writing {}", path.display()), e))?;
        self.log(&format!("wrote {name} ({} rows)", table.rows.len()));
        self.files.push(name);
        Ok(())
    }

    pub fn finish(mut self, experiment: Experiment, config: &ExperimentConfig, seed_offset: u64) -> Result<PathBuf> {
        let wall = self.start.elapsed().as_secs_f64();
        self.log(&format!("finished in {wall:.3}s"));
        self.files.push("run.log".into());
        let manifest = Manifest {
            experiment,
            library_version: env!("CARGO_PKG_VERSION"),
            config,
            seeds: &config.seeds,
            seed_offset,
            seed_rule: SEED_RULE,
            tal_evaluation: TAL_EVALUATION,
            started_unix_seconds: self.started,
            wall_time_seconds: wall,
            outputs: &self.files,
        };
        let path = self.dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&path, text).map_err(|e| BenchError::io(format!("writing {}", path.display()), e))?;
        Ok(path)
    }
}
