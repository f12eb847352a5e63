//! File-level wrappers behind the `simulate` and `bench` subcommands.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};
use crate::parallel::threads_from_env;
use crate::runner::{bench, run_replications, BenchReport, MetricsTable};
use crate::scenario::Scenario;

/// Paths written by [`cmd_simulate`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimulateOutputs {
    pub metrics: PathBuf,
    pub bias_sd: PathBuf,
    pub summary: PathBuf,
    pub coverage: Option<PathBuf>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

/// Runs a scenario file and writes `metrics.json`, `bias_sd.csv`,
/// `summary.csv` and, when intervals were built, `coverage.csv`.
pub fn cmd_simulate(scenario: &Path, out_dir: &Path) -> Result<(MetricsTable, SimulateOutputs)> {
    let sc = Scenario::load(scenario)?;
    let table = run_replications(&sc, threads_from_env())?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let outputs = SimulateOutputs {
        metrics: out_dir.join("metrics.json"),
        bias_sd: out_dir.join("bias_sd.csv"),
        summary: out_dir.join("summary.csv"),
        coverage: table.coverage.as_ref().map(|_| out_dir.join("coverage.csv")),
    };
    let json = serde_json::to_string_pretty(&table).expect("metrics serialize");
    fs::write(&outputs.metrics, json + "\n").map_err(|e| CliError::io(&outputs.metrics, e))?;
    table.write_bias_sd_csv(create(&outputs.bias_sd)?)?;
    table.write_summary_csv(create(&outputs.summary)?)?;
    if let Some(path) = &outputs.coverage {
        table.write_coverage_csv(create(path)?)?;
    }
    Ok((table, outputs))
}

pub fn cmd_bench(scenario: &Path, repeats: usize) -> Result<BenchReport> {
    let sc = Scenario::load(scenario)?;
    bench(&sc, repeats, threads_from_env())
}
