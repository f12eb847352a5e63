use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sos::commands::{cmd_bench, cmd_simulate};
use sos::error::{exit, CliError, Result};
use sos::generate::{default_covariate_names, gen_airline, write_csv_file, AIRLINE_COVARIATES, AIRLINE_RESPONSE};
use sos::report::{cmd_fit, FitConfig};
use sos::runner::stream_rng;
use sos::scenario::CiMethod;
use sos_core::data::DEFAULT_CHUNK_ROWS;
use sos_core::estimators::NewtonOptions;
use sos_core::models::{LossModel, ModelKind};
use sos_core::simulate::generate;

#[derive(Parser)]
#[command(name = "sos", version, about = "Subsampled one-step estimation for large data sets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model on a CSV file and report intervals as JSON.
    Fit(FitArgs),
    /// Run the replications of a scenario file.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Time FULL, UNI and SOS on one generated data set.
    Bench {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic CSV file.
    Generate(GenerateArgs),
}

#[derive(clap::Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    response: String,
    /// Comma-separated, in model order.
    #[arg(long, value_delimiter = ',', required = true)]
    covariates: Vec<String>,
    /// linear, logistic or weibull.
    #[arg(long)]
    model: String,
    /// Expected subsample size.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Monte Carlo draws per interval; defaults to n.
    #[arg(long)]
    mc_draws: Option<usize>,
    #[arg(long, value_enum, default_value_t = CiMethod::MonteCarlo)]
    ci: CiMethod,
    #[arg(long, default_value_t = DEFAULT_CHUNK_ROWS)]
    chunk_rows: usize,
    #[arg(long, default_value_t = NewtonOptions::default().max_iter)]
    max_iter: usize,
    #[arg(long, default_value_t = NewtonOptions::default().grad_tol)]
    grad_tol: f64,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Linear,
    Logistic,
    Weibull,
    /// Flight-delay schema with binary and distance covariates.
    Airline,
}

#[derive(clap::Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long)]
    rows: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated true parameter; defaults to 0.2 slopes on nine
    /// covariates (with shape 0.5 first for weibull).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta: Option<Vec<f64>>,
    #[arg(long)]
    out: PathBuf,
}

fn default_theta(model: ModelKind) -> Vec<f64> {
    let mut t = vec![0.0];
    t.extend([0.2; 9]);
    if model == ModelKind::Weibull {
        t.insert(0, 0.5);
    }
    t
}

fn write_json(text: &str, out: Option<&PathBuf>) -> Result<()> {
    if let Some(path) = out {
        std::fs::write(path, format!("{text}\n")).map_err(|e| CliError::io(path, e))?;
    }
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{text}").map_err(|e| CliError::io("<stdout>", e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(a) => {
            let model: ModelKind = a
                .model
                .parse()
                .map_err(|e: sos_core::Error| CliError::config(format!("--model: {e}")))?;
            let cfg = FitConfig {
                data: a.data,
                response: a.response,
                covariates: a.covariates,
                model,
                n: a.n,
                seed: a.seed,
                level: a.level,
                mc_draws: a.mc_draws,
                ci: a.ci,
                newton: NewtonOptions {
                    max_iter: a.max_iter,
                    grad_tol: a.grad_tol,
                    ..NewtonOptions::default()
                },
                chunk_rows: a.chunk_rows,
            };
            let report = cmd_fit(&cfg)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            write_json(&report.to_json(), a.out.as_ref())
        }
        Command::Simulate { scenario, out_dir } => {
            let (table, outputs) = cmd_simulate(&scenario, &out_dir)?;
            if table.failed_replications > 0 {
                eprintln!("warning: {} replication(s) had failures", table.failed_replications);
            }
            eprintln!("wrote {}", outputs.metrics.display());
            Ok(())
        }
        Command::Bench { scenario, repeats, out } => {
            let report = cmd_bench(&scenario, repeats)?;
            write_json(&serde_json::to_string_pretty(&report).expect("bench report serializes"), out.as_ref())
        }
        Command::Generate(a) => {
            if a.rows == 0 {
                return Err(CliError::config("--rows must be positive"));
            }
            let mut rng = stream_rng(a.seed, 0);
            match a.kind {
                Kind::Airline => {
                    if a.theta.is_some() {
                        return Err(CliError::config("--theta is fixed for the airline schema"));
                    }
                    let t = gen_airline(&mut rng, a.rows);
                    let names: Vec<String> = AIRLINE_COVARIATES.iter().map(|s| s.to_string()).collect();
                    write_csv_file(&t, AIRLINE_RESPONSE, &names, &a.out)
                }
                k => {
                    let model = match k {
                        Kind::Linear => ModelKind::Linear,
                        Kind::Logistic => ModelKind::Logistic,
                        _ => ModelKind::Weibull,
                    };
                    let theta = a.theta.unwrap_or_else(|| default_theta(model));
                    model
                        .check_theta(&theta)
                        .map_err(|e| CliError::config(format!("--theta: {e}")))?;
                    let t = generate(model, &mut rng, a.rows, &theta)?;
                    let p = theta.len() - if model == ModelKind::Weibull { 2 } else { 1 };
                    write_csv_file(&t, "y", &default_covariate_names(p), &a.out)
                }
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
