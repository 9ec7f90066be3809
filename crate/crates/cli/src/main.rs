use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::LevelFilter;

use mfrbsde::harness::{load_problem, run_oracle, run_solve, run_study, OracleCase};
use mfrbsde::{Error, Result};

#[derive(Parser)]
#[command(name = "mfrbsde", version, about = "Lattice solver and verification harness for mean-field reflected BSDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate a configuration, then print its gate report.
    Check {
        #[arg(long)]
        config: PathBuf,
    },
    /// Solve a configured problem; CSV goes to --out or stdout.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the solver against an independent oracle.
    Oracle {
        /// snell, colehopf or meanfield_linear
        #[arg(long)]
        case: String,
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Solve on several step counts and tabulate the root value.
    Study {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        steps: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn init_logging() -> Result<()> {
    let level = match std::env::var("MFRBSDE_LOG").as_deref() {
        Err(_) | Ok("") | Ok("quiet") => LevelFilter::Off,
        Ok("info") => LevelFilter::Info,
        Ok("debug") => LevelFilter::Debug,
        Ok(other) => {
            return Err(Error::Config(format!(
                "MFRBSDE_LOG must be quiet, info or debug, got {other:?}"
            )))
        }
    };
    env_logger::Builder::new()
        .filter_level(level)
        .target(env_logger::Target::Stderr)
        .init();
    Ok(())
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).unwrap_or_else(|e| format!("{{\"error\": \"{e}\"}}"))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

fn emit(text: &str) {
    // a closed pipe is not an error for a report printer
    let _ = std::io::stdout().write_all(text.as_bytes());
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Check { config } => {
            let lp = load_problem(&config)?;
            for w in &lp.warnings {
                log::warn!("{w}");
            }
            emit(&format!(
                "{}\n",
                to_json(&serde_json::json!({
                    "regime": lp.problem.regime.name(),
                    "n_steps": lp.problem.lattice().n_steps(),
                    "gate": lp.gate,
                    "warnings": lp.warnings,
                }))
            ));
        }
        Command::Solve { config, steps, out } => {
            let lp = load_problem(&config)?;
            let output = run_solve(&lp, steps)?;
            let summary = format!("{}\n", to_json(&output.result));
            match out {
                Some(path) => {
                    write_file(&path, &output.csv)?;
                    emit(&summary);
                }
                None => {
                    emit(&output.csv);
                    eprint!("{summary}");
                }
            }
        }
        Command::Oracle {
            case,
            depth,
            steps,
            seed,
        } => {
            let case = OracleCase::from_name(&case).ok_or_else(|| {
                Error::Config(format!(
                    "unknown oracle case {case:?}; expected snell, colehopf or meanfield_linear"
                ))
            })?;
            let report = run_oracle(case, depth, steps, seed)?;
            emit(&report.table());
            if !report.pass {
                return Err(Error::Tolerance(format!(
                    "oracle gap {:e} exceeds tolerance {:e}",
                    report.max_gap, report.tolerance
                )));
            }
        }
        Command::Study { config, steps, out } => {
            let lp = load_problem(&config)?;
            let (rows, csv) = run_study(&lp, &steps)?;
            write_file(&out, &csv)?;
            emit(&format!("{}\n", to_json(&rows)));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(4) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(e) = init_logging() {
        eprintln!("error: {e}");
        return ExitCode::from(e.exit_code() as u8);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::NonConvergence { report, .. } = &e {
                eprintln!("{}", to_json(report.as_ref()));
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
