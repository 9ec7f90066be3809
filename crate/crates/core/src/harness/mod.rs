//! Configuration loading and experiment drivers behind the command-line tool.

pub mod battery;
pub mod config;
pub mod run;

pub use config::{load_problem, load_problem_str, LoadedProblem, ProblemConfig, SCHEMA_VERSION};
pub use run::{run_oracle, run_solve, run_study, OracleCase, OracleReport, RunResult, SolveOutput, StudyRow};
