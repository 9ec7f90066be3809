use thiserror::Error;

use crate::expr::{EvalError, ParseError};
use crate::meanfield::IterationReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent configuration (bad constants, missing keys, non-positive sizes).
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller handed an operation data of the wrong shape or an invalid object.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("step size too large: lambda * dt = {lambda} * {dt} >= 1, increase the number of steps")]
    StepSize { lambda: f64, dt: f64 },

    #[error("terminal compatibility violated at terminal node {node}: xi = {terminal} < obstacle = {obstacle}")]
    Compatibility {
        node: usize,
        terminal: f64,
        obstacle: f64,
    },

    #[error("gate failure: {0}")]
    Gate(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("inner solve did not converge at level {level}, node {node} (residual {residual:e})")]
    InnerSolve {
        level: usize,
        node: usize,
        residual: f64,
    },

    #[error("no convergence after {iterations} iterations (last difference {last_diff:e})")]
    NonConvergence {
        iterations: usize,
        last_diff: f64,
        report: Box<IterationReport>,
    },

    #[error("tolerance breach: {0}")]
    Tolerance(String),

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error(transparent)]
    Eval(#[from] EvalError),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for the command-line front end.
    ///
    /// 2 gate failure, 3 non-convergence or tolerance breach, 4 configuration class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Gate(_) => 2,
            Error::NonConvergence { .. } | Error::Tolerance(_) | Error::InnerSolve { .. } => 3,
            _ => 4,
        }
    }
}
