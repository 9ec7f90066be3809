//! Deterministic lattice solver and verification harness for mean-field
//! reflected backward stochastic differential equations.
//!
//! Everything runs on a recombining `+-sqrt(dt)` random walk, where conditional
//! expectations are exact. The crate provides the backward scheme, the
//! discretely reflected scheme, brute-force optimal-stopping oracles, the
//! mean-field fixed-point procedures and the analytic gates that certify them.

pub mod analysis;
pub mod bsde;
pub mod error;
pub mod expr;
pub mod harness;
pub mod lattice;
pub mod law;
pub mod meanfield;
pub mod rbsde;
pub mod stopping;

pub use analysis::{GateParams, GateReport, Regime};
pub use bsde::{solve_bsde, BsdePair, Convexity, DriverClass, DriverSpec, FrozenInputs, TerminalCondition};
pub use error::{Error, Result};
pub use expr::{parse, EvalEnv, Expr};
pub use lattice::{build_lattice, Lattice, NodeProcess, TimeGrid};
pub use law::{wasserstein1, MarginalLaw};
pub use meanfield::{
    fixed_point_residual, gamma_map, picard_solve, theta_sequence_solve, IterationReport, Mode, Problem,
    SolverOptions,
};
pub use rbsde::{skorokhod_residual, solve_reflected, ObstacleSpec, SolutionTriple};
pub use stopping::{enumerate_stopping_rules, g_evaluate, snell_bruteforce, StoppingRule};
