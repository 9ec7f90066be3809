//! JSON problem configuration.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "T": 1.0,
//!   "n_steps": 64,
//!   "p_exponent": 2.0,
//!   "regime": "lipschitz",
//!   "terminal": { "expr": "b" },
//!   "driver": { "expr": "0.5*m1", "lambda": 0.5 },
//!   "obstacle": { "expr": "-1000000", "gamma1": 0.0, "gamma2": 0.0 },
//!   "solver": { "tol": 1e-9, "max_iter": 200 },
//!   "seed": 7
//! }
//! ```
//!
//! Quadratic regimes also require `driver.alpha`, `driver.beta` and
//! `driver.gamma`; `quadratic_unbounded` requires `driver.convexity`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::{lipschitz_probe_driver, lipschitz_probe_obstacle, GateReport, Regime};
use crate::bsde::{Convexity, DriverClass, DriverSpec, TerminalCondition};
use crate::error::{Error, Result};
use crate::expr::parse;
use crate::meanfield::{Problem, SolverOptions};
use crate::rbsde::ObstacleSpec;

pub const SCHEMA_VERSION: u32 = 1;
const PROBE_SAMPLES: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub schema_version: u32,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub n_steps: usize,
    #[serde(default = "default_p")]
    pub p_exponent: f64,
    pub regime: String,
    pub terminal: TerminalConfig,
    pub driver: DriverConfig,
    pub obstacle: ObstacleConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub seed: u64,
}

fn default_p() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalConfig {
    pub expr: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverConfig {
    pub expr: String,
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convexity: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleConfig {
    pub expr: String,
    pub gamma1: f64,
    pub gamma2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_override: Option<f64>,
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_tol() -> f64 {
    1e-9
}

fn default_max_iter() -> usize {
    200
}

fn default_margin() -> f64 {
    0.05
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: default_tol(),
            max_iter: default_max_iter(),
            window_override: None,
            margin: default_margin(),
        }
    }
}

/// A validated problem with everything needed to run it.
#[derive(Debug, Clone)]
pub struct LoadedProblem {
    pub config: ProblemConfig,
    pub problem: Problem,
    pub options: SolverOptions,
    pub gate: GateReport,
    pub warnings: Vec<String>,
}

fn nonneg(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")))
    }
}

fn required(name: &str, v: Option<f64>, regime: Regime) -> Result<f64> {
    let v = v.ok_or_else(|| {
        Error::Config(format!("missing key `{name}` (required for regime {})", regime.name()))
    })?;
    nonneg(name, v)
}

fn parse_field(name: &str, src: &str) -> Result<crate::expr::Expr> {
    parse(src).map_err(|e| Error::Config(format!("{name}: {e}")))
}

impl ProblemConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config JSON: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Validate everything and run the regime gate. Gate rejection is `Error::Gate`.
    pub fn build(&self) -> Result<LoadedProblem> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let regime = Regime::from_name(&self.regime).ok_or_else(|| {
            Error::Config(format!(
                "unknown regime `{}` (expected lipschitz, quadratic_bounded or quadratic_unbounded)",
                self.regime
            ))
        })?;
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::Config(format!("T must be > 0, got {}", self.horizon)));
        }
        if self.n_steps == 0 {
            return Err(Error::Config("n_steps must be >= 1".into()));
        }
        let d = &self.driver;
        let convexity = match d.convexity.as_deref() {
            None | Some("none") => Convexity::None,
            Some("concave") => Convexity::Concave,
            Some("convex") => Convexity::Convex,
            Some(other) => {
                return Err(Error::Config(format!(
                    "driver.convexity must be concave, convex or none, got `{other}`"
                )))
            }
        };
        let driver = match regime {
            Regime::Lipschitz => DriverSpec {
                expr: parse_field("driver.expr", &d.expr)?,
                lambda: nonneg("driver.lambda", d.lambda)?,
                alpha: nonneg("driver.alpha", d.alpha.unwrap_or(0.0))?,
                beta: nonneg("driver.beta", d.beta.unwrap_or(0.0))?,
                gamma: nonneg("driver.gamma", d.gamma.unwrap_or(0.0))?,
                kappa: d.kappa,
                convexity,
                class: DriverClass::Lipschitz,
            },
            Regime::QuadraticBounded | Regime::QuadraticUnbounded => {
                if regime == Regime::QuadraticUnbounded && convexity == Convexity::None {
                    return Err(Error::Config(
                        "regime quadratic_unbounded requires driver.convexity concave or convex".into(),
                    ));
                }
                DriverSpec {
                    expr: parse_field("driver.expr", &d.expr)?,
                    lambda: nonneg("driver.lambda", d.lambda)?,
                    alpha: required("driver.alpha", d.alpha, regime)?,
                    beta: required("driver.beta", d.beta, regime)?,
                    gamma: required("driver.gamma", d.gamma, regime)?,
                    kappa: d.kappa,
                    convexity,
                    class: DriverClass::Quadratic,
                }
            }
        };
        driver.validate()?;
        let terminal = TerminalCondition::from_expr(parse_field("terminal.expr", &self.terminal.expr)?)?;
        let o = &self.obstacle;
        let obstacle = ObstacleSpec::from_expr(
            parse_field("obstacle.expr", &o.expr)?,
            o.gamma1,
            o.gamma2,
            o.bound,
        )?;
        let s = &self.solver;
        if !(s.tol.is_finite() && s.tol > 0.0) {
            return Err(Error::Config(format!("solver.tol must be > 0, got {}", s.tol)));
        }
        if s.max_iter == 0 {
            return Err(Error::Config("solver.max_iter must be >= 1".into()));
        }
        if !(s.margin > 0.0 && s.margin < 1.0) {
            return Err(Error::Config(format!("solver.margin must lie in (0, 1), got {}", s.margin)));
        }
        if let Some(w) = s.window_override {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::Config(format!("solver.window_override must be > 0, got {w}")));
            }
        }
        driver.check_step(self.horizon / self.n_steps as f64)?;
        let problem = Problem::new(
            self.horizon,
            self.n_steps,
            self.p_exponent,
            regime,
            terminal,
            driver,
            obstacle,
        )?;
        let mut warnings = Vec::new();
        for f in lipschitz_probe_driver(&problem.driver, PROBE_SAMPLES).flags.into_iter().take(3) {
            warnings.push(format!("driver: {f}"));
        }
        for f in lipschitz_probe_obstacle(&problem.obstacle, PROBE_SAMPLES).flags.into_iter().take(3) {
            warnings.push(format!("obstacle: {f}"));
        }
        let gate = problem.gate(s.margin)?;
        Ok(LoadedProblem {
            config: self.clone(),
            problem,
            options: SolverOptions {
                tol: s.tol,
                max_iter: s.max_iter,
                window_override: s.window_override,
                margin: s.margin,
            },
            gate,
            warnings,
        })
    }
}

pub fn load_problem_str(text: &str) -> Result<LoadedProblem> {
    ProblemConfig::from_json(text)?.build()
}

pub fn load_problem(path: &Path) -> Result<LoadedProblem> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    load_problem_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema_version": 1, "T": 1.0, "n_steps": 8, "regime": "lipschitz",
        "terminal": {"expr": "b"},
        "driver": {"expr": "0", "lambda": 0},
        "obstacle": {"expr": "-1000000", "gamma1": 0, "gamma2": 0}
    }"#;

    #[test]
    fn minimal_config_loads() {
        let lp = load_problem_str(MINIMAL).unwrap();
        assert_eq!(lp.problem.regime, Regime::Lipschitz);
        assert!(lp.warnings.is_empty());
        let again = load_problem_str(&lp.config.to_json()).unwrap();
        assert_eq!(again.config, lp.config);
    }

    #[test]
    fn unbounded_gate_rejects_unit_obstacle() {
        let text = r#"{
            "schema_version": 1, "T": 1.0, "n_steps": 8, "regime": "quadratic_unbounded",
            "terminal": {"expr": "b"},
            "driver": {"expr": "-0.5*sq(z)", "lambda": 0, "alpha": 0, "beta": 0, "gamma": 1, "convexity": "concave"},
            "obstacle": {"expr": "y", "gamma1": 1, "gamma2": 0}
        }"#;
        let err = load_problem_str(text).unwrap_err();
        assert!(matches!(err, Error::Gate(_)), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn incompatible_terminal_names_the_node() {
        let text = MINIMAL.replace(r#""expr": "b""#, r#""expr": "0""#).replace("-1000000", "1");
        let err = load_problem_str(&text).unwrap_err();
        assert!(matches!(err, Error::Compatibility { node: 0, .. }), "{err}");
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn config_errors() {
        let cases = [
            MINIMAL.replace("\"schema_version\": 1", "\"schema_version\": 9"),
            MINIMAL.replace("\"n_steps\": 8", "\"n_steps\": 0"),
            MINIMAL.replace("lipschitz", "other"),
            MINIMAL.replace(r#""expr": "0""#, r#""expr": "0 +""#),
            MINIMAL.replace(r#""lambda": 0"#, r#""lambda": -1"#),
            MINIMAL.replace(r#""gamma1": 0"#, r#""gamma1": 0, "extra": 1"#),
            MINIMAL.replace("lipschitz", "quadratic_bounded"),
            "{".to_string(),
            "[]".to_string(),
        ];
        for c in cases {
            let err = load_problem_str(&c).unwrap_err();
            assert_eq!(err.exit_code(), 4, "{c}: {err}");
        }
        let err = load_problem_str(&MINIMAL.replace(r#""expr": "0""#, r#""expr": "0 + foo""#)).unwrap_err();
        assert!(err.to_string().contains("byte 4"), "{err}");
    }

    #[test]
    fn step_size_guard() {
        let text = MINIMAL.replace(r#""lambda": 0"#, r#""lambda": 9"#);
        assert!(matches!(load_problem_str(&text), Err(Error::StepSize { .. })));
    }
}
