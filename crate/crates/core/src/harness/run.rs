use std::time::Instant;

use log::{debug, info};
use serde::Serialize;

use crate::analysis::{bmo_norm, GateReport, Regime};
use crate::bsde::{cole_hopf_value, DriverSpec, FrozenInputs, TerminalCondition};
use crate::error::{Error, Result};
use crate::harness::battery;
use crate::harness::config::LoadedProblem;
use crate::lattice::{build_lattice, Lattice};
use crate::meanfield::{self, self_consistency, IterationReport, Problem, SolverOptions};
use crate::rbsde::{solve_reflected, skorokhod_residual, ObstacleSpec, SolutionTriple};
use crate::stopping::{rule_count, snell_bruteforce};

/// Float format used in every CSV: 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, Serialize)]
pub struct RunResult {
    pub regime: Regime,
    pub n_steps: usize,
    pub y0: f64,
    pub y_sup: f64,
    pub y_inf: f64,
    pub k_terminal_mean: f64,
    pub bmo_norm: f64,
    pub skorokhod_residual: f64,
    pub self_consistent: bool,
    pub gate: GateReport,
    pub iterations: IterationReport,
    pub warnings: Vec<String>,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub result: RunResult,
    pub triple: SolutionTriple,
    pub csv: String,
}

/// CSV with columns `level,node,t,b,y,z,k`; `z` is empty on the terminal level.
pub fn solution_csv(lat: &Lattice, triple: &SolutionTriple) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["level", "node", "t", "b", "y", "z", "k"])?;
    let n = lat.n_steps();
    for i in 0..=n {
        let t = fmt_f64(lat.time(i));
        for j in 0..=i {
            let z = if i < n { fmt_f64(triple.z.get(i, j)) } else { String::new() };
            w.write_record([
                i.to_string(),
                j.to_string(),
                t.clone(),
                fmt_f64(lat.values(i)[j]),
                fmt_f64(triple.y.get(i, j)),
                z,
                fmt_f64(triple.k.get(i, j)),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is ASCII"))
}

fn solve_problem(prob: &Problem, opts: &SolverOptions) -> Result<(SolutionTriple, IterationReport)> {
    info!(
        "solving {} problem on {} steps",
        prob.regime.name(),
        prob.lattice().n_steps()
    );
    let out = meanfield::solve(prob, opts)?;
    for w in &out.1.windows {
        debug!(
            "window [{}, {}]: {} iterations, diffs {:?}",
            w.start_level, w.end_level, w.iterations, w.diffs
        );
    }
    Ok(out)
}

/// Solve a loaded problem, optionally on a different number of steps.
pub fn run_solve(lp: &LoadedProblem, steps: Option<usize>) -> Result<SolveOutput> {
    let started = Instant::now();
    let prob = match steps {
        Some(n) if n != lp.problem.lattice().n_steps() => {
            lp.problem.driver.check_step(lp.problem.lattice().horizon() / n.max(1) as f64)?;
            lp.problem.with_steps(n)?
        }
        _ => lp.problem.clone(),
    };
    let gate = prob.gate(lp.options.margin)?;
    let (triple, report) = solve_problem(&prob, &lp.options)?;
    let lat = prob.lattice();
    let sc = self_consistency(&prob, &triple)?;
    if !sc.passes() {
        return Err(Error::Tolerance(format!("returned triple fails its certificates: {sc:?}")));
    }
    let result = RunResult {
        regime: prob.regime,
        n_steps: lat.n_steps(),
        y0: triple.y0(),
        y_sup: triple.y.levels().iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max),
        y_inf: triple.y.levels().iter().flatten().cloned().fold(f64::INFINITY, f64::min),
        k_terminal_mean: triple.mean_k_terminal(lat),
        bmo_norm: bmo_norm(lat, &triple.z)?,
        skorokhod_residual: skorokhod_residual(lat, &triple, &triple.obstacle),
        self_consistent: sc.passes(),
        gate,
        iterations: report,
        warnings: lp.warnings.clone(),
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
    };
    let csv = solution_csv(lat, &triple)?;
    Ok(SolveOutput {
        result,
        triple,
        csv,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleCase {
    Snell,
    ColeHopf,
    MeanFieldLinear,
}

impl OracleCase {
    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "snell" => Some(OracleCase::Snell),
            "colehopf" => Some(OracleCase::ColeHopf),
            "meanfield_linear" => Some(OracleCase::MeanFieldLinear),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleRow {
    pub label: String,
    pub solver: f64,
    pub oracle: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub case: String,
    pub rows: Vec<OracleRow>,
    pub max_gap: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl OracleReport {
    fn new(case: &str, rows: Vec<OracleRow>, tolerance: f64) -> Self {
        let max_gap = rows.iter().map(|r| r.gap).fold(0.0, f64::max);
        OracleReport {
            case: case.into(),
            rows,
            max_gap,
            tolerance,
            pass: max_gap <= tolerance,
        }
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<24} {:>24} {:>24} {:>12}\n", "case", "solver", "oracle", "gap");
        for r in &self.rows {
            s.push_str(&format!(
                "{:<24} {:>24.17} {:>24.17} {:>12.3e}\n",
                r.label, r.solver, r.oracle, r.gap
            ));
        }
        s.push_str(&format!(
            "max gap {:.3e} (tolerance {:.1e}): {}\n",
            self.max_gap,
            self.tolerance,
            if self.pass { "PASS" } else { "FAIL" }
        ));
        s
    }
}

pub const SNELL_TOL: f64 = 1e-12;
pub const COLE_HOPF_TOL: f64 = 5e-2;
pub const MEANFIELD_LINEAR_TOL: f64 = 5e-3;
pub const SNELL_BATTERY: usize = 50;

/// Reflected root value against the brute-force Snell value on one seeded problem.
pub fn snell_row(seed: u64, depth: usize) -> Result<OracleRow> {
    let c = battery::snell_case(&mut battery::rng(seed), depth)?;
    let tri = solve_reflected(&c.lattice, &c.driver, &c.frozen, &c.obstacle, &c.terminal)?;
    let brute = snell_bruteforce(&c.lattice, &c.driver, &c.frozen, &c.terminal, &c.obstacle)?;
    Ok(OracleRow {
        label: format!("seed {seed} depth {depth}"),
        solver: tri.y0(),
        oracle: brute,
        gap: (tri.y0() - brute).abs(),
    })
}

/// Pure quadratic driver `z^2 / 2` with `xi = b` on `[0, 1]`.
pub fn cole_hopf_y0(n: usize) -> Result<(f64, f64)> {
    let lat = build_lattice(1.0, n)?;
    let d = DriverSpec::quadratic("0.5*sq(z)", 0.0, 0.0, 0.0, 1.0, crate::bsde::Convexity::Convex)?;
    let xi = TerminalCondition::new("b")?.realize(&lat)?;
    let pair = crate::bsde::solve_bsde(&lat, &d, &FrozenInputs::degenerate(&lat), &xi)?;
    Ok((pair.y.get(0, 0), cole_hopf_value(&lat, 1.0, &xi)))
}

/// `f = 0.5 m1`, `xi = 1`, slack obstacle.
pub fn meanfield_linear_problem(n: usize) -> Result<Problem> {
    Problem::new(
        1.0,
        n,
        2.0,
        Regime::Lipschitz,
        TerminalCondition::new("1")?,
        DriverSpec::lipschitz("0.5*m1", 0.5)?,
        ObstacleSpec::new("-1000000", 0.0, 0.0)?,
    )
}

pub fn run_oracle(case: OracleCase, depth: Option<usize>, steps: Option<usize>, seed: u64) -> Result<OracleReport> {
    match case {
        OracleCase::Snell => {
            let depth = depth.unwrap_or(3);
            if !(1..=4).contains(&depth) {
                return Err(Error::Parameter(format!("snell oracle depth must lie in 1..=4, got {depth}")));
            }
            info!("snell oracle: {} rules per problem", rule_count(depth));
            let rows = (0..SNELL_BATTERY as u64)
                .map(|k| snell_row(seed.wrapping_add(k), depth))
                .collect::<Result<Vec<_>>>()?;
            Ok(OracleReport::new("snell", rows, SNELL_TOL))
        }
        OracleCase::ColeHopf => {
            let n = steps.unwrap_or(64);
            let (y0, lattice_value) = cole_hopf_y0(n)?;
            let rows = vec![
                OracleRow {
                    label: format!("closed form n={n}"),
                    solver: y0,
                    oracle: 0.5,
                    gap: (y0 - 0.5).abs(),
                },
                OracleRow {
                    label: format!("lattice log-moment n={n}"),
                    solver: y0,
                    oracle: lattice_value,
                    gap: (y0 - lattice_value).abs(),
                },
            ];
            Ok(OracleReport::new("colehopf", rows, COLE_HOPF_TOL))
        }
        OracleCase::MeanFieldLinear => {
            let n = steps.unwrap_or(128);
            let prob = meanfield_linear_problem(n)?;
            let (tri, _) = meanfield::picard_solve(&prob, &SolverOptions::default())?;
            let exact = 0.5f64.exp();
            let rows = vec![OracleRow {
                label: format!("exp(0.5) n={n}"),
                solver: tri.y0(),
                oracle: exact,
                gap: (tri.y0() - exact).abs(),
            }];
            Ok(OracleReport::new("meanfield_linear", rows, MEANFIELD_LINEAR_TOL))
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyRow {
    pub n: usize,
    pub y0: f64,
    pub diff_to_finest: f64,
    pub iterations: usize,
    /// `(y0(n_k) - y0(n_{k+1})) / (y0(n_{k-1}) - y0(n_k))`, set from the second row on.
    pub ratio: Option<f64>,
}

/// Solve on each `n` and tabulate the root value against the finest run.
pub fn run_study(lp: &LoadedProblem, steps: &[usize]) -> Result<(Vec<StudyRow>, String)> {
    if steps.is_empty() {
        return Err(Error::Config("study needs at least one step count".into()));
    }
    let horizon = lp.problem.lattice().horizon();
    for &n in steps {
        if n == 0 {
            return Err(Error::Config("step counts must be >= 1".into()));
        }
        lp.problem.driver.check_step(horizon / n as f64)?;
    }
    let mut runs = Vec::with_capacity(steps.len());
    for &n in steps {
        let out = run_solve(lp, Some(n))?;
        runs.push((n, out.result.y0, out.result.iterations.iterations));
    }
    let finest = runs.iter().max_by_key(|r| r.0).map(|r| r.1).unwrap_or(f64::NAN);
    let mut rows: Vec<StudyRow> = runs
        .iter()
        .map(|&(n, y0, iterations)| StudyRow {
            n,
            y0,
            diff_to_finest: (y0 - finest).abs(),
            iterations,
            ratio: None,
        })
        .collect();
    for k in 2..rows.len() {
        let prev = rows[k - 2].y0 - rows[k - 1].y0;
        let cur = rows[k - 1].y0 - rows[k].y0;
        if prev.abs() > 1e-300 {
            rows[k].ratio = Some(cur / prev);
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["n", "y0", "diff_to_finest", "iterations", "ratio"])?;
    for r in &rows {
        w.write_record([
            r.n.to_string(),
            fmt_f64(r.y0),
            fmt_f64(r.diff_to_finest),
            r.iterations.to_string(),
            r.ratio.map(fmt_f64).unwrap_or_default(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok((rows, String::from_utf8(bytes).expect("csv output is ASCII")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::load_problem_str;

    fn config(driver: &str, lambda: f64, obstacle: &str, xi: &str, n: usize) -> String {
        format!(
            r#"{{"schema_version": 1, "T": 1.0, "n_steps": {n}, "regime": "lipschitz",
                "terminal": {{"expr": "{xi}"}},
                "driver": {{"expr": "{driver}", "lambda": {lambda}}},
                "obstacle": {{"expr": "{obstacle}", "gamma1": 0, "gamma2": 0}}}}"#
        )
    }

    #[test]
    fn deterministic_obstacle_csv() {
        let lp = load_problem_str(&config("0", 0.0, "1 - t", "0", 8)).unwrap();
        let out = run_solve(&lp, None).unwrap();
        assert!((out.result.y0 - 1.0).abs() < 1e-12);
        assert!((out.result.k_terminal_mean - 1.0).abs() < 1e-12);
        let first = out.csv.lines().next().unwrap();
        assert_eq!(first, "level,node,t,b,y,z,k");
        let last = out.csv.lines().last().unwrap();
        assert!(last.starts_with("8,8,1.0000000000000000e0,"), "{last}");
        assert!(last.contains(",,"));
        assert_eq!(out.csv.lines().count(), 1 + 45);
    }

    #[test]
    fn slack_obstacle_gives_the_mean() {
        let lp = load_problem_str(&config("0", 0.0, "-1000000", "max(b, 0) + sq(b)", 10)).unwrap();
        let out = run_solve(&lp, None).unwrap();
        let lat = lp.problem.lattice();
        let mean = lat.mean(10, lp.problem.terminal_values());
        assert!((out.result.y0 - mean).abs() < 1e-14);
    }

    #[test]
    fn csv_is_byte_deterministic() {
        let text = config("0.3*z - 0.2*m1 + 0.1*y", 0.6, "0.1*y - 0.2", "abs(b)", 24);
        let a = run_solve(&load_problem_str(&text).unwrap(), None).unwrap().csv;
        let b = run_solve(&load_problem_str(&text).unwrap(), None).unwrap().csv;
        assert_eq!(a, b);
    }

    #[test]
    fn oracles_pass() {
        let r = run_oracle(OracleCase::Snell, Some(2), None, 11).unwrap();
        assert!(r.pass, "{}", r.table());
        assert!(run_oracle(OracleCase::ColeHopf, None, None, 0).unwrap().pass);
        assert!(run_oracle(OracleCase::MeanFieldLinear, None, None, 0).unwrap().pass);
        assert!(run_oracle(OracleCase::Snell, Some(5), None, 0).is_err());
    }

    #[test]
    fn pure_drift_study_is_exact() {
        let lp = load_problem_str(&config("1", 0.0, "-1000000", "0", 8)).unwrap();
        let (rows, csv) = run_study(&lp, &[4, 8, 16]).unwrap();
        assert!(rows.iter().all(|r| r.diff_to_finest == 0.0));
        assert!(csv.starts_with("n,y0,diff_to_finest,iterations,ratio\n"));
    }
}
