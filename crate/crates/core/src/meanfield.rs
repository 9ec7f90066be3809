//! Fixed-point procedures for the mean-field reflected equation.
//!
//! `gamma_map` freezes the law (and optionally `y`) at a candidate process `U`,
//! evaluates the obstacle at `(U, law(U))` and solves the reflected problem.
//! `picard_solve` iterates it on grid-aligned windows from the horizon backward.
//! `theta_sequence_solve` iterates the law-frozen map over the whole horizon.

use serde::Serialize;

use crate::analysis::{regime_gate, GateParams, GateReport, Regime};
use crate::bsde::{backward_sweep, DriverSpec, FrozenInputs, TerminalCondition};
use crate::error::{Error, Result};
use crate::expr::EvalEnv;
use crate::lattice::{build_lattice, Lattice, NodeProcess};
use crate::law::MarginalLaw;
use crate::rbsde::{cumulate_k, skorokhod_residual, ObstacleSpec, SolutionTriple};
use crate::stopping::check_terminal_compatibility;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Driver reads `U` in its `y` slot.
    FreezeFull,
    /// Driver keeps `y` as the unknown; only the law is frozen.
    FreezeLawOnly,
}

/// Full data of one mean-field reflected problem on a built lattice.
#[derive(Debug, Clone)]
pub struct Problem {
    lattice: Lattice,
    xi: Vec<f64>,
    pub terminal: TerminalCondition,
    pub driver: DriverSpec,
    pub obstacle: ObstacleSpec,
    pub regime: Regime,
    pub p_exponent: f64,
}

impl Problem {
    /// Build the lattice, realize the terminal values and check `xi >= h(T, xi, law(xi))`.
    pub fn new(
        horizon: f64,
        n_steps: usize,
        p_exponent: f64,
        regime: Regime,
        terminal: TerminalCondition,
        driver: DriverSpec,
        obstacle: ObstacleSpec,
    ) -> Result<Self> {
        if !(p_exponent > 1.0 && p_exponent.is_finite()) {
            return Err(Error::Config(format!("p_exponent must be > 1, got {p_exponent}")));
        }
        driver.validate()?;
        let lattice = build_lattice(horizon, n_steps)?;
        let xi = terminal.realize(&lattice)?;
        let prob = Problem {
            lattice,
            xi,
            terminal,
            driver,
            obstacle,
            regime,
            p_exponent,
        };
        let n = prob.lattice.n_steps();
        let law = prob.lattice.node_marginal(n, &prob.xi)?;
        let h_t = obstacle_level(&prob.lattice, &prob.obstacle, n, &prob.xi, &law)?;
        check_terminal_compatibility(&prob.xi, &h_t)?;
        Ok(prob)
    }

    /// Same problem on a lattice with `n_steps` steps.
    pub fn with_steps(&self, n_steps: usize) -> Result<Self> {
        Problem::new(
            self.lattice.horizon(),
            n_steps,
            self.p_exponent,
            self.regime,
            self.terminal.clone(),
            self.driver.clone(),
            self.obstacle.clone(),
        )
    }

    pub fn with_regime(&self, regime: Regime) -> Self {
        Problem {
            regime,
            ..self.clone()
        }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn terminal_values(&self) -> &[f64] {
        &self.xi
    }

    /// Gate constants. Quadratic windows read the larger of `lambda` and `beta` as `beta`.
    pub fn gate_params(&self) -> GateParams {
        let d = &self.driver;
        let beta = match self.regime {
            Regime::Lipschitz => d.beta,
            _ => d.lambda.max(d.beta),
        };
        GateParams {
            gamma1: self.obstacle.gamma1,
            gamma2: self.obstacle.gamma2,
            lambda: d.lambda,
            beta,
            alpha: d.alpha,
            gamma: d.gamma,
            p_exponent: self.p_exponent,
            horizon: self.lattice.horizon(),
        }
    }

    pub fn gate(&self, margin: f64) -> Result<GateReport> {
        regime_gate(&self.gate_params(), self.regime, margin)
    }

    /// Conditional-expectation process of the terminal values.
    pub fn martingale(&self) -> Result<NodeProcess> {
        NodeProcess::martingale(&self.lattice, &self.xi)
    }
}

fn obstacle_level(
    lat: &Lattice,
    obstacle: &ObstacleSpec,
    level: usize,
    u: &[f64],
    law: &MarginalLaw,
) -> Result<Vec<f64>> {
    let t = lat.time(level);
    let (m1, am) = (law.mean(), law.abs_mean());
    u.iter()
        .zip(lat.values(level))
        .map(|(&y, &b)| {
            let env = EvalEnv {
                t,
                y,
                z: 0.0,
                b,
                m1,
                am,
            };
            Ok(obstacle.expr.eval(&env)?)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub window_override: Option<f64>,
    pub margin: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-9,
            max_iter: 200,
            window_override: None,
            margin: 0.05,
        }
    }
}

/// Iteration history of one window (or of the whole horizon for the law-frozen recursion).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowReport {
    pub start_level: usize,
    pub end_level: usize,
    pub lambda_bound: Option<f64>,
    pub diffs: Vec<f64>,
    pub ratios: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationReport {
    pub windows: Vec<WindowReport>,
    pub converged: bool,
    pub iterations: usize,
}

impl IterationReport {
    pub fn max_iterations_per_window(&self) -> usize {
        self.windows.iter().map(|w| w.iterations).max().unwrap_or(0)
    }

    pub fn all_diffs(&self) -> Vec<f64> {
        self.windows.iter().flat_map(|w| w.diffs.iter().cloned()).collect()
    }
}

const RATIO_FLOOR: f64 = 1e-14;

fn ratios(diffs: &[f64]) -> Vec<f64> {
    diffs
        .windows(2)
        .filter(|w| w[0] > RATIO_FLOOR)
        .map(|w| w[1] / w[0])
        .collect()
}

/// One application of the map on levels `from..to`, with `y` at level `to` taken from `u`.
struct Partial {
    y: NodeProcess,
    z: NodeProcess,
    dk: NodeProcess,
    obstacle: NodeProcess,
}

fn gamma_partial(prob: &Problem, u: &NodeProcess, mode: Mode, from: usize, to: usize) -> Result<Partial> {
    let lat = &prob.lattice;
    if !u.fits(lat) {
        return Err(Error::Contract("candidate process does not match the lattice".into()));
    }
    let n = lat.n_steps();
    let mut laws = vec![MarginalLaw::dirac(0.0); n + 1];
    let mut obstacle = NodeProcess::zeros(lat);
    for i in from..=to {
        laws[i] = lat.node_marginal(i, u.level(i))?;
        *obstacle.level_mut(i) = obstacle_level(lat, &prob.obstacle, i, u.level(i), &laws[i])?;
    }
    let frozen = FrozenInputs::new(laws, (mode == Mode::FreezeFull).then(|| u.clone()));
    let mut y = u.clone();
    let mut z = NodeProcess::zeros_levels(n);
    let mut dk = NodeProcess::zeros(lat);
    backward_sweep(lat, &prob.driver, &frozen, Some(&obstacle), from, to, &mut y, &mut z, Some(&mut dk))?;
    Ok(Partial { y, z, dk, obstacle })
}

fn check_candidate(prob: &Problem, u: &NodeProcess) -> Result<()> {
    let n = prob.lattice.n_steps();
    if !u.fits(&prob.lattice) {
        return Err(Error::Contract("candidate process does not match the lattice".into()));
    }
    if u.level(n) != prob.xi.as_slice() {
        return Err(Error::Contract("candidate must equal the terminal values at the horizon".into()));
    }
    Ok(())
}

/// The map `U -> Y` over the whole horizon.
pub fn gamma_map(prob: &Problem, u: &NodeProcess, mode: Mode) -> Result<SolutionTriple> {
    check_candidate(prob, u)?;
    let n = prob.lattice.n_steps();
    let part = gamma_partial(prob, u, mode, 0, n)?;
    let k = cumulate_k(&prob.lattice, &part.dk);
    Ok(SolutionTriple {
        y: part.y,
        z: part.z,
        k,
        dk: part.dk,
        obstacle: part.obstacle,
    })
}

/// `(sup |Gamma(Y).y - Y|, max over levels of the probability-weighted mean of |Gamma(Y).y - Y|)`.
pub fn fixed_point_residual(prob: &Problem, y: &NodeProcess, mode: Mode) -> Result<(f64, f64)> {
    let g = gamma_map(prob, y, mode)?;
    let lat = &prob.lattice;
    let mut sup: f64 = 0.0;
    let mut weighted: f64 = 0.0;
    for i in 0..=lat.n_steps() {
        let d: Vec<f64> = g.y.level(i).iter().zip(y.level(i)).map(|(a, b)| (a - b).abs()).collect();
        sup = d.iter().cloned().fold(sup, f64::max);
        weighted = weighted.max(lat.mean(i, &d));
    }
    Ok((sup, weighted))
}

/// Window boundaries in grid levels, from the horizon backward.
fn window_levels(lat: &Lattice, len: f64) -> Result<Vec<(usize, usize)>> {
    let n = lat.n_steps();
    // a window within 1e-8 of a whole number of steps keeps that step
    let steps = (len / lat.dt() + 1e-8).floor();
    if steps.is_nan() || steps < 1.0 {
        return Err(Error::Config(format!(
            "window length {len} is shorter than one grid step {}; increase n_steps",
            lat.dt()
        )));
    }
    let steps = (steps as usize).min(n);
    let mut out = Vec::new();
    let mut end = n;
    while end > 0 {
        let start = end.saturating_sub(steps);
        out.push((start, end));
        end = start;
    }
    Ok(out)
}

/// Picard iteration of the fully frozen map on contraction windows, stitched backward.
pub fn picard_solve(prob: &Problem, opts: &SolverOptions) -> Result<(SolutionTriple, IterationReport)> {
    let gate = prob.gate(opts.margin)?;
    let len = match opts.window_override {
        Some(w) if w > 0.0 && w.is_finite() => w,
        Some(w) => return Err(Error::Config(format!("window_override must be > 0, got {w}"))),
        None => gate.window_len,
    };
    let lat = &prob.lattice;
    let n = lat.n_steps();
    let mut y = NodeProcess::zeros(lat);
    *y.level_mut(n) = prob.xi.clone();
    let mut z = NodeProcess::zeros_levels(n);
    let mut dk = NodeProcess::zeros(lat);
    let mut h = NodeProcess::zeros(lat);
    *h.level_mut(n) = obstacle_level(lat, &prob.obstacle, n, &prob.xi, &lat.node_marginal(n, &prob.xi)?)?;
    let mut report = IterationReport {
        windows: Vec::new(),
        converged: true,
        iterations: 0,
    };
    for (start, end) in window_levels(lat, len)? {
        // initial guess: conditional expectation of the window's terminal values
        let mut u = y.clone();
        for i in (start..end).rev() {
            *u.level_mut(i) = lat.conditional_expectation(i, u.level(i + 1))?;
        }
        let mut w = WindowReport {
            start_level: start,
            end_level: end,
            lambda_bound: gate.lambda_bound,
            diffs: Vec::new(),
            ratios: Vec::new(),
            iterations: 0,
            converged: false,
        };
        let mut last = None;
        while w.iterations < opts.max_iter {
            let part = gamma_partial(prob, &u, Mode::FreezeFull, start, end)?;
            w.iterations += 1;
            let d = part.y.sup_diff(&u, start..end + 1);
            w.diffs.push(d);
            u = part.y.clone();
            last = Some(part);
            if d <= opts.tol {
                w.converged = true;
                break;
            }
        }
        w.ratios = ratios(&w.diffs);
        report.iterations += w.iterations;
        let converged = w.converged;
        let last_diff = w.diffs.last().copied().unwrap_or(f64::NAN);
        report.windows.push(w);
        if !converged {
            report.converged = false;
            return Err(Error::NonConvergence {
                iterations: report.iterations,
                last_diff,
                report: Box::new(report),
            });
        }
        let part = last.expect("at least one iteration ran");
        for i in start..end {
            *y.level_mut(i) = part.y.level(i).to_vec();
            *z.level_mut(i) = part.z.level(i).to_vec();
            *dk.level_mut(i) = part.dk.level(i).to_vec();
            *h.level_mut(i) = part.obstacle.level(i).to_vec();
        }
    }
    let k = cumulate_k(lat, &dk);
    Ok((
        SolutionTriple {
            y,
            z,
            k,
            dk,
            obstacle: h,
        },
        report,
    ))
}

/// Law-frozen recursion `Y^(m) = Gamma(Y^(m-1))` started from the conditional expectation of `xi`.
pub fn theta_sequence_solve(prob: &Problem, opts: &SolverOptions) -> Result<(SolutionTriple, IterationReport)> {
    if prob.regime == Regime::QuadraticUnbounded
        && prob.driver.convexity == crate::bsde::Convexity::None
    {
        return Err(Error::Config(
            "quadratic_unbounded requires driver convexity `concave` or `convex`".into(),
        ));
    }
    let gate = prob.gate(opts.margin)?;
    let n = prob.lattice.n_steps();
    let mut u = prob.martingale()?;
    let mut w = WindowReport {
        start_level: 0,
        end_level: n,
        lambda_bound: gate.lambda_bound,
        diffs: Vec::new(),
        ratios: Vec::new(),
        iterations: 0,
        converged: false,
    };
    let mut last = None;
    while w.iterations < opts.max_iter {
        let triple = gamma_map(prob, &u, Mode::FreezeLawOnly)?;
        w.iterations += 1;
        let d = triple.y.sup_diff(&u, 0..n + 1);
        w.diffs.push(d);
        u = triple.y.clone();
        last = Some(triple);
        if d <= opts.tol {
            w.converged = true;
            break;
        }
    }
    w.ratios = ratios(&w.diffs);
    let report = IterationReport {
        converged: w.converged,
        iterations: w.iterations,
        windows: vec![w],
    };
    if !report.converged {
        return Err(Error::NonConvergence {
            iterations: report.iterations,
            last_diff: report.windows[0].diffs.last().copied().unwrap_or(f64::NAN),
            report: Box::new(report),
        });
    }
    Ok((last.expect("at least one iteration ran"), report))
}

/// Solve with the procedure matching the problem's regime.
pub fn solve(prob: &Problem, opts: &SolverOptions) -> Result<(SolutionTriple, IterationReport)> {
    match prob.regime {
        Regime::Lipschitz | Regime::QuadraticBounded => picard_solve(prob, opts),
        Regime::QuadraticUnbounded => theta_sequence_solve(prob, opts),
    }
}

/// Certificates of a returned triple against the obstacle evaluated at the triple itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SelfConsistency {
    pub residual: f64,
    pub min_push: f64,
    pub max_obstacle_gap: f64,
    pub k0: f64,
    pub k_means_nondecreasing: bool,
    pub terminal_exact: bool,
}

pub const SELF_CONSISTENCY_TOL: f64 = 1e-8;

impl SelfConsistency {
    pub fn passes(&self) -> bool {
        self.residual.abs() <= 1e-10
            && self.min_push >= 0.0
            && self.max_obstacle_gap <= SELF_CONSISTENCY_TOL
            && self.k0 == 0.0
            && self.k_means_nondecreasing
            && self.terminal_exact
    }
}

/// Obstacle process `h(t, Y, law(Y))` evaluated at `y`.
pub fn obstacle_process(prob: &Problem, y: &NodeProcess) -> Result<NodeProcess> {
    prob.obstacle.realize(&prob.lattice, y)
}

pub fn self_consistency(prob: &Problem, triple: &SolutionTriple) -> Result<SelfConsistency> {
    let lat = &prob.lattice;
    let n = lat.n_steps();
    let h = obstacle_process(prob, &triple.y)?;
    let mut min_push = f64::INFINITY;
    let mut gap = f64::NEG_INFINITY;
    for i in 0..n {
        for j in 0..=i {
            min_push = min_push.min(triple.dk.get(i, j));
            gap = gap.max(h.get(i, j) - triple.y.get(i, j));
        }
    }
    let means: Vec<f64> = (0..=n).map(|i| lat.mean(i, triple.k.level(i))).collect();
    Ok(SelfConsistency {
        residual: skorokhod_residual(lat, triple, &triple.obstacle),
        min_push,
        max_obstacle_gap: gap,
        k0: triple.k.get(0, 0),
        k_means_nondecreasing: means.windows(2).all(|w| w[1] >= w[0] - 1e-14),
        terminal_exact: triple.y.level(n) == prob.xi.as_slice(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsde::{solve_bsde, Convexity};
    use crate::rbsde::solve_reflected;

    fn lip_problem(n: usize, driver: &str, lambda: f64, obstacle: &str, g1: f64, g2: f64, xi: &str) -> Problem {
        Problem::new(
            1.0,
            n,
            2.0,
            Regime::Lipschitz,
            TerminalCondition::new(xi).unwrap(),
            DriverSpec::lipschitz(driver, lambda).unwrap(),
            ObstacleSpec::new(obstacle, g1, g2).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn uncoupled_problem_is_plain_bsde() {
        let prob = lip_problem(32, "0.2*z + 0.1", 0.2, "-1000000", 0.0, 0.0, "b");
        let lat = prob.lattice();
        let pair = solve_bsde(lat, &prob.driver, &FrozenInputs::degenerate(lat), prob.terminal_values()).unwrap();
        let u = prob.martingale().unwrap();
        let g = gamma_map(&prob, &u, Mode::FreezeFull).unwrap();
        assert_eq!(g.y, pair.y);
        let g2 = gamma_map(&prob, &u, Mode::FreezeLawOnly).unwrap();
        assert_eq!(g2.y, pair.y);
    }

    #[test]
    fn zero_driver_converges_in_one_iteration() {
        let prob = lip_problem(16, "0", 0.0, "-1000000", 0.0, 0.0, "b");
        let (tri, rep) = picard_solve(&prob, &SolverOptions::default()).unwrap();
        assert_eq!(rep.iterations, 1);
        assert_eq!(tri.y, prob.martingale().unwrap());
        let (sup, _) = fixed_point_residual(&prob, &tri.y, Mode::FreezeFull).unwrap();
        assert!(sup <= 1e-12);
    }

    #[test]
    fn linear_mean_field_growth() {
        let prob = lip_problem(128, "0.5*m1", 0.5, "-1000000", 0.0, 0.0, "1");
        let (tri, rep) = picard_solve(&prob, &SolverOptions::default()).unwrap();
        assert!(rep.converged);
        let compounded = (1.0 - 0.5 / 128.0f64).powi(-128);
        assert!((tri.y0() - compounded).abs() < 1e-8, "{}", tri.y0());
        assert!((tri.y0() - 0.5f64.exp()).abs() < 5e-3);
    }

    #[test]
    fn picard_fixed_point_certificate() {
        let prob = lip_problem(48, "0.3*z - 0.2*am + 0.1*y", 0.3, "0.15*y + 0.1*m1 - 0.2", 0.15, 0.1, "abs(b)");
        let opts = SolverOptions::default();
        let (tri, rep) = picard_solve(&prob, &opts).unwrap();
        assert!(rep.converged);
        let (sup, _) = fixed_point_residual(&prob, &tri.y, Mode::FreezeFull).unwrap();
        assert!(sup <= 2.0 * opts.tol, "{sup}");
        let sc = self_consistency(&prob, &tri).unwrap();
        assert!(sc.passes(), "{sc:?}");
        for w in &rep.windows {
            for r in &w.ratios {
                assert!(*r <= w.lambda_bound.unwrap() + 0.05, "{r}");
            }
        }
        let mut bumped = tri.y.clone();
        bumped.level_mut(20)[10] += 1.0;
        let (sup, _) = fixed_point_residual(&prob, &bumped, Mode::FreezeFull).unwrap();
        assert!(sup > 0.5);
    }

    #[test]
    fn theta_collapses_without_coupling() {
        let prob = Problem::new(
            1.0,
            32,
            2.0,
            Regime::QuadraticUnbounded,
            TerminalCondition::new("b").unwrap(),
            DriverSpec::quadratic("-0.5*sq(z)", 0.0, 0.0, 0.0, 1.0, Convexity::Concave).unwrap(),
            ObstacleSpec::new("min(b, 0) - 0.5*t", 0.0, 0.0).unwrap(),
        )
        .unwrap();
        let (tri, rep) = theta_sequence_solve(&prob, &SolverOptions::default()).unwrap();
        assert!(rep.iterations <= 2);
        let lat = prob.lattice();
        let h = obstacle_process(&prob, &tri.y).unwrap();
        let direct = solve_reflected(lat, &prob.driver, &FrozenInputs::degenerate(lat), &h, prob.terminal_values()).unwrap();
        assert_eq!(direct.y, tri.y);
    }

    #[test]
    fn windows_align_to_grid() {
        let lat = build_lattice(1.0, 10).unwrap();
        assert_eq!(window_levels(&lat, 0.35).unwrap(), vec![(7, 10), (4, 7), (1, 4), (0, 1)]);
        assert_eq!(window_levels(&lat, 0.3).unwrap(), vec![(7, 10), (4, 7), (1, 4), (0, 1)]);
        assert_eq!(window_levels(&lat, 5.0).unwrap(), vec![(0, 10)]);
        assert!(window_levels(&lat, 0.05).is_err());
    }

    #[test]
    fn candidate_must_match_terminal() {
        let prob = lip_problem(8, "0", 0.0, "-1000000", 0.0, 0.0, "b");
        let u = NodeProcess::zeros(prob.lattice());
        assert!(matches!(gamma_map(&prob, &u, Mode::FreezeFull), Err(Error::Contract(_))));
    }
}
