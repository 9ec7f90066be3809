//! Backward induction for BSDEs with frozen mean-field inputs.
//!
//! One step from level `i + 1` to level `i` is
//!
//! ```text
//! z_i = E_i[y_{i+1} dB] / dt
//! y_i = E_i[y_{i+1}] + f(t_i, y_hat, law_i, z_i) dt
//! ```
//!
//! where `y_hat` is either a frozen value or `y_i` itself. In the second case the
//! scalar equation is solved per node by damped fixed-point iteration, which
//! contracts because `lambda * dt < 1` is enforced up front.

use crate::error::{Error, Result};
use crate::expr::{parse, EvalEnv, Expr, Var};
use crate::lattice::{Lattice, NodeProcess};
use crate::law::MarginalLaw;

/// Residual target of the per-node implicit equation.
pub const INNER_TOL: f64 = 1e-13;
const INNER_MAX_ITER: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convexity {
    Concave,
    Convex,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriverClass {
    Lipschitz,
    Quadratic,
}

/// A driver `f(t, y, law, z)` with its declared constants.
///
/// `lambda` is the Lipschitz constant in `(y, law)` (and in `z` for Lipschitz
/// drivers); `alpha`, `beta`, `gamma` bound the growth
/// `|f| <= alpha + beta (|y| + W1(law, delta_0)) + gamma/2 |z|^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriverSpec {
    pub expr: Expr,
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Local Lipschitz constant in `z` for bounded quadratic drivers. Reported, never consumed.
    pub kappa: Option<f64>,
    pub convexity: Convexity,
    pub class: DriverClass,
}

impl DriverSpec {
    pub fn lipschitz(expr: &str, lambda: f64) -> Result<Self> {
        let spec = DriverSpec {
            expr: parse(expr)?,
            lambda,
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            kappa: None,
            convexity: Convexity::None,
            class: DriverClass::Lipschitz,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn quadratic(
        expr: &str,
        lambda: f64,
        alpha: f64,
        beta: f64,
        gamma: f64,
        convexity: Convexity,
    ) -> Result<Self> {
        let spec = DriverSpec {
            expr: parse(expr)?,
            lambda,
            alpha,
            beta,
            gamma,
            kappa: None,
            convexity,
            class: DriverClass::Quadratic,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda", self.lambda),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("driver.{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.class == DriverClass::Quadratic && self.gamma <= 0.0 {
            return Err(Error::Config("driver.gamma must be > 0 for quadratic drivers".into()));
        }
        if let Some(k) = self.kappa {
            if !(k.is_finite() && k >= 0.0) {
                return Err(Error::Config(format!("driver.kappa must be >= 0, got {k}")));
            }
        }
        Ok(())
    }

    pub fn check_step(&self, dt: f64) -> Result<()> {
        if self.lambda * dt >= 1.0 {
            return Err(Error::StepSize {
                lambda: self.lambda,
                dt,
            });
        }
        Ok(())
    }
}

/// Terminal payoff `xi(b)` as an expression in `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalCondition {
    pub expr: Expr,
}

impl TerminalCondition {
    pub fn new(src: &str) -> Result<Self> {
        Self::from_expr(parse(src)?)
    }

    pub fn from_expr(expr: Expr) -> Result<Self> {
        if let Some(v) = expr.variables().into_iter().find(|v| *v != Var::B) {
            return Err(Error::Config(format!(
                "terminal expression may only use `b`, found `{}`",
                v.name()
            )));
        }
        Ok(TerminalCondition { expr })
    }

    /// Values on the terminal level of the lattice.
    pub fn realize(&self, lat: &Lattice) -> Result<Vec<f64>> {
        let n = lat.n_steps();
        lat.values(n)
            .iter()
            .map(|&b| {
                let env = EvalEnv {
                    t: lat.horizon(),
                    b,
                    ..Default::default()
                };
                Ok(self.expr.eval(&env)?)
            })
            .collect()
    }
}

/// Mean-field data held fixed during one backward solve.
#[derive(Debug, Clone)]
pub struct FrozenInputs {
    laws: Vec<MarginalLaw>,
    moments: Vec<(f64, f64)>,
    y: Option<NodeProcess>,
}

impl FrozenInputs {
    pub fn new(laws: Vec<MarginalLaw>, y: Option<NodeProcess>) -> Self {
        let moments = laws.iter().map(|l| (l.mean(), l.abs_mean())).collect();
        FrozenInputs { laws, moments, y }
    }

    /// Dirac laws at zero and no frozen `y`; for drivers without mean-field terms.
    pub fn degenerate(lat: &Lattice) -> Self {
        Self::new(vec![MarginalLaw::dirac(0.0); lat.n_steps() + 1], None)
    }

    /// Laws of `u` level by level, optionally freezing the `y` slot at `u` as well.
    pub fn from_process(lat: &Lattice, u: &NodeProcess, freeze_y: bool) -> Result<Self> {
        if !u.fits(lat) {
            return Err(Error::Contract("frozen process does not match the lattice".into()));
        }
        let laws = (0..=lat.n_steps())
            .map(|i| lat.node_marginal(i, u.level(i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(laws, freeze_y.then(|| u.clone())))
    }

    pub fn laws(&self) -> &[MarginalLaw] {
        &self.laws
    }

    pub fn frozen_y(&self) -> Option<&NodeProcess> {
        self.y.as_ref()
    }

    pub(crate) fn moments(&self, level: usize) -> (f64, f64) {
        self.moments[level]
    }

    fn check(&self, lat: &Lattice) -> Result<()> {
        if self.laws.len() != lat.n_steps() + 1 {
            return Err(Error::Contract(format!(
                "expected {} frozen laws, got {}",
                lat.n_steps() + 1,
                self.laws.len()
            )));
        }
        if let Some(y) = &self.y {
            if !y.fits(lat) {
                return Err(Error::Contract("frozen y does not match the lattice".into()));
            }
        }
        Ok(())
    }
}

/// `(y, z)` with `y` on levels `0..=n` and `z` on `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct BsdePair {
    pub y: NodeProcess,
    pub z: NodeProcess,
}

/// Solve `y = cont + f(y) dt` at one node.
#[allow(clippy::too_many_arguments)]
pub(crate) fn implicit_step(
    driver: &DriverSpec,
    uses_y: bool,
    mut env: EvalEnv,
    cont: f64,
    frozen_y: Option<f64>,
    dt: f64,
    level: usize,
    node: usize,
) -> Result<f64> {
    if let Some(u) = frozen_y {
        env.y = u;
        return Ok(cont + driver.expr.eval(&env)? * dt);
    }
    if !uses_y {
        return Ok(cont + driver.expr.eval(&env)? * dt);
    }
    let mut y = cont;
    let mut damping = 1.0;
    let mut last_res = f64::INFINITY;
    for _ in 0..INNER_MAX_ITER {
        env.y = y;
        let g = cont + driver.expr.eval(&env)? * dt;
        let res = (g - y).abs();
        if res <= INNER_TOL * y.abs().max(1.0) {
            return Ok(g);
        }
        if res > last_res {
            damping *= 0.5;
        }
        last_res = res;
        y += damping * (g - y);
    }
    Err(Error::InnerSolve {
        level,
        node,
        residual: last_res,
    })
}

/// Backward sweep over levels `from..to`, with `y` already filled at level `to`.
///
/// With an obstacle the unreflected value is projected onto `[H, inf)` and the
/// push is recorded in `dk`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_sweep(
    lat: &Lattice,
    driver: &DriverSpec,
    frozen: &FrozenInputs,
    obstacle: Option<&NodeProcess>,
    from: usize,
    to: usize,
    y: &mut NodeProcess,
    z: &mut NodeProcess,
    mut dk: Option<&mut NodeProcess>,
) -> Result<()> {
    let dt = lat.dt();
    driver.check_step(dt)?;
    frozen.check(lat)?;
    let uses_y = driver.expr.uses(Var::Y);
    for i in (from..to).rev() {
        let next = y.level(i + 1);
        let cont = lat.conditional_expectation(i, next)?;
        let zi = lat.z_projection(i, next)?;
        let (m1, am) = frozen.moments(i);
        let t = lat.time(i);
        let mut yi = Vec::with_capacity(i + 1);
        let mut dki = Vec::with_capacity(i + 1);
        for j in 0..=i {
            let env = EvalEnv {
                t,
                y: 0.0,
                z: zi[j],
                b: lat.values(i)[j],
                m1,
                am,
            };
            let fy = frozen.y.as_ref().map(|u| u.get(i, j));
            let free = implicit_step(driver, uses_y, env, cont[j], fy, dt, i, j)?;
            match obstacle {
                Some(h) => {
                    let v = free.max(h.get(i, j));
                    dki.push(v - free);
                    yi.push(v);
                }
                None => {
                    dki.push(0.0);
                    yi.push(free);
                }
            }
        }
        *y.level_mut(i) = yi;
        *z.level_mut(i) = zi;
        if let Some(dk) = dk.as_deref_mut() {
            *dk.level_mut(i) = dki;
        }
    }
    Ok(())
}

/// Solve the non-reflected BSDE with terminal values `terminal` on the last level.
pub fn solve_bsde(
    lat: &Lattice,
    driver: &DriverSpec,
    frozen: &FrozenInputs,
    terminal: &[f64],
) -> Result<BsdePair> {
    let n = lat.n_steps();
    if terminal.len() != n + 1 {
        return Err(Error::Contract(format!(
            "terminal has {} values, lattice level {n} has {}",
            terminal.len(),
            n + 1
        )));
    }
    let mut y = NodeProcess::zeros(lat);
    *y.level_mut(n) = terminal.to_vec();
    let mut z = NodeProcess::zeros_levels(n);
    backward_sweep(lat, driver, frozen, None, 0, n, &mut y, &mut z, None)?;
    Ok(BsdePair { y, z })
}

/// `(1/gamma) ln E[exp(gamma xi)]` at the root, computed on the lattice in log space.
///
/// This is the exact discrete Cole-Hopf value that the pure quadratic driver
/// `gamma/2 z^2` approximates.
pub fn cole_hopf_value(lat: &Lattice, gamma: f64, terminal: &[f64]) -> f64 {
    let n = lat.n_steps();
    let logs: Vec<f64> = terminal
        .iter()
        .zip(lat.probs(n))
        .map(|(x, p)| gamma * x + p.ln())
        .collect();
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = logs.iter().map(|l| (l - top).exp()).sum();
    (top + s.ln()) / gamma
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_lattice;

    fn degenerate(lat: &Lattice) -> FrozenInputs {
        FrozenInputs::degenerate(lat)
    }

    #[test]
    fn zero_driver_constant_terminal() {
        let lat = build_lattice(1.0, 10).unwrap();
        let d = DriverSpec::lipschitz("0", 0.0).unwrap();
        let pair = solve_bsde(&lat, &d, &degenerate(&lat), &[2.5; 11]).unwrap();
        for i in 0..=10 {
            assert!(pair.y.level(i).iter().all(|&v| v == 2.5));
        }
        for i in 0..10 {
            assert!(pair.z.level(i).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn unit_drift_integrates_time() {
        let lat = build_lattice(1.0, 16).unwrap();
        let d = DriverSpec::lipschitz("1", 0.0).unwrap();
        let pair = solve_bsde(&lat, &d, &degenerate(&lat), &[0.0; 17]).unwrap();
        for i in 0..=16 {
            let want = (16 - i) as f64 * lat.dt();
            assert!(pair.y.level(i).iter().all(|&v| (v - want).abs() < 1e-15));
        }
    }

    #[test]
    fn cole_hopf_quadratic() {
        let lat = build_lattice(1.0, 64).unwrap();
        let d = DriverSpec::quadratic("0.5*sq(z)", 0.0, 0.0, 0.0, 1.0, Convexity::Convex).unwrap();
        let xi = TerminalCondition::new("b").unwrap().realize(&lat).unwrap();
        let pair = solve_bsde(&lat, &d, &degenerate(&lat), &xi).unwrap();
        let y0 = pair.y.get(0, 0);
        assert!((y0 - 0.5).abs() < 5e-2);
        let lattice_oracle = 64.0 * (lat.sqrt_dt().cosh()).ln();
        assert!((cole_hopf_value(&lat, 1.0, &xi) - lattice_oracle).abs() < 1e-12);
        assert!((lattice_oracle - 0.4987).abs() < 1e-4);
        assert!((y0 - lattice_oracle).abs() < 2e-3);
    }

    #[test]
    fn implicit_y_dependence_is_solved() {
        // y_i = y_{i+1} + 0.5 y_i dt  =>  y_i = y_{i+1} / (1 - 0.5 dt)
        let lat = build_lattice(1.0, 20).unwrap();
        let d = DriverSpec::lipschitz("0.5*y", 0.5).unwrap();
        let pair = solve_bsde(&lat, &d, &degenerate(&lat), &[1.0; 21]).unwrap();
        let want = (1.0 - 0.5 * lat.dt()).powi(-20);
        assert!((pair.y.get(0, 0) - want).abs() < 1e-12);
    }

    #[test]
    fn frozen_y_replaces_unknown() {
        let lat = build_lattice(1.0, 4).unwrap();
        let d = DriverSpec::lipschitz("y", 1.0).unwrap();
        let u = NodeProcess::from_fn(&lat, |_, _| 2.0);
        let frozen = FrozenInputs::from_process(&lat, &u, true).unwrap();
        let pair = solve_bsde(&lat, &d, &frozen, &[0.0; 5]).unwrap();
        assert!((pair.y.get(0, 0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn step_size_guard() {
        let lat = build_lattice(1.0, 2).unwrap();
        let d = DriverSpec::lipschitz("3*y", 3.0).unwrap();
        assert!(matches!(
            solve_bsde(&lat, &d, &degenerate(&lat), &[0.0; 3]),
            Err(Error::StepSize { .. })
        ));
    }

    #[test]
    fn shape_errors() {
        let lat = build_lattice(1.0, 4).unwrap();
        let d = DriverSpec::lipschitz("0", 0.0).unwrap();
        assert!(matches!(
            solve_bsde(&lat, &d, &degenerate(&lat), &[0.0; 4]),
            Err(Error::Contract(_))
        ));
        let short = FrozenInputs::new(vec![MarginalLaw::dirac(0.0); 2], None);
        assert!(matches!(
            solve_bsde(&lat, &d, &short, &[0.0; 5]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn terminal_rejects_other_variables() {
        assert!(TerminalCondition::new("b + y").is_err());
        assert!(TerminalCondition::new("max(b, 0)").is_ok());
    }

    #[test]
    fn constant_validation() {
        assert!(DriverSpec::lipschitz("0", -1.0).is_err());
        assert!(DriverSpec::quadratic("sq(z)", 0.0, 0.0, 0.0, 0.0, Convexity::Convex).is_err());
    }
}
