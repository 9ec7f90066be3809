//! Gate conditions, contraction windows and numeric certificates.

use serde::Serialize;

use crate::bsde::{BsdePair, DriverClass, DriverSpec};
use crate::error::{Error, Result};
use crate::expr::{EvalEnv, Expr, Var};
use crate::lattice::{Lattice, NodeProcess};
use crate::rbsde::{ObstacleSpec, SolutionTriple};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Lipschitz,
    QuadraticBounded,
    QuadraticUnbounded,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Lipschitz => "lipschitz",
            Regime::QuadraticBounded => "quadratic_bounded",
            Regime::QuadraticUnbounded => "quadratic_unbounded",
        }
    }

    pub fn from_name(s: &str) -> Option<Regime> {
        match s {
            "lipschitz" => Some(Regime::Lipschitz),
            "quadratic_bounded" => Some(Regime::QuadraticBounded),
            "quadratic_unbounded" => Some(Regime::QuadraticUnbounded),
            _ => None,
        }
    }
}

/// Constants consumed by the gates. `lambda` is the Lipschitz constant in `(y, law, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GateParams {
    pub gamma1: f64,
    pub gamma2: f64,
    pub lambda: f64,
    pub beta: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub p_exponent: f64,
    pub horizon: f64,
}

impl GateParams {
    pub fn new(gamma1: f64, gamma2: f64, p_exponent: f64) -> Self {
        GateParams {
            gamma1,
            gamma2,
            lambda: 0.0,
            beta: 0.0,
            alpha: 0.0,
            gamma: 0.0,
            p_exponent,
            horizon: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p_exponent > 1.0 && self.p_exponent.is_finite()) {
            return Err(Error::Parameter(format!(
                "p_exponent must be > 1, got {}",
                self.p_exponent
            )));
        }
        for (name, v) in [
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("lambda", self.lambda),
            ("beta", self.beta),
            ("alpha", self.alpha),
            ("gamma", self.gamma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Parameter(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Parameter(format!("horizon must be > 0, got {}", self.horizon)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GateValue {
    pub accept: bool,
    pub value: f64,
}

/// `(g1+g2)^((p-1)/p) * ((p/(p-1))^p g1 + g2)^(1/p)`, accepted when `< 1`.
pub fn lipschitz_gate(gp: &GateParams) -> Result<GateValue> {
    gp.validate()?;
    let p = gp.p_exponent;
    let (g1, g2) = (gp.gamma1, gp.gamma2);
    let value = if g1 == 0.0 {
        // both factors are powers of g2 and recombine to g2 exactly
        g2
    } else {
        (g1 + g2).powf((p - 1.0) / p) * ((p / (p - 1.0)).powf(p) * g1 + g2).powf(1.0 / p)
    };
    Ok(GateValue {
        accept: value < 1.0,
        value,
    })
}

/// `(g1+g2)^(p-1) ((p/(p-1))^p g1 + g2)`: the gate value raised to the power `p`.
pub fn gate_power(g1: f64, g2: f64, p: f64) -> f64 {
    (g1 + g2).powf(p - 1.0) * ((p / (p - 1.0)).powf(p) * g1 + g2)
}

/// `2^(p-1) (g1^p + g2^p)`, the power-sum condition it is compared against.
pub fn power_sum_condition(g1: f64, g2: f64, p: f64) -> f64 {
    2f64.powf(p - 1.0) * (g1.powf(p) + g2.powf(p))
}

/// Contraction bound of the map on a window of length `(mu-1)^2`.
pub fn lambda_mu(gp: &GateParams, mu: f64) -> Result<f64> {
    gp.validate()?;
    let p = gp.p_exponent;
    if !(mu > 1.0 && mu < p) {
        return Err(Error::Parameter(format!("mu must lie in (1, {p}), got {mu}")));
    }
    let l = gp.lambda;
    let s = (mu - 1.0) * (mu - 1.0);
    let a = (gp.gamma1 + gp.gamma2 + 2.0 * l * s).powf((p - 1.0) / p);
    let b = ((gp.gamma1 + l * s) * (p / (p - mu)).powf(p / mu) + gp.gamma2 + l * s).powf(1.0 / p);
    Ok((l * l * (mu - 1.0) / 2.0).exp() * a * b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContractionWindow {
    pub mu_star: f64,
    pub delta: f64,
    pub lambda_at_mu_star: f64,
}

const MU_GRID: usize = 4000;
const MU_EDGE: f64 = 1e-10;

/// Largest `mu` in `(1, p)` with `lambda_mu(mu) <= 1 - margin`, and `delta = min((mu-1)^2, T)`.
pub fn find_contraction_window(gp: &GateParams, margin: f64) -> Result<ContractionWindow> {
    let gate = lipschitz_gate(gp)?;
    if !gate.accept {
        return Err(Error::Gate(format!(
            "Lipschitz gate rejected: value {} >= 1",
            gate.value
        )));
    }
    if !(margin > 0.0 && margin < 1.0) {
        return Err(Error::Parameter(format!("margin must lie in (0, 1), got {margin}")));
    }
    let target = 1.0 - margin;
    let p = gp.p_exponent;
    let lo_edge = 1.0 + MU_EDGE;
    let hi_edge = p - MU_EDGE;
    let ok = |mu: f64| -> Result<bool> { Ok(lambda_mu(gp, mu)? <= target) };
    let mu_star = if ok(hi_edge)? {
        hi_edge
    } else {
        // scan downward for the last admissible grid point, then bisect upward
        let grid = |k: usize| lo_edge + (hi_edge - lo_edge) * k as f64 / MU_GRID as f64;
        let mut found = None;
        for k in (0..MU_GRID).rev() {
            if ok(grid(k))? {
                found = Some(k);
                break;
            }
        }
        let k = found.ok_or_else(|| {
            Error::Parameter(format!(
                "no mu in (1, {p}) with Lambda(mu) <= {target}; use a smaller margin"
            ))
        })?;
        let (mut a, mut b) = (grid(k), grid(k + 1));
        while b - a > 1e-12 {
            let m = 0.5 * (a + b);
            if ok(m)? {
                a = m;
            } else {
                b = m;
            }
        }
        a
    };
    let lam = lambda_mu(gp, mu_star)?;
    Ok(ContractionWindow {
        mu_star,
        delta: ((mu_star - 1.0) * (mu_star - 1.0)).min(gp.horizon),
        lambda_at_mu_star: lam,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadraticKind {
    Bounded,
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadraticWindow {
    pub window_len: f64,
    pub nu: Option<f64>,
    pub nu_tilde: Option<f64>,
}

/// The two strict inequalities the unbounded window must satisfy, returned as their left sides.
pub fn unbounded_window_values(gp: &GateParams, h: f64, nu: f64, nu_tilde: f64) -> (f64, f64) {
    let e = (gp.beta * h).exp();
    (
        4.0 * e * nu_tilde * (gp.gamma1 + gp.gamma2 + gp.beta * h),
        4.0 * e * nu * nu_tilde * gp.gamma1,
    )
}

pub fn unbounded_window_holds(gp: &GateParams, h: f64, nu: f64, nu_tilde: f64) -> bool {
    let (a, b) = unbounded_window_values(gp, h, nu, nu_tilde);
    a < 1.0 && b < 1.0
}

pub fn quadratic_window(gp: &GateParams, kind: QuadraticKind) -> Result<QuadraticWindow> {
    gp.validate()?;
    let g = gp.gamma1 + gp.gamma2;
    match kind {
        QuadraticKind::Bounded => {
            if g >= 1.0 {
                return Err(Error::Gate(format!("bounded quadratic gate: gamma1 + gamma2 = {g} >= 1")));
            }
            let len = if gp.beta == 0.0 {
                gp.horizon
            } else {
                (0.5 * (1.0 - g) / (2.0 * gp.beta)).min(gp.horizon)
            };
            Ok(QuadraticWindow {
                window_len: len,
                nu: None,
                nu_tilde: None,
            })
        }
        QuadraticKind::Unbounded => {
            if 4.0 * g >= 1.0 {
                return Err(Error::Gate(format!(
                    "unbounded quadratic gate: 4(gamma1 + gamma2) = {} >= 1",
                    4.0 * g
                )));
            }
            let nu = 1.0 + (1.0 - 4.0 * g) / 4.0;
            if !unbounded_window_holds(gp, 0.0, nu, nu) {
                return Err(Error::Gate("unbounded quadratic window: no admissible length".into()));
            }
            let len = if unbounded_window_holds(gp, gp.horizon, nu, nu) {
                gp.horizon
            } else {
                let (mut a, mut b) = (0.0, gp.horizon);
                for _ in 0..200 {
                    let m = 0.5 * (a + b);
                    if unbounded_window_holds(gp, m, nu, nu) {
                        a = m;
                    } else {
                        b = m;
                    }
                }
                0.99 * a
            };
            Ok(QuadraticWindow {
                window_len: len,
                nu: Some(nu),
                nu_tilde: Some(nu),
            })
        }
    }
}

/// Outcome of the regime gate with the window it implies.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GateReport {
    pub regime: Regime,
    pub condition: String,
    pub value: f64,
    pub accept: bool,
    pub window_len: f64,
    pub mu_star: Option<f64>,
    pub lambda_bound: Option<f64>,
    pub nu: Option<f64>,
    pub nu_tilde: Option<f64>,
}

/// Run the gate of `regime`. A rejected gate is an `Error::Gate`.
pub fn regime_gate(gp: &GateParams, regime: Regime, margin: f64) -> Result<GateReport> {
    match regime {
        Regime::Lipschitz => {
            let g = lipschitz_gate(gp)?;
            let w = find_contraction_window(gp, margin)?;
            Ok(GateReport {
                regime,
                condition: "(g1+g2)^((p-1)/p) ((p/(p-1))^p g1 + g2)^(1/p) < 1".into(),
                value: g.value,
                accept: true,
                window_len: w.delta,
                mu_star: Some(w.mu_star),
                lambda_bound: Some(w.lambda_at_mu_star),
                nu: None,
                nu_tilde: None,
            })
        }
        Regime::QuadraticBounded => {
            let w = quadratic_window(gp, QuadraticKind::Bounded)?;
            Ok(GateReport {
                regime,
                condition: "g1 + g2 < 1".into(),
                value: gp.gamma1 + gp.gamma2,
                accept: true,
                window_len: w.window_len,
                mu_star: None,
                lambda_bound: None,
                nu: None,
                nu_tilde: None,
            })
        }
        Regime::QuadraticUnbounded => {
            let w = quadratic_window(gp, QuadraticKind::Unbounded)?;
            Ok(GateReport {
                regime,
                condition: "4 (g1 + g2) < 1".into(),
                value: 4.0 * (gp.gamma1 + gp.gamma2),
                accept: true,
                window_len: w.window_len,
                mu_star: None,
                lambda_bound: None,
                nu: w.nu,
                nu_tilde: w.nu_tilde,
            })
        }
    }
}

/// Discrete BMO norm: max over nodes of `sqrt(E_node[sum_{s >= level} z_s^2 dt])`.
pub fn bmo_norm(lat: &Lattice, z: &NodeProcess) -> Result<f64> {
    let n = lat.n_steps();
    if z.n_levels() < n {
        return Err(Error::Contract(format!("z needs {n} levels, has {}", z.n_levels())));
    }
    let dt = lat.dt();
    let mut acc = vec![0.0; n + 1];
    let mut best: f64 = 0.0;
    for i in (0..n).rev() {
        let cont = lat.conditional_expectation(i, &acc)?;
        acc = z
            .level(i)
            .iter()
            .zip(cont)
            .map(|(zi, c)| zi * zi * dt + c)
            .collect();
        best = acc.iter().cloned().fold(best, f64::max);
    }
    Ok(best.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

pub const BMO_SLACK: f64 = 1.10;

/// `bmo(z)^2 <= (1 + 2 gamma T (alpha + beta |Y|_inf)) exp(4 gamma |Y|_inf) / gamma^2`, with slack.
pub fn bmo_bound_check(lat: &Lattice, triple: &SolutionTriple, gp: &GateParams) -> Result<BoundCheck> {
    if gp.gamma.is_nan() || gp.gamma <= 0.0 {
        return Err(Error::Parameter("BMO bound needs gamma > 0".into()));
    }
    let norm = bmo_norm(lat, &triple.z)?;
    let ysup = triple.y.sup_norm();
    let g = gp.gamma;
    let rhs = (1.0 + 2.0 * g * gp.horizon * (gp.alpha + gp.beta * ysup)) * (4.0 * g * ysup).exp() / (g * g);
    let lhs = norm * norm;
    Ok(BoundCheck {
        lhs,
        rhs,
        pass: lhs <= BMO_SLACK * rhs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentVariant {
    Abs,
    Plus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentCheck {
    pub max_violation: f64,
    pub pass: bool,
}

pub const MOMENT_SLACK: f64 = 0.02;

fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Exponential-moment bound of a solved pair, checked at every node.
///
/// `exp(p g |y_t|) <= exp(p g alpha int_t^T e^(beta(s-t)) ds) E_t[exp(p g e^(beta(T-t)) |eta|)]`,
/// with positive parts for the `Plus` variant. Both sides are compared in log space.
pub fn exp_moment_check(
    lat: &Lattice,
    pair: &BsdePair,
    gp: &GateParams,
    p: f64,
    variant: MomentVariant,
) -> Result<MomentCheck> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::Parameter(format!("moment exponent must be >= 1, got {p}")));
    }
    if gp.gamma.is_nan() || gp.gamma <= 0.0 {
        return Err(Error::Parameter("exponential moment check needs gamma > 0".into()));
    }
    let n = lat.n_steps();
    if !pair.y.fits(lat) {
        return Err(Error::Contract("pair does not match the lattice".into()));
    }
    let part = |v: f64| match variant {
        MomentVariant::Abs => v.abs(),
        MomentVariant::Plus => v.max(0.0),
    };
    let pg = p * gp.gamma;
    let eta: Vec<f64> = pair.y.level(n).iter().map(|&v| part(v)).collect();
    let mut worst = f64::NEG_INFINITY;
    for i in 0..=n {
        let tau = lat.horizon() - lat.time(i);
        let c = pg * (gp.beta * tau).exp();
        let drift = if gp.beta == 0.0 {
            tau
        } else {
            ((gp.beta * tau).exp() - 1.0) / gp.beta
        };
        let mut acc: Vec<f64> = eta.iter().map(|e| c * e).collect();
        for l in (i..n).rev() {
            acc = (0..=l)
                .map(|j| log_add(acc[j], acc[j + 1]) - std::f64::consts::LN_2)
                .collect();
        }
        for (j, log_e) in acc.iter().enumerate() {
            let lhs = pg * part(pair.y.get(i, j));
            let rhs = pg * gp.alpha * drift + log_e;
            worst = worst.max((lhs - rhs).exp_m1());
        }
    }
    Ok(MomentCheck {
        max_violation: worst,
        pass: worst <= MOMENT_SLACK,
    })
}

/// Finite-difference Lipschitz quotients against declared constants.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub samples: usize,
    pub max_y: f64,
    pub max_law: f64,
    pub max_z: f64,
    pub flags: Vec<String>,
}

impl ProbeReport {
    pub fn flagged(&self) -> bool {
        !self.flags.is_empty()
    }
}

const PROBE_H: f64 = 1e-5;
const PROBE_REL: f64 = 0.01;

fn probe_point(k: usize) -> EvalEnv {
    // additive recurrence with irrational steps
    const STEPS: [f64; 5] = [
        0.618_033_988_749_895,
        0.414_213_562_373_095,
        0.732_050_807_568_877,
        0.236_067_977_499_790,
        0.645_751_311_064_591,
    ];
    let u = |d: usize| ((k as f64 + 0.5) * STEPS[d]).fract();
    EvalEnv {
        t: u(0),
        y: 4.0 * u(1) - 2.0,
        z: 4.0 * u(2) - 2.0,
        b: 0.0,
        m1: 4.0 * u(3) - 2.0,
        am: 2.0 * u(4),
    }
}

fn quotient(e: &Expr, env: &EvalEnv, v: Var) -> Option<f64> {
    let mut up = *env;
    let mut dn = *env;
    up.set(v, env.get(v) + PROBE_H);
    dn.set(v, env.get(v) - PROBE_H);
    let a = e.eval(&up).ok()?;
    let b = e.eval(&dn).ok()?;
    Some(((a - b) / (2.0 * PROBE_H)).abs())
}

fn probe(
    e: &Expr,
    samples: usize,
    y_bound: f64,
    law_bound: f64,
    z_bound: Option<f64>,
) -> ProbeReport {
    let mut rep = ProbeReport {
        samples,
        max_y: 0.0,
        max_law: 0.0,
        max_z: 0.0,
        flags: Vec::new(),
    };
    let exceeds = |q: f64, bound: f64| q > bound * (1.0 + PROBE_REL) + 1e-9;
    for k in 0..samples {
        let mut env = probe_point(k);
        if env.am < env.m1.abs() {
            env.am = env.m1.abs();
        }
        let qy = quotient(e, &env, Var::Y).unwrap_or(0.0);
        let ql = quotient(e, &env, Var::M1).unwrap_or(0.0) + quotient(e, &env, Var::Am).unwrap_or(0.0);
        rep.max_y = rep.max_y.max(qy);
        rep.max_law = rep.max_law.max(ql);
        if exceeds(qy, y_bound) {
            rep.flags.push(format!("y-quotient {qy:.6} exceeds {y_bound} at y = {:.4}", env.y));
        }
        if exceeds(ql, law_bound) {
            rep.flags.push(format!("law-quotient {ql:.6} exceeds {law_bound} at m1 = {:.4}", env.m1));
        }
        if let Some(zb) = z_bound {
            let qz = quotient(e, &env, Var::Z).unwrap_or(0.0);
            rep.max_z = rep.max_z.max(qz);
            if exceeds(qz, zb) {
                rep.flags.push(format!("z-quotient {qz:.6} exceeds {zb} at z = {:.4}", env.z));
            }
        }
    }
    rep
}

/// Probe a driver. Quadratic drivers are not probed in `z`.
pub fn lipschitz_probe_driver(driver: &DriverSpec, samples: usize) -> ProbeReport {
    let z = (driver.class == DriverClass::Lipschitz).then_some(driver.lambda);
    let ybound = match driver.class {
        DriverClass::Lipschitz => driver.lambda,
        DriverClass::Quadratic => driver.lambda.max(driver.beta),
    };
    probe(&driver.expr, samples, ybound, ybound, z)
}

/// Probe an obstacle against `gamma1` in `y` and `gamma2` in the law.
pub fn lipschitz_probe_obstacle(obstacle: &ObstacleSpec, samples: usize) -> ProbeReport {
    probe(&obstacle.expr, samples, obstacle.gamma1, obstacle.gamma2, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsde::{solve_bsde, FrozenInputs};
    use crate::lattice::build_lattice;

    fn gp(g1: f64, g2: f64, p: f64) -> GateParams {
        GateParams::new(g1, g2, p)
    }

    #[test]
    fn gate_examples() {
        let v = lipschitz_gate(&gp(0.0, 0.999, 3.0)).unwrap();
        assert!(v.accept && v.value == 0.999);
        let v = lipschitz_gate(&gp(0.2, 0.2, 2.0)).unwrap();
        assert!(v.accept && (v.value - 0.4f64.sqrt()).abs() < 1e-15);
        let v = lipschitz_gate(&gp(0.5, 0.5, 2.0)).unwrap();
        assert!(!v.accept && (v.value - 2.5f64.sqrt()).abs() < 1e-15);
        assert!(lipschitz_gate(&gp(0.1, 0.1, 1.0)).is_err());
    }

    #[test]
    fn lambda_mu_examples() {
        let g = gp(0.0, 0.5, 2.0);
        for mu in [1.01, 1.5, 1.99] {
            assert!((lambda_mu(&g, mu).unwrap() - 0.5).abs() < 1e-14);
        }
        // (2/0.8)^(2/1.2) = 4.6062..., sqrt(0.4) sqrt(0.2*4.6062 + 0.2)
        let want = 0.4f64.sqrt() * (0.2 * 2.5f64.powf(2.0 / 1.2) + 0.2).sqrt();
        let got = lambda_mu(&gp(0.2, 0.2, 2.0), 1.2).unwrap();
        assert!((got - want).abs() < 1e-14);
        assert!((got - 0.6697).abs() < 5e-4);
        let near = lambda_mu(&gp(0.2, 0.2, 2.0), 1.0 + 1e-9).unwrap();
        assert!((near - 0.4f64.sqrt()).abs() < 1e-7);
        assert!(lambda_mu(&g, 1.0).is_err());
        assert!(lambda_mu(&g, 2.0).is_err());
    }

    #[test]
    fn contraction_window_examples() {
        let mut g = gp(0.2, 0.2, 2.0);
        g.horizon = 1.0;
        let w = find_contraction_window(&g, 0.05).unwrap();
        // independent grid scan of Lambda
        let mut best = 1.0;
        for k in 1..200_000 {
            let mu = 1.0 + k as f64 / 200_000.0;
            if lambda_mu(&g, mu).unwrap() <= 0.95 {
                best = mu;
            }
        }
        assert!((w.mu_star - best).abs() < 1e-5, "{} vs {best}", w.mu_star);
        assert!((w.mu_star - 1.73).abs() < 0.01);
        assert!((w.delta - 0.54).abs() < 0.005, "{w:?}");
        assert!(w.lambda_at_mu_star <= 0.95);

        let w = find_contraction_window(&gp(0.0, 0.5, 2.0), 0.05).unwrap();
        assert!(w.mu_star > 2.0 - 1e-9);
        assert!((w.delta - 1.0).abs() < 1e-9);

        assert!(matches!(
            find_contraction_window(&gp(0.5, 0.5, 2.0), 0.05),
            Err(Error::Gate(_))
        ));
    }

    #[test]
    fn contraction_window_is_deterministic() {
        let mut g = gp(0.1, 0.25, 2.5);
        g.lambda = 0.7;
        let a = find_contraction_window(&g, 0.05).unwrap();
        let b = find_contraction_window(&g, 0.05).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn quadratic_window_examples() {
        let mut g = gp(0.3, 0.4, 2.0);
        g.beta = 0.5;
        let w = quadratic_window(&g, QuadraticKind::Bounded).unwrap();
        assert!((w.window_len - 0.15).abs() < 1e-15);
        assert!(g.gamma1 + g.gamma2 + 2.0 * g.beta * w.window_len < 1.0);

        let mut g = gp(0.1, 0.1, 2.0);
        g.beta = 0.5;
        assert!(unbounded_window_holds(&g, 0.06, 1.1, 1.05));
        let (a, b) = unbounded_window_values(&g, 0.06, 1.1, 1.05);
        assert!((a - 0.995).abs() < 1e-3 && (b - 0.476).abs() < 1e-3);
        let w = quadratic_window(&g, QuadraticKind::Unbounded).unwrap();
        let (nu, nt) = (w.nu.unwrap(), w.nu_tilde.unwrap());
        assert!(nu > 1.0 && nt > 1.0);
        assert!(w.window_len > 0.0);
        assert!(unbounded_window_holds(&g, w.window_len, nu, nt));

        assert!(matches!(
            quadratic_window(&gp(0.2, 0.1, 2.0), QuadraticKind::Unbounded),
            Err(Error::Gate(_))
        ));
    }

    #[test]
    fn power_sum_inequality_on_grid() {
        for gi in 1..10 {
            let g = gi as f64 / 10.0;
            for pi in 0..10 {
                let p = 1.1 + 2.9 * pi as f64 / 9.0;
                assert!(gate_power(g, g, p) >= power_sum_condition(g, g, p));
            }
        }
    }

    #[test]
    fn bmo_examples() {
        let lat = build_lattice(2.0, 8).unwrap();
        let zero = NodeProcess::zeros_levels(8);
        assert_eq!(bmo_norm(&lat, &zero).unwrap(), 0.0);
        let c = NodeProcess::from_levels((0..8).map(|i| vec![1.5; i + 1]).collect()).unwrap();
        assert!((bmo_norm(&lat, &c).unwrap() - 1.5 * 2f64.sqrt()).abs() < 1e-14);
        let c3 = c.map(|v| 3.0 * v);
        assert!((bmo_norm(&lat, &c3).unwrap() - 3.0 * bmo_norm(&lat, &c).unwrap()).abs() < 1e-13);
    }

    #[test]
    fn exp_moment_equality_and_jensen() {
        let lat = build_lattice(1.0, 16).unwrap();
        let frozen = FrozenInputs::degenerate(&lat);
        let one = DriverSpec::lipschitz("1", 0.0).unwrap();
        let pair = solve_bsde(&lat, &one, &frozen, &[0.0; 17]).unwrap();
        let mut g = gp(0.0, 0.0, 2.0);
        g.alpha = 1.0;
        g.gamma = 0.7;
        let r = exp_moment_check(&lat, &pair, &g, 2.0, MomentVariant::Abs).unwrap();
        assert!(r.pass && r.max_violation.abs() <= 1e-10, "{r:?}");

        let zero = DriverSpec::lipschitz("0", 0.0).unwrap();
        let xi: Vec<f64> = lat.values(16).iter().map(|b| b - 0.3).collect();
        let pair = solve_bsde(&lat, &zero, &frozen, &xi).unwrap();
        let mut g = gp(0.0, 0.0, 2.0);
        g.gamma = 1.0;
        for v in [MomentVariant::Abs, MomentVariant::Plus] {
            let r = exp_moment_check(&lat, &pair, &g, 1.0, v).unwrap();
            assert!(r.max_violation <= 1e-14, "{r:?}");
        }
    }

    #[test]
    fn probe_examples() {
        let d = DriverSpec::lipschitz("0.5*y", 0.5).unwrap();
        assert!(!lipschitz_probe_driver(&d, 500).flagged());
        let d = DriverSpec::lipschitz("y^2", 1.0).unwrap();
        let r = lipschitz_probe_driver(&d, 500);
        assert!(r.flagged() && r.max_y > 3.9);
        let o = ObstacleSpec::new("0.2*m1", 0.0, 0.2).unwrap();
        assert!(!lipschitz_probe_obstacle(&o, 500).flagged());
        let o = ObstacleSpec::new("0.3*am - 0.2*m1", 0.0, 0.4).unwrap();
        assert!(lipschitz_probe_obstacle(&o, 500).flagged());
    }
}
