//! Seeded random problem batteries.
//!
//! Every generator draws from a ChaCha8 stream, so a seed pins the battery
//! across platforms. Obstacle offsets are computed from the realized terminal
//! values, which keeps every generated instance terminal-compatible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::Regime;
use crate::bsde::{Convexity, DriverSpec, FrozenInputs, TerminalCondition};
use crate::error::Result;
use crate::expr::{parse, EvalEnv};
use crate::lattice::{build_lattice, Lattice, NodeProcess};
use crate::law::MarginalLaw;
use crate::meanfield::Problem;
use crate::rbsde::ObstacleSpec;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn coef(r: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    // three decimals keep printed expressions short and exact to parse
    (r.random_range(lo..hi) * 1000.0).round() / 1000.0
}

/// A non-mean-field reflected problem on a small lattice.
#[derive(Debug, Clone)]
pub struct SnellCase {
    pub lattice: Lattice,
    pub driver: DriverSpec,
    pub frozen: FrozenInputs,
    pub terminal: Vec<f64>,
    pub obstacle: NodeProcess,
}

/// Random Lipschitz driver and obstacle on a lattice of `depth` steps over `[0, 1]`.
///
/// The declared `lambda` stays below 0.9, so `lambda * dt < 1` and `lambda * sqrt(dt) < 1`
/// hold at every depth and the one-step map is monotone.
pub fn snell_case(r: &mut ChaCha8Rng, depth: usize) -> Result<SnellCase> {
    let lattice = build_lattice(1.0, depth)?;
    let cy = coef(r, -0.25, 0.25);
    let cz = coef(r, -0.25, 0.25);
    let ca = coef(r, 0.0, 0.2);
    let cm = coef(r, -0.2, 0.2);
    let c0 = coef(r, -0.5, 0.5);
    let src = format!("{c0} + {cy}*y + {cz}*z + {ca}*abs(z - {cm}) + {cm}*m1 + 0.1*sq(t)");
    let lambda = cy.abs() + cz.abs() + ca.abs() + cm.abs();
    let driver = DriverSpec::lipschitz(&src, lambda)?;
    let laws = (0..=depth)
        .map(|_| MarginalLaw::dirac(coef(r, -1.0, 1.0)))
        .collect();
    let frozen = FrozenInputs::new(laws, None);
    let (k1, k2) = (coef(r, -1.0, 1.0), coef(r, 0.0, 1.0));
    let strike = coef(r, -0.5, 0.5);
    let terminal: Vec<f64> = lattice
        .values(depth)
        .iter()
        .map(|b| k1 * b + k2 * (b - strike).max(0.0))
        .collect();
    let (h1, h2, h3) = (coef(r, -1.0, 1.0), coef(r, 0.0, 1.0), coef(r, -0.5, 0.5));
    let mut obstacle = NodeProcess::from_fn(&lattice, |i, j| {
        let b = lattice.values(i)[j];
        h1 * b + h2 * (strike - b).max(0.0) + h3 * lattice.time(i)
    });
    let excess = obstacle
        .level(depth)
        .iter()
        .zip(&terminal)
        .map(|(h, x)| h - x)
        .fold(f64::NEG_INFINITY, f64::max);
    let shift = excess.max(0.0) + coef(r, 0.0, 0.2);
    obstacle = obstacle.map(|h| h - shift);
    // rounding in the shift can leave the horizon one ulp above the payoff
    for (h, x) in obstacle.level_mut(depth).iter_mut().zip(&terminal) {
        *h = h.min(*x);
    }
    Ok(SnellCase {
        lattice,
        driver,
        frozen,
        terminal,
        obstacle,
    })
}

/// Offset that makes `obstacle + offset <= xi` at the horizon with `slack` to spare.
///
/// A fixed `1e-9` on top absorbs rounding when the offset is added back in the expression.
fn compatible_offset(
    lat: &Lattice,
    obstacle_src: &str,
    xi: &[f64],
    slack: f64,
) -> Result<f64> {
    let e = parse(obstacle_src)?;
    let n = lat.n_steps();
    let law = lat.node_marginal(n, xi)?;
    let mut worst = f64::NEG_INFINITY;
    for (j, &x) in xi.iter().enumerate() {
        let env = EvalEnv {
            t: lat.horizon(),
            y: x,
            z: 0.0,
            b: lat.values(n)[j],
            m1: law.mean(),
            am: law.abs_mean(),
        };
        worst = worst.max(e.eval(&env)? - x);
    }
    Ok(-(worst + slack + 1e-9))
}

fn with_offset(src: &str, offset: f64) -> String {
    format!("{src} + {offset:?}")
}

/// Mean-field Lipschitz instance: driver linear in `(y, z, m1, am)`, obstacle linear in `(y, m1)`.
///
/// The law enters the driver through `m1` with a nonnegative coefficient, so
/// the instance is monotone in the law and comparison in the terminal data applies.
pub fn lipschitz_problem(r: &mut ChaCha8Rng, n: usize) -> Result<Problem> {
    let cy = coef(r, -0.3, 0.3);
    let cz = coef(r, -0.4, 0.4);
    let cm = coef(r, 0.0, 0.3);
    let c0 = coef(r, -0.3, 0.3);
    let ct = coef(r, -0.3, 0.3);
    let drv = format!("{c0} + {cy}*y + {cz}*z + {cm}*m1 + {ct}*t");
    let lambda = cy.abs() + cz.abs() + cm;
    let g1 = coef(r, 0.0, 0.12);
    let g2 = coef(r, 0.0, 0.08);
    let (k1, k2, strike) = (coef(r, -1.0, 1.0), coef(r, 0.0, 1.0), coef(r, -0.5, 0.5));
    let term = format!("{k1}*b + {k2}*max(b - {strike}, 0)");
    let (e1, e2) = (coef(r, -0.5, 0.5), coef(r, 0.0, 0.5));
    let obs = format!("{g1}*y + {g2}*m1 + {e1}*b - {e2}*t");
    build_problem(n, Regime::Lipschitz, &term, DriverSpec::lipschitz(&drv, lambda)?, &obs, g1, g2, r)
}

#[allow(clippy::too_many_arguments)]
fn build_problem(
    n: usize,
    regime: Regime,
    term: &str,
    driver: DriverSpec,
    obs: &str,
    g1: f64,
    g2: f64,
    r: &mut ChaCha8Rng,
) -> Result<Problem> {
    let lat = build_lattice(1.0, n)?;
    let terminal = TerminalCondition::new(term)?;
    let xi = terminal.realize(&lat)?;
    let slack = coef(r, 0.0, 0.3);
    let obs = with_offset(obs, compatible_offset(&lat, obs, &xi, slack)?);
    Problem::new(1.0, n, 2.0, regime, terminal, driver, ObstacleSpec::new(&obs, g1, g2)?)
}

/// Bounded quadratic instance with `gamma1 + gamma2 <= 0.7` and terminal values in `[-1, 1]`.
pub fn quadratic_bounded_problem(r: &mut ChaCha8Rng, n: usize) -> Result<Problem> {
    let gamma = coef(r, 0.2, 1.0);
    let sign = if r.random_bool(0.5) { 1.0 } else { -1.0 };
    let cy = coef(r, -0.2, 0.2);
    let cm = coef(r, 0.0, 0.2);
    let c0 = coef(r, -0.2, 0.2);
    let drv = format!("{c0} + {cy}*y + {cm}*m1 + {}*sq(z)", sign * 0.5 * gamma);
    let lambda = cy.abs() + cm;
    let driver = DriverSpec::quadratic(
        &drv,
        lambda,
        c0.abs(),
        lambda,
        gamma,
        if sign > 0.0 { Convexity::Convex } else { Convexity::Concave },
    )?;
    let a = coef(r, 0.2, 1.0);
    let term = format!("{a}*max(-1, min(1, b))");
    let g1 = coef(r, 0.0, 0.4);
    let g2 = coef(r, 0.0, 0.3);
    let e1 = coef(r, 0.0, 0.3);
    let obs = format!("{g1}*y + {g2}*m1 + {e1}*max(-1, min(1, b))");
    build_problem(n, Regime::QuadraticBounded, &term, driver, &obs, g1, g2, r)
}

/// Concave unbounded instance: `xi = b`, law-dependent driver, `4(gamma1 + gamma2) <= 0.8`.
pub fn quadratic_unbounded_problem(r: &mut ChaCha8Rng, n: usize) -> Result<Problem> {
    let gamma = coef(r, 0.2, 1.0);
    let ca = coef(r, 0.0, 0.2);
    let cy = coef(r, -0.2, 0.0);
    let drv = format!("{ca}*am + {cy}*y - {}*sq(z)", 0.5 * gamma);
    let lambda = ca + cy.abs();
    let driver = DriverSpec::quadratic(&drv, lambda, 0.0, lambda, gamma, Convexity::Concave)?;
    let g1 = coef(r, 0.0, 0.12);
    let g2 = coef(r, 0.0, 0.08);
    let e0 = coef(r, 0.0, 1.0);
    let obs = format!("{g1}*y + {g2}*m1 - {e0} - 0.5*t");
    let lat = build_lattice(1.0, n)?;
    let terminal = TerminalCondition::new("b")?;
    let xi = terminal.realize(&lat)?;
    let off = compatible_offset(&lat, &obs, &xi, 0.0)?.min(0.0);
    Problem::new(
        1.0,
        n,
        2.0,
        Regime::QuadraticUnbounded,
        terminal,
        driver,
        ObstacleSpec::new(&with_offset(&obs, off), g1, g2)?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batteries_are_reproducible_and_valid() {
        for seed in 0..10 {
            let a = snell_case(&mut rng(seed), 3).unwrap();
            let b = snell_case(&mut rng(seed), 3).unwrap();
            assert_eq!(a.terminal, b.terminal);
            assert_eq!(a.obstacle, b.obstacle);
            assert!(a.driver.lambda < 0.9);
            let p = lipschitz_problem(&mut rng(seed), 32).unwrap();
            assert!(p.gate(0.05).is_ok());
            let p = quadratic_bounded_problem(&mut rng(seed), 32).unwrap();
            assert!(p.obstacle.gamma1 + p.obstacle.gamma2 <= 0.7);
            assert!(p.gate(0.05).is_ok());
            let p = quadratic_unbounded_problem(&mut rng(seed), 32).unwrap();
            assert!(4.0 * (p.obstacle.gamma1 + p.obstacle.gamma2) <= 0.8);
            assert!(p.gate(0.05).is_ok());
        }
    }
}
