//! Discretely reflected backward scheme.
//!
//! Each step computes the unreflected value `y~_i`, projects it onto the
//! obstacle, `y_i = max(y~_i, H_i)`, and records the push `dk_i = y_i - y~_i`.
//! The push is nonzero only where `y_i = H_i`, so the flat-off condition holds
//! node by node.

use crate::bsde::{backward_sweep, DriverSpec, FrozenInputs};
use crate::error::{Error, Result};
use crate::expr::{parse, EvalEnv, Expr, Var};
use crate::lattice::{Lattice, NodeProcess};
use crate::law::MarginalLaw;
use crate::stopping::check_terminal_compatibility;

/// Obstacle `h(t, y, law)` (optionally also depending on `b`) with its Lipschitz constants.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleSpec {
    pub expr: Expr,
    pub gamma1: f64,
    pub gamma2: f64,
    pub bound: Option<f64>,
}

impl ObstacleSpec {
    pub fn new(src: &str, gamma1: f64, gamma2: f64) -> Result<Self> {
        Self::from_expr(parse(src)?, gamma1, gamma2, None)
    }

    pub fn from_expr(expr: Expr, gamma1: f64, gamma2: f64, bound: Option<f64>) -> Result<Self> {
        if expr.uses(Var::Z) {
            return Err(Error::Config("obstacle expression may not use `z`".into()));
        }
        for (name, v) in [("gamma1", gamma1), ("gamma2", gamma2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("obstacle.{name} must be finite and >= 0, got {v}")));
            }
        }
        if let Some(b) = bound {
            if !(b.is_finite() && b >= 0.0) {
                return Err(Error::Config(format!("obstacle.bound must be >= 0, got {b}")));
            }
        }
        Ok(ObstacleSpec {
            expr,
            gamma1,
            gamma2,
            bound,
        })
    }

    pub fn eval(&self, t: f64, y: f64, b: f64, law: &MarginalLaw) -> Result<f64> {
        let env = EvalEnv {
            t,
            y,
            z: 0.0,
            b,
            m1: law.mean(),
            am: law.abs_mean(),
        };
        Ok(self.expr.eval(&env)?)
    }

    /// `H_i = h(t_i, u_i, law_i)` on every level, with `law_i` the marginal of `u` at level `i`.
    pub fn realize(&self, lat: &Lattice, u: &NodeProcess) -> Result<NodeProcess> {
        if !u.fits(lat) {
            return Err(Error::Contract("process does not match the lattice".into()));
        }
        let mut levels = Vec::with_capacity(lat.n_steps() + 1);
        for i in 0..=lat.n_steps() {
            let law = lat.node_marginal(i, u.level(i))?;
            let (m1, am) = (law.mean(), law.abs_mean());
            let t = lat.time(i);
            let row = u
                .level(i)
                .iter()
                .zip(lat.values(i))
                .map(|(&y, &b)| {
                    let env = EvalEnv {
                        t,
                        y,
                        z: 0.0,
                        b,
                        m1,
                        am,
                    };
                    self.expr.eval(&env)
                })
                .collect::<std::result::Result<Vec<_>, _>>()?;
            levels.push(row);
        }
        NodeProcess::from_levels(levels)
    }
}

/// `(Y, Z, K)` on the lattice.
///
/// `dk` holds the push applied at each non-terminal node. `k` is the cumulative
/// push projected onto the recombined nodes: `k_{i+1}` at a node is the
/// conditional mean over its two parents of `k_i + dk_i`, so `k` at level 0 is
/// zero and its level means are nondecreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionTriple {
    pub y: NodeProcess,
    pub z: NodeProcess,
    pub k: NodeProcess,
    pub dk: NodeProcess,
    /// Obstacle process the solution was reflected against.
    pub obstacle: NodeProcess,
}

impl SolutionTriple {
    pub fn y0(&self) -> f64 {
        self.y.get(0, 0)
    }

    /// Probability-weighted mean of `K_T`.
    pub fn mean_k_terminal(&self, lat: &Lattice) -> f64 {
        let n = lat.n_steps();
        lat.mean(n, self.k.level(n))
    }
}

/// Accumulate per-node pushes into the recombined cumulative `k`.
pub(crate) fn cumulate_k(lat: &Lattice, dk: &NodeProcess) -> NodeProcess {
    let n = lat.n_steps();
    let mut k = NodeProcess::zeros(lat);
    for i in 0..n {
        let mut next = vec![0.0; i + 2];
        let denom = (i + 1) as f64;
        for (j, slot) in next.iter_mut().enumerate() {
            // parent (i, j-1) moved up with weight j/(i+1), parent (i, j) moved down
            let mut acc = 0.0;
            if j > 0 {
                acc += (j as f64 / denom) * (k.get(i, j - 1) + dk.get(i, j - 1));
            }
            if j <= i {
                acc += ((i + 1 - j) as f64 / denom) * (k.get(i, j) + dk.get(i, j));
            }
            *slot = acc;
        }
        *k.level_mut(i + 1) = next;
    }
    k
}

/// Solve the reflected BSDE against a fixed obstacle process.
pub fn solve_reflected(
    lat: &Lattice,
    driver: &DriverSpec,
    frozen: &FrozenInputs,
    obstacle: &NodeProcess,
    terminal: &[f64],
) -> Result<SolutionTriple> {
    let n = lat.n_steps();
    if terminal.len() != n + 1 || !obstacle.fits(lat) {
        return Err(Error::Contract("terminal or obstacle does not match the lattice".into()));
    }
    check_terminal_compatibility(terminal, obstacle.level(n))?;
    let mut y = NodeProcess::zeros(lat);
    *y.level_mut(n) = terminal.to_vec();
    let mut z = NodeProcess::zeros_levels(n);
    let mut dk = NodeProcess::zeros(lat);
    backward_sweep(lat, driver, frozen, Some(obstacle), 0, n, &mut y, &mut z, Some(&mut dk))?;
    let k = cumulate_k(lat, &dk);
    Ok(SolutionTriple {
        y,
        z,
        k,
        dk,
        obstacle: obstacle.clone(),
    })
}

/// Probability-weighted sum over non-terminal nodes of `(y - H) dk`.
pub fn skorokhod_residual(lat: &Lattice, triple: &SolutionTriple, obstacle: &NodeProcess) -> f64 {
    (0..lat.n_steps())
        .map(|i| {
            lat.probs(i)
                .iter()
                .zip(triple.y.level(i))
                .zip(obstacle.level(i))
                .zip(triple.dk.level(i))
                .map(|(((p, y), h), dk)| p * (y - h) * dk)
                .sum::<f64>()
        })
        .sum()
}

/// Structural checks every returned triple must pass.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleCheck {
    pub residual: f64,
    pub min_push: f64,
    /// Largest `H - y` over non-terminal nodes (negative when the obstacle is slack).
    pub max_obstacle_gap: f64,
    pub k0: f64,
    pub k_means_nondecreasing: bool,
    pub terminal_exact: bool,
}

impl TripleCheck {
    pub fn passes(&self, obstacle_tol: f64) -> bool {
        self.residual.abs() <= 1e-10
            && self.min_push >= 0.0
            && self.max_obstacle_gap <= obstacle_tol
            && self.k0 == 0.0
            && self.k_means_nondecreasing
            && self.terminal_exact
    }
}

pub fn check_triple(
    lat: &Lattice,
    triple: &SolutionTriple,
    obstacle: &NodeProcess,
    terminal: &[f64],
) -> TripleCheck {
    let n = lat.n_steps();
    let mut min_push = f64::INFINITY;
    let mut gap = f64::NEG_INFINITY;
    for i in 0..n {
        for j in 0..=i {
            min_push = min_push.min(triple.dk.get(i, j));
            gap = gap.max(obstacle.get(i, j) - triple.y.get(i, j));
        }
    }
    let means: Vec<f64> = (0..=n).map(|i| lat.mean(i, triple.k.level(i))).collect();
    TripleCheck {
        residual: skorokhod_residual(lat, triple, obstacle),
        min_push,
        max_obstacle_gap: gap,
        k0: triple.k.get(0, 0),
        k_means_nondecreasing: means.windows(2).all(|w| w[1] >= w[0] - 1e-14),
        terminal_exact: triple.y.level(n) == terminal,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsde::solve_bsde;
    use crate::lattice::build_lattice;

    #[test]
    fn slack_obstacle_reduces_to_bsde() {
        let lat = build_lattice(1.0, 12).unwrap();
        let d = DriverSpec::lipschitz("0.3*z + 0.1*y", 0.3).unwrap();
        let frozen = FrozenInputs::degenerate(&lat);
        let xi: Vec<f64> = lat.values(12).iter().map(|b| b.abs()).collect();
        let h = NodeProcess::from_fn(&lat, |_, _| -1e6);
        let tri = solve_reflected(&lat, &d, &frozen, &h, &xi).unwrap();
        let pair = solve_bsde(&lat, &d, &frozen, &xi).unwrap();
        assert_eq!(tri.y, pair.y);
        assert_eq!(tri.z, pair.z);
        assert_eq!(tri.k.sup_norm(), 0.0);
        assert_eq!(skorokhod_residual(&lat, &tri, &h), 0.0);
    }

    #[test]
    fn decreasing_obstacle_is_exact() {
        let t = 1.5;
        let lat = build_lattice(t, 10).unwrap();
        let d = DriverSpec::lipschitz("0", 0.0).unwrap();
        let frozen = FrozenInputs::degenerate(&lat);
        let h = NodeProcess::from_fn(&lat, |i, _| t - lat.time(i));
        let tri = solve_reflected(&lat, &d, &frozen, &h, &[0.0; 11]).unwrap();
        for i in 0..=10 {
            for j in 0..=i {
                assert!((tri.y.get(i, j) - (t - lat.time(i))).abs() < 1e-12);
            }
        }
        assert!(tri.z.sup_norm() == 0.0);
        assert!((tri.y0() - t).abs() < 1e-12);
        assert!((tri.mean_k_terminal(&lat) - t).abs() < 1e-12);
        assert_eq!(skorokhod_residual(&lat, &tri, &h), 0.0);
        assert!(check_triple(&lat, &tri, &h, &[0.0; 11]).passes(1e-12));
    }

    #[test]
    fn american_call_two_steps() {
        let lat = build_lattice(1.0, 2).unwrap();
        let d = DriverSpec::lipschitz("0", 0.0).unwrap();
        let frozen = FrozenInputs::degenerate(&lat);
        let xi: Vec<f64> = lat.values(2).iter().map(|b| b.max(0.0)).collect();
        let h = NodeProcess::from_fn(&lat, |i, j| lat.values(i)[j].max(0.0));
        let tri = solve_reflected(&lat, &d, &frozen, &h, &xi).unwrap();
        assert!((tri.y0() - 0.353553).abs() < 1e-6);
        assert!(check_triple(&lat, &tri, &h, &xi).passes(1e-12));
    }

    #[test]
    fn raising_the_obstacle_never_lowers_y() {
        let lat = build_lattice(1.0, 16).unwrap();
        let d = DriverSpec::lipschitz("0.2*y - 0.3*abs(z)", 0.3).unwrap();
        let frozen = FrozenInputs::degenerate(&lat);
        let xi: Vec<f64> = lat.values(16).iter().map(|b| (1.0 - b).max(0.0)).collect();
        let low = NodeProcess::from_fn(&lat, |i, j| (0.8 - lat.values(i)[j]).max(0.0));
        let high = low.map(|v| v + 0.05);
        let xi_high: Vec<f64> = xi.iter().map(|v| v + 0.05).collect();
        let a = solve_reflected(&lat, &d, &frozen, &low, &xi).unwrap();
        let b = solve_reflected(&lat, &d, &frozen, &high, &xi_high).unwrap();
        for i in 0..=16 {
            for j in 0..=i {
                assert!(b.y.get(i, j) >= a.y.get(i, j));
            }
        }
    }

    #[test]
    fn incompatible_terminal() {
        let lat = build_lattice(1.0, 3).unwrap();
        let d = DriverSpec::lipschitz("0", 0.0).unwrap();
        let h = NodeProcess::from_fn(&lat, |_, _| 1.0);
        let err = solve_reflected(&lat, &d, &FrozenInputs::degenerate(&lat), &h, &[0.0; 4]).unwrap_err();
        assert!(matches!(err, Error::Compatibility { node: 0, .. }));
    }

    #[test]
    fn obstacle_spec_validation() {
        assert!(ObstacleSpec::new("z + 1", 0.0, 0.0).is_err());
        assert!(ObstacleSpec::new("y", -0.1, 0.0).is_err());
        let o = ObstacleSpec::new("0.5*y + 0.25*m1 - t", 0.5, 0.25).unwrap();
        let law = MarginalLaw::from_weighted(vec![(0.0, 0.5), (2.0, 0.5)]).unwrap();
        assert_eq!(o.eval(1.0, 2.0, 0.0, &law).unwrap(), 0.25);
    }
}
