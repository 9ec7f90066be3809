//! Exhaustive optimal-stopping oracle on the non-recombining binary tree.
//!
//! The tree of depth `d` has `2^i` nodes at level `i`; node `k` has children
//! `2k` (down) and `2k + 1` (up), so the number of up moves on the path to `k`
//! is `k.count_ones()` and lattice data is pulled back through that index.
//! A stopping rule marks the nodes where the path stops; every root-to-leaf
//! path meets exactly one mark.

use crate::bsde::{implicit_step, DriverSpec, FrozenInputs};
use crate::error::{Error, Result};
use crate::expr::{EvalEnv, Var};
use crate::lattice::{Lattice, NodeProcess};

/// Largest tree depth the enumerator accepts.
pub const MAX_RULE_DEPTH: usize = 5;

#[inline]
fn heap_index(level: usize, k: usize) -> usize {
    (1 << level) - 1 + k
}

/// Stop marks on a tree of depth at most [`MAX_RULE_DEPTH`], one bit per node in heap order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StoppingRule {
    depth: usize,
    stops: u64,
}

impl StoppingRule {
    pub fn new(depth: usize, stops: u64) -> Result<Self> {
        if depth > MAX_RULE_DEPTH {
            return Err(Error::Parameter(format!(
                "stopping rules limited to depth {MAX_RULE_DEPTH}, got {depth}"
            )));
        }
        let rule = StoppingRule { depth, stops };
        if !rule.is_valid() {
            return Err(Error::Contract("stopping rule must stop exactly once on every path".into()));
        }
        Ok(rule)
    }

    /// Stop only at the leaves.
    pub fn at_horizon(depth: usize) -> Result<Self> {
        let mut stops = 0u64;
        for k in 0..(1usize << depth) {
            stops |= 1 << heap_index(depth, k);
        }
        Self::new(depth, stops)
    }

    /// Stop everywhere at `level` (or at the leaves if `level > depth`).
    pub fn at_level(depth: usize, level: usize) -> Result<Self> {
        let level = level.min(depth);
        let mut stops = 0u64;
        for k in 0..(1usize << level) {
            stops |= 1 << heap_index(level, k);
        }
        Self::new(depth, stops)
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn stops_at(&self, level: usize, k: usize) -> bool {
        self.stops >> heap_index(level, k) & 1 == 1
    }

    pub fn is_valid(&self) -> bool {
        let total = (1usize << (self.depth + 1)) - 1;
        if total < 64 && self.stops >> total != 0 {
            return false;
        }
        self.path_ok(0, 0, false)
    }

    fn path_ok(&self, level: usize, k: usize, stopped: bool) -> bool {
        let here = self.stops_at(level, k);
        if stopped && here {
            return false;
        }
        let stopped = stopped || here;
        if level == self.depth {
            return stopped;
        }
        self.path_ok(level + 1, 2 * k, stopped) && self.path_ok(level + 1, 2 * k + 1, stopped)
    }
}

/// Number of rules on a tree of the given depth: `f(0) = 1`, `f(k) = 1 + f(k-1)^2`.
pub fn rule_count(depth: usize) -> u64 {
    (0..depth).fold(1u64, |f, _| 1 + f * f)
}

/// All stopping rules on the tree of depth `depth`, without duplicates.
pub fn enumerate_stopping_rules(depth: usize) -> Result<Vec<StoppingRule>> {
    if depth > MAX_RULE_DEPTH {
        return Err(Error::Parameter(format!(
            "refusing to enumerate stopping rules beyond depth {MAX_RULE_DEPTH} (asked {depth})"
        )));
    }
    Ok(subtree_masks(depth)
        .into_iter()
        .map(|stops| StoppingRule { depth, stops })
        .collect())
}

/// Masks for a subtree of depth `d` in its own heap layout.
fn subtree_masks(d: usize) -> Vec<u64> {
    if d == 0 {
        return vec![1];
    }
    let children = subtree_masks(d - 1);
    let mut out = Vec::with_capacity(1 + children.len() * children.len());
    out.push(1);
    for &down in &children {
        let down_part = graft(down, d - 1, 0);
        for &up in &children {
            out.push(down_part | graft(up, d - 1, 1));
        }
    }
    out
}

/// Move a subtree mask one level down, under the root's down (`side = 0`) or up child.
fn graft(mask: u64, sub_depth: usize, side: usize) -> u64 {
    let mut out = 0u64;
    for level in 0..=sub_depth {
        let width = 1usize << level;
        let bits = (mask >> heap_index(level, 0)) & ((1u64 << width) - 1);
        out |= bits << (heap_index(level + 1, 0) + side * width);
    }
    out
}

/// Values on the non-recombining tree, `levels[i]` has `2^i` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeProcess {
    pub levels: Vec<Vec<f64>>,
}

impl TreeProcess {
    pub fn root(&self) -> f64 {
        self.levels[0][0]
    }
}

/// g-evaluation of `payoff` stopped by `rule`.
///
/// `payoff` is a lattice process: its value at a stopped node is pulled back
/// through the up-move count. Continuation nodes use the same one-step BSDE
/// update as [`crate::bsde::solve_bsde`].
pub fn g_evaluate(
    lat: &Lattice,
    driver: &DriverSpec,
    frozen: &FrozenInputs,
    rule: &StoppingRule,
    payoff: &NodeProcess,
) -> Result<TreeProcess> {
    let n = lat.n_steps();
    if rule.depth() != n {
        return Err(Error::Contract(format!(
            "rule depth {} does not match lattice depth {n}",
            rule.depth()
        )));
    }
    if !rule.is_valid() {
        return Err(Error::Contract("invalid stopping rule".into()));
    }
    if !payoff.fits(lat) {
        return Err(Error::Contract("payoff does not match the lattice".into()));
    }
    if frozen.laws().len() != n + 1 {
        return Err(Error::Contract("frozen laws do not match the lattice".into()));
    }
    let dt = lat.dt();
    driver.check_step(dt)?;
    let uses_y = driver.expr.uses(Var::Y);
    let scale = 0.5 / lat.sqrt_dt();
    let mut levels: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    levels[n] = (0..1usize << n)
        .map(|k| payoff.get(n, k.count_ones() as usize))
        .collect();
    for i in (0..n).rev() {
        let next = &levels[i + 1];
        let (m1, am) = frozen.moments(i);
        let t = lat.time(i);
        let mut cur = Vec::with_capacity(1 << i);
        for k in 0..1usize << i {
            let j = k.count_ones() as usize;
            if rule.stops_at(i, k) {
                cur.push(payoff.get(i, j));
                continue;
            }
            let (down, up) = (next[2 * k], next[2 * k + 1]);
            let env = EvalEnv {
                t,
                y: 0.0,
                z: (up - down) * scale,
                b: lat.values(i)[j],
                m1,
                am,
            };
            let fy = frozen.frozen_y().map(|u| u.get(i, j));
            cur.push(implicit_step(driver, uses_y, env, 0.5 * (down + up), fy, dt, i, j)?);
        }
        levels[i] = cur;
    }
    Ok(TreeProcess { levels })
}

/// Root value of the nonlinear Snell envelope by brute force over every stopping rule.
///
/// The payoff is `terminal` at the horizon and `obstacle` at earlier stops.
pub fn snell_bruteforce(
    lat: &Lattice,
    driver: &DriverSpec,
    frozen: &FrozenInputs,
    terminal: &[f64],
    obstacle: &NodeProcess,
) -> Result<f64> {
    let n = lat.n_steps();
    if terminal.len() != n + 1 || !obstacle.fits(lat) {
        return Err(Error::Contract("terminal or obstacle does not match the lattice".into()));
    }
    check_terminal_compatibility(terminal, obstacle.level(n))?;
    let mut payoff = obstacle.clone();
    *payoff.level_mut(n) = terminal.to_vec();
    let mut best = f64::NEG_INFINITY;
    for rule in enumerate_stopping_rules(n)? {
        best = best.max(g_evaluate(lat, driver, frozen, &rule, &payoff)?.root());
    }
    Ok(best)
}

/// `obstacle_T <= xi` at every terminal node; reports the worst node otherwise.
pub fn check_terminal_compatibility(terminal: &[f64], obstacle_t: &[f64]) -> Result<()> {
    let worst = terminal
        .iter()
        .zip(obstacle_t)
        .enumerate()
        .map(|(j, (x, h))| (j, h - x))
        .fold(None, |acc: Option<(usize, f64)>, cur| match acc {
            Some(a) if a.1 >= cur.1 => Some(a),
            _ => Some(cur),
        });
    if let Some((j, gap)) = worst {
        if gap > 0.0 {
            return Err(Error::Compatibility {
                node: j,
                terminal: terminal[j],
                obstacle: obstacle_t[j],
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsde::solve_bsde;
    use crate::lattice::build_lattice;
    use std::collections::HashSet;

    #[test]
    fn counts_follow_recursion() {
        for (d, want) in [(0, 1), (1, 2), (2, 5), (3, 26), (4, 677)] {
            let rules = enumerate_stopping_rules(d).unwrap();
            assert_eq!(rules.len() as u64, want);
            assert_eq!(rule_count(d), want);
            let distinct: HashSet<_> = rules.iter().collect();
            assert_eq!(distinct.len(), rules.len());
            assert!(rules.iter().all(|r| r.is_valid()));
        }
    }

    #[test]
    fn depth_guard() {
        assert!(matches!(enumerate_stopping_rules(6), Err(Error::Parameter(_))));
    }

    #[test]
    fn invalid_rules_rejected() {
        // root and a leaf both stop
        assert!(StoppingRule::new(1, 0b011).is_err());
        // nothing stops on the up branch
        assert!(StoppingRule::new(1, 0b010).is_err());
        assert!(StoppingRule::new(1, 0b110).is_ok());
        assert!(StoppingRule::new(1, 0b001).is_ok());
    }

    #[test]
    fn martingale_payoff_under_zero_driver() {
        let lat = build_lattice(1.0, 3).unwrap();
        let d = DriverSpec::lipschitz("0", 0.0).unwrap();
        let frozen = FrozenInputs::degenerate(&lat);
        let payoff = NodeProcess::from_fn(&lat, |i, j| lat.values(i)[j]);
        let rule = StoppingRule::at_horizon(3).unwrap();
        let v = g_evaluate(&lat, &d, &frozen, &rule, &payoff).unwrap();
        assert!(v.root().abs() < 1e-15);
        let constant = NodeProcess::from_fn(&lat, |_, _| 1.25);
        for rule in enumerate_stopping_rules(3).unwrap() {
            let v = g_evaluate(&lat, &d, &frozen, &rule, &constant).unwrap();
            assert!(v.levels.iter().flatten().all(|&x| x == 1.25));
        }
    }

    #[test]
    fn one_drift_step() {
        let lat = build_lattice(1.0, 3).unwrap();
        let d = DriverSpec::lipschitz("1", 0.0).unwrap();
        let frozen = FrozenInputs::degenerate(&lat);
        let zero = NodeProcess::zeros(&lat);
        let rule = StoppingRule::at_level(3, 1).unwrap();
        let v = g_evaluate(&lat, &d, &frozen, &rule, &zero).unwrap();
        assert_eq!(v.root(), lat.dt());
    }

    #[test]
    fn horizon_rule_matches_solve_bsde() {
        let lat = build_lattice(0.8, 4).unwrap();
        let d = DriverSpec::lipschitz("0.3*y - 0.2*abs(z) + 0.1*b", 0.3).unwrap();
        let frozen = FrozenInputs::degenerate(&lat);
        let xi: Vec<f64> = lat.values(4).iter().map(|b| (b - 0.1).max(0.0)).collect();
        let mut payoff = NodeProcess::zeros(&lat);
        *payoff.level_mut(4) = xi.clone();
        let tree = g_evaluate(&lat, &d, &frozen, &StoppingRule::at_horizon(4).unwrap(), &payoff).unwrap();
        let pair = solve_bsde(&lat, &d, &frozen, &xi).unwrap();
        assert_eq!(tree.root(), pair.y.get(0, 0));
    }

    #[test]
    fn american_call_on_two_steps() {
        let lat = build_lattice(1.0, 2).unwrap();
        let d = DriverSpec::lipschitz("0", 0.0).unwrap();
        let frozen = FrozenInputs::degenerate(&lat);
        let xi: Vec<f64> = lat.values(2).iter().map(|b| b.max(0.0)).collect();
        let obstacle = NodeProcess::from_fn(&lat, |i, j| lat.values(i)[j].max(0.0));
        let v = snell_bruteforce(&lat, &d, &frozen, &xi, &obstacle).unwrap();
        assert!((v - 2.0_f64.sqrt() / 4.0).abs() < 1e-15);
    }

    #[test]
    fn non_binding_obstacle_equals_plain_solve() {
        let lat = build_lattice(1.0, 3).unwrap();
        let d = DriverSpec::lipschitz("0.5*z + 0.2", 0.5).unwrap();
        let frozen = FrozenInputs::degenerate(&lat);
        let xi: Vec<f64> = lat.values(3).iter().map(|b| b.abs()).collect();
        let obstacle = NodeProcess::from_fn(&lat, |_, _| -1e6);
        let v = snell_bruteforce(&lat, &d, &frozen, &xi, &obstacle).unwrap();
        let pair = solve_bsde(&lat, &d, &frozen, &xi).unwrap();
        assert_eq!(v, pair.y.get(0, 0));
    }

    #[test]
    fn decreasing_deterministic_obstacle_stops_at_once() {
        for depth in 1..=4 {
            let lat = build_lattice(1.0, depth).unwrap();
            let d = DriverSpec::lipschitz("0", 0.0).unwrap();
            let frozen = FrozenInputs::degenerate(&lat);
            let obstacle = NodeProcess::from_fn(&lat, |i, _| 1.0 - lat.time(i));
            let v = snell_bruteforce(&lat, &d, &frozen, &vec![0.0; depth + 1], &obstacle).unwrap();
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn incompatible_terminal_is_rejected() {
        let lat = build_lattice(1.0, 2).unwrap();
        let d = DriverSpec::lipschitz("0", 0.0).unwrap();
        let frozen = FrozenInputs::degenerate(&lat);
        let obstacle = NodeProcess::from_fn(&lat, |_, _| 1.0);
        let err = snell_bruteforce(&lat, &d, &frozen, &[0.0; 3], &obstacle).unwrap_err();
        assert!(matches!(err, Error::Compatibility { .. }));
    }
}
