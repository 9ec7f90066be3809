//! Recombining Bernoulli random walk on `[0, T]`.
//!
//! Level `i` carries the `i + 1` values `b_{i,j} = (2j - i) sqrt(dt)` with binomial
//! weights `C(i, j) / 2^i`. From node `(i, j)` the walk moves to `(i + 1, j)` (down)
//! or `(i + 1, j + 1)` (up) with probability one half each, so conditional
//! expectations over one step are exact two-point averages.

use crate::error::{Error, Result};
use crate::law::MarginalLaw;

/// Uniform discretisation of `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
        }
        if n_steps == 0 {
            return Err(Error::Config("n_steps must be at least 1".into()));
        }
        Ok(TimeGrid {
            horizon,
            n_steps,
            dt: horizon / n_steps as f64,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Time of level `i`; the last level is pinned to the horizon exactly.
    pub fn time(&self, level: usize) -> f64 {
        if level == self.n_steps {
            self.horizon
        } else {
            level as f64 * self.dt
        }
    }
}

#[derive(Debug, Clone)]
pub struct Lattice {
    grid: TimeGrid,
    sqrt_dt: f64,
    values: Vec<Vec<f64>>,
    probs: Vec<Vec<f64>>,
}

/// Build the lattice for horizon `T` with `n` steps.
pub fn build_lattice(horizon: f64, n_steps: usize) -> Result<Lattice> {
    Lattice::new(TimeGrid::new(horizon, n_steps)?)
}

impl Lattice {
    pub fn new(grid: TimeGrid) -> Result<Self> {
        let n = grid.n_steps();
        let sqrt_dt = grid.dt().sqrt();
        let values = (0..=n)
            .map(|i| {
                (0..=i)
                    .map(|j| (2.0 * j as f64 - i as f64) * sqrt_dt)
                    .collect()
            })
            .collect();
        // Pascal recursion on probabilities keeps every entry in [0, 1].
        let mut probs: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        probs.push(vec![1.0]);
        for i in 0..n {
            let prev = &probs[i];
            let mut next = vec![0.0; i + 2];
            for (j, &p) in prev.iter().enumerate() {
                next[j] += 0.5 * p;
                next[j + 1] += 0.5 * p;
            }
            probs.push(next);
        }
        Ok(Lattice {
            grid,
            sqrt_dt,
            values,
            probs,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_steps(&self) -> usize {
        self.grid.n_steps()
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt()
    }

    pub fn sqrt_dt(&self) -> f64 {
        self.sqrt_dt
    }

    pub fn horizon(&self) -> f64 {
        self.grid.horizon()
    }

    pub fn time(&self, level: usize) -> f64 {
        self.grid.time(level)
    }

    /// Brownian values at a level, ascending.
    pub fn values(&self, level: usize) -> &[f64] {
        &self.values[level]
    }

    pub fn probs(&self, level: usize) -> &[f64] {
        &self.probs[level]
    }

    fn check_level(&self, level: usize) -> Result<()> {
        if level > self.n_steps() {
            return Err(Error::Contract(format!(
                "level {level} outside lattice with {} steps",
                self.n_steps()
            )));
        }
        Ok(())
    }

    fn check_next(&self, level: usize, next: &[f64]) -> Result<()> {
        if level >= self.n_steps() {
            return Err(Error::Contract(format!(
                "no level after {level} on a lattice with {} steps",
                self.n_steps()
            )));
        }
        if next.len() != level + 2 {
            return Err(Error::Contract(format!(
                "expected {} values at level {}, got {}",
                level + 2,
                level + 1,
                next.len()
            )));
        }
        Ok(())
    }

    /// `E_i[X_{i+1}]` at every node of `level`.
    pub fn conditional_expectation(&self, level: usize, next: &[f64]) -> Result<Vec<f64>> {
        self.check_next(level, next)?;
        Ok(next.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect())
    }

    /// `E_i[X_{i+1} dB] / dt`, the discrete martingale integrand.
    pub fn z_projection(&self, level: usize, next: &[f64]) -> Result<Vec<f64>> {
        self.check_next(level, next)?;
        let scale = 0.5 / self.sqrt_dt;
        Ok(next.windows(2).map(|w| (w[1] - w[0]) * scale).collect())
    }

    /// Law of a node function at one level.
    pub fn node_marginal(&self, level: usize, values: &[f64]) -> Result<MarginalLaw> {
        self.check_level(level)?;
        if values.len() != level + 1 {
            return Err(Error::Contract(format!(
                "expected {} values at level {level}, got {}",
                level + 1,
                values.len()
            )));
        }
        MarginalLaw::from_weighted(
            values
                .iter()
                .copied()
                .zip(self.probs[level].iter().copied())
                .collect(),
        )
    }

    /// Probability-weighted mean of a level function.
    pub fn mean(&self, level: usize, values: &[f64]) -> f64 {
        values
            .iter()
            .zip(&self.probs[level])
            .map(|(v, p)| v * p)
            .sum()
    }

    /// Roll a terminal function back to `level` by repeated conditional expectation.
    pub fn expectation_at(&self, level: usize, terminal: &[f64]) -> Result<Vec<f64>> {
        let n = self.n_steps();
        if terminal.len() != n + 1 {
            return Err(Error::Contract("terminal slice has wrong length".into()));
        }
        let mut cur = terminal.to_vec();
        for i in (level..n).rev() {
            cur = self.conditional_expectation(i, &cur)?;
        }
        Ok(cur)
    }
}

/// A scalar per node on a contiguous range of levels `0..len`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeProcess {
    levels: Vec<Vec<f64>>,
}

impl NodeProcess {
    /// Zero process on levels `0..=n`.
    pub fn zeros(lat: &Lattice) -> Self {
        Self::zeros_levels(lat.n_steps() + 1)
    }

    /// Zero process on levels `0..count`.
    pub fn zeros_levels(count: usize) -> Self {
        NodeProcess {
            levels: (0..count).map(|i| vec![0.0; i + 1]).collect(),
        }
    }

    pub fn from_levels(levels: Vec<Vec<f64>>) -> Result<Self> {
        for (i, l) in levels.iter().enumerate() {
            if l.len() != i + 1 {
                return Err(Error::Contract(format!(
                    "level {i} has {} entries, expected {}",
                    l.len(),
                    i + 1
                )));
            }
        }
        Ok(NodeProcess { levels })
    }

    /// Process on all lattice levels built from `(level, node) -> value`.
    pub fn from_fn(lat: &Lattice, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        NodeProcess {
            levels: (0..=lat.n_steps())
                .map(|i| (0..=i).map(|j| f(i, j)).collect())
                .collect(),
        }
    }

    /// The conditional-expectation process `E_i[terminal]` on every level.
    pub fn martingale(lat: &Lattice, terminal: &[f64]) -> Result<Self> {
        let n = lat.n_steps();
        if terminal.len() != n + 1 {
            return Err(Error::Contract("terminal slice has wrong length".into()));
        }
        let mut levels = vec![Vec::new(); n + 1];
        levels[n] = terminal.to_vec();
        for i in (0..n).rev() {
            levels[i] = lat.conditional_expectation(i, &levels[i + 1])?;
        }
        Ok(NodeProcess { levels })
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, i: usize) -> &[f64] {
        &self.levels[i]
    }

    pub fn level_mut(&mut self, i: usize) -> &mut Vec<f64> {
        &mut self.levels[i]
    }

    pub fn levels(&self) -> &[Vec<f64>] {
        &self.levels
    }

    pub fn get(&self, level: usize, node: usize) -> f64 {
        self.levels[level][node]
    }

    pub fn fits(&self, lat: &Lattice) -> bool {
        self.levels.len() == lat.n_steps() + 1
    }

    /// Largest absolute entry over all levels.
    pub fn sup_norm(&self) -> f64 {
        self.levels
            .iter()
            .flatten()
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `max |self - other|` over the given levels.
    pub fn sup_diff(&self, other: &NodeProcess, levels: std::ops::Range<usize>) -> f64 {
        levels
            .flat_map(|i| self.levels[i].iter().zip(&other.levels[i]))
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> NodeProcess {
        NodeProcess {
            levels: self
                .levels
                .iter()
                .map(|l| l.iter().map(|&v| f(v)).collect())
                .collect(),
        }
    }
}
