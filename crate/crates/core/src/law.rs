//! Finitely supported laws on the real line.

use crate::error::{Error, Result};

/// Atoms closer than this are merged into one.
pub const MERGE_TOL: f64 = 1e-14;

/// Weighted atoms sorted by value, weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalLaw {
    atoms: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Moment {
    Mean,
    AbsMean,
}

impl MarginalLaw {
    pub fn dirac(value: f64) -> Self {
        MarginalLaw {
            atoms: vec![(value, 1.0)],
        }
    }

    /// Sort, merge near-equal values and validate the total mass.
    ///
    /// Zero-weight atoms are dropped; negative or non-finite entries are rejected.
    pub fn from_weighted(mut atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.iter().any(|(v, w)| !v.is_finite() || !w.is_finite() || *w < 0.0) {
            return Err(Error::Contract("law atoms must be finite with nonnegative weight".into()));
        }
        atoms.retain(|(_, w)| *w > 0.0);
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        for (v, w) in atoms {
            match merged.last_mut() {
                Some(last) if v - last.0 <= MERGE_TOL => last.1 += w,
                _ => merged.push((v, w)),
            }
        }
        let total: f64 = merged.iter().map(|a| a.1).sum();
        if merged.is_empty() || (total - 1.0).abs() > 1e-12 {
            return Err(Error::Contract(format!("law weights sum to {total}, expected 1")));
        }
        Ok(MarginalLaw { atoms: merged })
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn moment(&self, kind: Moment) -> f64 {
        match kind {
            Moment::Mean => self.atoms.iter().map(|(v, w)| v * w).sum(),
            Moment::AbsMean => self.atoms.iter().map(|(v, w)| v.abs() * w).sum(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.moment(Moment::Mean)
    }

    pub fn abs_mean(&self) -> f64 {
        self.moment(Moment::AbsMean)
    }

    /// The law of `X + shift`.
    pub fn shifted(&self, shift: f64) -> MarginalLaw {
        MarginalLaw {
            atoms: self.atoms.iter().map(|&(v, w)| (v + shift, w)).collect(),
        }
    }
}

/// Wasserstein-1 distance via the quantile coupling.
///
/// Both quantile functions are step functions on `[0, 1]`; walking the merged
/// breakpoints integrates `|F_a^{-1}(u) - F_b^{-1}(u)|` exactly.
pub fn wasserstein1(a: &MarginalLaw, b: &MarginalLaw) -> f64 {
    let (xa, xb) = (a.atoms(), b.atoms());
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (xa[0].1, xb[0].1);
    let mut acc = 0.0;
    loop {
        let m = ra.min(rb);
        acc += m * (xa[i].0 - xb[j].0).abs();
        ra -= m;
        rb -= m;
        // Leftover mass below the rounding floor is dropped with the last atom.
        if ra <= 0.0 {
            i += 1;
            if i == xa.len() {
                break;
            }
            ra = xa[i].1;
        }
        if rb <= 0.0 {
            j += 1;
            if j == xb.len() {
                break;
            }
            rb = xb[j].1;
        }
    }
    acc
}
