//! Sketch sizes.

use crate::instance::SupportMode;
use crate::{Error, Result};

/// `C(k, 2) + k`.
pub fn k_tilde(k: usize) -> u64 {
    let k = k as u64;
    k * (k + 1) / 2
}

/// How the number of bins is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SketchRule {
    /// The sample-complexity formulas.
    Theorem,
    /// A total measurement budget `m`; `R = ⌈m / per-bin components⌉`.
    Measurements(usize),
    /// An explicit bin count.
    Bins(usize),
}

/// Everything the size formulas depend on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeInput {
    pub symmetric: bool,
    pub k: usize,
    pub beta: f64,
    pub r: usize,
    pub supports: SupportMode,
    pub delta: f64,
    pub d: usize,
    /// Rows of the Gaussian detector; `None` for the noiseless two-row DFT.
    pub noisy_p: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SketchSize {
    /// Number of bins `R`.
    pub bins: usize,
    /// Total measurements `m`.
    pub m: usize,
    /// Components per bin: 2 noiseless, `P` noisy.
    pub per_bin: usize,
}

impl SizeInput {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Parameter("k must be at least 2"));
        }
        if self.r == 0 {
            return Err(Error::Parameter("r must be at least 1"));
        }
        if self.d < 2 {
            return Err(Error::Parameter("d must be at least 2"));
        }
        let upper = if self.symmetric { 1.0 } else { 0.5 };
        if !(self.delta > 0.0 && self.delta < upper) {
            return Err(Error::Parameter("δ must lie in (0, 1) for symmetric and (0, ½) for non-symmetric matrices"));
        }
        if !self.symmetric && !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::Parameter("β must lie in (0, 1]"));
        }
        if self.noisy_p == Some(0) {
            return Err(Error::Parameter("P must be at least 1"));
        }
        Ok(())
    }

    /// Nonzero count of one rank-1 block: `k̃` symmetric, `βk²` otherwise.
    pub fn block_nonzeros(&self) -> f64 {
        if self.symmetric {
            k_tilde(self.k) as f64
        } else {
            self.beta * (self.k * self.k) as f64
        }
    }

    fn per_bin(&self) -> usize {
        self.noisy_p.unwrap_or(2)
    }

    /// Bins from the theorem formulas. Disjoint: `⌈d·r·N/(δ ln k)⌉` with `N`
    /// the block nonzero count. Overlapping noiseless: `⌈3rN/2⌉` (so that
    /// `m = 3rN`); overlapping noisy: `10rN`.
    pub fn theorem_bins(&self) -> usize {
        let n = self.block_nonzeros();
        let r = self.r as f64;
        let bins = match (self.supports, self.noisy_p) {
            (SupportMode::Disjoint, _) => self.d as f64 * r * n / (self.delta * libm::log(self.k as f64)),
            (SupportMode::Overlapping, None) => 3.0 * r * n / 2.0,
            (SupportMode::Overlapping, Some(_)) => 10.0 * r * n,
        };
        libm::ceil(bins - 1e-9) as usize
    }

    pub fn size(&self, rule: SketchRule) -> Result<SketchSize> {
        self.validate()?;
        let per_bin = self.per_bin();
        let bins = match rule {
            SketchRule::Theorem => self.theorem_bins(),
            SketchRule::Measurements(m) => m.div_ceil(per_bin),
            SketchRule::Bins(b) => b,
        };
        let m = match rule {
            SketchRule::Measurements(m) => m,
            _ => bins * per_bin,
        };
        Ok(SketchSize { bins, m, per_bin })
    }
}

/// `P = ⌈c·ln(n/k)⌉`, at least 1.
pub fn detector_rows(c: f64, n: usize, k: usize) -> usize {
    let p = libm::ceil(c * libm::log(n as f64 / k as f64));
    if p < 1.0 {
        1
    } else {
        p as usize
    }
}
