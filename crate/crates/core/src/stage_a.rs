//! Stage A: recover individual nonzero matrix entries by classifying bins
//! and peeling singletons.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng as _;

use crate::model::{EntryMap, Shape};
use crate::rng::{rng, Rng};
use crate::sketcher::{BinIncidence, ColumnSource, DftDetector, DftSketch, GaussianSketch, RowAdjacency, MAX_P};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BinClass {
    Zeroton,
    Singleton { index: u64, value: f64 },
    Multiton,
}

/// Tolerances and options for the noiseless decoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiselessParams {
    /// Relative tolerance for magnitude equality and the zeroton floor.
    pub tol_mag: f64,
    /// Allowed distance of the estimated index from an integer.
    pub tol_idx: f64,
    /// Seed for the singleton pop order.
    pub seed: u64,
    /// Stop after this many entries have been recovered.
    pub target: Option<usize>,
}

impl Default for NoiselessParams {
    fn default() -> Self {
        Self {
            tol_mag: 1e-9,
            tol_idx: 0.05,
            seed: 0,
            target: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoisyParams {
    pub sigma: f64,
    pub gamma0: f64,
    pub gamma1: f64,
    pub seed: u64,
    pub target: Option<usize>,
}

impl NoisyParams {
    /// `γ0 = 5` and `γ1 = 1.5`.
    pub fn new(sigma: f64) -> Self {
        Self {
            sigma,
            gamma0: 5.0,
            gamma1: 1.5,
            seed: 0,
            target: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageAResult {
    pub recovered: EntryMap,
    /// Recovered indices in peel order.
    pub order: Vec<u64>,
    pub iterations: usize,
    /// Singletons still pending when the loop stopped (nonzero only after
    /// early termination).
    pub residual_singletons: usize,
    pub initial_singletons: usize,
    /// Singletons pointing at an index that was already recovered.
    pub conflicts: usize,
    /// Singletons whose column does not contain the source bin.
    pub guard_rejections: usize,
    /// Peels that left the source bin above `1e-9·(pre + 1)`.
    pub soundness_violations: usize,
    /// Largest post/(pre + 1) source-bin magnitude ratio seen.
    pub max_residual_ratio: f64,
}

impl StageAResult {
    /// Nothing recovered.
    pub fn empty(shape: Shape) -> Self {
        Self {
            recovered: EntryMap::new(shape),
            order: Vec::new(),
            iterations: 0,
            residual_singletons: 0,
            initial_singletons: 0,
            conflicts: 0,
            guard_rejections: 0,
            soundness_violations: 0,
            max_residual_ratio: 0.0,
        }
    }

    /// Fraction of `total` nonzero entries that were recovered.
    pub fn fraction(&self, total: usize) -> f64 {
        if total == 0 {
            1.0
        } else {
            self.order.len() as f64 / total as f64
        }
    }
}

/// Classifies one noiseless bin. `scale` sets the zeroton floor
/// `tol_mag·scale`, normally the largest bin magnitude of the fresh sketch.
pub fn classify_noiseless(bin: [Complex64; 2], det: &DftDetector, scale: f64, params: &NoiselessParams) -> BinClass {
    let (a, b) = (bin[0].norm(), bin[1].norm());
    let floor = params.tol_mag * scale;
    if a <= floor && b <= floor {
        return BinClass::Zeroton;
    }
    if (a - b).abs() > params.tol_mag * a.max(b) {
        return BinClass::Multiton;
    }
    let ratio = bin[1] / bin[0];
    let mut arg = libm::atan2(ratio.im, ratio.re);
    if arg < 0.0 {
        arg += 2.0 * PI;
    }
    let estimate = arg / det.step() + 1.0;
    let rounded = libm::round(estimate);
    if (estimate - rounded).abs() > params.tol_idx {
        return BinClass::Multiton;
    }
    let n = det.n_cols();
    let mut index = rounded as u64;
    if index == n + 1 {
        index = 1;
    }
    if index < 1 || index > n {
        return BinClass::Multiton;
    }
    BinClass::Singleton { index, value: bin[0].re }
}

/// Set of bins with O(1) insert, remove and uniform sampling.
struct SingletonSet {
    items: Vec<usize>,
    pos: Vec<usize>,
}

impl SingletonSet {
    const ABSENT: usize = usize::MAX;

    fn new(n: usize) -> Self {
        Self {
            items: Vec::new(),
            pos: vec![Self::ABSENT; n],
        }
    }

    fn insert(&mut self, j: usize) {
        if self.pos[j] == Self::ABSENT {
            self.pos[j] = self.items.len();
            self.items.push(j);
        }
    }

    fn remove(&mut self, j: usize) {
        let p = self.pos[j];
        if p != Self::ABSENT {
            let last = self.items.pop().unwrap();
            if last != j {
                self.items[p] = last;
                self.pos[last] = p;
            }
            self.pos[j] = Self::ABSENT;
        }
    }

    fn pop_random(&mut self, g: &mut Rng) -> Option<usize> {
        if self.items.is_empty() {
            return None;
        }
        let j = self.items[g.random_range(0..self.items.len())];
        self.remove(j);
        Some(j)
    }

    fn len(&self) -> usize {
        self.items.len()
    }
}

fn bin_magnitude(b: &[Complex64; 2]) -> f64 {
    b[0].norm().max(b[1].norm())
}

/// Peels singletons out of a noiseless sketch until none remain.
pub fn peel_noiseless<G: BinIncidence + ?Sized>(
    sketch: &DftSketch,
    h: &G,
    shape: Shape,
    params: &NoiselessParams,
) -> Result<StageAResult> {
    let det = DftDetector::new(h.n_cols())?;
    let mut out = StageAResult::empty(shape);
    let mut sk = sketch.clone();
    let scale = sk.max_magnitude();
    if scale == 0.0 {
        return Ok(out);
    }
    let n_bins = sk.len();
    let mut classes = Vec::with_capacity(n_bins);
    let mut set = SingletonSet::new(n_bins);
    for (j, b) in sk.bins().iter().enumerate() {
        let c = classify_noiseless(*b, &det, scale, params);
        if matches!(c, BinClass::Singleton { .. }) {
            set.insert(j);
        }
        classes.push(c);
    }
    out.initial_singletons = set.len();
    let mut g = rng(params.seed);
    let mut scratch = Vec::new();
    while let Some(j) = set.pop_random(&mut g) {
        if params.target.is_some_and(|t| out.order.len() >= t) {
            set.insert(j);
            break;
        }
        let BinClass::Singleton { index, value } = classes[j] else {
            continue;
        };
        if out.recovered.contains(index) {
            out.conflicts += 1;
            classes[j] = BinClass::Multiton;
            continue;
        }
        if !h.contains(index, j, &mut scratch) {
            out.guard_rejections += 1;
            classes[j] = BinClass::Multiton;
            continue;
        }
        let pre = bin_magnitude(&sk.bins()[j]);
        let touched = sk.subtract_entry(h, &det, index, value)?;
        let post = bin_magnitude(&sk.bins()[j]);
        let ratio = post / (pre + 1.0);
        out.max_residual_ratio = out.max_residual_ratio.max(ratio);
        if ratio > 1e-9 {
            out.soundness_violations += 1;
        }
        out.recovered.insert(index, value)?;
        out.order.push(index);
        out.iterations += 1;
        for t in touched {
            let c = classify_noiseless(sk.bins()[t], &det, scale, params);
            match c {
                BinClass::Singleton { .. } => set.insert(t),
                _ => set.remove(t),
            }
            classes[t] = c;
        }
    }
    out.residual_singletons = set.len();
    Ok(out)
}

/// Classifies one noisy bin against its live column list.
///
/// `columns` yields `N(j)` minus the columns already peeled from the bin;
/// `count` is its length.
pub fn classify_noisy<C, I>(y: &[f64], columns: I, count: usize, det: &C, params: &NoisyParams) -> BinClass
where
    C: ColumnSource + ?Sized,
    I: IntoIterator<Item = u64>,
{
    if count == 0 {
        return BinClass::Zeroton;
    }
    let p = y.len();
    let energy: f64 = y.iter().map(|v| v * v).sum();
    let norm = (p * count) as f64;
    let var = params.sigma * params.sigma;
    if energy / norm <= params.gamma0 * var {
        return BinClass::Zeroton;
    }
    // Minimizing the residual `energy - dot²/ss` is maximizing `dot²/ss`;
    // the winner's residual is then formed directly to avoid cancellation.
    let mut s = [0.0; MAX_P];
    let mut best: Option<(f64, u64, f64)> = None;
    for l in columns {
        det.column(l, &mut s);
        let (mut ss, mut dot) = (0.0, 0.0);
        for (a, b) in s[..p].iter().zip(y) {
            ss += a * a;
            dot += a * b;
        }
        if ss == 0.0 {
            continue;
        }
        let gain = dot * dot / ss;
        if best.is_none_or(|(g, _, _)| gain > g) {
            best = Some((gain, l, dot / ss));
        }
    }
    let Some((_, index, value)) = best else {
        return BinClass::Multiton;
    };
    det.column(index, &mut s);
    let residual: f64 = y.iter().zip(&s[..p]).map(|(a, b)| (a - value * b) * (a - value * b)).sum();
    if residual / norm <= params.gamma1 * var {
        BinClass::Singleton { index, value }
    } else {
        BinClass::Multiton
    }
}

/// Peels singletons out of a noisy sketch. `adjacency` must come from the
/// same parity check as `h`.
pub fn peel_noisy<G, C>(
    sketch: &GaussianSketch,
    h: &G,
    adjacency: &RowAdjacency,
    det: &C,
    shape: Shape,
    params: &NoisyParams,
) -> Result<StageAResult>
where
    G: BinIncidence + ?Sized,
    C: ColumnSource + ?Sized,
{
    let mut out = StageAResult::empty(shape);
    let mut sk = sketch.clone();
    let n_bins = sk.len();
    let mut removed: Vec<Vec<u64>> = vec![Vec::new(); n_bins];
    let classify = |sk: &GaussianSketch, removed: &[Vec<u64>], j: usize| {
        let row = adjacency.row(j);
        let gone = &removed[j];
        let live = row.iter().map(|&l| l as u64).filter(|l| !gone.contains(l));
        classify_noisy(sk.bin(j), live, row.len() - gone.len(), det, params)
    };
    let mut classes = Vec::with_capacity(n_bins);
    let mut set = SingletonSet::new(n_bins);
    for j in 0..n_bins {
        let c = classify(&sk, &removed, j);
        if matches!(c, BinClass::Singleton { .. }) {
            set.insert(j);
        }
        classes.push(c);
    }
    out.initial_singletons = set.len();
    let mut g = rng(params.seed);
    while let Some(j) = set.pop_random(&mut g) {
        if params.target.is_some_and(|t| out.order.len() >= t) {
            set.insert(j);
            break;
        }
        let BinClass::Singleton { index, value } = classes[j] else {
            continue;
        };
        if out.recovered.contains(index) {
            out.conflicts += 1;
            classes[j] = BinClass::Multiton;
            continue;
        }
        let touched = sk.subtract_entry(h, det, index, value)?;
        out.recovered.insert(index, value)?;
        out.order.push(index);
        out.iterations += 1;
        for &t in &touched {
            removed[t].push(index);
        }
        for t in touched {
            let c = classify(&sk, &removed, t);
            match c {
                BinClass::Singleton { .. } => set.insert(t),
                _ => set.remove(t),
            }
            classes[t] = c;
        }
    }
    out.residual_singletons = set.len();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketcher::{row_adjacency, sketch_noiseless, sketch_noisy, ExplicitIncidence, GaussianDetector, NoiseField, ParityCheck};
    use rand_distr::StandardNormal;

    fn mixture(g: &mut Rng) -> f64 {
        let z: f64 = g.sample(StandardNormal);
        if g.random::<bool>() {
            5.0 + z
        } else {
            -5.0 + z
        }
    }

    #[test]
    fn zero_bin_is_zeroton() {
        let det = DftDetector::new(10).unwrap();
        let z = Complex64::new(0.0, 0.0);
        assert_eq!(classify_noiseless([z, z], &det, 1.0, &NoiselessParams::default()), BinClass::Zeroton);
    }

    #[test]
    fn planted_singleton_is_found() {
        let det = DftDetector::new(10).unwrap();
        let w = Complex64::from_polar(1.0, 2.0 * PI * 6.0 / 10.0);
        let bin = [Complex64::new(2.5, 0.0), w * 2.5];
        assert_eq!(
            classify_noiseless(bin, &det, 2.5, &NoiselessParams::default()),
            BinClass::Singleton { index: 7, value: 2.5 }
        );
    }

    #[test]
    fn negative_value_and_boundary_indices() {
        let det = DftDetector::new(1000).unwrap();
        for l in [1u64, 2, 500, 999, 1000] {
            let bin = [Complex64::new(-3.0, 0.0), det.twiddle(l) * -3.0];
            assert_eq!(
                classify_noiseless(bin, &det, 3.0, &NoiselessParams::default()),
                BinClass::Singleton { index: l, value: -3.0 }
            );
        }
    }

    #[test]
    fn two_entry_bins_are_multitons() {
        let det = DftDetector::new(1_000_000).unwrap();
        let mut g = rng(5);
        let mut multitons = 0;
        for _ in 0..1000 {
            let a = g.random_range(1..=1_000_000u64);
            let b = g.random_range(1..=1_000_000u64);
            if a == b {
                continue;
            }
            let (xa, xb) = (mixture(&mut g), mixture(&mut g));
            let bin = [Complex64::new(xa + xb, 0.0), det.twiddle(a) * xa + det.twiddle(b) * xb];
            if classify_noiseless(bin, &det, 10.0, &NoiselessParams::default()) == BinClass::Multiton {
                multitons += 1;
            }
        }
        assert!(multitons >= 999, "{multitons}");
    }

    fn fig1_graph() -> (ExplicitIncidence, Vec<u64>) {
        // Columns 1..=10 are X11, X12, X13, X14, X22, X23, X24, X33, X34, X44;
        // bins 0..=7 are y1..y8.
        let columns = vec![
            vec![0, 2],
            vec![0, 4],
            vec![2, 4],
            vec![0, 7],
            vec![2, 3],
            vec![2, 3],
            vec![6, 5],
            vec![2, 7],
            vec![4, 3],
            vec![5, 7],
        ];
        (ExplicitIncidence::new(8, columns).unwrap(), (1..=10).collect())
    }

    #[test]
    fn fig1_peels_two_entries_then_stalls() {
        let (graph, all) = fig1_graph();
        let shape = Shape::symmetric(4).unwrap();
        let mut g = rng(1);
        let entries = EntryMap::from_pairs(shape, all.iter().map(|&l| (l, mixture(&mut g)))).unwrap();
        let sk = sketch_noiseless(&graph, &entries).unwrap();
        let res = peel_noiseless(&sk, &graph, shape, &NoiselessParams::default()).unwrap();
        let x24 = shape.index(2, 4).unwrap();
        let x44 = shape.index(4, 4).unwrap();
        assert_eq!(res.initial_singletons, 1);
        assert_eq!(res.order, vec![x24, x44]);
        assert_eq!(entries.len() - res.recovered.len(), 8);
        for (l, v) in res.recovered.iter() {
            assert!((v - entries.get(l).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn single_entry_recovered_in_one_step() {
        let shape = Shape::symmetric(30).unwrap();
        let h = ParityCheck::new(shape.n_cols(), 5, 2, 3).unwrap();
        let entries = EntryMap::from_pairs(shape, [(77, -4.25)]).unwrap();
        let res = peel_noiseless(&sketch_noiseless(&h, &entries).unwrap(), &h, shape, &NoiselessParams::default()).unwrap();
        assert_eq!(res.iterations, 1);
        assert_eq!(res.recovered, entries);
    }

    #[test]
    fn empty_sketch_recovers_nothing() {
        let shape = Shape::symmetric(30).unwrap();
        let h = ParityCheck::new(shape.n_cols(), 5, 2, 3).unwrap();
        let sk = sketch_noiseless(&h, &EntryMap::new(shape)).unwrap();
        let res = peel_noiseless(&sk, &h, shape, &NoiselessParams::default()).unwrap();
        assert!(res.recovered.is_empty());
    }

    #[test]
    fn early_termination_stops_at_target() {
        let shape = Shape::symmetric(100).unwrap();
        let h = ParityCheck::new(shape.n_cols(), 200, 2, 3).unwrap();
        let mut g = rng(2);
        let entries = EntryMap::from_pairs(shape, (0..20).map(|i| (i * 97 + 1, mixture(&mut g)))).unwrap();
        let params = NoiselessParams {
            target: Some(5),
            ..Default::default()
        };
        let res = peel_noiseless(&sketch_noiseless(&h, &entries).unwrap(), &h, shape, &params).unwrap();
        assert_eq!(res.order.len(), 5);
    }

    #[test]
    fn noisy_zero_bin_and_exact_projection() {
        let det = GaussianDetector::new(100, 8, 1).unwrap();
        let params = NoisyParams::new(1e-3);
        assert_eq!(classify_noisy(&[0.0; 8], 1..=100u64, 100, &det, &params), BinClass::Zeroton);
        assert_eq!(classify_noisy(&[1.0; 8], core::iter::empty(), 0, &det, &params), BinClass::Zeroton);
        let mut s = [0.0; MAX_P];
        det.column(42, &mut s);
        let y: Vec<f64> = s[..8].iter().map(|v| 3.0 * v).collect();
        match classify_noisy(&y, 1..=100u64, 100, &det, &params) {
            BinClass::Singleton { index, value } => {
                assert_eq!(index, 42);
                assert!((value - 3.0).abs() < 1e-12);
            }
            c => panic!("{c:?}"),
        }
    }

    #[test]
    fn noisy_singleton_located_under_noise() {
        let det = GaussianDetector::new(100, 32, 9).unwrap();
        let params = NoisyParams::new(0.1);
        let mut g = rng(3);
        let mut hits = 0;
        let mut s = [0.0; MAX_P];
        for trial in 0..100u64 {
            let l = trial % 100 + 1;
            let x = if trial % 2 == 0 { 10.0 } else { -10.0 };
            det.column(l, &mut s);
            let mut y = vec![0.0; 32];
            // Noise accumulated from 100 entries of variance σ² through unit-variance rows.
            for (yi, si) in y.iter_mut().zip(&s[..32]) {
                let z: f64 = g.sample(StandardNormal);
                *yi = x * si + 0.1 * 10.0 * z;
            }
            if let BinClass::Singleton { index, .. } = classify_noisy(&y, 1..=100u64, 100, &det, &params) {
                if index == l {
                    hits += 1;
                }
            }
        }
        assert!(hits >= 95, "{hits}");
    }

    #[test]
    fn pure_noise_yields_no_entries() {
        let shape = Shape::symmetric(60).unwrap();
        let mut clean = 0;
        for seed in 0..100u64 {
            let h = ParityCheck::new(shape.n_cols(), 30, 2, seed).unwrap();
            let det = GaussianDetector::new(shape.n_cols(), 32, seed + 1000).unwrap();
            let adj = row_adjacency(&h, 1 << 20).unwrap();
            let noise = NoiseField { sigma: 1.0, seed: seed + 7 };
            let sk = sketch_noisy(&h, &det, &EntryMap::new(shape), noise).unwrap();
            let res = peel_noisy(&sk, &h, &adj, &det, shape, &NoisyParams::new(1.0)).unwrap();
            if res.recovered.is_empty() {
                clean += 1;
            }
        }
        assert!(clean >= 99, "{clean}");
    }

    #[test]
    fn tiny_noise_matches_noiseless_support() {
        // The accumulated noise in a bin has about |N(j)| degrees of freedom,
        // so the thresholds need |N(j)| in the hundreds to be sharp.
        let shape = Shape::symmetric(40).unwrap();
        let mut agree = 0;
        for seed in 0..100u64 {
            let mut g = rng(seed);
            let entries = EntryMap::from_pairs(shape, (0..6).map(|_| (g.random_range(1..=shape.n_cols()), mixture(&mut g)))).unwrap();
            let h = ParityCheck::new(shape.n_cols(), 12, 2, seed).unwrap();
            let det = GaussianDetector::new(shape.n_cols(), 32, seed).unwrap();
            let adj = row_adjacency(&h, 1 << 20).unwrap();
            let a = peel_noiseless(&sketch_noiseless(&h, &entries).unwrap(), &h, shape, &NoiselessParams::default()).unwrap();
            let sk = sketch_noisy(&h, &det, &entries, NoiseField { sigma: 1e-9, seed }).unwrap();
            let b = peel_noisy(&sk, &h, &adj, &det, shape, &NoisyParams::new(1e-9)).unwrap();
            let sa: Vec<u64> = a.recovered.iter().map(|e| e.0).collect();
            let sb: Vec<u64> = b.recovered.iter().map(|e| e.0).collect();
            if sa == sb {
                agree += 1;
            }
        }
        assert!(agree >= 95, "{agree}");
    }
}
