//! Sketching operators: an implicit column-regular parity-check matrix `H`
//! combined column-wise with a two-row DFT (noiseless) or a Gaussian
//! (noisy) bin-detection matrix.
//!
//! Bins are 0-based here (`0..R`); vectorized indices `ℓ` stay 1-based.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::model::{EntryMap, MAX_VECTORIZED_LEN};
use crate::rng::{bounded, derive, mix64, rng};
use crate::{Error, Result};

/// Largest number of Gaussian rows per bin.
pub const MAX_P: usize = 256;

const ROW_STREAM: u64 = 0x4843_4f4c; // column-row sampler
const GAUSS_STREAM: u64 = 0x5341_4d50;
const NOISE_STREAM: u64 = 0x4e4f_4953;

/// Seeded implicit `R × n_cols` 0/1 matrix with exactly `d` ones per column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParityCheck {
    n_cols: u64,
    n_rows: usize,
    d: usize,
    seed: u64,
}

impl ParityCheck {
    pub fn new(n_cols: u64, n_rows: usize, d: usize, seed: u64) -> Result<Self> {
        if n_cols == 0 || n_cols > MAX_VECTORIZED_LEN {
            return Err(Error::Parameter("column count must be in 1..=2^52"));
        }
        if d < 2 {
            return Err(Error::Parameter("column weight d must be at least 2"));
        }
        if d > n_rows {
            return Err(Error::Parameter("column weight d exceeds the number of bins"));
        }
        Ok(Self {
            n_cols,
            n_rows,
            d,
            seed,
        })
    }

    pub fn n_cols(&self) -> u64 {
        self.n_cols
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The `d` distinct bins holding a one in column `l`, in draw order.
    pub fn column_rows(&self, l: u64) -> Result<Vec<usize>> {
        self.check(l)?;
        let mut out = Vec::with_capacity(self.d);
        self.rows_into(l, &mut out);
        Ok(out)
    }

    /// Like [`column_rows`](Self::column_rows) without the range check,
    /// writing into a reused buffer.
    pub fn rows_into(&self, l: u64, out: &mut Vec<usize>) {
        debug_assert!(l >= 1 && l <= self.n_cols);
        out.clear();
        let key = derive(derive(self.seed, ROW_STREAM), l);
        let mut attempt = 0u64;
        while out.len() < self.d {
            let bits = mix64(key.wrapping_add(attempt.wrapping_mul(0x9e37_79b9_7f4a_7c15)));
            attempt += 1;
            let row = bounded(bits, self.n_rows as u64) as usize;
            if !out.contains(&row) {
                out.push(row);
            }
        }
    }
}

/// Bin incidence of the signal columns: which bins each column feeds.
pub trait BinIncidence {
    fn n_cols(&self) -> u64;
    fn n_rows(&self) -> usize;
    /// Writes the bins of column `l` (1-based, assumed in range) into `out`.
    fn rows_into(&self, l: u64, out: &mut Vec<usize>);

    fn check(&self, l: u64) -> Result<()> {
        if l == 0 || l > self.n_cols() {
            return Err(Error::Index {
                index: l,
                len: self.n_cols(),
            });
        }
        Ok(())
    }

    fn contains(&self, l: u64, bin: usize, scratch: &mut Vec<usize>) -> bool {
        self.rows_into(l, scratch);
        scratch.contains(&bin)
    }
}

impl BinIncidence for ParityCheck {
    fn n_cols(&self) -> u64 {
        self.n_cols
    }

    fn n_rows(&self) -> usize {
        self.n_rows
    }

    fn rows_into(&self, l: u64, out: &mut Vec<usize>) {
        ParityCheck::rows_into(self, l, out)
    }
}

/// Explicitly listed incidence, for hand-built graphs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExplicitIncidence {
    n_rows: usize,
    columns: Vec<Vec<usize>>,
}

impl ExplicitIncidence {
    /// `columns[ℓ-1]` lists the 0-based bins of column `ℓ`.
    pub fn new(n_rows: usize, columns: Vec<Vec<usize>>) -> Result<Self> {
        if columns.iter().flatten().any(|&j| j >= n_rows) {
            return Err(Error::Parameter("bin index out of range"));
        }
        Ok(Self { n_rows, columns })
    }
}

impl BinIncidence for ExplicitIncidence {
    fn n_cols(&self) -> u64 {
        self.columns.len() as u64
    }

    fn n_rows(&self) -> usize {
        self.n_rows
    }

    fn rows_into(&self, l: u64, out: &mut Vec<usize>) {
        out.clear();
        out.extend_from_slice(&self.columns[(l - 1) as usize]);
    }
}

/// Columns `(1, W^{ℓ-1})` of the first two rows of an `ñ`-point DFT,
/// `W = exp(2πi/ñ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DftDetector {
    n_cols: u64,
}

impl DftDetector {
    pub fn new(n_cols: u64) -> Result<Self> {
        if n_cols == 0 || n_cols > MAX_VECTORIZED_LEN {
            return Err(Error::Parameter("column count must be in 1..=2^52"));
        }
        Ok(Self { n_cols })
    }

    pub fn n_cols(&self) -> u64 {
        self.n_cols
    }

    /// Phase spacing `2π/ñ` between adjacent indices.
    pub fn step(&self) -> f64 {
        2.0 * PI / self.n_cols as f64
    }

    /// `W^{ℓ-1}`.
    #[inline]
    pub fn twiddle(&self, l: u64) -> Complex64 {
        let phase = 2.0 * PI * ((l - 1) as f64) / self.n_cols as f64;
        Complex64::new(libm::cos(phase), libm::sin(phase))
    }
}

/// Pseudorandom standard-normal detector columns keyed by `(seed, ℓ)`.
///
/// Draws are rounded to `f32` so a cached [`GaussianTable`] reproduces them
/// bit for bit. A column with `P` rows is the prefix of the same column with
/// more rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GaussianDetector {
    n_cols: u64,
    p: usize,
    seed: u64,
}

impl GaussianDetector {
    pub fn new(n_cols: u64, p: usize, seed: u64) -> Result<Self> {
        if n_cols == 0 || n_cols > MAX_VECTORIZED_LEN {
            return Err(Error::Parameter("column count must be in 1..=2^52"));
        }
        if p == 0 || p > MAX_P {
            return Err(Error::Parameter("rows per bin must be in 1..=256"));
        }
        Ok(Self { n_cols, p, seed })
    }

    pub fn n_cols(&self) -> u64 {
        self.n_cols
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn fill_f32(&self, l: u64, out: &mut [f32]) {
        let mut g = rng(derive(derive(self.seed, GAUSS_STREAM), l));
        for x in out {
            let z: f64 = g.sample(StandardNormal);
            *x = z as f32;
        }
    }
}

/// Source of length-`P` detector columns.
pub trait ColumnSource {
    fn p(&self) -> usize;
    fn n_cols(&self) -> u64;
    /// Writes column `l` (1-based) into `out[..p]`.
    fn column(&self, l: u64, out: &mut [f64]);
}

impl ColumnSource for GaussianDetector {
    fn p(&self) -> usize {
        self.p
    }

    fn n_cols(&self) -> u64 {
        self.n_cols
    }

    fn column(&self, l: u64, out: &mut [f64]) {
        let mut buf = [0f32; MAX_P];
        self.fill_f32(l, &mut buf[..self.p]);
        for (o, &b) in out[..self.p].iter_mut().zip(&buf[..self.p]) {
            *o = b as f64;
        }
    }
}

/// Every column of a [`GaussianDetector`], materialized. Views with fewer
/// rows share the storage.
#[derive(Debug, Clone)]
pub struct GaussianTable {
    detector: GaussianDetector,
    data: Vec<f32>,
}

impl GaussianTable {
    /// Refuses when `n_cols·P` exceeds `cap` cells.
    pub fn build(detector: GaussianDetector, cap: u64) -> Result<Self> {
        let cells = detector.n_cols.saturating_mul(detector.p as u64);
        if cells > cap {
            return Err(Error::TooLarge {
                what: "gaussian table",
                requested: cells,
                cap,
            });
        }
        let p = detector.p;
        let mut data = vec![0f32; cells as usize];
        for (c, chunk) in data.chunks_exact_mut(p).enumerate() {
            detector.fill_f32(c as u64 + 1, chunk);
        }
        Ok(Self { detector, data })
    }

    pub fn detector(&self) -> GaussianDetector {
        self.detector
    }

    /// The first `p` rows of every column.
    pub fn view(&self, p: usize) -> Result<TableView<'_>> {
        if p == 0 || p > self.detector.p {
            return Err(Error::Parameter("view has more rows than the table"));
        }
        Ok(TableView { table: self, p })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TableView<'a> {
    table: &'a GaussianTable,
    p: usize,
}

impl ColumnSource for TableView<'_> {
    fn p(&self) -> usize {
        self.p
    }

    fn n_cols(&self) -> u64 {
        self.table.detector.n_cols
    }

    fn column(&self, l: u64, out: &mut [f64]) {
        let stride = self.table.detector.p;
        let start = (l - 1) as usize * stride;
        for (o, &b) in out[..self.p].iter_mut().zip(&self.table.data[start..start + self.p]) {
            *o = b as f64;
        }
    }
}

/// Noiseless sketch: one complex pair per bin.
#[derive(Debug, Clone, PartialEq)]
pub struct DftSketch {
    bins: Vec<[Complex64; 2]>,
    bin_updates: u64,
}

impl DftSketch {
    pub fn zeros(n_bins: usize) -> Self {
        Self {
            bins: vec![[Complex64::new(0.0, 0.0); 2]; n_bins],
            bin_updates: 0,
        }
    }

    pub fn from_bins(bins: Vec<[Complex64; 2]>) -> Self {
        Self { bins, bin_updates: 0 }
    }

    pub fn bins(&self) -> &[[Complex64; 2]] {
        &self.bins
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// Number of single-bin accumulations performed so far.
    pub fn bin_updates(&self) -> u64 {
        self.bin_updates
    }

    pub fn max_magnitude(&self) -> f64 {
        self.bins.iter().map(|b| b[0].norm().max(b[1].norm())).fold(0.0, f64::max)
    }

    #[inline]
    pub(crate) fn add_to_bin(&mut self, bin: usize, value: f64, tw: Complex64) {
        let b = &mut self.bins[bin];
        b[0] += Complex64::new(value, 0.0);
        b[1] += tw * value;
        self.bin_updates += 1;
    }

    /// Subtracts `value·(1, W^{ℓ-1})` from each bin of column `ℓ`; returns
    /// the touched bins.
    pub fn subtract_entry<G: BinIncidence + ?Sized>(&mut self, h: &G, det: &DftDetector, l: u64, value: f64) -> Result<Vec<usize>> {
        h.check(l)?;
        let mut rows = Vec::new();
        h.rows_into(l, &mut rows);
        let tw = det.twiddle(l);
        for &j in &rows {
            self.add_to_bin(j, -value, tw);
        }
        Ok(rows)
    }

    /// Componentwise sum of two sketches of equal length.
    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.len(), other.len(), "sketch length mismatch");
        let bins = self
            .bins
            .iter()
            .zip(&other.bins)
            .map(|(a, b)| [a[0] + b[0], a[1] + b[1]])
            .collect();
        Self::from_bins(bins)
    }
}

/// Sketches `entries` with the two-row DFT detector; costs `|entries|·d`
/// bin updates.
pub fn sketch_noiseless<G: BinIncidence + ?Sized>(h: &G, entries: &EntryMap) -> Result<DftSketch> {
    let det = DftDetector::new(h.n_cols())?;
    let mut sk = DftSketch::zeros(h.n_rows());
    let mut rows = Vec::new();
    for (l, x) in entries.iter() {
        h.check(l)?;
        h.rows_into(l, &mut rows);
        let tw = det.twiddle(l);
        for &j in &rows {
            sk.add_to_bin(j, x, tw);
        }
    }
    Ok(sk)
}

/// Noisy sketch: `R` bins of `P` real measurements, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSketch {
    p: usize,
    data: Vec<f64>,
}

impl GaussianSketch {
    pub fn zeros(n_bins: usize, p: usize) -> Self {
        Self {
            p,
            data: vec![0.0; n_bins * p],
        }
    }

    pub fn from_data(p: usize, data: Vec<f64>) -> Result<Self> {
        if p == 0 || !data.len().is_multiple_of(p) {
            return Err(Error::Parameter("sketch data is not a whole number of bins"));
        }
        Ok(Self { p, data })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.p
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn bin(&self, j: usize) -> &[f64] {
        &self.data[j * self.p..(j + 1) * self.p]
    }

    pub fn bin_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.p..(j + 1) * self.p]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `bin_j += value·s` for each listed bin.
    pub(crate) fn axpy(&mut self, bins: &[usize], value: f64, s: &[f64]) {
        for &j in bins {
            for (y, &sv) in self.bin_mut(j).iter_mut().zip(s) {
                *y += value * sv;
            }
        }
    }

    /// Subtracts `value·s_ℓ` from each bin of column `ℓ`; returns the touched
    /// bins.
    pub fn subtract_entry<G: BinIncidence + ?Sized, C: ColumnSource + ?Sized>(
        &mut self,
        h: &G,
        det: &C,
        l: u64,
        value: f64,
    ) -> Result<Vec<usize>> {
        h.check(l)?;
        let mut rows = Vec::new();
        h.rows_into(l, &mut rows);
        let mut s = [0.0; MAX_P];
        det.column(l, &mut s);
        self.axpy(&rows, -value, &s[..self.p]);
        Ok(rows)
    }
}

/// I.i.d. `N(0, σ²)` noise on every vectorized entry, evaluated per index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseField {
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseField {
    pub fn at(&self, l: u64) -> f64 {
        if self.sigma == 0.0 {
            return 0.0;
        }
        let z: f64 = rng(derive(derive(self.seed, NOISE_STREAM), l)).sample(StandardNormal);
        self.sigma * z
    }
}

/// Sketches `signal + noise` over every column with the Gaussian detector.
///
/// Touches all `n_cols` columns whenever `σ > 0`; with `σ = 0` only the
/// signal support is visited.
pub fn sketch_noisy<C: ColumnSource>(h: &ParityCheck, det: &C, signal: &EntryMap, noise: NoiseField) -> Result<GaussianSketch> {
    if det.n_cols() != h.n_cols {
        return Err(Error::Parameter("detector and parity check disagree on column count"));
    }
    let p = det.p();
    let mut sk = GaussianSketch::zeros(h.n_rows, p);
    let mut rows = Vec::with_capacity(h.d);
    let mut s = [0.0; MAX_P];
    for (l, _) in signal.iter() {
        h.check(l)?;
    }
    let mut accumulate = |l: u64, x: f64, sk: &mut GaussianSketch| {
        if x != 0.0 {
            h.rows_into(l, &mut rows);
            det.column(l, &mut s);
            sk.axpy(&rows, x, &s[..p]);
        }
    };
    if noise.sigma == 0.0 {
        for (l, x) in signal.iter() {
            accumulate(l, x, &mut sk);
        }
    } else {
        let mut it = signal.iter().peekable();
        for l in 1..=h.n_cols {
            let mut x = noise.at(l);
            if let Some(&(ls, xs)) = it.peek() {
                if ls == l {
                    x += xs;
                    it.next();
                }
            }
            accumulate(l, x, &mut sk);
        }
    }
    Ok(sk)
}

/// Per-bin Cholesky factors of `Σ_{ℓ∈N(j)} s_ℓ s_ℓᵀ`.
///
/// The noise a bin accumulates, `Σ_{ℓ∈N(j)} w_ℓ s_ℓ` with i.i.d.
/// `w_ℓ ~ N(0, σ²)`, is Gaussian with covariance `σ²·C_j`, so
/// `σ·L_j·z` with `z ~ N(0, I)` has the same law at `O(R·P²)` cost per draw.
/// Leading `p×p` blocks of `L_j` are the factors for fewer rows.
#[derive(Debug, Clone)]
pub struct BinNoiseFactors {
    p: usize,
    factors: Vec<f64>,
}

impl BinNoiseFactors {
    pub fn build<C: ColumnSource>(h: &ParityCheck, det: &C) -> Result<Self> {
        if det.n_cols() != h.n_cols {
            return Err(Error::Parameter("detector and parity check disagree on column count"));
        }
        let p = det.p();
        let mut cov = vec![0.0; h.n_rows * p * p];
        let mut rows = Vec::with_capacity(h.d);
        let mut s = [0.0; MAX_P];
        for l in 1..=h.n_cols {
            h.rows_into(l, &mut rows);
            det.column(l, &mut s);
            for &j in &rows {
                let c = &mut cov[j * p * p..(j + 1) * p * p];
                for a in 0..p {
                    let sa = s[a];
                    let row = &mut c[a * p..a * p + a + 1];
                    for (b, cell) in row.iter_mut().enumerate() {
                        *cell += sa * s[b];
                    }
                }
            }
        }
        for c in cov.chunks_exact_mut(p * p) {
            cholesky_in_place(c, p);
        }
        Ok(Self { p, factors: cov })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Adds one draw of the aggregated noise (first `sk.p()` rows) to `sk`.
    pub fn add_noise(&self, sk: &mut GaussianSketch, sigma: f64, seed: u64) -> Result<()> {
        let p = sk.p();
        if p > self.p || sk.len() * self.p * self.p != self.factors.len() {
            return Err(Error::Parameter("noise factors do not match the sketch"));
        }
        let mut z = [0.0; MAX_P];
        for j in 0..sk.len() {
            let mut g = rng(derive(derive(seed, NOISE_STREAM), j as u64));
            for zi in &mut z[..p] {
                *zi = g.sample(StandardNormal);
            }
            let l = &self.factors[j * self.p * self.p..(j + 1) * self.p * self.p];
            let bin = sk.bin_mut(j);
            for a in 0..p {
                let row = &l[a * self.p..a * self.p + a + 1];
                let dot: f64 = row.iter().zip(&z[..=a]).map(|(x, y)| x * y).sum();
                bin[a] += sigma * dot;
            }
        }
        Ok(())
    }
}

/// Lower Cholesky factor of a positive semidefinite matrix stored in the
/// lower triangle; rank-deficient directions get zero columns.
fn cholesky_in_place(c: &mut [f64], p: usize) {
    let scale = (0..p).map(|i| c[i * p + i]).fold(0.0, f64::max);
    for j in 0..p {
        let mut diag = c[j * p + j];
        for t in 0..j {
            diag -= c[j * p + t] * c[j * p + t];
        }
        if diag <= 1e-12 * scale {
            for i in j..p {
                c[i * p + j] = 0.0;
            }
            continue;
        }
        let root = libm::sqrt(diag);
        c[j * p + j] = root;
        for i in j + 1..p {
            let mut v = c[i * p + j];
            for t in 0..j {
                v -= c[i * p + t] * c[j * p + t];
            }
            c[i * p + j] = v / root;
        }
    }
    for i in 0..p {
        for j in i + 1..p {
            c[i * p + j] = 0.0;
        }
    }
}

/// `N(j)` for every bin, in compressed-row form.
#[derive(Debug, Clone)]
pub struct RowAdjacency {
    offsets: Vec<usize>,
    columns: Vec<u32>,
}

impl Default for RowAdjacency {
    fn default() -> Self {
        Self {
            offsets: vec![0],
            columns: Vec::new(),
        }
    }
}

impl RowAdjacency {
    /// Column list `N(j)` (1-based indices, ascending).
    pub fn row(&self, j: usize) -> &[u32] {
        &self.columns[self.offsets[j]..self.offsets[j + 1]]
    }

    pub fn n_rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn total(&self) -> usize {
        self.columns.len()
    }
}

/// Materializes `N(j)`; refuses when `d·n_cols` exceeds `cap` entries or a
/// column index does not fit in 32 bits.
pub fn row_adjacency(h: &ParityCheck, cap: u64) -> Result<RowAdjacency> {
    let total = h.n_cols.saturating_mul(h.d as u64);
    if total > cap {
        return Err(Error::TooLarge {
            what: "row adjacency",
            requested: total,
            cap,
        });
    }
    if h.n_cols > u32::MAX as u64 {
        return Err(Error::TooLarge {
            what: "row adjacency column index",
            requested: h.n_cols,
            cap: u32::MAX as u64,
        });
    }
    let mut counts = vec![0usize; h.n_rows + 1];
    let mut rows = Vec::with_capacity(h.d);
    for l in 1..=h.n_cols {
        h.rows_into(l, &mut rows);
        for &j in &rows {
            counts[j + 1] += 1;
        }
    }
    for j in 0..h.n_rows {
        counts[j + 1] += counts[j];
    }
    let mut fill = counts.clone();
    let mut columns = vec![0u32; total as usize];
    for l in 1..=h.n_cols {
        h.rows_into(l, &mut rows);
        for &j in &rows {
            columns[fill[j]] = l as u32;
            fill[j] += 1;
        }
    }
    Ok(RowAdjacency {
        offsets: counts,
        columns,
    })
}
