//! Index arithmetic, ground-truth signals and entry maps.
//!
//! All public coordinates are 1-based. A symmetric `n×n` matrix is
//! vectorized over its upper triangle in row-major order,
//! `(1,1) → 1, (1,2) → 2, …, (1,n) → n, (2,2) → n+1, …`; a non-symmetric
//! `n1×n2` matrix is vectorized in full, row-major.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::dense::DenseMatrix;
use crate::{Error, Result};

/// Largest vectorized length supported; DFT phases are exact integers
/// below 2⁵² so adjacent indices stay distinguishable.
pub const MAX_VECTORIZED_LEN: u64 = 1 << 52;

/// Cap on the number of cells [`dense_oracle`] will allocate.
pub const DENSE_ORACLE_CAP: u64 = 1_000_000;

/// Upper-triangular vectorization of a symmetric `n×n` matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SymIndexMap {
    n: usize,
}

impl SymIndexMap {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Parameter("dimension must be positive"));
        }
        let map = Self { n };
        if map.n_tilde() > MAX_VECTORIZED_LEN {
            return Err(Error::Parameter("vectorized length exceeds 2^52"));
        }
        Ok(map)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `n(n+1)/2`.
    pub fn n_tilde(&self) -> u64 {
        let n = self.n as u64;
        n * (n + 1) / 2
    }

    /// Number of vectorized positions before row `i` (1-based).
    #[inline]
    fn row_offset(&self, i: usize) -> u64 {
        let t = (i - 1) as u64;
        let n = self.n as u64;
        t * n - t * t.saturating_sub(1) / 2
    }

    pub fn to_flat(&self, i: usize, j: usize) -> Result<u64> {
        if i == 0 || i > j || j > self.n {
            return Err(Error::Coordinate {
                row: i,
                col: j,
                rows: self.n,
                cols: self.n,
            });
        }
        Ok(self.row_offset(i) + (j - i) as u64 + 1)
    }

    pub fn from_flat(&self, l: u64) -> Result<(usize, usize)> {
        let len = self.n_tilde();
        if l == 0 || l > len {
            return Err(Error::Index { index: l, len });
        }
        // Largest row t = i-1 with offset(t) <= l-1, from the quadratic
        // t² - (2n+1)t + 2(l-1) >= 0, then corrected in integers.
        let b = 2.0 * self.n as f64 + 1.0;
        let disc = (b * b - 8.0 * (l - 1) as f64).max(0.0);
        let mut i = libm::floor((b - libm::sqrt(disc)) / 2.0).max(0.0) as usize + 1;
        i = i.min(self.n);
        while i > 1 && self.row_offset(i) >= l {
            i -= 1;
        }
        while i < self.n && self.row_offset(i + 1) < l {
            i += 1;
        }
        let j = i + (l - self.row_offset(i) - 1) as usize;
        Ok((i, j))
    }
}

/// Row-major upper-triangular rank of `(i, j)` in an `n×n` matrix.
pub fn triu_to_flat(i: usize, j: usize, n: usize) -> Result<u64> {
    SymIndexMap::new(n)?.to_flat(i, j)
}

/// Inverse of [`triu_to_flat`].
pub fn flat_to_triu(l: u64, n: usize) -> Result<(usize, usize)> {
    SymIndexMap::new(n)?.from_flat(l)
}

/// Full row-major vectorization of an `n1×n2` matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlatIndexMap {
    n1: usize,
    n2: usize,
}

impl FlatIndexMap {
    pub fn new(n1: usize, n2: usize) -> Result<Self> {
        if n1 == 0 || n2 == 0 {
            return Err(Error::Parameter("dimensions must be positive"));
        }
        if (n1 as u64).saturating_mul(n2 as u64) > MAX_VECTORIZED_LEN {
            return Err(Error::Parameter("vectorized length exceeds 2^52"));
        }
        Ok(Self { n1, n2 })
    }

    pub fn len(&self) -> u64 {
        self.n1 as u64 * self.n2 as u64
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn to_flat(&self, i: usize, j: usize) -> Result<u64> {
        if i == 0 || j == 0 || i > self.n1 || j > self.n2 {
            return Err(Error::Coordinate {
                row: i,
                col: j,
                rows: self.n1,
                cols: self.n2,
            });
        }
        Ok((i - 1) as u64 * self.n2 as u64 + j as u64)
    }

    pub fn from_flat(&self, l: u64) -> Result<(usize, usize)> {
        if l == 0 || l > self.len() {
            return Err(Error::Index {
                index: l,
                len: self.len(),
            });
        }
        let z = l - 1;
        Ok(((z / self.n2 as u64) as usize + 1, (z % self.n2 as u64) as usize + 1))
    }
}

/// Matrix shape together with its vectorization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Shape {
    Symmetric { n: usize },
    NonSymmetric { n1: usize, n2: usize },
}

impl Shape {
    pub fn symmetric(n: usize) -> Result<Self> {
        SymIndexMap::new(n)?;
        Ok(Shape::Symmetric { n })
    }

    pub fn non_symmetric(n1: usize, n2: usize) -> Result<Self> {
        FlatIndexMap::new(n1, n2)?;
        Ok(Shape::NonSymmetric { n1, n2 })
    }

    pub fn is_symmetric(&self) -> bool {
        matches!(self, Shape::Symmetric { .. })
    }

    pub fn rows(&self) -> usize {
        match *self {
            Shape::Symmetric { n } => n,
            Shape::NonSymmetric { n1, .. } => n1,
        }
    }

    pub fn cols(&self) -> usize {
        match *self {
            Shape::Symmetric { n } => n,
            Shape::NonSymmetric { n2, .. } => n2,
        }
    }

    /// Length of the vectorized signal (`ñ` or `n1·n2`).
    pub fn n_cols(&self) -> u64 {
        match *self {
            Shape::Symmetric { n } => SymIndexMap { n }.n_tilde(),
            Shape::NonSymmetric { n1, n2 } => FlatIndexMap { n1, n2 }.len(),
        }
    }

    /// Vectorized index of `(i, j)`; symmetric shapes accept either triangle.
    pub fn index(&self, i: usize, j: usize) -> Result<u64> {
        match *self {
            Shape::Symmetric { n } => {
                let (a, b) = if i <= j { (i, j) } else { (j, i) };
                SymIndexMap { n }.to_flat(a, b)
            }
            Shape::NonSymmetric { n1, n2 } => FlatIndexMap { n1, n2 }.to_flat(i, j),
        }
    }

    pub fn coords(&self, l: u64) -> Result<(usize, usize)> {
        match *self {
            Shape::Symmetric { n } => SymIndexMap { n }.from_flat(l),
            Shape::NonSymmetric { n1, n2 } => FlatIndexMap { n1, n2 }.from_flat(l),
        }
    }
}

/// Sparse vector over 1-based indices, sorted by index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    entries: Vec<(usize, f64)>,
}

impl SparseVector {
    /// Sorts the entries; duplicate or zero indices are rejected.
    pub fn new(mut entries: Vec<(usize, f64)>) -> Result<Self> {
        entries.sort_by_key(|e| e.0);
        if entries.first().is_some_and(|e| e.0 == 0) {
            return Err(Error::Parameter("sparse vector indices are 1-based"));
        }
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Parameter("duplicate index in sparse vector"));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of entries with a nonzero value.
    pub fn nnz(&self) -> usize {
        self.entries.iter().filter(|e| e.1 != 0.0).count()
    }

    pub fn get(&self, index: usize) -> f64 {
        match self.entries.binary_search_by_key(&index, |e| e.0) {
            Ok(p) => self.entries[p].1,
            Err(_) => 0.0,
        }
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().filter(|e| e.1 != 0.0).map(|e| e.0)
    }

    pub fn max_index(&self) -> usize {
        self.entries.last().map_or(0, |e| e.0)
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.entries.iter().map(|e| e.1 * e.1).sum())
    }

    pub fn dot(&self, other: &Self) -> f64 {
        let (mut a, mut b, mut acc) = (0, 0, 0.0);
        while a < self.entries.len() && b < other.entries.len() {
            let (ia, va) = self.entries[a];
            let (ib, vb) = other.entries[b];
            match ia.cmp(&ib) {
                core::cmp::Ordering::Less => a += 1,
                core::cmp::Ordering::Greater => b += 1,
                core::cmp::Ordering::Equal => {
                    acc += va * vb;
                    a += 1;
                    b += 1;
                }
            }
        }
        acc
    }

    pub fn scale(&mut self, factor: f64) {
        for e in &mut self.entries {
            e.1 *= factor;
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.scale(factor);
        out
    }

    /// Drops entries whose magnitude is at most `tol`.
    pub fn prune(&mut self, tol: f64) {
        self.entries.retain(|e| e.1.abs() > tol);
    }

    /// Coordinate with the largest magnitude (lowest index on ties).
    pub fn argmax_abs(&self) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for &(i, v) in &self.entries {
            if best.is_none_or(|(_, b)| v.abs() > b.abs()) {
                best = Some((i, v));
            }
        }
        best
    }
}

/// One rank-1 term `value · left · rightᵀ`; `left` is `None` for symmetric
/// terms (`value · right · rightᵀ`).
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub value: f64,
    pub left: Option<SparseVector>,
    pub right: SparseVector,
}

impl Component {
    pub fn symmetric(value: f64, v: SparseVector) -> Self {
        Self {
            value,
            left: None,
            right: v,
        }
    }

    pub fn non_symmetric(value: f64, u: SparseVector, v: SparseVector) -> Self {
        Self {
            value,
            left: Some(u),
            right: v,
        }
    }
}

/// Planted low-rank signal.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    shape: Shape,
    k: usize,
    beta: Option<f64>,
    components: Vec<Component>,
}

impl GroundTruth {
    /// Validates indices and unit norms (within `1e-10`).
    pub fn new(shape: Shape, k: usize, beta: Option<f64>, components: Vec<Component>) -> Result<Self> {
        for c in &components {
            match (shape, &c.left) {
                (Shape::Symmetric { n }, None) => check_vector(&c.right, n)?,
                (Shape::NonSymmetric { n1, n2 }, Some(u)) => {
                    check_vector(u, n1)?;
                    check_vector(&c.right, n2)?;
                    if c.value <= 0.0 {
                        return Err(Error::Parameter("singular values must be positive"));
                    }
                }
                _ => return Err(Error::Parameter("component does not match shape")),
            }
            if !c.value.is_finite() {
                return Err(Error::Parameter("component value must be finite"));
            }
        }
        Ok(Self {
            shape,
            k,
            beta,
            components,
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn beta(&self) -> Option<f64> {
        self.beta
    }

    pub fn rank(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    /// True when every vector of each side has a support disjoint from the
    /// others on that side.
    pub fn has_disjoint_supports(&self) -> bool {
        let disjoint = |vs: &[&SparseVector]| {
            let mut all: Vec<usize> = vs.iter().flat_map(|v| v.support()).collect();
            let before = all.len();
            all.sort_unstable();
            all.dedup();
            all.len() == before
        };
        let right: Vec<&SparseVector> = self.components.iter().map(|c| &c.right).collect();
        let left: Vec<&SparseVector> = self.components.iter().filter_map(|c| c.left.as_ref()).collect();
        disjoint(&right) && disjoint(&left)
    }
}

fn check_vector(v: &SparseVector, n: usize) -> Result<()> {
    if v.max_index() > n {
        return Err(Error::Parameter("vector index exceeds dimension"));
    }
    if (v.norm() - 1.0).abs() > 1e-10 {
        return Err(Error::Parameter("factor vectors must have unit norm"));
    }
    Ok(())
}

/// Nonzero entries of a vectorized matrix, keyed by 1-based vectorized index.
#[derive(Debug, Clone, PartialEq)]
pub struct EntryMap {
    shape: Shape,
    values: BTreeMap<u64, f64>,
}

impl EntryMap {
    pub fn new(shape: Shape) -> Self {
        Self {
            shape,
            values: BTreeMap::new(),
        }
    }

    /// Builds a map from `(index, value)` pairs, summing repeats and dropping
    /// zeros.
    pub fn from_pairs(shape: Shape, pairs: impl IntoIterator<Item = (u64, f64)>) -> Result<Self> {
        let mut map = Self::new(shape);
        for (l, v) in pairs {
            map.add(l, v)?;
        }
        map.values.retain(|_, v| *v != 0.0);
        Ok(map)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    fn check(&self, l: u64) -> Result<()> {
        let len = self.shape.n_cols();
        if l == 0 || l > len {
            return Err(Error::Index { index: l, len });
        }
        Ok(())
    }

    /// Sets entry `l`; a zero value removes it.
    pub fn insert(&mut self, l: u64, value: f64) -> Result<()> {
        self.check(l)?;
        if value == 0.0 {
            self.values.remove(&l);
        } else {
            self.values.insert(l, value);
        }
        Ok(())
    }

    fn add(&mut self, l: u64, value: f64) -> Result<()> {
        self.check(l)?;
        *self.values.entry(l).or_insert(0.0) += value;
        Ok(())
    }

    pub fn get(&self, l: u64) -> Option<f64> {
        self.values.get(&l).copied()
    }

    pub fn contains(&self, l: u64) -> bool {
        self.values.contains_key(&l)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.values.iter().map(|(&l, &v)| (l, v))
    }

    /// Entries as `((row, col), value)` matrix coordinates.
    pub fn iter_coords(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.values.iter().map(|(&l, &v)| {
            // Indices are validated on insertion.
            (self.shape.coords(l).expect("validated index"), v)
        })
    }

    /// Squared Frobenius norm of the full matrix (off-diagonal entries of a
    /// symmetric matrix count twice).
    pub fn frobenius_sq(&self) -> f64 {
        self.iter_coords()
            .map(|((i, j), v)| {
                let w = if self.shape.is_symmetric() && i != j { 2.0 } else { 1.0 };
                w * v * v
            })
            .sum()
    }
}

/// All nonzero entries of `Σ λ v vᵀ` (upper triangle) or `Σ σ u vᵀ`.
pub fn expand_ground_truth(gt: &GroundTruth) -> EntryMap {
    let shape = gt.shape();
    let mut acc: BTreeMap<u64, f64> = BTreeMap::new();
    for c in gt.components() {
        match &c.left {
            None => {
                let v = c.right.entries();
                for (a, &(i, vi)) in v.iter().enumerate() {
                    for &(j, vj) in &v[a..] {
                        let l = shape.index(i, j).expect("validated ground truth");
                        *acc.entry(l).or_insert(0.0) += c.value * vi * vj;
                    }
                }
            }
            Some(u) => {
                for (i, ui) in u.iter() {
                    for (j, vj) in c.right.iter() {
                        let l = shape.index(i, j).expect("validated ground truth");
                        *acc.entry(l).or_insert(0.0) += c.value * ui * vj;
                    }
                }
            }
        }
    }
    acc.retain(|_, v| *v != 0.0);
    EntryMap { shape, values: acc }
}

/// Dense `Σ λ v vᵀ` (both triangles) or `Σ σ u vᵀ`, for small test instances.
pub fn dense_oracle(gt: &GroundTruth) -> Result<DenseMatrix> {
    let (rows, cols) = (gt.shape().rows(), gt.shape().cols());
    let cells = rows as u64 * cols as u64;
    if cells > DENSE_ORACLE_CAP {
        return Err(Error::TooLarge {
            what: "dense oracle",
            requested: cells,
            cap: DENSE_ORACLE_CAP,
        });
    }
    let mut m = DenseMatrix::zeros(rows, cols);
    for c in gt.components() {
        let left = c.left.as_ref().unwrap_or(&c.right);
        for (i, a) in left.iter() {
            for (j, b) in c.right.iter() {
                m[(i - 1, j - 1)] += c.value * a * b;
            }
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn brute_force_rank(i: usize, j: usize, n: usize) -> u64 {
        let mut l = 0;
        for a in 1..=n {
            for b in a..=n {
                l += 1;
                if (a, b) == (i, j) {
                    return l;
                }
            }
        }
        unreachable!()
    }

    #[test]
    fn triu_examples() {
        let expected = [((1, 1), 1), ((1, 2), 2), ((1, 3), 3), ((2, 2), 4), ((2, 3), 5), ((3, 3), 6)];
        for ((i, j), l) in expected {
            assert_eq!(triu_to_flat(i, j, 3).unwrap(), l);
        }
        assert_eq!(triu_to_flat(7, 7, 7).unwrap(), 28);
        assert_eq!(triu_to_flat(2, 4, 5).unwrap(), brute_force_rank(2, 4, 5));
        assert_eq!(triu_to_flat(2, 4, 5).unwrap(), 8);
    }

    #[test]
    fn triu_rejects_bad_coordinates() {
        assert!(triu_to_flat(2, 1, 3).is_err());
        assert!(triu_to_flat(0, 1, 3).is_err());
        assert!(triu_to_flat(1, 4, 3).is_err());
        assert!(flat_to_triu(0, 3).is_err());
        assert!(flat_to_triu(7, 3).is_err());
    }

    #[test]
    fn triu_round_trip_exhaustive() {
        for n in 1..=100 {
            let map = SymIndexMap::new(n).unwrap();
            let mut expected = 0;
            for i in 1..=n {
                for j in i..=n {
                    expected += 1;
                    let l = map.to_flat(i, j).unwrap();
                    assert_eq!(l, expected);
                    assert_eq!(map.from_flat(l).unwrap(), (i, j));
                }
            }
            assert_eq!(expected, map.n_tilde());
        }
    }

    #[test]
    fn triu_round_trip_large_dimension() {
        let map = SymIndexMap::new(100_000).unwrap();
        for &(i, j) in &[(1, 1), (1, 100_000), (2, 2), (50_000, 77_777), (99_999, 100_000), (100_000, 100_000)] {
            assert_eq!(map.from_flat(map.to_flat(i, j).unwrap()).unwrap(), (i, j));
        }
    }

    #[test]
    fn flat_map_round_trip() {
        let map = FlatIndexMap::new(3, 4).unwrap();
        let mut l = 0;
        for i in 1..=3 {
            for j in 1..=4 {
                l += 1;
                assert_eq!(map.to_flat(i, j).unwrap(), l);
                assert_eq!(map.from_flat(l).unwrap(), (i, j));
            }
        }
        assert!(map.to_flat(4, 1).is_err());
    }

    fn unit(entries: Vec<(usize, f64)>) -> SparseVector {
        let mut v = SparseVector::new(entries).unwrap();
        let n = v.norm();
        v.scale(1.0 / n);
        v
    }

    #[test]
    fn expand_rank_one_symmetric() {
        let shape = Shape::symmetric(4).unwrap();
        let gt = GroundTruth::new(shape, 2, None, vec![Component::symmetric(2.0, unit(vec![(1, 1.0), (2, 1.0)]))]).unwrap();
        let e = expand_ground_truth(&gt);
        assert_eq!(e.len(), 3);
        for (i, j) in [(1, 1), (1, 2), (2, 2)] {
            let v = e.get(shape.index(i, j).unwrap()).unwrap();
            assert!((v - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn expand_rank_one_non_symmetric() {
        let shape = Shape::non_symmetric(3, 3).unwrap();
        let gt = GroundTruth::new(
            shape,
            1,
            Some(1.0),
            vec![Component::non_symmetric(3.0, unit(vec![(1, 1.0)]), unit(vec![(2, 1.0)]))],
        )
        .unwrap();
        let e = expand_ground_truth(&gt);
        assert_eq!(e.iter().collect::<Vec<_>>(), vec![(shape.index(1, 2).unwrap(), 3.0)]);
    }

    #[test]
    fn cancellation_is_dropped() {
        let shape = Shape::symmetric(2).unwrap();
        let v = unit(vec![(1, 1.0)]);
        let gt = GroundTruth::new(shape, 1, None, vec![Component::symmetric(1.0, v.clone()), Component::symmetric(-1.0, v)]).unwrap();
        assert!(expand_ground_truth(&gt).is_empty());
    }

    #[test]
    fn dense_oracle_zero_rank_and_guard() {
        let gt = GroundTruth::new(Shape::symmetric(3).unwrap(), 1, None, vec![]).unwrap();
        assert_eq!(dense_oracle(&gt).unwrap(), DenseMatrix::zeros(3, 3));
        let big = GroundTruth::new(Shape::symmetric(1001).unwrap(), 1, None, vec![]).unwrap();
        assert!(matches!(dense_oracle(&big), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn ground_truth_rejects_non_unit_vectors() {
        let v = SparseVector::new(vec![(1, 2.0)]).unwrap();
        let r = GroundTruth::new(Shape::symmetric(2).unwrap(), 1, None, vec![Component::symmetric(1.0, v)]);
        assert!(r.is_err());
    }

    #[test]
    fn entry_map_drops_zeros() {
        let shape = Shape::symmetric(3).unwrap();
        let e = EntryMap::from_pairs(shape, [(1, 1.0), (2, 0.0), (1, -1.0), (3, 2.0)]).unwrap();
        assert_eq!(e.iter().collect::<Vec<_>>(), vec![(3, 2.0)]);
        assert!(EntryMap::from_pairs(shape, [(7, 1.0)]).is_err());
    }
}
