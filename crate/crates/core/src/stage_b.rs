//! Stage B: recover factor-vector entries from the pairwise products found
//! in stage A.
//!
//! Left nodes are unknown vector entries, right nodes are recovered matrix
//! entries. Each right node touches two left nodes (a diagonal `X_jj` of a
//! symmetric matrix touches one node twice and is stored as a self-product).

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::model::{EntryMap, SparseVector};
use crate::rng::rng;
use crate::{Error, Result};

/// Which factor a left node belongs to: `Row` for `ũ`, `Col` for `ṽ`.
/// Symmetric graphs only use `Col`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Side {
    Row,
    Col,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct LeftNode {
    pub side: Side,
    /// 1-based ambient index.
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RightNode {
    /// Left endpoints; equal for a diagonal.
    pub a: usize,
    pub b: usize,
    pub value: f64,
    pub diagonal: bool,
    /// Matrix coordinates of the entry.
    pub coords: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphComponent {
    pub left: Vec<usize>,
    pub right: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProductGraph {
    symmetric: bool,
    left: Vec<LeftNode>,
    right: Vec<RightNode>,
    adj: Vec<Vec<usize>>,
    components: Vec<GraphComponent>,
    component_of: Vec<usize>,
}

impl ProductGraph {
    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn left(&self) -> &[LeftNode] {
        &self.left
    }

    pub fn right(&self) -> &[RightNode] {
        &self.right
    }

    /// Right nodes incident to left node `u` (a diagonal appears once).
    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.adj[u]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.adj[u].len()
    }

    pub fn components(&self) -> &[GraphComponent] {
        &self.components
    }

    pub fn component_of(&self, u: usize) -> usize {
        self.component_of[u]
    }

    pub fn find(&self, side: Side, index: usize) -> Option<usize> {
        self.left.binary_search(&LeftNode { side, index }).ok()
    }

    fn other(&self, r: usize, u: usize) -> usize {
        let n = &self.right[r];
        if n.a == u {
            n.b
        } else {
            n.a
        }
    }
}

/// One right node per recovered entry; components are labeled in order of
/// their lowest left node.
pub fn build_product_graph(recovered: &EntryMap) -> ProductGraph {
    let symmetric = recovered.shape().is_symmetric();
    let row_side = if symmetric { Side::Col } else { Side::Row };
    let mut ids: BTreeMap<LeftNode, usize> = BTreeMap::new();
    for ((i, j), _) in recovered.iter_coords() {
        ids.insert(LeftNode { side: row_side, index: i }, 0);
        ids.insert(LeftNode { side: Side::Col, index: j }, 0);
    }
    let left: Vec<LeftNode> = ids.keys().copied().collect();
    for (k, v) in ids.values_mut().enumerate() {
        *v = k;
    }
    let mut adj = vec![Vec::new(); left.len()];
    let mut right = Vec::with_capacity(recovered.len());
    for ((i, j), value) in recovered.iter_coords() {
        let a = ids[&LeftNode { side: row_side, index: i }];
        let b = ids[&LeftNode { side: Side::Col, index: j }];
        let r = right.len();
        right.push(RightNode {
            a,
            b,
            value,
            diagonal: a == b,
            coords: (i, j),
        });
        adj[a].push(r);
        if b != a {
            adj[b].push(r);
        }
    }
    let mut component_of = vec![usize::MAX; left.len()];
    let mut components = Vec::new();
    let mut stack = Vec::new();
    for start in 0..left.len() {
        if component_of[start] != usize::MAX {
            continue;
        }
        let c = components.len();
        let mut comp = GraphComponent {
            left: Vec::new(),
            right: Vec::new(),
        };
        component_of[start] = c;
        stack.push(start);
        while let Some(u) = stack.pop() {
            comp.left.push(u);
            for &r in &adj[u] {
                let node = right[r];
                if node.a == u {
                    comp.right.push(r);
                }
                let w = if node.a == u { node.b } else { node.a };
                if component_of[w] == usize::MAX {
                    component_of[w] = c;
                    stack.push(w);
                }
            }
        }
        comp.left.sort_unstable();
        comp.right.sort_unstable();
        components.push(comp);
    }
    ProductGraph {
        symmetric,
        left,
        right,
        adj,
        components,
        component_of,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Complete,
    /// Some left nodes stayed unknown; they are reported as zero.
    Partial,
    /// Symmetric component without a diagonal entry to start from.
    NoDiagonal,
    /// A redundant product disagreed with the peeled values.
    Inconsistent,
}

/// One recovered rank-1 term, normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorComponent {
    /// `λ̂` (signed) or `σ̂` (positive).
    pub value: f64,
    /// `û` for non-symmetric components.
    pub left: Option<SparseVector>,
    pub right: SparseVector,
    pub status: Status,
    /// Left nodes in the order they were decided.
    pub order: Vec<LeftNode>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RecoveredFactors {
    pub components: Vec<FactorComponent>,
    /// Degree-1 right nodes popped, summed over components.
    pub pops: usize,
}

impl RecoveredFactors {
    pub fn all_complete(&self) -> bool {
        self.components.iter().all(|c| c.status == Status::Complete)
    }
}

/// Start node for non-symmetric peeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitRule {
    /// Highest-degree `ũ` node, ties to the lowest index.
    #[default]
    MaxDegree,
    /// Lowest-index `ũ` node.
    LowestIndex,
}

/// Normalizes a symmetric factor: `λ̂ = sign·‖ṽ‖²`, `v̂ = ṽ/‖ṽ‖` with its
/// largest-magnitude coordinate made positive.
pub fn normalize_symmetric(v: &SparseVector, sign: f64) -> Result<(f64, SparseVector)> {
    let norm = v.norm();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroVector);
    }
    let mut out = v.scaled(1.0 / norm);
    if out.argmax_abs().is_some_and(|(_, x)| x < 0.0) {
        out.scale(-1.0);
    }
    Ok((sign * norm * norm, out))
}

/// Normalizes a pair: `σ̂ = ‖ũ‖‖ṽ‖`; the sign of `v̂`'s largest-magnitude
/// coordinate is moved into `û`.
pub fn normalize_pair(u: &SparseVector, v: &SparseVector) -> Result<(f64, SparseVector, SparseVector)> {
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 || !nu.is_finite() || !nv.is_finite() {
        return Err(Error::ZeroVector);
    }
    let mut uh = u.scaled(1.0 / nu);
    let mut vh = v.scaled(1.0 / nv);
    if vh.argmax_abs().is_some_and(|(_, x)| x < 0.0) {
        uh.scale(-1.0);
        vh.scale(-1.0);
    }
    Ok((nu * nv, uh, vh))
}

/// Per-component peeling state shared by the noiseless and noisy decoders.
struct Peeler<'g> {
    g: &'g ProductGraph,
    value: Vec<Option<f64>>,
    unknown: Vec<u8>,
    queue: Vec<usize>,
    order: Vec<usize>,
    pops: usize,
}

impl<'g> Peeler<'g> {
    fn new(g: &'g ProductGraph) -> Self {
        let unknown = g.right.iter().map(|r| if r.diagonal { 1 } else { 2 }).collect();
        Self {
            g,
            value: vec![None; g.left.len()],
            unknown,
            queue: Vec::new(),
            order: Vec::new(),
            pops: 0,
        }
    }

    /// Fixes left node `u` and queues right nodes that now have one unknown.
    /// Returns right nodes that became fully determined (redundant checks).
    fn decide(&mut self, u: usize, x: f64, checks: &mut Vec<usize>) {
        self.value[u] = Some(x);
        self.order.push(u);
        for &r in &self.g.adj[u] {
            self.unknown[r] -= 1;
            match self.unknown[r] {
                1 => self.queue.push(r),
                0 => checks.push(r),
                _ => {}
            }
        }
    }

    /// Pops a uniformly random right node with exactly one unknown endpoint.
    fn pop(&mut self, g: &mut crate::rng::Rng) -> Option<(usize, usize)> {
        while !self.queue.is_empty() {
            let k = g.random_range(0..self.queue.len());
            let r = self.queue.swap_remove(k);
            if self.unknown[r] != 1 {
                continue;
            }
            self.pops += 1;
            let node = self.g.right[r];
            let u = if self.value[node.a].is_none() { node.a } else { node.b };
            return Some((r, u));
        }
        None
    }
}

fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn sparse(g: &ProductGraph, nodes: &[usize], value: &[Option<f64>], side: Side) -> SparseVector {
    let entries = nodes
        .iter()
        .filter(|&&u| g.left[u].side == side)
        .map(|&u| (g.left[u].index, value[u].unwrap_or(0.0)))
        .collect();
    SparseVector::new(entries).expect("left nodes are distinct")
}

fn assemble(
    g: &ProductGraph,
    comp: &GraphComponent,
    value: &[Option<f64>],
    order: &[usize],
    sign: f64,
    mut status: Status,
) -> Result<FactorComponent> {
    if status == Status::Complete && comp.left.iter().any(|&u| value[u].is_none()) {
        status = Status::Partial;
    }
    let order = order.iter().filter(|&&u| g.component_of[u] == g.component_of[comp.left[0]]).map(|&u| g.left[u]).collect();
    let v = sparse(g, &comp.left, value, Side::Col);
    if g.symmetric {
        let (lambda, vh) = normalize_symmetric(&v, sign)?;
        Ok(FactorComponent {
            value: lambda,
            left: None,
            right: vh,
            status,
            order,
        })
    } else {
        let u = sparse(g, &comp.left, value, Side::Row);
        let (sigma, uh, vh) = normalize_pair(&u, &v)?;
        Ok(FactorComponent {
            value: sigma,
            left: Some(uh),
            right: vh,
            status,
            order,
        })
    }
}

fn empty_component(g: &ProductGraph, comp: &GraphComponent, status: Status) -> FactorComponent {
    let zeros = vec![None; g.left.len()];
    FactorComponent {
        value: 0.0,
        left: None,
        right: sparse(g, &comp.left, &zeros, Side::Col),
        status,
        order: Vec::new(),
    }
}

/// Sign and start node of a symmetric component: the diagonal with the
/// largest magnitude.
fn symmetric_start(g: &ProductGraph, comp: &GraphComponent) -> Option<(f64, usize, f64)> {
    comp.right
        .iter()
        .map(|&r| g.right[r])
        .filter(|n| n.diagonal && n.value != 0.0)
        .max_by(|x, y| x.value.abs().total_cmp(&y.value.abs()))
        .map(|n| (n.value.signum(), n.a, libm::sqrt(n.value.abs())))
}

fn nonsymmetric_start(g: &ProductGraph, comp: &GraphComponent, rule: InitRule) -> Option<usize> {
    let rows = comp.left.iter().copied().filter(|&u| g.left[u].side == Side::Row);
    match rule {
        // Left nodes are sorted, so the first maximum has the lowest index.
        InitRule::MaxDegree => rows.fold(None, |best: Option<usize>, u| match best {
            Some(b) if g.degree(b) >= g.degree(u) => Some(b),
            _ => Some(u),
        }),
        InitRule::LowestIndex => rows.min_by_key(|&u| g.left[u].index),
    }
}

/// Exact peeling for symmetric graphs.
pub fn peel_symmetric(g: &ProductGraph, seed: u64) -> Result<RecoveredFactors> {
    if !g.symmetric {
        return Err(Error::Parameter("graph is not symmetric"));
    }
    peel(g, seed, InitRule::MaxDegree)
}

/// Exact peeling for non-symmetric graphs, starting each component at a
/// `ũ` node set to 1.
pub fn peel_nonsymmetric(g: &ProductGraph, seed: u64, rule: InitRule) -> Result<RecoveredFactors> {
    if g.symmetric {
        return Err(Error::Parameter("graph is symmetric"));
    }
    peel(g, seed, rule)
}

const CHECK_TOL: f64 = 1e-6;

fn peel(g: &ProductGraph, seed: u64, rule: InitRule) -> Result<RecoveredFactors> {
    let mut out = RecoveredFactors::default();
    let mut p = Peeler::new(g);
    let mut rg = rng(seed);
    let mut checks = Vec::new();
    for comp in &g.components {
        let (sign, start, x0) = if g.symmetric {
            match symmetric_start(g, comp) {
                Some(s) => s,
                None => {
                    out.components.push(empty_component(g, comp, Status::NoDiagonal));
                    continue;
                }
            }
        } else {
            match nonsymmetric_start(g, comp, rule) {
                Some(u) => (1.0, u, 1.0),
                None => continue,
            }
        };
        let mut status = Status::Complete;
        let order_start = p.order.len();
        checks.clear();
        p.decide(start, x0, &mut checks);
        loop {
            for &r in &checks {
                let n = g.right[r];
                let (va, vb) = (p.value[n.a].unwrap(), p.value[n.b].unwrap());
                if relative_gap(va * vb, sign * n.value) > CHECK_TOL || sign * n.value < 0.0 && n.diagonal {
                    status = Status::Inconsistent;
                }
            }
            checks.clear();
            let Some((r, u)) = p.pop(&mut rg) else {
                break;
            };
            let known = p.value[g.other(r, u)].unwrap();
            let x = if known == 0.0 { 0.0 } else { sign * g.right[r].value / known };
            p.decide(u, x, &mut checks);
        }
        let order = p.order[order_start..].to_vec();
        out.components.push(assemble(g, comp, &p.value, &order, sign, status)?);
    }
    out.pops = p.pops;
    Ok(out)
}

/// Noisy stage B: values are first assigned in peeling order as averages of
/// the ratio messages from already-decided neighbours, then refined by
/// `sweeps` synchronous averaging rounds. Ratios whose denominator is below
/// `eps_div` times the component's largest entry are skipped.
pub fn message_passing_noisy(g: &ProductGraph, sweeps: usize, eps_div: f64, seed: u64) -> Result<RecoveredFactors> {
    if sweeps == 0 {
        return Err(Error::Parameter("sweeps must be at least 1"));
    }
    let mut out = RecoveredFactors::default();
    let mut p = Peeler::new(g);
    let mut rg = rng(seed);
    let mut checks = Vec::new();
    for comp in &g.components {
        let (sign, start, x0) = if g.symmetric {
            match symmetric_start(g, comp) {
                Some(s) => s,
                None => {
                    out.components.push(empty_component(g, comp, Status::NoDiagonal));
                    continue;
                }
            }
        } else {
            match nonsymmetric_start(g, comp, InitRule::MaxDegree) {
                Some(u) => (1.0, u, 1.0),
                None => continue,
            }
        };
        let order_start = p.order.len();
        p.decide(start, x0, &mut checks);
        while let Some((_, u)) = p.pop(&mut rg) {
            let (mut sum, mut count) = (0.0, 0usize);
            for &r in &g.adj[u] {
                let n = g.right[r];
                if n.diagonal {
                    continue;
                }
                if let Some(w) = p.value[g.other(r, u)] {
                    if w != 0.0 {
                        sum += sign * n.value / w;
                        count += 1;
                    }
                }
            }
            let x = if count > 0 { sum / count as f64 } else { 0.0 };
            p.decide(u, x, &mut checks);
        }
        checks.clear();

        let scale = comp.left.iter().filter_map(|&u| p.value[u]).fold(0.0f64, |m, x| m.max(x.abs()));
        let floor = eps_div * scale;
        let mut next: Vec<Option<f64>> = p.value.clone();
        for _ in 0..sweeps {
            for &u in &comp.left {
                let Some(cur) = p.value[u] else { continue };
                let (mut sum, mut count) = (0.0, 0usize);
                for &r in &g.adj[u] {
                    let n = g.right[r];
                    let w = if n.diagonal { Some(cur) } else { p.value[g.other(r, u)] };
                    if let Some(w) = w {
                        if w.abs() >= floor && w != 0.0 {
                            sum += sign * n.value / w;
                            count += 1;
                        }
                    }
                }
                next[u] = Some(if count > 0 { sum / count as f64 } else { cur });
            }
            for &u in &comp.left {
                p.value[u] = next[u];
            }
        }
        let order = p.order[order_start..].to_vec();
        out.components.push(assemble(g, comp, &p.value, &order, sign, Status::Complete)?);
    }
    out.pops = p.pops;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Shape;
    use alloc::vec::Vec;

    fn sym(n: usize, coords: &[((usize, usize), f64)]) -> EntryMap {
        let shape = Shape::symmetric(n).unwrap();
        EntryMap::from_pairs(shape, coords.iter().map(|&((i, j), v)| (shape.index(i, j).unwrap(), v))).unwrap()
    }

    fn nonsym(n1: usize, n2: usize, coords: &[((usize, usize), f64)]) -> EntryMap {
        let shape = Shape::non_symmetric(n1, n2).unwrap();
        EntryMap::from_pairs(shape, coords.iter().map(|&((i, j), v)| (shape.index(i, j).unwrap(), v))).unwrap()
    }

    fn close(a: &SparseVector, b: &[(usize, f64)], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|((i, x), &(j, y))| i == j && (x - y).abs() <= tol)
    }

    #[test]
    fn single_product_graph() {
        let g = build_product_graph(&sym(3, &[((1, 2), 5.0)]));
        assert_eq!(g.left().len(), 2);
        assert_eq!(g.right().len(), 1);
        assert_eq!(g.components().len(), 1);
    }

    fn fig2() -> EntryMap {
        let v = [0.0, 1.5, -2.0, 0.5, 3.0, 1.25];
        let p = |i: usize, j: usize| ((i, j), v[i] * v[j]);
        sym(6, &[p(1, 4), p(2, 3), p(2, 5), p(4, 5), p(4, 4)])
    }

    #[test]
    fn fig2_degrees_and_order() {
        let g = build_product_graph(&fig2());
        let deg = |i| g.degree(g.find(Side::Col, i).unwrap());
        assert_eq!((deg(1), deg(2), deg(3), deg(5)), (1, 2, 1, 2));
        let mut caption_order_seen = false;
        for seed in 0..20 {
            let f = peel_symmetric(&g, seed).unwrap();
            let c = &f.components[0];
            assert_eq!(c.status, Status::Complete);
            let idx: Vec<usize> = c.order.iter().map(|n| n.index).collect();
            let pos = |i| idx.iter().position(|&x| x == i).unwrap();
            assert_eq!(idx[0], 4);
            assert!(pos(5) < pos(2) && pos(2) < pos(3));
            caption_order_seen |= idx == [4, 1, 5, 2, 3];
            let n = libm::sqrt(1.5f64 * 1.5 + 4.0 + 0.25 + 9.0 + 1.25 * 1.25);
            assert!((c.value - n * n).abs() < 1e-12);
            let expect: Vec<(usize, f64)> = [(1, 1.5), (2, -2.0), (3, 0.5), (4, 3.0), (5, 1.25)].iter().map(|&(i, x)| (i, x / n)).collect();
            assert!(close(&c.right, &expect, 1e-12));
        }
        assert!(caption_order_seen);
    }

    #[test]
    fn two_node_chains_with_both_signs() {
        let f = peel_symmetric(&build_product_graph(&sym(3, &[((1, 1), 4.0), ((1, 2), 6.0)])), 0).unwrap();
        let s = libm::sqrt(13.0);
        assert!((f.components[0].value - 13.0).abs() < 1e-12);
        assert!(close(&f.components[0].right, &[(1, 2.0 / s), (2, 3.0 / s)], 1e-12));
        let f = peel_symmetric(&build_product_graph(&sym(3, &[((1, 1), -4.0), ((1, 2), -6.0)])), 0).unwrap();
        assert!((f.components[0].value + 13.0).abs() < 1e-12);
        assert!(close(&f.components[0].right, &[(1, 2.0 / s), (2, 3.0 / s)], 1e-12));
    }

    #[test]
    fn missing_diagonal_is_reported() {
        let f = peel_symmetric(&build_product_graph(&sym(3, &[((1, 2), 6.0)])), 0).unwrap();
        assert_eq!(f.components[0].status, Status::NoDiagonal);
    }

    #[test]
    fn inconsistent_diagonal_is_flagged() {
        let f = peel_symmetric(&build_product_graph(&sym(3, &[((1, 1), 4.0), ((1, 2), 6.0), ((2, 2), 10.0)])), 0).unwrap();
        assert_eq!(f.components[0].status, Status::Inconsistent);
    }

    #[test]
    fn nonsymmetric_single_product() {
        let f = peel_nonsymmetric(&build_product_graph(&nonsym(2, 3, &[((1, 2), 6.0)])), 0, InitRule::MaxDegree).unwrap();
        let c = &f.components[0];
        assert_eq!(c.value, 6.0);
        assert!(close(c.left.as_ref().unwrap(), &[(1, 1.0)], 0.0));
        assert!(close(&c.right, &[(2, 1.0)], 0.0));
    }

    #[test]
    fn fig3_components_peel_from_u1() {
        let u = [0.0, 2.0, -1.0, 0.5, 3.0];
        let v = [0.0, 1.0, -2.5, 4.0];
        let p = |i: usize, j: usize| ((i, j), u[i] * v[j]);
        let g = build_product_graph(&nonsym(4, 3, &[p(1, 1), p(4, 1), p(3, 2), p(1, 3), p(2, 2)]));
        assert_eq!(g.components().len(), 2);
        let node = |side, index| LeftNode { side, index };
        let caption = [node(Side::Row, 1), node(Side::Col, 1), node(Side::Col, 3), node(Side::Row, 4)];
        let mut caption_order_seen = false;
        for seed in 0..20 {
            let f = peel_nonsymmetric(&g, seed, InitRule::LowestIndex).unwrap();
            let first = &f.components[0];
            assert_eq!(first.order[0], node(Side::Row, 1));
            let mut sorted = first.order.clone();
            sorted.sort();
            let mut expect = caption.to_vec();
            expect.sort();
            assert_eq!(sorted, expect);
            let pos = |n| first.order.iter().position(|&x| x == n).unwrap();
            assert!(pos(node(Side::Col, 1)) < pos(node(Side::Row, 4)));
            caption_order_seen |= first.order == caption;
            assert_eq!(first.status, Status::Complete);
            assert_eq!(f.components[1].order.len(), 3);
            assert_eq!(f.components[1].status, Status::Complete);
        }
        assert!(caption_order_seen);
    }

    #[test]
    fn normalize_examples() {
        let v = SparseVector::new(vec![(1, 3.0), (2, 4.0)]).unwrap();
        let (l, vh) = normalize_symmetric(&v, 1.0).unwrap();
        assert!((l - 25.0).abs() < 1e-12 && close(&vh, &[(1, 0.6), (2, 0.8)], 1e-15));
        let (l, vh) = normalize_symmetric(&v.scaled(-1.0), 1.0).unwrap();
        assert!((l - 25.0).abs() < 1e-12 && close(&vh, &[(1, 0.6), (2, 0.8)], 1e-15));
        let u = SparseVector::new(vec![(1, 2.0), (2, 0.0)]).unwrap();
        let w = SparseVector::new(vec![(1, 0.0), (2, 1.5)]).unwrap();
        let (s, uh, wh) = normalize_pair(&u, &w).unwrap();
        assert_eq!(s, 3.0);
        assert!(close(&uh, &[(1, 1.0), (2, 0.0)], 0.0) && close(&wh, &[(1, 0.0), (2, 1.0)], 0.0));
        assert_eq!(normalize_symmetric(&SparseVector::default(), 1.0), Err(Error::ZeroVector));
    }

    #[test]
    fn message_passing_matches_peeling_without_noise() {
        let m = fig2();
        let g = build_product_graph(&m);
        let a = peel_symmetric(&g, 1).unwrap();
        let b = message_passing_noisy(&g, 10, 1e-9, 1).unwrap();
        assert!((a.components[0].value - b.components[0].value).abs() < 1e-10);
        for ((_, x), (_, y)) in a.components[0].right.iter().zip(b.components[0].right.iter()) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn degenerate_ratios_keep_phase_one_value() {
        // ṽ = (1e-10, 2, 1000): node 2's only message divides by ṽ1, which is
        // below 1e-9 of the component scale, so node 2 keeps its phase-1 value.
        let m = sym(3, &[((3, 3), 1e6), ((1, 3), 1e-7), ((1, 2), 2e-10)]);
        let g = build_product_graph(&m);
        let f = message_passing_noisy(&g, 10, 1e-9, 0).unwrap();
        let v = &f.components[0].right;
        assert!((v.get(2) / v.get(3) - 0.002).abs() < 1e-12);
    }
}
