//! Random planted instances following the experimental protocols.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::model::{Component, GroundTruth, Shape, SparseVector};
use crate::rng::{derive, rng, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupportMode {
    Disjoint,
    Overlapping,
}

/// Distribution of the factor nonzeros.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueModel {
    /// `½N(-5,1) + ½N(5,1)`, vectors normalized; `λ = ±U[1,10]` or
    /// `σ = U[1,10]`.
    Mixture,
    /// Unnormalized entries uniform on `{±10, ±20, …, ±50}`; the value is the
    /// product of the norms.
    Alphabet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceSpec {
    pub shape: Shape,
    /// Nonzeros per left (or symmetric) vector.
    pub k: usize,
    /// Right vectors of non-symmetric instances have `round(β·k)` nonzeros.
    pub beta: f64,
    pub r: usize,
    pub supports: SupportMode,
    pub values: ValueModel,
}

impl InstanceSpec {
    /// Nonzeros per right vector.
    pub fn right_k(&self) -> usize {
        if self.shape.is_symmetric() {
            self.k
        } else {
            libm::round(self.beta * self.k as f64) as usize
        }
    }

    /// Expected eigenvalue (or singular value) under [`ValueModel::Alphabet`]:
    /// `E‖ṽ‖² = 1100·k` per factor.
    pub fn mean_alphabet_value(&self) -> f64 {
        if self.shape.is_symmetric() {
            1100.0 * self.k as f64
        } else {
            1100.0 * libm::sqrt((self.k * self.right_k()) as f64)
        }
    }
}

const ALPHABET: [f64; 5] = [10.0, 20.0, 30.0, 40.0, 50.0];
const MAX_ATTEMPTS: usize = 10_000;

fn draw_value(g: &mut Rng, model: ValueModel) -> f64 {
    match model {
        ValueModel::Mixture => {
            let z: f64 = g.sample(StandardNormal);
            if g.random::<bool>() {
                5.0 + z
            } else {
                -5.0 + z
            }
        }
        ValueModel::Alphabet => {
            let x = ALPHABET[g.random_range(0..ALPHABET.len())];
            if g.random::<bool>() {
                x
            } else {
                -x
            }
        }
    }
}

/// Draws the supports of `r` vectors of `k` nonzeros over `[n]`.
fn supports(g: &mut Rng, n: usize, k: usize, r: usize, mode: SupportMode) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > n {
        return Err(Error::Infeasible("sparsity exceeds dimension"));
    }
    match mode {
        SupportMode::Disjoint => {
            if r * k > n {
                return Err(Error::Infeasible("r·k exceeds the dimension for disjoint supports"));
            }
            let all = sample(g, n, r * k).into_vec();
            Ok(all.chunks(k).map(|c| c.iter().map(|i| i + 1).collect()).collect())
        }
        SupportMode::Overlapping => Ok((0..r).map(|_| sample(g, n, k).into_iter().map(|i| i + 1).collect()).collect()),
    }
}

/// Makes `x` orthogonal to every vector in `prev` by the minimum-norm change
/// on the coordinates `x` shares with them. Returns `false` when the change
/// is impossible or pushes a shared coordinate towards zero.
fn orthogonalize(x: &mut [(usize, f64)], prev: &[SparseVector]) -> bool {
    let scale = x.iter().fold(0.0f64, |m, e| m.max(e.1.abs()));
    let mut shared: Vec<usize> = Vec::new();
    for (p, &(i, _)) in x.iter().enumerate() {
        if prev.iter().any(|v| v.get(i) != 0.0) {
            shared.push(p);
        }
    }
    let current = SparseVector::new(x.to_vec()).expect("distinct support");
    let rows: Vec<(&SparseVector, f64)> = prev.iter().map(|v| (v, v.dot(&current))).filter(|(v, _)| shared.iter().any(|&p| v.get(x[p].0) != 0.0)).collect();
    if rows.is_empty() {
        return true;
    }
    let (t, s) = (rows.len(), shared.len());
    if s < t {
        return false;
    }
    // A is t×s with A[a][c] = prev_a at shared coordinate c; solve
    // (A Aᵀ) y = -b, then δ = Aᵀ y.
    let a: Vec<Vec<f64>> = rows.iter().map(|(v, _)| shared.iter().map(|&p| v.get(x[p].0)).collect()).collect();
    let mut m = vec![vec![0.0; t + 1]; t];
    for i in 0..t {
        for j in 0..t {
            m[i][j] = a[i].iter().zip(&a[j]).map(|(p, q)| p * q).sum();
        }
        m[i][t] = -rows[i].1;
    }
    let Some(y) = solve(&mut m) else {
        return false;
    };
    for (c, &p) in shared.iter().enumerate() {
        let delta: f64 = (0..t).map(|i| a[i][c] * y[i]).sum();
        x[p].1 += delta;
        if x[p].1.abs() < 1e-2 * scale {
            return false;
        }
    }
    true
}

/// Gaussian elimination with partial pivoting on an augmented `t×(t+1)`
/// system.
fn solve(m: &mut [Vec<f64>]) -> Option<Vec<f64>> {
    let t = m.len();
    let scale = m.iter().flat_map(|r| r[..t].iter()).fold(0.0f64, |a, b| a.max(b.abs()));
    for col in 0..t {
        let piv = (col..t).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() <= 1e-10 * scale {
            return None;
        }
        m.swap(col, piv);
        for row in col + 1..t {
            let f = m[row][col] / m[col][col];
            let (top, bottom) = m.split_at_mut(row);
            for (x, &p) in bottom[0][col..].iter_mut().zip(&top[col][col..]) {
                *x -= f * p;
            }
        }
    }
    let mut y = vec![0.0; t];
    for row in (0..t).rev() {
        let s: f64 = (row + 1..t).map(|c| m[row][c] * y[c]).sum();
        y[row] = (m[row][t] - s) / m[row][row];
    }
    Some(y)
}

/// Draws `r` vectors of `k` nonzeros over `[n]`, mutually orthogonal when
/// supports overlap. Returned vectors are unnormalized.
fn draw_side(g: &mut Rng, n: usize, k: usize, r: usize, spec: &InstanceSpec) -> Result<Vec<SparseVector>> {
    let mut out: Vec<SparseVector> = Vec::with_capacity(r);
    let supp = supports(g, n, k, r, spec.supports)?;
    for s in supp {
        let mut support = s;
        let mut attempts = 0;
        loop {
            let mut x: Vec<(usize, f64)> = support.iter().map(|&i| (i, draw_value(g, spec.values))).collect();
            x.sort_by_key(|e| e.0);
            let normalized: Vec<SparseVector> = out.iter().map(|v| v.scaled(1.0 / v.norm())).collect();
            if spec.supports == SupportMode::Disjoint || orthogonalize(&mut x, &normalized) {
                out.push(SparseVector::new(x).expect("distinct support"));
                break;
            }
            attempts += 1;
            if attempts >= MAX_ATTEMPTS {
                return Err(Error::Infeasible("could not draw an orthogonal overlapping vector"));
            }
            support = sample(g, n, k).into_iter().map(|i| i + 1).collect();
        }
    }
    Ok(out)
}

/// Generates a planted instance; every draw derives from `seed`.
pub fn gen_instance(spec: &InstanceSpec, seed: u64) -> Result<GroundTruth> {
    if spec.r == 0 {
        return Err(Error::Parameter("rank must be at least 1"));
    }
    let mut g = rng(derive(seed, 0x494e_5354));
    let beta = (!spec.shape.is_symmetric()).then_some(spec.beta);
    let mut components = Vec::with_capacity(spec.r);
    match spec.shape {
        Shape::Symmetric { n } => {
            let vs = draw_side(&mut g, n, spec.k, spec.r, spec)?;
            for v in vs {
                let norm = v.norm();
                let value = match spec.values {
                    ValueModel::Mixture => {
                        let mag = g.random_range(1.0..=10.0);
                        if g.random::<bool>() {
                            mag
                        } else {
                            -mag
                        }
                    }
                    ValueModel::Alphabet => norm * norm,
                };
                components.push(Component::symmetric(value, v.scaled(1.0 / norm)));
            }
        }
        Shape::NonSymmetric { n1, n2 } => {
            let kr = spec.right_k();
            if kr == 0 {
                return Err(Error::Parameter("β·k rounds to zero nonzeros"));
            }
            let us = draw_side(&mut g, n1, spec.k, spec.r, spec)?;
            let vs = draw_side(&mut g, n2, kr, spec.r, spec)?;
            for (u, v) in us.into_iter().zip(vs) {
                let (nu, nv) = (u.norm(), v.norm());
                let value = match spec.values {
                    ValueModel::Mixture => g.random_range(1.0..=10.0),
                    ValueModel::Alphabet => nu * nv,
                };
                components.push(Component::non_symmetric(value, u.scaled(1.0 / nu), v.scaled(1.0 / nv)));
            }
        }
    }
    GroundTruth::new(spec.shape, spec.k, beta, components)
}
