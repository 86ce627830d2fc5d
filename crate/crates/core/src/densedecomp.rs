//! Dense eigendecomposition and SVD of the small recovered submatrix, for
//! factors whose supports overlap.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::dense::DenseMatrix;
use crate::model::{EntryMap, SparseVector};
use crate::stage_b::{normalize_pair, normalize_symmetric, FactorComponent, RecoveredFactors, Status};
use crate::{Error, Result};

/// Convergence tolerance used by the pipeline.
pub const DEFAULT_TOL: f64 = 1e-14;
const MAX_SWEEPS: usize = 80;

/// Dense grid over the touched rows and columns of a recovered entry map.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportSubmatrix {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub grid: DenseMatrix,
    pub symmetric: bool,
}

/// Collects the recovered entries on their support; absent cells are zero
/// and a symmetric map is mirrored.
pub fn assemble_submatrix(recovered: &EntryMap) -> SupportSubmatrix {
    let symmetric = recovered.shape().is_symmetric();
    let mut rows: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cols: BTreeMap<usize, usize> = BTreeMap::new();
    for ((i, j), _) in recovered.iter_coords() {
        rows.insert(i, 0);
        cols.insert(j, 0);
        if symmetric {
            rows.insert(j, 0);
            cols.insert(i, 0);
        }
    }
    for (k, v) in rows.values_mut().enumerate() {
        *v = k;
    }
    for (k, v) in cols.values_mut().enumerate() {
        *v = k;
    }
    let mut grid = DenseMatrix::zeros(rows.len(), cols.len());
    for ((i, j), x) in recovered.iter_coords() {
        grid[(rows[&i], cols[&j])] = x;
        if symmetric {
            grid[(rows[&j], cols[&i])] = x;
        }
    }
    SupportSubmatrix {
        rows: rows.into_keys().collect(),
        cols: cols.into_keys().collect(),
        grid,
        symmetric,
    }
}

/// Eigenpairs sorted by `|λ|` descending; `vectors` holds them as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: DenseMatrix,
    pub sweeps: usize,
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix, iterated until
/// the off-diagonal Frobenius mass is at most `tol·‖A‖_F`.
pub fn sym_eigen(a: &DenseMatrix, tol: f64) -> Result<SymEigen> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Parameter("eigendecomposition needs a square matrix"));
    }
    let scale = a.max_abs().max(1.0);
    let mut asym: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            asym = asym.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    if asym > 1e-10 * scale {
        return Err(Error::NotSymmetric(asym));
    }
    let mut m = DenseMatrix::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    let mut v = DenseMatrix::identity(n);
    let norm = m.frobenius();
    let off = |m: &DenseMatrix| {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[(i, j)] * m[(i, j)];
                }
            }
        }
        libm::sqrt(s)
    };
    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS && off(&m) > tol * norm {
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + libm::sqrt(1.0 + theta * theta));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = t * c;
                for k in 0..n {
                    let (x, y) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * x - s * y;
                    m[(k, q)] = s * x + c * y;
                }
                for k in 0..n {
                    let (x, y) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * x - s * y;
                    m[(q, k)] = s * x + c * y;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for k in 0..n {
                    let (x, y) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * x - s * y;
                    v[(k, q)] = s * x + c * y;
                }
            }
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&x, &y| m[(y, y)].abs().total_cmp(&m[(x, x)].abs()));
    let values = idx.iter().map(|&i| m[(i, i)]).collect();
    let vectors = DenseMatrix::from_fn(n, n, |r, c| v[(r, idx[c])]);
    Ok(SymEigen { values, vectors, sweeps })
}

/// Thin SVD `A = U·diag(σ)·Vᵀ` with `p = min(m, n)` columns in `U` and `V`,
/// `σ` descending.
#[derive(Debug, Clone, PartialEq)]
pub struct Svd {
    pub u: DenseMatrix,
    pub sigma: Vec<f64>,
    pub v: DenseMatrix,
}

impl Svd {
    pub fn reconstruct(&self) -> DenseMatrix {
        let us = DenseMatrix::from_fn(self.u.rows(), self.sigma.len(), |i, j| self.u[(i, j)] * self.sigma[j]);
        us.matmul(&self.v.transpose())
    }
}

/// One-sided Jacobi SVD. Columns are orthogonalized until every pair has
/// cosine at most `tol`.
pub fn svd(a: &DenseMatrix, tol: f64) -> Result<Svd> {
    if a.rows() < a.cols() {
        let t = svd(&a.transpose(), tol)?;
        return Ok(Svd {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        });
    }
    let (m, n) = (a.rows(), a.cols());
    let mut u: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n).map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&u[p], &u[p]);
                let beta = dot(&u[q], &u[q]);
                let gamma = dot(&u[p], &u[q]);
                if gamma == 0.0 || gamma.abs() <= tol * libm::sqrt(alpha * beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta == 0.0 { 1.0 } else { zeta.signum() / (zeta.abs() + libm::sqrt(1.0 + zeta * zeta)) };
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = c * t;
                rotate(&mut u, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = u.iter().map(|c| libm::sqrt(dot(c, c))).collect();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let top = norms.iter().fold(0.0f64, |a, &b| a.max(b));
    let sigma: Vec<f64> = idx.iter().map(|&j| norms[j]).collect();
    // Columns with negligible σ carry no direction; they are replaced while
    // completing an orthonormal basis.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (k, &j) in idx.iter().enumerate() {
        let col = if sigma[k] > 1e-13 * top && sigma[k] > 0.0 {
            u[j].iter().map(|x| x / sigma[k]).collect()
        } else {
            vec![0.0; m]
        };
        basis.push(col);
    }
    orthonormalize(&mut basis, m);
    let ud = DenseMatrix::from_fn(m, n, |i, k| basis[k][i]);
    let vd = DenseMatrix::from_fn(n, n, |i, k| v[idx[k]][i]);
    Ok(Svd { u: ud, sigma, v: vd })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Modified Gram-Schmidt (two passes) in order; zero or dependent columns
/// are replaced by standard basis vectors independent of the earlier ones.
fn orthonormalize(cols: &mut [Vec<f64>], m: usize) {
    fn project(done: &[Vec<f64>], x: &mut [f64]) {
        for _ in 0..2 {
            for d in done {
                let c: f64 = d.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
                for (xi, di) in x.iter_mut().zip(d) {
                    *xi -= c * di;
                }
            }
        }
    }
    fn norm(x: &[f64]) -> f64 {
        libm::sqrt(x.iter().map(|v| v * v).sum())
    }
    let mut next_unit = 0;
    for k in 0..cols.len() {
        let (done, rest) = cols.split_at_mut(k);
        let col = &mut rest[0];
        project(done, col);
        let mut nn = norm(col);
        while nn <= 1e-8 && next_unit < m {
            col.iter_mut().for_each(|x| *x = 0.0);
            col[next_unit] = 1.0;
            next_unit += 1;
            project(done, col);
            nn = norm(col);
            if nn <= 0.5 {
                nn = 0.0;
            }
        }
        col.iter_mut().for_each(|x| *x /= nn);
    }
}

/// Factors read off a decomposition of the recovered submatrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedFactors {
    pub factors: RecoveredFactors,
    /// Number of values above `rank_tol·max`.
    pub numerical_rank: usize,
}

/// Coordinates with magnitude at most this are dropped from the supports.
pub const PRUNE_TOL: f64 = 1e-9;

/// Keeps components with `|value| > rank_tol·max|value|` (at most
/// `keep_rank` of them when given), embeds them at ambient indices and
/// applies the sign convention of [`normalize_symmetric`].
pub fn extract_sparse_factors(sub: &SupportSubmatrix, rank_tol: f64, keep_rank: Option<usize>) -> Result<ExtractedFactors> {
    let mut out = RecoveredFactors::default();
    if sub.grid.rows() == 0 || sub.grid.cols() == 0 || sub.grid.max_abs() == 0.0 {
        return Ok(ExtractedFactors {
            factors: out,
            numerical_rank: 0,
        });
    }
    let embed = |idx: &[usize], m: &DenseMatrix, c: usize| {
        let entries = idx.iter().enumerate().map(|(r, &i)| (i, m[(r, c)])).filter(|e| e.1.abs() > PRUNE_TOL).collect();
        SparseVector::new(entries).expect("distinct indices")
    };
    let component = |value, left, right| FactorComponent {
        value,
        left,
        right,
        status: Status::Complete,
        order: Vec::new(),
    };
    let numerical_rank;
    if sub.symmetric {
        let e = sym_eigen(&sub.grid, DEFAULT_TOL)?;
        let top = e.values[0].abs();
        numerical_rank = e.values.iter().take_while(|l| l.abs() > rank_tol * top).count();
        let keep = keep_rank.map_or(numerical_rank, |k| k.min(numerical_rank));
        for c in 0..keep {
            let v = embed(&sub.rows, &e.vectors, c);
            let (_, vh) = normalize_symmetric(&v, 1.0)?;
            out.components.push(component(e.values[c], None, vh));
        }
    } else {
        let s = svd(&sub.grid, DEFAULT_TOL)?;
        let top = s.sigma[0];
        numerical_rank = s.sigma.iter().take_while(|&&x| x > rank_tol * top).count();
        let keep = keep_rank.map_or(numerical_rank, |k| k.min(numerical_rank));
        for c in 0..keep {
            let u = embed(&sub.rows, &s.u, c);
            let v = embed(&sub.cols, &s.v, c);
            let (_, uh, vh) = normalize_pair(&u, &v)?;
            out.components.push(component(s.sigma[c], Some(uh), vh));
        }
    }
    Ok(ExtractedFactors {
        factors: out,
        numerical_rank,
    })
}
