//! End-to-end trial plumbing: operator construction, measurement, recovery
//! and scoring.

use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::densedecomp::{assemble_submatrix, extract_sparse_factors};
use crate::instance::{gen_instance, InstanceSpec, SupportMode};
use crate::model::{expand_ground_truth, EntryMap, GroundTruth, Shape, SparseVector};
use crate::rng::derive;
use crate::sizing::{SizeInput, SketchRule, SketchSize};
use crate::sketcher::{
    row_adjacency, sketch_noiseless, sketch_noisy, BinNoiseFactors, ColumnSource, DftDetector, DftSketch, GaussianDetector, GaussianSketch, NoiseField,
    ParityCheck, RowAdjacency,
};
use crate::stage_a::{peel_noiseless, peel_noisy, NoiselessParams, NoisyParams, StageAResult};
use crate::stage_b::{
    build_product_graph, message_passing_noisy, normalize_pair, normalize_symmetric, peel_nonsymmetric, peel_symmetric, InitRule,
    RecoveredFactors, Status,
};
use crate::{Error, Result};

/// Absolute tolerance of the exact-recovery check.
pub const EXACT_TOL: f64 = 1e-7;
/// Relative cut for the numerical rank of a recovered submatrix.
pub const RANK_TOL: f64 = 1e-8;
/// Largest `N(j)` table the noisy decoder will materialize.
pub const ADJACENCY_CAP: u64 = 1 << 28;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoisySettings {
    pub sigma: f64,
    pub p: usize,
    pub gamma0: f64,
    pub gamma1: f64,
    pub sweeps: usize,
    /// Ratio messages with denominators below this fraction of the
    /// component's largest entry are skipped.
    pub eps_div: f64,
    /// Draw bin noise from per-bin covariance factors instead of summing
    /// `ñ` noisy columns for every sketch.
    pub aggregate: bool,
}

impl NoisySettings {
    pub fn new(sigma: f64, p: usize) -> Self {
        Self {
            sigma,
            p,
            gamma0: 5.0,
            gamma1: 1.5,
            sweeps: 10,
            eps_div: 1e-3,
            aggregate: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regime {
    Noiseless,
    Noisy(NoisySettings),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub instance: InstanceSpec,
    pub delta: f64,
    pub d: usize,
    pub rule: SketchRule,
    pub regime: Regime,
    /// Stop stage A once this fraction of the `r·k̃` (or `r·βk²`) entries is
    /// recovered.
    pub early_stop: Option<f64>,
}

impl PipelineConfig {
    pub fn size_input(&self) -> SizeInput {
        SizeInput {
            symmetric: self.instance.shape.is_symmetric(),
            k: self.instance.k,
            beta: self.instance.beta,
            r: self.instance.r,
            supports: self.instance.supports,
            delta: self.delta,
            d: self.d,
            noisy_p: match self.regime {
                Regime::Noiseless => None,
                Regime::Noisy(s) => Some(s.p),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.size_input().validate()?;
        if let Regime::Noisy(s) = self.regime {
            if !(s.sigma >= 0.0 && s.sigma.is_finite()) {
                return Err(Error::Parameter("σ must be finite and non-negative"));
            }
            if s.gamma1 > s.gamma0 {
                return Err(Error::Parameter("γ1 must not exceed γ0"));
            }
            if s.sweeps == 0 {
                return Err(Error::Parameter("sweeps must be at least 1"));
            }
        }
        if let Some(f) = self.early_stop {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Parameter("early-termination fraction must lie in (0, 1]"));
            }
        }
        Ok(())
    }

    pub fn size(&self) -> Result<SketchSize> {
        self.size_input().size(self.rule)
    }

    fn target(&self) -> Option<usize> {
        let total = self.instance.r as f64 * self.size_input().block_nonzeros();
        self.early_stop.map(|f| libm::ceil(f * total) as usize)
    }
}

/// Seeds of one trial, all derived from the trial seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialSeeds {
    pub instance: u64,
    pub parity: u64,
    pub detector: u64,
    pub noise: u64,
    pub stage_a: u64,
    pub stage_b: u64,
}

impl TrialSeeds {
    pub fn new(seed: u64) -> Self {
        Self {
            instance: derive(seed, 1),
            parity: derive(seed, 2),
            detector: derive(seed, 3),
            noise: derive(seed, 4),
            stage_a: derive(seed, 5),
            stage_b: derive(seed, 6),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Detector {
    Dft(DftDetector),
    Gaussian {
        det: GaussianDetector,
        adjacency: Arc<RowAdjacency>,
        /// Built for at least `det.p()` rows.
        noise: Option<Arc<BinNoiseFactors>>,
    },
}

/// The sketching operator `B`; `h` is `None` when there are fewer than `d`
/// bins and nothing can be measured.
#[derive(Debug, Clone)]
pub struct Operator {
    pub shape: Shape,
    pub size: SketchSize,
    pub h: Option<ParityCheck>,
    pub detector: Detector,
}

impl Operator {
    pub fn build(config: &PipelineConfig, parity_seed: u64, detector_seed: u64) -> Result<Self> {
        config.validate()?;
        let shape = config.instance.shape;
        let size = config.size()?;
        let n_cols = shape.n_cols();
        let h = if size.bins >= config.d {
            Some(ParityCheck::new(n_cols, size.bins, config.d, parity_seed)?)
        } else {
            None
        };
        let detector = match config.regime {
            Regime::Noiseless => Detector::Dft(DftDetector::new(n_cols)?),
            Regime::Noisy(s) => {
                let det = GaussianDetector::new(n_cols, s.p, detector_seed)?;
                let (adjacency, noise) = match &h {
                    Some(h) => {
                        let adj = row_adjacency(h, ADJACENCY_CAP)?;
                        let noise = if s.aggregate { Some(Arc::new(BinNoiseFactors::build(h, &det)?)) } else { None };
                        (adj, noise)
                    }
                    None => (RowAdjacency::default(), None),
                };
                Detector::Gaussian {
                    det,
                    adjacency: Arc::new(adjacency),
                    noise,
                }
            }
        };
        Ok(Self { shape, size, h, detector })
    }

    /// The same operator restricted to the first `p` detector rows; shares
    /// the parity check, adjacency and noise factors.
    pub fn with_rows(&self, p: usize) -> Result<Self> {
        let Detector::Gaussian { det, adjacency, noise } = &self.detector else {
            return Err(Error::Parameter("only Gaussian detectors have selectable rows"));
        };
        if p == 0 || p > det.p() {
            return Err(Error::Parameter("row count must be in 1..=P"));
        }
        let mut size = self.size;
        size.per_bin = p;
        size.m = size.bins * p;
        Ok(Self {
            shape: self.shape,
            size,
            h: self.h,
            detector: Detector::Gaussian {
                det: GaussianDetector::new(det.n_cols(), p, det.seed())?,
                adjacency: adjacency.clone(),
                noise: noise.clone(),
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sketch {
    Dft(DftSketch),
    Gaussian(GaussianSketch),
}

/// Sketches `X₀` (plus noise of level `sigma` under a Gaussian detector).
pub fn measure(op: &Operator, gt: &GroundTruth, sigma: f64, noise_seed: u64) -> Result<Sketch> {
    let entries = expand_ground_truth(gt);
    let Some(h) = &op.h else {
        return Ok(match op.detector {
            Detector::Dft(_) => Sketch::Dft(DftSketch::zeros(op.size.bins)),
            Detector::Gaussian { det, .. } => Sketch::Gaussian(GaussianSketch::zeros(op.size.bins, det.p())),
        });
    };
    match &op.detector {
        Detector::Dft(_) => Ok(Sketch::Dft(sketch_noiseless(h, &entries)?)),
        Detector::Gaussian { det, noise, .. } => match noise {
            Some(factors) if sigma > 0.0 => {
                let mut sk = sketch_noisy(h, det, &entries, NoiseField { sigma: 0.0, seed: 0 })?;
                factors.add_noise(&mut sk, sigma, noise_seed)?;
                Ok(Sketch::Gaussian(sk))
            }
            _ => Ok(Sketch::Gaussian(sketch_noisy(h, det, &entries, NoiseField { sigma, seed: noise_seed })?)),
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recovery {
    pub stage_a: StageAResult,
    pub factors: RecoveredFactors,
}

/// Runs stage A and then stage B (disjoint supports) or the dense
/// decomposition (overlapping supports).
pub fn recover(config: &PipelineConfig, op: &Operator, sketch: &Sketch, seeds: &TrialSeeds) -> Result<Recovery> {
    let shape = op.shape;
    let Some(h) = &op.h else {
        return Ok(Recovery {
            stage_a: StageAResult::empty(shape),
            factors: RecoveredFactors::default(),
        });
    };
    let target = config.target();
    let stage_a = match (sketch, &op.detector, config.regime) {
        (Sketch::Dft(sk), Detector::Dft(_), Regime::Noiseless) => {
            let params = NoiselessParams {
                seed: seeds.stage_a,
                target,
                ..NoiselessParams::default()
            };
            peel_noiseless(sk, h, shape, &params)?
        }
        (Sketch::Gaussian(sk), Detector::Gaussian { det, adjacency, .. }, Regime::Noisy(s)) => {
            let params = NoisyParams {
                sigma: s.sigma,
                gamma0: s.gamma0,
                gamma1: s.gamma1,
                seed: seeds.stage_a,
                target,
            };
            peel_noisy(sk, h, adjacency, det, shape, &params)?
        }
        _ => return Err(Error::Parameter("sketch, detector and regime disagree")),
    };
    let factors = match (config.instance.supports, config.regime) {
        (SupportMode::Disjoint, Regime::Noiseless) => {
            let g = build_product_graph(&stage_a.recovered);
            if shape.is_symmetric() {
                peel_symmetric(&g, seeds.stage_b)?
            } else {
                peel_nonsymmetric(&g, seeds.stage_b, InitRule::MaxDegree)?
            }
        }
        (SupportMode::Disjoint, Regime::Noisy(s)) => {
            let g = build_product_graph(&stage_a.recovered);
            match message_passing_noisy(&g, s.sweeps, s.eps_div, seeds.stage_b) {
                Err(Error::ZeroVector) => RecoveredFactors::default(),
                other => other?,
            }
        }
        (SupportMode::Overlapping, regime) => {
            let sub = assemble_submatrix(&stage_a.recovered);
            let keep = match regime {
                Regime::Noiseless => None,
                Regime::Noisy(_) => Some(config.instance.r),
            };
            extract_sparse_factors(&sub, RANK_TOL, keep)?.factors
        }
    };
    Ok(Recovery { stage_a, factors })
}

/// `Σ value·left·rightᵀ` over the recovered components, on the support.
pub fn reconstruct(shape: Shape, factors: &RecoveredFactors) -> Result<EntryMap> {
    let mut pairs = Vec::new();
    for c in &factors.components {
        let left = c.left.as_ref().unwrap_or(&c.right);
        for (i, a) in left.iter() {
            for (j, b) in c.right.iter() {
                if shape.is_symmetric() && j < i {
                    continue;
                }
                pairs.push((shape.index(i, j)?, c.value * a * b));
            }
        }
    }
    EntryMap::from_pairs(shape, pairs)
}

/// `‖X̂₀ − X₀‖²_F / ‖X₀‖²_F`.
pub fn nmse(truth: &EntryMap, estimate: &EntryMap) -> Result<f64> {
    let diff = EntryMap::from_pairs(truth.shape(), truth.iter().chain(estimate.iter().map(|(l, x)| (l, -x))))?;
    let base = truth.frobenius_sq();
    Ok(if base == 0.0 { diff.frobenius_sq() } else { diff.frobenius_sq() / base })
}

/// Truth in the sign convention of the decoders: `(value, left, right)`.
fn canonical_truth(gt: &GroundTruth) -> Result<Vec<(f64, Option<SparseVector>, SparseVector)>> {
    gt.components()
        .iter()
        .map(|c| match &c.left {
            None => {
                let (_, v) = normalize_symmetric(&c.right, 1.0)?;
                Ok((c.value, None, v))
            }
            Some(u) => {
                let (_, uh, vh) = normalize_pair(u, &c.right)?;
                Ok((c.value, Some(uh), vh))
            }
        })
        .collect()
}

fn vectors_match(a: &SparseVector, b: &SparseVector, tol: f64) -> bool {
    a.nnz() == b.nnz() && a.iter().zip(b.iter()).all(|((i, x), (j, y))| i == j && (x - y).abs() <= tol)
}

fn overlap(a: &SparseVector, b: &SparseVector) -> usize {
    a.support().filter(|&i| b.get(i) != 0.0).count()
}

/// Exact-recovery check: components are matched greedily by closest value
/// (support overlap breaks ties); every match must agree on supports, on
/// every nonzero and on the value within `tol`.
pub fn exact_match(gt: &GroundTruth, found: &RecoveredFactors, tol: f64) -> Result<bool> {
    let truth = canonical_truth(gt)?;
    let comps = &found.components;
    if comps.len() != truth.len() || comps.iter().any(|c| c.status != Status::Complete) {
        return Ok(false);
    }
    let mut pairs = Vec::with_capacity(truth.len() * comps.len());
    for (t, (tv, _, tr)) in truth.iter().enumerate() {
        for (f, c) in comps.iter().enumerate() {
            pairs.push(((tv - c.value).abs(), usize::MAX - overlap(tr, &c.right), t, f));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut used_t = alloc::vec![false; truth.len()];
    let mut used_f = alloc::vec![false; comps.len()];
    for (_, _, t, f) in pairs {
        if used_t[t] || used_f[f] {
            continue;
        }
        used_t[t] = true;
        used_f[f] = true;
        let (tv, tl, tr) = &truth[t];
        let c = &comps[f];
        if (tv - c.value).abs() > tol || !vectors_match(tr, &c.right, tol) {
            return Ok(false);
        }
        match (tl, &c.left) {
            (None, None) => {}
            (Some(a), Some(b)) if vectors_match(a, b, tol) => {}
            _ => return Ok(false),
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub success: bool,
    pub nmse: f64,
    /// Stage-A fraction of the true nonzero (upper-triangular) entries.
    pub stage_a_fraction: f64,
}

pub fn evaluate(gt: &GroundTruth, recovery: &Recovery) -> Result<Evaluation> {
    let truth = expand_ground_truth(gt);
    let estimate = reconstruct(gt.shape(), &recovery.factors)?;
    Ok(Evaluation {
        success: exact_match(gt, &recovery.factors, EXACT_TOL)?,
        nmse: nmse(&truth, &estimate)?,
        stage_a_fraction: recovery.stage_a.fraction(truth.len()),
    })
}

/// Everything one trial produced.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub truth: GroundTruth,
    pub recovery: Recovery,
    pub evaluation: Evaluation,
}

/// Generation, measurement, recovery and scoring with a fresh operator.
pub fn run_pipeline(config: &PipelineConfig, seed: u64) -> Result<TrialOutcome> {
    let seeds = TrialSeeds::new(seed);
    let op = Operator::build(config, seeds.parity, seeds.detector)?;
    run_with_operator(config, &op, &seeds)
}

/// As [`run_pipeline`] with a caller-supplied (possibly shared) operator.
pub fn run_with_operator(config: &PipelineConfig, op: &Operator, seeds: &TrialSeeds) -> Result<TrialOutcome> {
    let truth = gen_instance(&config.instance, seeds.instance)?;
    let sigma = match config.regime {
        Regime::Noiseless => 0.0,
        Regime::Noisy(s) => s.sigma,
    };
    let sketch = measure(op, &truth, sigma, seeds.noise)?;
    let recovery = recover(config, op, &sketch, seeds)?;
    let evaluation = evaluate(&truth, &recovery)?;
    Ok(TrialOutcome {
        truth,
        recovery,
        evaluation,
    })
}
