//! Monte-Carlo trials and sweeps.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::io::Write;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use sketchlr_core::model::Shape;
use sketchlr_core::pipeline::{evaluate, measure, recover, Operator, PipelineConfig, Regime, TrialSeeds};
use sketchlr_core::rng::derive_path;
use sketchlr_core::instance::gen_instance;
use sketchlr_core::sizing::SketchRule;

const OPERATOR_STREAM: u64 = 0x4f50;

/// One experiment: a pipeline configuration plus the Monte-Carlo protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentConfig {
    pub pipeline: PipelineConfig,
    /// When set (noisy regime only), σ is derived as `λ̄/(√n·snr)`.
    pub snr: Option<f64>,
    pub trials: usize,
    pub seed: u64,
    /// Trials sharing one sketching operator; 1 redraws `H` (and `S`) for
    /// every trial.
    pub sketch_reuse: usize,
    /// Record wall-clock recovery time; off writes zeros so that CSV output
    /// is byte-reproducible.
    pub timing: bool,
}

impl ExperimentConfig {
    pub fn new(pipeline: PipelineConfig, trials: usize, seed: u64) -> Self {
        Self {
            pipeline,
            snr: None,
            trials,
            seed,
            sketch_reuse: 1,
            timing: true,
        }
    }

    /// The pipeline configuration with σ resolved from the SNR.
    pub fn resolved(&self) -> Result<PipelineConfig> {
        let mut p = self.pipeline;
        if let Some(snr) = self.snr {
            let Regime::Noisy(ref mut s) = p.regime else {
                bail!("an SNR needs the noisy regime");
            };
            ensure!(snr > 0.0, "SNR must be positive");
            s.sigma = sigma_for_snr(&self.pipeline, snr);
        }
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.trials > 0, "trials must be at least 1");
        ensure!(self.sketch_reuse > 0, "sketch reuse must be at least 1");
        self.resolved()?;
        Ok(())
    }
}

/// `σ = λ̄ / (√n · SNR)` with `λ̄` the expected eigenvalue (or singular
/// value) of the alphabet model and `n = max(n1, n2)`.
pub fn sigma_for_snr(p: &PipelineConfig, snr: f64) -> f64 {
    let n = p.instance.shape.rows().max(p.instance.shape.cols()) as f64;
    p.instance.mean_alphabet_value() / (n.sqrt() * snr)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub seed: u64,
    pub n: usize,
    pub k: usize,
    pub r: usize,
    pub beta: f64,
    pub m: usize,
    #[serde(rename = "R")]
    pub bins: usize,
    #[serde(rename = "P")]
    pub p: usize,
    pub sigma: f64,
    pub snr: f64,
    pub success: bool,
    #[serde(rename = "stageA_fraction")]
    pub stage_a_fraction: f64,
    pub nmse: f64,
    pub runtime_ms: f64,
    pub iters_a: usize,
    pub iters_b: usize,
}

/// Extra per-trial diagnostics not written to the CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDiagnostics {
    pub soundness_violations: usize,
    pub max_residual_ratio: f64,
}

fn record(config: &PipelineConfig, snr: Option<f64>, op: &Operator, trial: u64, seed: u64) -> Result<(TrialRecord, TrialDiagnostics)> {
    let seeds = TrialSeeds::new(seed);
    let truth = gen_instance(&config.instance, seeds.instance)?;
    let sigma = match config.regime {
        Regime::Noiseless => 0.0,
        Regime::Noisy(s) => s.sigma,
    };
    let sketch = measure(op, &truth, sigma, seeds.noise)?;
    let start = Instant::now();
    let recovery = recover(config, op, &sketch, &seeds)?;
    let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
    let ev = evaluate(&truth, &recovery)?;
    let rec = TrialRecord {
        trial,
        seed,
        n: config.instance.shape.rows().max(config.instance.shape.cols()),
        k: config.instance.k,
        r: config.instance.r,
        beta: config.instance.beta,
        m: op.size.m,
        bins: op.size.bins,
        p: op.size.per_bin,
        sigma,
        snr: snr.unwrap_or(f64::INFINITY),
        success: ev.success,
        stage_a_fraction: ev.stage_a_fraction,
        nmse: ev.nmse,
        runtime_ms,
        iters_a: recovery.stage_a.iterations,
        iters_b: recovery.factors.pops,
    };
    let diag = TrialDiagnostics {
        soundness_violations: recovery.stage_a.soundness_violations,
        max_residual_ratio: recovery.stage_a.max_residual_ratio,
    };
    Ok((rec, diag))
}

/// Seed of trial `trial` at grid point `point`.
pub fn trial_seed(master: u64, point: u64, trial: u64) -> u64 {
    derive_path(master, &[point, trial])
}

fn operator_seeds(master: u64, group: u64) -> (u64, u64) {
    (derive_path(master, &[OPERATOR_STREAM, group, 0]), derive_path(master, &[OPERATOR_STREAM, group, 1]))
}

/// Runs a single trial with its own operator.
pub fn run_trial(config: &ExperimentConfig, point: u64, trial: u64) -> Result<TrialRecord> {
    Ok(run_trial_with_diagnostics(config, point, trial)?.0)
}

pub fn run_trial_with_diagnostics(config: &ExperimentConfig, point: u64, trial: u64) -> Result<(TrialRecord, TrialDiagnostics)> {
    let p = config.resolved()?;
    let (hs, ds) = operator_seeds(config.seed, trial / config.sketch_reuse as u64);
    let op = Operator::build(&p, hs, ds)?;
    let (mut rec, diag) = record(&p, config.snr, &op, trial, trial_seed(config.seed, point, trial))?;
    if !config.timing {
        rec.runtime_ms = 0.0;
    }
    Ok((rec, diag))
}

/// Sweep axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    M,
    K,
    N,
    Snr,
    P,
}

impl std::str::FromStr for Axis {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "m" => Axis::M,
            "k" => Axis::K,
            "n" => Axis::N,
            "snr" => Axis::Snr,
            "p" => Axis::P,
            _ => bail!("unknown grid axis {s:?} (expected m, k, n, snr or P)"),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub axis: Axis,
    pub values: Vec<f64>,
}

impl std::str::FromStr for Grid {
    type Err = anyhow::Error;

    /// `axis=v1,v2,…`
    fn from_str(s: &str) -> Result<Self> {
        let (axis, vals) = s.split_once('=').context("grid must look like axis=v1,v2,...")?;
        let values = vals.split(',').map(|v| v.trim().parse::<f64>().with_context(|| format!("bad grid value {v:?}"))).collect::<Result<Vec<_>>>()?;
        ensure!(!values.is_empty(), "grid is empty");
        Ok(Grid { axis: axis.trim().parse()?, values })
    }
}

fn as_count(v: f64, what: &str) -> Result<usize> {
    ensure!(v >= 0.0 && v.fract() == 0.0, "{what} must be a non-negative integer, got {v}");
    Ok(v as usize)
}

/// The configuration at one grid value.
pub fn apply(base: &ExperimentConfig, axis: Axis, v: f64) -> Result<ExperimentConfig> {
    let mut c = *base;
    let inst = &mut c.pipeline.instance;
    match axis {
        Axis::M => c.pipeline.rule = SketchRule::Measurements(as_count(v, "m")?),
        Axis::K => inst.k = as_count(v, "k")?,
        Axis::N => {
            let n = as_count(v, "n")?;
            inst.shape = match inst.shape {
                Shape::Symmetric { .. } => Shape::symmetric(n)?,
                Shape::NonSymmetric { n2, .. } => Shape::non_symmetric(n, n2)?,
            };
        }
        Axis::Snr => c.snr = Some(v),
        Axis::P => {
            let Regime::Noisy(ref mut s) = c.pipeline.regime else {
                bail!("the P axis needs the noisy regime");
            };
            s.p = as_count(v, "P")?;
        }
    }
    c.validate()?;
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointSummary {
    pub point: usize,
    pub axis_value: f64,
    pub n: usize,
    pub k: usize,
    pub r: usize,
    pub m: usize,
    #[serde(rename = "R")]
    pub bins: usize,
    #[serde(rename = "P")]
    pub p: usize,
    pub sigma: f64,
    pub snr: f64,
    pub trials: usize,
    pub success_rate: f64,
    pub mean_stage_a_fraction: f64,
    pub mean_nmse: f64,
    pub mean_runtime_ms: f64,
    pub std_runtime_ms: f64,
}

pub fn summarize(point: usize, axis_value: f64, records: &[TrialRecord]) -> PointSummary {
    let t = records.len().max(1) as f64;
    let mean = |f: &dyn Fn(&TrialRecord) -> f64| records.iter().map(f).sum::<f64>() / t;
    let mean_rt = mean(&|r| r.runtime_ms);
    let var = records.iter().map(|r| (r.runtime_ms - mean_rt).powi(2)).sum::<f64>() / (t - 1.0).max(1.0);
    let first = records.first();
    PointSummary {
        point,
        axis_value,
        n: first.map_or(0, |r| r.n),
        k: first.map_or(0, |r| r.k),
        r: first.map_or(0, |r| r.r),
        m: first.map_or(0, |r| r.m),
        bins: first.map_or(0, |r| r.bins),
        p: first.map_or(0, |r| r.p),
        sigma: first.map_or(0.0, |r| r.sigma),
        snr: first.map_or(0.0, |r| r.snr),
        trials: records.len(),
        success_rate: mean(&|r| r.success as u8 as f64),
        mean_stage_a_fraction: mean(&|r| r.stage_a_fraction),
        mean_nmse: mean(&|r| r.nmse),
        mean_runtime_ms: mean_rt,
        std_runtime_ms: var.sqrt(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub records: Vec<Vec<TrialRecord>>,
    pub summaries: Vec<PointSummary>,
}

/// Operators depend on the shape, bin count, `d` and detector; points that
/// agree on these (an SNR axis, or a P axis via row prefixes) share them.
fn operator_key(p: &PipelineConfig) -> Result<(Shape, usize, usize)> {
    Ok((p.instance.shape, p.size()?.bins, p.d))
}

/// Runs every grid point. Trials are grouped by shared operator; groups run
/// in parallel and output is assembled in (point, trial) order.
pub fn sweep(base: &ExperimentConfig, grid: &Grid) -> Result<SweepResult> {
    base.validate()?;
    let points: Vec<ExperimentConfig> = grid.values.iter().map(|&v| apply(base, grid.axis, v)).collect::<Result<_>>()?;
    let resolved: Vec<PipelineConfig> = points.iter().map(|c| c.resolved()).collect::<Result<_>>()?;
    let groups = base.trials.div_ceil(base.sketch_reuse);
    let per_group = |g: usize| -> Result<Vec<(usize, TrialRecord)>> {
        let (hs, ds) = operator_seeds(base.seed, g as u64);
        let mut cache: HashMap<(Shape, usize, usize), Operator> = HashMap::new();
        // Noisy points sharing an operator key are built once at the largest P.
        let mut max_p: HashMap<(Shape, usize, usize), usize> = HashMap::new();
        for p in &resolved {
            if let Regime::Noisy(s) = p.regime {
                let e = max_p.entry(operator_key(p)?).or_insert(0);
                *e = (*e).max(s.p);
            }
        }
        let mut out = Vec::new();
        for (i, (c, p)) in points.iter().zip(&resolved).enumerate() {
            let key = operator_key(p)?;
            if let Entry::Vacant(slot) = cache.entry(key) {
                let mut build = *p;
                if let Regime::Noisy(ref mut s) = build.regime {
                    s.p = max_p[&key];
                }
                slot.insert(Operator::build(&build, hs, ds)?);
            }
            let shared = &cache[&key];
            let op = match p.regime {
                Regime::Noisy(s) if s.p != max_p[&key] => shared.with_rows(s.p)?,
                _ => shared.clone(),
            };
            let lo = g * base.sketch_reuse;
            let hi = (lo + base.sketch_reuse).min(base.trials);
            for t in lo..hi {
                let (mut rec, _) = record(p, c.snr, &op, t as u64, trial_seed(base.seed, i as u64, t as u64))?;
                if !base.timing {
                    rec.runtime_ms = 0.0;
                }
                out.push((i, rec));
            }
        }
        Ok(out)
    };
    let chunks: Vec<Vec<(usize, TrialRecord)>> = with_pool(|| (0..groups).into_par_iter().map(per_group).collect::<Result<Vec<_>>>())??;
    let mut records: Vec<Vec<TrialRecord>> = vec![Vec::new(); points.len()];
    for (i, rec) in chunks.into_iter().flatten() {
        records[i].push(rec);
    }
    for r in &mut records {
        r.sort_by_key(|x| x.trial);
    }
    let summaries = records.iter().enumerate().map(|(i, r)| summarize(i, grid.values[i], r)).collect();
    Ok(SweepResult { records, summaries })
}

/// Runs `f` on a pool capped by `SKETCHLR_THREADS` (all cores when unset).
pub fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let threads = match std::env::var("SKETCHLR_THREADS") {
        Ok(v) => v.trim().parse::<usize>().context("SKETCHLR_THREADS must be a positive integer")?,
        Err(_) => 0,
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    Ok(pool.install(f))
}

pub fn write_records<W: Write>(w: W, records: &[Vec<TrialRecord>]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in records.iter().flatten() {
        out.serialize(r)?;
    }
    if records.iter().all(|r| r.is_empty()) {
        out.write_record(CSV_COLUMNS)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_summaries<W: Write>(w: W, summaries: &[PointSummary]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for s in summaries {
        out.serialize(s)?;
    }
    out.flush()?;
    Ok(())
}

pub const CSV_COLUMNS: [&str; 17] = [
    "trial",
    "seed",
    "n",
    "k",
    "r",
    "beta",
    "m",
    "R",
    "P",
    "sigma",
    "snr",
    "success",
    "stageA_fraction",
    "nmse",
    "runtime_ms",
    "iters_a",
    "iters_b",
];
