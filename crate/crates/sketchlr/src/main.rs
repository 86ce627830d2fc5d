use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use sketchlr::harness::{self, ExperimentConfig, Grid};
use sketchlr::io::{self, SketchData, SketchHeader};
use sketchlr_core::instance::{gen_instance, InstanceSpec, SupportMode, ValueModel};
use sketchlr_core::model::{expand_ground_truth, Shape};
use sketchlr_core::pipeline::{evaluate, recover, NoisySettings, Operator, PipelineConfig, Recovery, Regime, Sketch, TrialSeeds};
use sketchlr_core::rng::derive;
use sketchlr_core::sizing::SketchRule;
use sketchlr_core::sketcher::{sketch_noiseless, sketch_noisy, GaussianDetector, NoiseField, ParityCheck};

#[derive(Parser)]
#[command(name = "sketchlr", version, about = "Sketch sparse low-rank matrices and recover their factors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a planted instance; writes the ground truth and optionally its entries.
    Generate(GenerateArgs),
    /// Sketch an entry file.
    Sketch(SketchArgs),
    /// Recover factors from a sketch file.
    Recover(RecoverArgs),
    /// Run a Monte-Carlo sweep and write per-trial CSV.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ShapeArg {
    Symmetric,
    Nonsymmetric,
}

#[derive(Clone, Copy, ValueEnum)]
enum SupportsArg {
    Disjoint,
    Overlap,
}

#[derive(Args, Clone)]
struct ShapeFlags {
    #[arg(long, value_enum, default_value = "symmetric")]
    shape: ShapeArg,
    #[arg(long)]
    n: usize,
    /// Column count of a non-symmetric matrix (defaults to n).
    #[arg(long)]
    n2: Option<usize>,
}

impl ShapeFlags {
    fn shape(&self) -> Result<Shape> {
        Ok(match self.shape {
            ShapeArg::Symmetric => Shape::symmetric(self.n)?,
            ShapeArg::Nonsymmetric => Shape::non_symmetric(self.n, self.n2.unwrap_or(self.n))?,
        })
    }
}

#[derive(Args, Clone)]
struct ModelFlags {
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 1)]
    r: usize,
    #[arg(long, value_enum, default_value = "disjoint")]
    supports: SupportsArg,
}

impl ModelFlags {
    fn spec(&self, shape: Shape, values: ValueModel) -> InstanceSpec {
        InstanceSpec {
            shape,
            k: self.k,
            beta: self.beta,
            r: self.r,
            supports: match self.supports {
                SupportsArg::Disjoint => SupportMode::Disjoint,
                SupportsArg::Overlap => SupportMode::Overlapping,
            },
            values,
        }
    }
}

#[derive(Args, Clone)]
struct SizeFlags {
    /// Total measurement budget.
    #[arg(long, conflicts_with_all = ["theorem_m", "bins"])]
    m: Option<usize>,
    /// Use the sample-complexity formulas (the default).
    #[arg(long)]
    theorem_m: bool,
    /// Explicit number of bins R.
    #[arg(long)]
    bins: Option<usize>,
    /// Sparsity exponent δ in k = O(n^δ) (defaults to 5/7 symmetric, 0.4 non-symmetric).
    #[arg(long)]
    delta: Option<f64>,
    /// Column weight of H (defaults to 2 for disjoint and 3 for overlapping supports).
    #[arg(long)]
    d: Option<usize>,
}

impl SizeFlags {
    fn rule(&self) -> SketchRule {
        match (self.m, self.bins) {
            (Some(m), _) => SketchRule::Measurements(m),
            (_, Some(b)) => SketchRule::Bins(b),
            _ => SketchRule::Theorem,
        }
    }

    fn delta(&self, shape: Shape) -> f64 {
        self.delta.unwrap_or(if shape.is_symmetric() { 5.0 / 7.0 } else { 0.4 })
    }

    fn d(&self, supports: SupportsArg) -> usize {
        self.d.unwrap_or(match supports {
            SupportsArg::Disjoint => 2,
            SupportsArg::Overlap => 3,
        })
    }
}

#[derive(Args, Clone)]
struct NoiseFlags {
    /// Noise level σ; enables the Gaussian detector.
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Signal-to-noise ratio λ̄/(√n σ); enables the noisy regime.
    #[arg(long)]
    snr: Option<f64>,
    /// Rows of the Gaussian detector (defaults to ⌈7 ln(n/k)⌉).
    #[arg(long = "P")]
    p: Option<usize>,
    #[arg(long, default_value_t = 5.0)]
    gamma0: f64,
    #[arg(long, default_value_t = 1.5)]
    gamma1: f64,
    /// Message-passing sweeps in noisy stage B.
    #[arg(long, default_value_t = 10)]
    sweeps: usize,
}

impl NoiseFlags {
    fn noisy(&self) -> bool {
        self.noise_sigma.is_some() || self.snr.is_some() || self.p.is_some()
    }

    fn settings(&self, shape: Shape, k: usize) -> NoisySettings {
        let p = self.p.unwrap_or_else(|| sketchlr_core::sizing::detector_rows(7.0, shape.rows().max(shape.cols()), k));
        let mut s = NoisySettings::new(self.noise_sigma.unwrap_or(0.0), p);
        s.gamma0 = self.gamma0;
        s.gamma1 = self.gamma1;
        s.sweeps = self.sweeps;
        s
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    shape: ShapeFlags,
    #[command(flatten)]
    model: ModelFlags,
    /// Draw unnormalized entries from {±10, …, ±50}.
    #[arg(long)]
    alphabet: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ground-truth text file.
    #[arg(long)]
    out: PathBuf,
    /// Also write the nonzero entries as CSV.
    #[arg(long)]
    entries: Option<PathBuf>,
}

#[derive(Args)]
struct SketchArgs {
    /// CSV of `i,j,value` rows.
    #[arg(long)]
    entries: PathBuf,
    #[command(flatten)]
    shape: ShapeFlags,
    /// Model parameters; needed only by the theorem sketch size.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 1)]
    r: usize,
    #[arg(long, value_enum, default_value = "disjoint")]
    supports: SupportsArg,
    #[command(flatten)]
    size: SizeFlags,
    #[command(flatten)]
    noise: NoiseFlags,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RecoverArgs {
    #[arg(long)]
    sketch: PathBuf,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    noise: NoiseFlags,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Factors output (ground-truth text format).
    #[arg(long)]
    out: PathBuf,
    /// Also dump the stage-A entries and statistics.
    #[arg(long)]
    stage_a: Option<PathBuf>,
    /// Score the result against this ground truth and print the metrics.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    shape: ShapeFlags,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    size: SizeFlags,
    #[command(flatten)]
    noise: NoiseFlags,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `axis=v1,v2,…` with axis one of m, k, n, snr, P.
    #[arg(long)]
    grid: Option<Grid>,
    /// Trials sharing one sketching operator.
    #[arg(long, default_value_t = 1)]
    sketch_reuse: usize,
    /// Stop stage A after this fraction of the nonzeros is recovered.
    #[arg(long)]
    early_stop: Option<f64>,
    /// Write zero runtimes so the CSV is byte-reproducible.
    #[arg(long)]
    no_timing: bool,
    /// Per-trial CSV.
    #[arg(long)]
    out: PathBuf,
    /// Per-point summary CSV (defaults to `<out>.summary.csv`).
    #[arg(long)]
    summary: Option<PathBuf>,
}

fn create(path: &PathBuf) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn open(path: &PathBuf) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn generate(a: GenerateArgs) -> Result<()> {
    let values = if a.alphabet { ValueModel::Alphabet } else { ValueModel::Mixture };
    let gt = gen_instance(&a.model.spec(a.shape.shape()?, values), a.seed)?;
    io::write_ground_truth(create(&a.out)?, &gt)?;
    if let Some(p) = &a.entries {
        io::write_entries(create(p)?, &expand_ground_truth(&gt))?;
    }
    Ok(())
}

fn sketch(a: SketchArgs) -> Result<()> {
    let shape = a.shape.shape()?;
    let entries = io::read_entries(open(&a.entries)?, shape)?;
    let rule = a.size.rule();
    if rule == SketchRule::Theorem && a.k.is_none() {
        bail!("the theorem sketch size needs --k (or pass --m / --bins)");
    }
    let model = ModelFlags {
        k: a.k.unwrap_or(2),
        beta: a.beta,
        r: a.r,
        supports: a.supports,
    };
    let config = PipelineConfig {
        instance: model.spec(shape, ValueModel::Mixture),
        delta: a.size.delta(shape),
        d: a.size.d(a.supports),
        rule,
        regime: if a.noise.noisy() { Regime::Noisy(a.noise.settings(shape, model.k)) } else { Regime::Noiseless },
        early_stop: None,
    };
    let size = config.size()?;
    let (parity_seed, detector_seed) = (derive(a.seed, 2), derive(a.seed, 3));
    let h = ParityCheck::new(shape.n_cols(), size.bins, config.d, parity_seed)?;
    let (data, p, det_seed) = match config.regime {
        Regime::Noiseless => (SketchData::Dft(sketch_noiseless(&h, &entries)?), 2, 0),
        Regime::Noisy(s) => {
            let det = GaussianDetector::new(shape.n_cols(), s.p, detector_seed)?;
            let noise = NoiseField {
                sigma: s.sigma,
                seed: derive(a.seed, 4),
            };
            (SketchData::Gaussian(sketch_noisy(&h, &det, &entries, noise)?), s.p, detector_seed)
        }
    };
    let header = SketchHeader {
        shape,
        n_cols: shape.n_cols(),
        bins: size.bins,
        p,
        d: config.d,
        parity_seed,
        detector_seed: det_seed,
    };
    let mut w = create(&a.out)?;
    io::write_sketch(&mut w, &header, &data)?;
    w.flush()?;
    eprintln!("R = {}, m = {}", size.bins, size.bins * p);
    Ok(())
}

fn recover_cmd(a: RecoverArgs) -> Result<()> {
    let (header, data) = io::read_sketch(open(&a.sketch)?)?;
    let shape = header.shape;
    let regime = match &data {
        SketchData::Dft(_) => Regime::Noiseless,
        SketchData::Gaussian(_) => {
            let mut s = a.noise.settings(shape, a.model.k);
            s.p = header.p;
            s.aggregate = false;
            if a.noise.noise_sigma.is_none() {
                bail!("recovering a Gaussian sketch needs --noise-sigma");
            }
            Regime::Noisy(s)
        }
    };
    let config = PipelineConfig {
        instance: a.model.spec(shape, ValueModel::Mixture),
        delta: 0.4,
        d: header.d,
        rule: SketchRule::Bins(header.bins),
        regime,
        early_stop: None,
    };
    let op = Operator::build(&config, header.parity_seed, header.detector_seed)?;
    let sketch = match data {
        SketchData::Dft(s) => Sketch::Dft(s),
        SketchData::Gaussian(s) => Sketch::Gaussian(s),
    };
    let mut seeds = TrialSeeds::new(a.seed);
    seeds.parity = header.parity_seed;
    seeds.detector = header.detector_seed;
    let rec: Recovery = recover(&config, &op, &sketch, &seeds)?;
    let beta = (!shape.is_symmetric()).then_some(a.model.beta);
    io::write_factors(create(&a.out)?, shape, a.model.k, beta, &rec.factors)?;
    let truth = a.truth.as_ref().map(|p| io::read_ground_truth(open(p)?)).transpose()?;
    if let Some(p) = &a.stage_a {
        let total = truth.as_ref().map(|t| expand_ground_truth(t).len());
        io::write_stage_a(create(p)?, &rec.stage_a, total)?;
    }
    eprintln!("stage A recovered {} entries; {} components", rec.stage_a.order.len(), rec.factors.components.len());
    if let Some(t) = truth {
        let ev = evaluate(&t, &rec)?;
        println!("success={} nmse={:e} stageA_fraction={}", ev.success, ev.nmse, ev.stage_a_fraction);
    }
    Ok(())
}

fn experiment(a: ExperimentArgs) -> Result<()> {
    let shape = a.shape.shape()?;
    let noisy = a.noise.noisy() || a.grid.as_ref().is_some_and(|g| matches!(g.axis, harness::Axis::Snr | harness::Axis::P));
    let values = if noisy { ValueModel::Alphabet } else { ValueModel::Mixture };
    let pipeline = PipelineConfig {
        instance: a.model.spec(shape, values),
        delta: a.size.delta(shape),
        d: a.size.d(a.model.supports),
        rule: a.size.rule(),
        regime: if noisy { Regime::Noisy(a.noise.settings(shape, a.model.k)) } else { Regime::Noiseless },
        early_stop: a.early_stop,
    };
    let mut config = ExperimentConfig::new(pipeline, a.trials, a.seed);
    config.snr = a.noise.snr;
    config.sketch_reuse = a.sketch_reuse;
    config.timing = !a.no_timing;
    let grid = match a.grid {
        Some(g) => g,
        None => Grid {
            axis: harness::Axis::K,
            values: vec![a.model.k as f64],
        },
    };
    let result = harness::sweep(&config, &grid)?;
    let mut w = create(&a.out)?;
    harness::write_records(&mut w, &result.records)?;
    w.flush()?;
    let summary_path = a.summary.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".summary.csv");
        p.into()
    });
    let mut s = create(&summary_path)?;
    harness::write_summaries(&mut s, &result.summaries)?;
    s.flush()?;
    for p in &result.summaries {
        eprintln!(
            "point {} ({}): success {:.3}, nmse {:.3e}, runtime {:.2} ms",
            p.point, p.axis_value, p.success_rate, p.mean_nmse, p.mean_runtime_ms
        );
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Generate(a) => generate(a),
        Command::Sketch(a) => sketch(a),
        Command::Recover(a) => recover_cmd(a),
        Command::Experiment(a) => experiment(a),
    }
}
