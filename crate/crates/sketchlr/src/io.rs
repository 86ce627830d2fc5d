//! File formats.
//!
//! Ground truth and factors are text. The header line is
//! `symmetric <rank> <n> <k>` or `nonsymmetric <rank> <n1> <n2> <k> <beta>`,
//! followed by one line per component: `value idx:val idx:val …`. A
//! non-symmetric component lists `u` first, then ` ; `, then `v`. Lines
//! starting with `#` are comments. Indices are 1-based.
//!
//! Matrix entries are CSV `i,j,value` with a header row; symmetric entries
//! may be given in either triangle.
//!
//! Sketches are binary, all little-endian:
//!
//! | offset | type     | field                                    |
//! |--------|----------|------------------------------------------|
//! | 0      | [u8; 4]  | magic `SKLR`                             |
//! | 4      | u32      | version (1)                              |
//! | 8      | u32      | kind: 0 two-row DFT, 1 Gaussian          |
//! | 12     | u32      | shape: 0 symmetric, 1 non-symmetric      |
//! | 16     | u64      | n1                                       |
//! | 24     | u64      | n2 (equal to n1 when symmetric)          |
//! | 32     | u64      | n_cols (ñ or n1·n2)                      |
//! | 40     | u64      | R                                        |
//! | 48     | u32      | P (2 for DFT)                            |
//! | 52     | u32      | d                                        |
//! | 56     | u64      | parity-check seed                        |
//! | 64     | u64      | detector seed (0 for DFT)                |
//! | 72     | f64 × …  | bins                                     |
//!
//! A DFT bin is `re(y₁) im(y₁) re(y₂) im(y₂)`; a Gaussian bin is its `P`
//! rows. The vectorized index of `(i, j)` is row-major over the upper
//! triangle (`i ≤ j`) or over the full `n1 × n2` matrix.

use std::io::{BufRead, Read, Write};

use anyhow::{anyhow, bail, ensure, Context, Result};
use num_complex::Complex64;
use serde::Serialize;

use sketchlr_core::model::{Component, EntryMap, GroundTruth, Shape, SparseVector};
use sketchlr_core::sketcher::{DftSketch, GaussianSketch};
use sketchlr_core::stage_a::StageAResult;
use sketchlr_core::stage_b::{RecoveredFactors, Status};

pub const MAGIC: [u8; 4] = *b"SKLR";
pub const VERSION: u32 = 1;

fn header_line(shape: Shape, rank: usize, k: usize, beta: Option<f64>) -> String {
    match shape {
        Shape::Symmetric { n } => format!("symmetric {rank} {n} {k}"),
        Shape::NonSymmetric { n1, n2 } => format!("nonsymmetric {rank} {n1} {n2} {k} {}", beta.unwrap_or(1.0)),
    }
}

fn vector_text(v: &SparseVector) -> String {
    v.iter().map(|(i, x)| format!("{i}:{x:e}")).collect::<Vec<_>>().join(" ")
}

fn component_line(value: f64, left: Option<&SparseVector>, right: &SparseVector) -> String {
    match left {
        None => format!("{value:e} {}", vector_text(right)),
        Some(u) => format!("{value:e} {} ; {}", vector_text(u), vector_text(right)),
    }
}

pub fn write_ground_truth<W: Write>(mut w: W, gt: &GroundTruth) -> Result<()> {
    writeln!(w, "{}", header_line(gt.shape(), gt.rank(), gt.k(), gt.beta()))?;
    for c in gt.components() {
        writeln!(w, "{}", component_line(c.value, c.left.as_ref(), &c.right))?;
    }
    Ok(())
}

fn parse_vector<'a>(tokens: impl Iterator<Item = &'a str>) -> Result<SparseVector> {
    let mut entries = Vec::new();
    for t in tokens {
        let (i, x) = t.split_once(':').ok_or_else(|| anyhow!("expected idx:val, got {t:?}"))?;
        entries.push((i.parse::<usize>()?, x.parse::<f64>()?));
    }
    Ok(SparseVector::new(entries)?)
}

struct Header {
    shape: Shape,
    rank: usize,
    k: usize,
    beta: Option<f64>,
}

fn parse_header(line: &str) -> Result<Header> {
    let t: Vec<&str> = line.split_whitespace().collect();
    match t.as_slice() {
        ["symmetric", rank, n, k] => Ok(Header {
            shape: Shape::symmetric(n.parse()?)?,
            rank: rank.parse()?,
            k: k.parse()?,
            beta: None,
        }),
        ["nonsymmetric", rank, n1, n2, k, beta] => Ok(Header {
            shape: Shape::non_symmetric(n1.parse()?, n2.parse()?)?,
            rank: rank.parse()?,
            k: k.parse()?,
            beta: Some(beta.parse()?),
        }),
        _ => bail!("bad header {line:?}"),
    }
}

pub type ParsedComponent = (f64, Option<SparseVector>, SparseVector);

fn parse_components<R: BufRead>(r: R) -> Result<(Header, Vec<ParsedComponent>)> {
    let mut lines = r.lines().filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty() && !l.starts_with('#')));
    let header = parse_header(&lines.next().ok_or_else(|| anyhow!("empty file"))??)?;
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        let (head, tail) = match line.split_once(" ; ") {
            Some((a, b)) => (a, Some(b)),
            None => (line.as_str(), None),
        };
        let mut t = head.split_whitespace();
        let value: f64 = t.next().ok_or_else(|| anyhow!("missing value"))?.parse()?;
        let first = parse_vector(t)?;
        let comp = match (header.shape.is_symmetric(), tail) {
            (true, None) => (value, None, first),
            (false, Some(v)) => (value, Some(first), parse_vector(v.split_whitespace())?),
            _ => bail!("component line does not match the shape: {line:?}"),
        };
        out.push(comp);
    }
    ensure!(out.len() == header.rank, "header declares rank {} but {} components follow", header.rank, out.len());
    Ok((header, out))
}

pub fn read_ground_truth<R: BufRead>(r: R) -> Result<GroundTruth> {
    let (h, comps) = parse_components(r)?;
    let components = comps.into_iter().map(|(value, left, right)| Component { value, left, right }).collect();
    Ok(GroundTruth::new(h.shape, h.k, h.beta, components)?)
}

fn status_name(s: Status) -> &'static str {
    match s {
        Status::Complete => "complete",
        Status::Partial => "partial",
        Status::NoDiagonal => "no-diagonal",
        Status::Inconsistent => "inconsistent",
    }
}

/// Factors in the ground-truth format; each component is preceded by a
/// `# status` comment.
pub fn write_factors<W: Write>(mut w: W, shape: Shape, k: usize, beta: Option<f64>, f: &RecoveredFactors) -> Result<()> {
    writeln!(w, "{}", header_line(shape, f.components.len(), k, beta))?;
    for c in &f.components {
        writeln!(w, "# status {}", status_name(c.status))?;
        writeln!(w, "{}", component_line(c.value, c.left.as_ref(), &c.right))?;
    }
    Ok(())
}

/// Components as `(value, left, right)`; statuses are not read back.
pub fn read_factors<R: BufRead>(r: R) -> Result<(Shape, Vec<ParsedComponent>)> {
    let (h, comps) = parse_components(r)?;
    Ok((h.shape, comps))
}

pub fn write_entries<W: Write>(w: W, entries: &EntryMap) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["i", "j", "value"])?;
    for ((i, j), x) in entries.iter_coords() {
        out.write_record([i.to_string(), j.to_string(), format!("{x:e}")])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_entries<R: Read>(r: R, shape: Shape) -> Result<EntryMap> {
    let mut input = csv::Reader::from_reader(r);
    let mut pairs = Vec::new();
    for (line, rec) in input.records().enumerate() {
        let rec = rec?;
        ensure!(rec.len() == 3, "row {}: expected i,j,value", line + 2);
        let (i, j): (usize, usize) = (rec[0].trim().parse()?, rec[1].trim().parse()?);
        let x: f64 = rec[2].trim().parse()?;
        let l = shape.index(i, j).with_context(|| format!("row {}", line + 2))?;
        pairs.push((l, x));
    }
    Ok(EntryMap::from_pairs(shape, pairs)?)
}

/// Everything needed to rebuild the operator that produced a sketch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SketchHeader {
    pub shape: Shape,
    pub n_cols: u64,
    pub bins: usize,
    pub p: usize,
    pub d: usize,
    pub parity_seed: u64,
    pub detector_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SketchData {
    Dft(DftSketch),
    Gaussian(GaussianSketch),
}

pub fn write_sketch<W: Write>(mut w: W, h: &SketchHeader, data: &SketchData) -> Result<()> {
    let (kind, p) = match data {
        SketchData::Dft(s) => {
            ensure!(s.len() == h.bins, "bin count mismatch");
            (0u32, 2u32)
        }
        SketchData::Gaussian(s) => {
            ensure!(s.len() == h.bins && s.p() == h.p, "bin shape mismatch");
            (1u32, s.p() as u32)
        }
    };
    let (shape_kind, n1, n2) = match h.shape {
        Shape::Symmetric { n } => (0u32, n as u64, n as u64),
        Shape::NonSymmetric { n1, n2 } => (1u32, n1 as u64, n2 as u64),
    };
    w.write_all(&MAGIC)?;
    for x in [VERSION, kind, shape_kind] {
        w.write_all(&x.to_le_bytes())?;
    }
    for x in [n1, n2, h.n_cols, h.bins as u64] {
        w.write_all(&x.to_le_bytes())?;
    }
    w.write_all(&p.to_le_bytes())?;
    w.write_all(&(h.d as u32).to_le_bytes())?;
    w.write_all(&h.parity_seed.to_le_bytes())?;
    w.write_all(&h.detector_seed.to_le_bytes())?;
    match data {
        SketchData::Dft(s) => {
            for b in s.bins() {
                for x in [b[0].re, b[0].im, b[1].re, b[1].im] {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
        SketchData::Gaussian(s) => {
            for x in s.as_slice() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 8];
    r.read_exact(&mut buf).context("truncated sketch data")?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

pub fn read_sketch<R: Read>(mut r: R) -> Result<(SketchHeader, SketchData)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    ensure!(magic == MAGIC, "not a sketch file");
    let version = read_u32(&mut r)?;
    ensure!(version == VERSION, "unsupported sketch version {version}");
    let kind = read_u32(&mut r)?;
    let shape_kind = read_u32(&mut r)?;
    let (n1, n2) = (read_u64(&mut r)? as usize, read_u64(&mut r)? as usize);
    let shape = match shape_kind {
        0 => Shape::symmetric(n1)?,
        1 => Shape::non_symmetric(n1, n2)?,
        x => bail!("unknown shape kind {x}"),
    };
    let n_cols = read_u64(&mut r)?;
    ensure!(n_cols == shape.n_cols(), "column count does not match the shape");
    let bins = read_u64(&mut r)? as usize;
    let p = read_u32(&mut r)? as usize;
    let d = read_u32(&mut r)? as usize;
    let header = SketchHeader {
        shape,
        n_cols,
        bins,
        p,
        d,
        parity_seed: read_u64(&mut r)?,
        detector_seed: read_u64(&mut r)?,
    };
    let data = match kind {
        0 => {
            ensure!(p == 2, "DFT sketches have P = 2");
            let xs = read_f64s(&mut r, bins * 4)?;
            SketchData::Dft(DftSketch::from_bins(
                xs.chunks_exact(4).map(|c| [Complex64::new(c[0], c[1]), Complex64::new(c[2], c[3])]).collect(),
            ))
        }
        1 => SketchData::Gaussian(GaussianSketch::from_data(p, read_f64s(&mut r, bins * p)?)?),
        x => bail!("unknown sketch kind {x}"),
    };
    let mut rest = [0u8; 1];
    ensure!(r.read(&mut rest)? == 0, "trailing bytes after sketch data");
    Ok((header, data))
}

#[derive(Debug, Serialize)]
struct StageAStats {
    recovered: usize,
    iterations: usize,
    initial_singletons: usize,
    residual_singletons: usize,
    conflicts: usize,
    guard_rejections: usize,
    soundness_violations: usize,
    max_residual_ratio: f64,
    fraction: Option<f64>,
}

/// CSV `index,value` in peel order followed by one `# {json}` stats line.
/// `total` is the true nonzero count, when known.
pub fn write_stage_a<W: Write>(mut w: W, res: &StageAResult, total: Option<usize>) -> Result<()> {
    writeln!(w, "index,value")?;
    for &l in &res.order {
        let x = res.recovered.get(l).expect("peeled index is recovered");
        writeln!(w, "{l},{x:e}")?;
    }
    let stats = StageAStats {
        recovered: res.order.len(),
        iterations: res.iterations,
        initial_singletons: res.initial_singletons,
        residual_singletons: res.residual_singletons,
        conflicts: res.conflicts,
        guard_rejections: res.guard_rejections,
        soundness_violations: res.soundness_violations,
        max_residual_ratio: res.max_residual_ratio,
        fraction: total.map(|t| res.fraction(t)),
    };
    writeln!(w, "# {}", serde_json::to_string(&stats)?)?;
    Ok(())
}
