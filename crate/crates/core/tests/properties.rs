use proptest::prelude::*;
use rand::seq::index::sample;
use rand_distr::StandardNormal;

use sketchlr_core::dense::DenseMatrix;
use sketchlr_core::densedecomp::{assemble_submatrix, extract_sparse_factors, svd, sym_eigen, DEFAULT_TOL};
use sketchlr_core::instance::{gen_instance, InstanceSpec, SupportMode, ValueModel};
use sketchlr_core::model::{dense_oracle, expand_ground_truth, Component, EntryMap, GroundTruth, Shape, SparseVector};
use sketchlr_core::pipeline::{exact_match, reconstruct, run_pipeline, PipelineConfig, Regime, EXACT_TOL};
use sketchlr_core::rng::rng;
use sketchlr_core::sizing::{k_tilde, SketchRule};
use sketchlr_core::sketcher::{sketch_noiseless, ParityCheck};
use sketchlr_core::stage_a::{peel_noiseless, NoiselessParams};
use sketchlr_core::stage_b::{build_product_graph, peel_nonsymmetric, peel_symmetric, FactorComponent, InitRule, RecoveredFactors, Status};

fn spec(shape: Shape, k: usize, r: usize, supports: SupportMode) -> InstanceSpec {
    InstanceSpec {
        shape,
        k,
        beta: 0.75,
        r,
        supports,
        values: ValueModel::Mixture,
    }
}

fn shape_strategy(max_n: usize) -> impl Strategy<Value = Shape> {
    prop_oneof![
        (16..=max_n).prop_map(|n| Shape::symmetric(n).unwrap()),
        (16..=max_n, 16..=max_n).prop_map(|(a, b)| Shape::non_symmetric(a, b).unwrap()),
    ]
}

fn random_entries(shape: Shape, count: usize, seed: u64) -> EntryMap {
    let mut g = rng(seed);
    let n = shape.n_cols();
    let picks = sample(&mut g, n as usize, count.min(n as usize));
    EntryMap::from_pairs(shape, picks.into_iter().map(|i| (i as u64 + 1, g.random_range(0.5..5.0) * if g.random::<bool>() { 1.0 } else { -1.0 }))).unwrap()
}

/// Drops each recovered entry with probability `drop`, keeping everything
/// else; stands in for a partial stage-A output.
fn thin(entries: &EntryMap, drop: f64, seed: u64) -> EntryMap {
    let mut g = rng(seed);
    EntryMap::from_pairs(entries.shape(), entries.iter().filter(|_| g.random::<f64>() >= drop)).unwrap()
}

fn components_close(a: &RecoveredFactors, b: &RecoveredFactors, tol: f64) -> bool {
    let same = |x: &SparseVector, y: &SparseVector| x.nnz() == y.nnz() && x.iter().zip(y.iter()).all(|((i, p), (j, q))| i == j && (p - q).abs() <= tol);
    a.components.len() == b.components.len()
        && a.components.iter().zip(&b.components).all(|(x, y)| {
            x.status == y.status
                && (x.value - y.value).abs() <= tol
                && same(&x.right, &y.right)
                && match (&x.left, &y.left) {
                    (Some(p), Some(q)) => same(p, q),
                    (None, None) => true,
                    _ => false,
                }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn expansion_matches_dense_oracle(shape in shape_strategy(50), k in 2usize..6, r in 1usize..3, overlap in any::<bool>(), seed in any::<u64>()) {
        let supports = if overlap { SupportMode::Overlapping } else { SupportMode::Disjoint };
        let gt = gen_instance(&spec(shape, k, r, supports), seed).unwrap();
        let dense = dense_oracle(&gt).unwrap();
        let sparse = expand_ground_truth(&gt);
        for i in 1..=shape.rows() {
            for j in 1..=shape.cols() {
                if shape.is_symmetric() && j < i {
                    continue;
                }
                let x = sparse.get(shape.index(i, j).unwrap()).unwrap_or(0.0);
                prop_assert!((x - dense[(i - 1, j - 1)]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn disjoint_symmetric_entry_count(n in 60usize..400, k in 2usize..12, r in 1usize..4, seed in any::<u64>()) {
        let gt = gen_instance(&spec(Shape::symmetric(n).unwrap(), k, r, SupportMode::Disjoint), seed).unwrap();
        prop_assert_eq!(expand_ground_truth(&gt).len() as u64, r as u64 * k_tilde(k));
    }

    #[test]
    fn sketch_is_linear(n in 5usize..60, bins in 2usize..40, count in 0usize..30, seed in any::<u64>()) {
        let shape = Shape::symmetric(n).unwrap();
        let h = ParityCheck::new(shape.n_cols(), bins, 2, seed).unwrap();
        let all = random_entries(shape, count, seed ^ 1);
        let mut g = rng(seed ^ 2);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for e in all.iter() {
            if g.random::<bool>() { a.push(e) } else { b.push(e) }
        }
        let sa = sketch_noiseless(&h, &EntryMap::from_pairs(shape, a).unwrap()).unwrap();
        let sb = sketch_noiseless(&h, &EntryMap::from_pairs(shape, b).unwrap()).unwrap();
        let sum = sa.add(&sb);
        let direct = sketch_noiseless(&h, &all).unwrap();
        for (x, y) in sum.bins().iter().zip(direct.bins()) {
            prop_assert!((x[0] - y[0]).norm() <= 1e-12 && (x[1] - y[1]).norm() <= 1e-12);
        }
        prop_assert_eq!(direct.bin_updates(), all.len() as u64 * 2);
    }

    #[test]
    fn sketch_is_deterministic(n in 5usize..60, bins in 3usize..40, count in 0usize..30, seed in any::<u64>()) {
        let shape = Shape::symmetric(n).unwrap();
        let entries = random_entries(shape, count, seed);
        let h1 = ParityCheck::new(shape.n_cols(), bins, 3, seed).unwrap();
        let h2 = ParityCheck::new(shape.n_cols(), bins, 3, seed).unwrap();
        let (a, b) = (sketch_noiseless(&h1, &entries).unwrap(), sketch_noiseless(&h2, &entries).unwrap());
        for (x, y) in a.bins().iter().zip(b.bins()) {
            prop_assert_eq!(x[0].re.to_bits(), y[0].re.to_bits());
            prop_assert_eq!(x[0].im.to_bits(), y[0].im.to_bits());
            prop_assert_eq!(x[1].re.to_bits(), y[1].re.to_bits());
            prop_assert_eq!(x[1].im.to_bits(), y[1].im.to_bits());
        }
    }

    #[test]
    fn zero_bins_are_exactly_the_untouched_ones(n in 5usize..80, bins in 2usize..60, count in 0usize..25, seed in any::<u64>()) {
        let shape = Shape::symmetric(n).unwrap();
        let entries = random_entries(shape, count, seed);
        let h = ParityCheck::new(shape.n_cols(), bins, 2, seed).unwrap();
        let sk = sketch_noiseless(&h, &entries).unwrap();
        let mut touched = vec![0usize; bins];
        for (l, _) in entries.iter() {
            for j in h.column_rows(l).unwrap() {
                touched[j] += 1;
            }
        }
        for (j, b) in sk.bins().iter().enumerate() {
            let zero = b[0].norm() == 0.0 && b[1].norm() == 0.0;
            // Two or more continuous values cancel with probability zero;
            // a lone entry can never vanish.
            prop_assert_eq!(zero, touched[j] == 0, "bin {} touched {}", j, touched[j]);
        }
    }

    #[test]
    fn noiseless_peel_is_sound(shape in shape_strategy(200), k in 2usize..8, r in 1usize..3, load in 0.2f64..1.2, seed in any::<u64>()) {
        let supports = if shape.is_symmetric() { SupportMode::Overlapping } else { SupportMode::Disjoint };
        let gt = gen_instance(&spec(shape, k, r, supports), seed).unwrap();
        let truth = expand_ground_truth(&gt);
        let bins = ((truth.len() as f64 / load).ceil() as usize).max(3);
        let h = ParityCheck::new(shape.n_cols(), bins, 3, seed).unwrap();
        let sk = sketch_noiseless(&h, &truth).unwrap();
        let params = NoiselessParams { seed, ..NoiselessParams::default() };
        let out = peel_noiseless(&sk, &h, shape, &params).unwrap();
        prop_assert_eq!(out.soundness_violations, 0);
        prop_assert!(out.max_residual_ratio <= 1e-9);
        prop_assert!(out.iterations as u64 <= shape.n_cols());
        prop_assert_eq!(out.iterations, out.order.len());
        prop_assert!(out.order.len() <= truth.len());
        for (l, x) in out.recovered.iter() {
            let t = truth.get(l);
            prop_assert!(t.is_some_and(|t| (t - x).abs() <= 1e-9 * (1.0 + t.abs())), "index {} value {} truth {:?}", l, x, t);
        }
    }

    #[test]
    fn stage_b_products_are_consistent(symmetric in any::<bool>(), k in 2usize..12, r in 1usize..4, drop in 0.0f64..0.7, seed in any::<u64>()) {
        let shape = if symmetric { Shape::symmetric(100).unwrap() } else { Shape::non_symmetric(100, 90).unwrap() };
        let gt = gen_instance(&spec(shape, k, r, SupportMode::Disjoint), seed).unwrap();
        let recovered = thin(&expand_ground_truth(&gt), drop, seed);
        let g = build_product_graph(&recovered);
        let out = if symmetric { peel_symmetric(&g, seed).unwrap() } else { peel_nonsymmetric(&g, seed, InitRule::MaxDegree).unwrap() };
        prop_assert!(out.pops <= g.left().len() + g.right().len());
        let rebuilt = reconstruct(shape, &out).unwrap();
        for c in &out.components {
            prop_assert!(c.status != Status::Inconsistent);
        }
        for node in g.right() {
            let (i, j) = node.coords;
            let l = shape.index(i, j).unwrap();
            if let Some(x) = rebuilt.get(l) {
                prop_assert!((x - node.value).abs() <= 1e-9 * (node.value.abs() + 1.0));
            }
        }
    }

    #[test]
    fn stage_b_ignores_peel_order(symmetric in any::<bool>(), k in 2usize..12, r in 1usize..4, drop in 0.0f64..0.6, seed in any::<u64>()) {
        let shape = if symmetric { Shape::symmetric(100).unwrap() } else { Shape::non_symmetric(100, 90).unwrap() };
        let gt = gen_instance(&spec(shape, k, r, SupportMode::Disjoint), seed).unwrap();
        let g = build_product_graph(&thin(&expand_ground_truth(&gt), drop, seed));
        let run = |s: u64| if symmetric { peel_symmetric(&g, s).unwrap() } else { peel_nonsymmetric(&g, s, InitRule::MaxDegree).unwrap() };
        let first = run(0);
        for s in 1..10 {
            prop_assert!(components_close(&first, &run(s), 1e-12));
        }
    }

    #[test]
    fn nonsymmetric_init_is_a_gauge(k in 2usize..12, r in 1usize..4, seed in any::<u64>()) {
        let shape = Shape::non_symmetric(80, 120).unwrap();
        let gt = gen_instance(&spec(shape, k, r, SupportMode::Disjoint), seed).unwrap();
        let g = build_product_graph(&thin(&expand_ground_truth(&gt), 0.3, seed));
        let a = peel_nonsymmetric(&g, seed, InitRule::MaxDegree).unwrap();
        let b = peel_nonsymmetric(&g, seed, InitRule::LowestIndex).unwrap();
        prop_assert!(components_close(&a, &b, 1e-9));
    }

    #[test]
    fn eigenvectors_are_orthonormal(n in 1usize..25, seed in any::<u64>()) {
        let mut g = rng(seed);
        let mut a = DenseMatrix::from_fn(n, n, |_, _| g.sample::<f64, _>(StandardNormal));
        a = DenseMatrix::from_fn(n, n, |i, j| a[(i, j)] + a[(j, i)]);
        let e = sym_eigen(&a, DEFAULT_TOL).unwrap();
        prop_assert!(e.vectors.orthogonality_defect() <= 1e-10);
        let m = 1 + (seed % 20) as usize;
        let b = DenseMatrix::from_fn(m, n, |_, _| g.sample::<f64, _>(StandardNormal));
        let s = svd(&b, DEFAULT_TOL).unwrap();
        prop_assert!(s.u.orthogonality_defect() <= 1e-10);
        prop_assert!(s.v.orthogonality_defect() <= 1e-10);
    }

    #[test]
    fn low_rank_grids_are_reproduced(symmetric in any::<bool>(), n in 3usize..20, rank in 1usize..4, seed in any::<u64>()) {
        let shape = if symmetric { Shape::symmetric(n).unwrap() } else { Shape::non_symmetric(n, n + 3).unwrap() };
        let mut g = rng(seed);
        let mut pairs = Vec::new();
        for _ in 0..rank {
            let u: Vec<f64> = (0..shape.rows()).map(|_| g.sample(StandardNormal)).collect();
            let v: Vec<f64> = (0..shape.cols()).map(|_| g.sample(StandardNormal)).collect();
            for i in 1..=shape.rows() {
                for j in 1..=shape.cols() {
                    if symmetric && j < i {
                        continue;
                    }
                    let x = if symmetric { v[i - 1] * v[j - 1] } else { u[i - 1] * v[j - 1] };
                    pairs.push((shape.index(i, j).unwrap(), x));
                }
            }
        }
        let map = EntryMap::from_pairs(shape, pairs).unwrap();
        let sub = assemble_submatrix(&map);
        let ex = extract_sparse_factors(&sub, 1e-10, None).unwrap();
        prop_assert!(ex.numerical_rank <= rank);
        let rebuilt = reconstruct(shape, &ex.factors).unwrap();
        let scale = map.frobenius_sq().sqrt();
        let diff = EntryMap::from_pairs(shape, map.iter().chain(rebuilt.iter().map(|(l, x)| (l, -x)))).unwrap();
        prop_assert!(diff.frobenius_sq().sqrt() <= 1e-8 * scale);
    }

    #[test]
    fn trials_are_reproducible(shape in shape_strategy(60), k in 2usize..5, seed in any::<u64>()) {
        let config = PipelineConfig {
            instance: spec(shape, k, 2, SupportMode::Disjoint),
            delta: 0.4,
            d: 2,
            rule: SketchRule::Theorem,
            regime: Regime::Noiseless,
            early_stop: None,
        };
        prop_assert_eq!(run_pipeline(&config, seed).unwrap(), run_pipeline(&config, seed).unwrap());
    }

    #[test]
    fn checker_accepts_truth_under_sign_and_permutation(shape in shape_strategy(60), k in 2usize..6, r in 1usize..4, seed in any::<u64>()) {
        let gt = gen_instance(&spec(shape, k, r, SupportMode::Disjoint), seed).unwrap();
        // Found factors: the truth itself, rotated and canonicalized by the
        // decoder's own convention (largest entry of the right vector positive).
        let canon = |c: &Component| {
            let flip = c.right.argmax_abs().map_or(1.0, |(_, x)| x.signum());
            FactorComponent {
                value: c.value,
                left: c.left.as_ref().map(|u| u.scaled(flip)),
                right: c.right.scaled(flip),
                status: Status::Complete,
                order: Vec::new(),
            }
        };
        let mut comps: Vec<FactorComponent> = gt.components().iter().map(canon).collect();
        comps.rotate_left(seed as usize % r);
        let found = RecoveredFactors { components: comps, pops: 0 };
        prop_assert!(exact_match(&gt, &found, EXACT_TOL).unwrap());
        let flipped = GroundTruth::new(
            gt.shape(),
            gt.k(),
            gt.beta(),
            gt.components().iter().map(|c| Component { value: c.value, left: c.left.as_ref().map(|u| u.scaled(-1.0)), right: c.right.scaled(-1.0) }).collect(),
        ).unwrap();
        prop_assert!(exact_match(&flipped, &found, EXACT_TOL).unwrap());
    }
}

#[test]
fn overlapping_closure_when_stage_a_is_complete() {
    for (shape, seed) in [(Shape::symmetric(40).unwrap(), 1u64), (Shape::non_symmetric(40, 30).unwrap(), 2)] {
        for t in 0..20 {
            let gt = gen_instance(&spec(shape, 6, 3, SupportMode::Overlapping), seed * 100 + t).unwrap();
            let truth = expand_ground_truth(&gt);
            let h = ParityCheck::new(shape.n_cols(), 4 * truth.len(), 3, t).unwrap();
            let out = peel_noiseless(&sketch_noiseless(&h, &truth).unwrap(), &h, shape, &NoiselessParams::default()).unwrap();
            if out.order.len() != truth.len() {
                continue;
            }
            let ex = extract_sparse_factors(&assemble_submatrix(&out.recovered), 1e-8, None).unwrap();
            assert!(exact_match(&gt, &ex.factors, EXACT_TOL).unwrap(), "{shape:?} trial {t}");
        }
    }
}

#[test]
fn initial_bin_degrees_follow_the_binomial_law() {
    let (k, d) = (100usize, 2usize);
    let kt = k_tilde(k);
    let bins = (d as f64 * kt as f64 / ((5.0 / 7.0) * (k as f64).ln())).ceil() as usize;
    let p = d as f64 / bins as f64;
    let mut hist = vec![0usize; 32];
    let mut total_bins = 0usize;
    let mut sum = 0usize;
    let mut g = rng(17);
    let shape = Shape::symmetric(2000).unwrap();
    for draw in 0..4u64 {
        let support: Vec<usize> = sample(&mut g, 2000, k).into_iter().map(|i| i + 1).collect();
        let h = ParityCheck::new(shape.n_cols(), bins, d, draw).unwrap();
        let mut deg = vec![0usize; bins];
        for (a, &i) in support.iter().enumerate() {
            for &j in &support[a..] {
                for b in h.column_rows(shape.index(i.min(j), i.max(j)).unwrap()).unwrap() {
                    deg[b] += 1;
                }
            }
        }
        for x in deg {
            hist[x.min(31)] += 1;
            sum += x;
        }
        total_bins += bins;
    }
    assert!(total_bins >= 10_000);
    let mean = sum as f64 / total_bins as f64;
    let expected = kt as f64 * p;
    assert!((mean / expected - 1.0).abs() <= 0.02, "mean {mean} vs {expected}");
    // Total variation against Binomial(k̃, d/R), pmf built by recurrence.
    let mut pmf = vec![(1.0 - p).powi(kt as i32)];
    for x in 1..32 {
        let prev = pmf[x - 1];
        pmf.push(prev * (kt as f64 - x as f64 + 1.0) / x as f64 * p / (1.0 - p));
    }
    let tv: f64 = hist.iter().zip(&pmf).map(|(&h, &q)| (h as f64 / total_bins as f64 - q).abs()).sum::<f64>() / 2.0;
    assert!(tv <= 0.03, "total variation {tv}");
}
