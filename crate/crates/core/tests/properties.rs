mod common;

use std::collections::BTreeSet;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use teamc::costmodel::{layer_flops, relative_flops, schedule_flops, BackboneSpec};
use teamc::expand::{neighbourhood_sets, window_cells};
use teamc::io::{decode_tokens, encode_tokens};
use teamc::merge::{matching_weights, HardMatching, SoftMatching};
use teamc::similarity::{aggregators, MaxAggregator};
use teamc::workload::{generate_workload, WorkloadSpec};
use teamc::*;

fn matrix(rows: std::ops::Range<usize>, cols: usize) -> impl Strategy<Value = TokenMatrix> {
    rows.prop_flat_map(move |r| {
        prop::collection::vec(-4.0f32..4.0, r * cols).prop_map(move |d| TokenMatrix::new(r, cols, d).unwrap())
    })
}

fn mask_strategy() -> impl Strategy<Value = BinaryMask> {
    (1usize..=2, 1usize..=12, 1usize..=12).prop_flat_map(|(v, h, w)| {
        prop::collection::vec(prop::bool::weighted(0.2), v * h * w)
            .prop_map(move |bits| BinaryMask::from_bits(PatchGrid::new(v, h, w).unwrap(), bits).unwrap())
    })
}

fn kernel() -> impl Strategy<Value = usize> {
    prop::sample::select(vec![1usize, 3, 5, 7])
}

fn set_of(mask: &BinaryMask) -> BTreeSet<usize> {
    mask.to_index_set().as_slice().iter().copied().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn cosine_bounded_and_symmetric(a in matrix(1..8, 5)) {
        let c = cosine_similarity_matrix(&a, &a).unwrap();
        for i in 0..a.rows() {
            for j in 0..a.rows() {
                let v = c.get(i, j);
                prop_assert!((-1.0 - 1e-5..=1.0 + 1e-5).contains(&v));
                prop_assert_eq!(v, c.get(j, i));
            }
        }
    }

    #[test]
    fn cosine_scale_invariance(a in matrix(1..8, 6), b in matrix(1..8, 6), row in 0usize..8, scale in 0.01f32..100.0) {
        let row = row % a.rows();
        let mut data = a.as_slice().to_vec();
        data[row * 6..(row + 1) * 6].iter_mut().for_each(|v| *v *= scale);
        let scaled = TokenMatrix::new(a.rows(), 6, data).unwrap();
        let c0 = cosine_similarity_matrix(&a, &b).unwrap();
        let c1 = cosine_similarity_matrix(&scaled, &b).unwrap();
        for (x, y) in c0.values.iter().zip(&c1.values) {
            prop_assert!((x - y).abs() <= 1e-5);
        }
    }

    #[test]
    fn anchor_mask_scale_invariant(img in matrix(16..17, 6), lang in matrix(1..5, 6), scale_pow in -6i32..6) {
        let grid = PatchGrid::new(1, 4, 4).unwrap();
        let scale = 2f32.powi(scale_pow) * 1.37;
        let scaled = TokenMatrix::new(lang.rows(), 6, lang.as_slice().iter().map(|v| v * scale).collect()).unwrap();
        let m0 = anchor_mask(&lang, &img, grid, AnchorScope::Global).unwrap();
        let m1 = anchor_mask(&scaled, &img, grid, AnchorScope::Global).unwrap();
        prop_assert!(m0.count() <= lang.rows());
        prop_assert_eq!(m0, m1);
    }

    #[test]
    fn top_m_separates_and_is_deterministic(scores in prop::collection::vec(-1.0f32..1.0, 0..40), frac in 0.0f64..=1.0) {
        let n = scores.len();
        let m = ((n as f64) * frac) as usize;
        let sv = ScoreVector(scores.clone());
        let picked = top_m(&sv, m).unwrap();
        prop_assert_eq!(picked.len(), m);
        prop_assert_eq!(&picked, &top_m(&ScoreVector(scores.clone()), m).unwrap());
        let min_in = picked.as_slice().iter().map(|&i| scores[i]).fold(f32::INFINITY, f32::min);
        let max_out = (0..n).filter(|i| !picked.contains(*i)).map(|i| scores[i]).fold(f32::NEG_INFINITY, f32::max);
        prop_assert!(m == 0 || m == n || min_in >= max_out);
    }

    #[test]
    fn guidance_scaling_keeps_sources(img in matrix(10..20, 8), guides in matrix(1..4, 8), scale in 0.05f32..20.0) {
        let scaled = TokenMatrix::new(guides.rows(), 8, guides.as_slice().iter().map(|v| v * scale).collect()).unwrap();
        let m = img.rows() / 2;
        for name in aggregators().names() {
            let agg = aggregators().get(name).unwrap();
            let a = top_m(&relevance_scores(&img, &guides, agg.as_ref()).unwrap(), m).unwrap();
            let b = top_m(&relevance_scores(&img, &scaled, agg.as_ref()).unwrap(), m).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn expansion_monotone_bounded_deterministic(mask in mask_strategy(), k in kernel(), tau in 0u32..4, seed in any::<u64>()) {
        let params = ExpandParams::new(k, tau).unwrap();
        let out = expand_mask(&mask, params, &mut RngState::new(seed)).unwrap();
        let again = expand_mask(&mask, params, &mut RngState::new(seed)).unwrap();
        prop_assert_eq!(&out, &again);
        let (input, output) = (set_of(&mask), set_of(&out));
        prop_assert!(input.is_subset(&output));
        let dense = dense_region(&mask, k, tau);
        let (_, sparse) = neighbourhood_sets(&density_map(&mask, k).unwrap(), tau);
        prop_assert!(output.len() <= input.len() + dense.len() + sparse.len());
    }

    #[test]
    fn expansion_matches_rule_oracle(mask in mask_strategy(), k in kernel(), tau in 0u32..4, seed in any::<u64>()) {
        let out = expand_mask(&mask, ExpandParams::new(k, tau).unwrap(), &mut RngState::new(seed)).unwrap();
        let oracle = naive_expand(&mask, k, tau, &mut RngState::new(seed));
        prop_assert_eq!(out.bits(), oracle.as_slice());
    }

    #[test]
    fn dense_region_shrinks_with_tau(mask in mask_strategy(), k in kernel(), tau in 0u32..6) {
        let density = density_map(&mask, k).unwrap();
        let region = |t: u32| -> BTreeSet<usize> {
            let (dense, _) = neighbourhood_sets(&density, t);
            dense.as_slice().iter().flat_map(|&c| window_cells(mask.grid(), c, k).unwrap()).collect()
        };
        prop_assert!(region(tau + 1).is_subset(&region(tau)));
    }

    #[test]
    fn views_expand_independently(bits in prop::collection::vec(prop::bool::weighted(0.2), 2 * 8 * 8), k in kernel(), tau in 0u32..4, seed in any::<u64>()) {
        let grid = PatchGrid::new(2, 8, 8).unwrap();
        let mask = BinaryMask::from_bits(grid, bits).unwrap();
        let params = ExpandParams::new(k, tau).unwrap();
        let stacked = expand_mask(&mask, params, &mut RngState::new(seed)).unwrap();
        let mut rng = RngState::new(seed);
        let v0 = expand_mask(&mask.view(0).unwrap(), params, &mut rng).unwrap();
        let v1 = expand_mask(&mask.view(1).unwrap(), params, &mut rng).unwrap();
        prop_assert_eq!(stacked, BinaryMask::stack(&[v0, v1]).unwrap());
    }

    #[test]
    fn keep_set_idempotent(mask in mask_strategy(), u in 0.0f64..=1.0) {
        let ctx = context_indices(mask.grid().total_tokens(), u).unwrap();
        let keep = keep_set(&mask, &ctx).unwrap();
        prop_assert_eq!(keep.union(&ctx), keep.clone());
        let expected: BTreeSet<usize> = set_of(&mask).union(&ctx.as_slice().iter().copied().collect()).copied().collect();
        let expected: Vec<usize> = expected.into_iter().collect();
        prop_assert_eq!(keep.as_slice(), expected.as_slice());
        prop_assert!(keep.len() >= mask.count().max(ctx.len()));
    }

    #[test]
    fn merge_invariants(s in matrix(1..10, 8), t in matrix(0..24, 8), hard in any::<bool>()) {
        let params = MergeParams { mode: if hard { "hard" } else { "soft" }.into(), ..MergeParams::default() };
        let w = if hard {
            matching_weights(&s, &t, &params, &HardMatching).unwrap()
        } else {
            matching_weights(&s, &t, &params, &SoftMatching::default()).unwrap()
        };
        let ns = s.rows();
        for row in w.chunks(ns) {
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-5);
            if hard {
                prop_assert_eq!(row.iter().filter(|&&x| x == 1.0).count(), 1);
            }
        }
        let (out, rep) = soft_bipartite_merge(&s, &t, &params).unwrap();
        let total: f64 = rep.absorbed.iter().map(|&x| x as f64).sum();
        prop_assert!((total - t.rows() as f64).abs() <= 1e-4);
        prop_assert_eq!(rep.tokens_after, ns);
        for j in 0..ns {
            for c in 0..8 {
                let vals = std::iter::once(s.row(j)[c]).chain((0..t.rows()).map(|i| t.row(i)[c]));
                let (lo, hi) = vals.fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
                let x = out.row(j)[c];
                prop_assert!(x >= lo - 1e-5 && x <= hi + 1e-5);
            }
        }
    }

    #[test]
    fn flops_additive_over_partitions(counts in prop::collection::vec(0usize..600, 1..12), split in 0usize..12) {
        let spec = BackboneSpec::new(counts.len(), 128, 512, 4).unwrap();
        let split = split % counts.len();
        let sched = TokenSchedule { input_visual: 600, visual: counts.clone(), non_visual: 7 };
        let head = TokenSchedule { input_visual: 600, visual: counts[..split].to_vec(), non_visual: 7 };
        let tail = TokenSchedule { input_visual: 600, visual: counts[split..].to_vec(), non_visual: 7 };
        let part = |s: &TokenSchedule| schedule_flops(s, &BackboneSpec { layers: s.layers(), ..spec }).unwrap_or(0);
        prop_assert_eq!(schedule_flops(&sched, &spec).unwrap(), part(&head) + part(&tail));
        prop_assert_eq!(relative_flops(&sched, &sched, &spec).unwrap(), 1.0);
    }

    #[test]
    fn layer_flops_increasing(n in 0usize..5000, d in 1usize..512, ff in 1usize..2048) {
        let spec = BackboneSpec { layers: 1, hidden: d, ffn: ff, heads: 1 };
        prop_assert!(layer_flops(n + 1, &spec) > layer_flops(n, &spec));
        if n > 0 {
            let wider = BackboneSpec { hidden: d + 1, ..spec };
            let bigger_ffn = BackboneSpec { ffn: ff + 1, ..spec };
            prop_assert!(layer_flops(n, &wider) > layer_flops(n, &spec));
            prop_assert!(layer_flops(n, &bigger_ffn) > layer_flops(n, &spec));
        }
    }

    #[test]
    fn token_file_round_trip(m in matrix(0..16, 5)) {
        let back = decode_tokens(&encode_tokens(&m).unwrap()).unwrap();
        prop_assert_eq!(back, m);
    }
}

#[test]
fn token_files_round_trip_large_random() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = seeded(77);
    for i in 0..100 {
        let rows = rng.random_range(0..=1024);
        let cols = rng.random_range(1..=256);
        let data = (0..rows * cols).map(|_| f32::from_bits(rng.random::<u32>() & 0xbf7f_ffff)).collect();
        let m = TokenMatrix::new(rows, cols, data).unwrap();
        let path = dir.path().join(format!("m{i}.tkb"));
        teamc::io::write_tokens(&m, &path).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 12 + 4 * (rows * cols) as u64);
        let back = teamc::io::read_tokens(&path).unwrap();
        let bits = |m: &TokenMatrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&m));
    }
}

#[test]
fn planted_block_recall_matches_oracle() {
    let grid = PatchGrid::new(1, 16, 16).unwrap();
    for r in [3usize, 4, 5] {
        let (mut got, mut want) = (0.0, 0.0);
        for trial in 0..100u64 {
            let mut rng = seeded(1000 * r as u64 + trial);
            let (top, left) = (rng.random_range(0..=16 - r), rng.random_range(0..=16 - r));
            let block: Vec<usize> = (top..top + r).flat_map(|i| (left..left + r).map(move |j| i * 16 + j)).collect();
            let keep = ((block.len() as f64) * 0.3).floor() as usize;
            let seeds: Vec<usize> = rand::seq::index::sample(&mut rng, block.len(), keep.max(1))
                .into_iter()
                .map(|i| block[i])
                .collect();
            let mask = BinaryMask::from_indices(grid, &seeds).unwrap();
            let out = expand_mask(&mask, ExpandParams::new(3, 1).unwrap(), &mut RngState::new(trial)).unwrap();
            let oracle = naive_expand(&mask, 3, 1, &mut RngState::new(trial));
            let recall = |bits: &[bool]| block.iter().filter(|&&c| bits[c]).count() as f64 / block.len() as f64;
            assert_eq!(recall(out.bits()), recall(&oracle));
            got += recall(out.bits());
            want += recall(&oracle);
        }
        assert_eq!(got / 100.0, want / 100.0);
    }
}

#[test]
fn pipeline_conservation_and_determinism() {
    let cfg = CompressionConfig::default();
    for seed in 0..20 {
        let w = generate_workload(&WorkloadSpec { seed, ..WorkloadSpec::default() }).unwrap();
        let a = run_pipeline(&w.e_img, &w.e_lang, &w.guidance, w.grid, &cfg).unwrap();
        let b = run_pipeline(&w.e_img, &w.e_lang, &w.guidance, w.grid, &cfg).unwrap();
        let strip = |mut r: PipelineReport| {
            r.timings = Default::default();
            r
        };
        assert_eq!(strip(a.clone()), strip(b));
        assert!(a.schedule.is_non_increasing());
        assert_eq!(a.visual_tokens, a.final_visual + a.pruned + a.merged);
        assert_eq!(a.schedule.visual[0], a.keep_size);
        assert!(a.schedule.visual[16..].iter().all(|&c| c == 80));
    }
}

#[test]
fn max_aggregator_is_default() {
    assert_eq!(CompressionConfig::default().aggregation, "max");
    let _ = MaxAggregator;
}
