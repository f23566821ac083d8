//! Property tests for cross-cutting invariants: serialization round-trips,
//! selection invariances, schedule monotonicity, and flow-graph symmetry.

use proptest::prelude::*;

use flowcut::efficiency::{layer_flops, ModelDims, StackDims, TokenSchedule};
use flowcut::encoder::{build_encoder, EncoderConfig};
use flowcut::engine::{prune_count, select_keep};
use flowcut::flow::{flow_graph, CriteriaReport, TokenGrid};
use flowcut::rng::SplitMix64;
use flowcut::tensor::DenseTensor;
use flowcut::trace::{LayerTrace, Qkv, TraceFile};

fn arbitrary_trace(
    seed: u64,
    layers: usize,
    heads: usize,
    rows: usize,
    cols: usize,
    has_cls: bool,
    with_qkv: bool,
    with_attn: bool,
) -> TraceFile {
    let mut rng = SplitMix64::new(seed);
    let tokens = rows * cols + usize::from(has_cls);
    let dim = 3usize;
    let mut layer_list = Vec::new();
    for _ in 0..layers {
        let qkv = with_qkv.then(|| {
            let mut tensor = |shape: Vec<usize>| {
                let n: usize = shape.iter().product();
                let data: Vec<f32> = (0..n).map(|_| rng.next_weight() * 10.0).collect();
                DenseTensor::new(shape, data).unwrap()
            };
            Qkv {
                q: tensor(vec![heads, tokens, dim]),
                k: tensor(vec![heads, tokens, dim]),
                v: tensor(vec![heads, tokens, dim]),
            }
        });
        let attn = with_attn.then(|| {
            let mut data = vec![0.0f32; heads * tokens * tokens];
            for row in data.chunks_mut(tokens) {
                let mut sum = 0.0f32;
                for x in row.iter_mut() {
                    *x = rng.next_unit_f32() + 0.01;
                    sum += *x;
                }
                row.iter_mut().for_each(|x| *x /= sum);
            }
            DenseTensor::new(vec![heads, tokens, tokens], data).unwrap()
        });
        layer_list.push(LayerTrace { qkv, attn });
    }
    TraceFile::new(heads, tokens, dim, dim, has_cls, rows, cols, layer_list).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trace_round_trip_is_identity(
        seed in 0u64..10_000,
        layers in 1usize..4,
        heads in 1usize..3,
        rows in 1usize..4,
        cols in 1usize..4,
        has_cls: bool,
        kind in 0usize..3,
    ) {
        let (with_qkv, with_attn) = [(true, false), (false, true), (true, true)][kind];
        let t = arbitrary_trace(seed, layers, heads, rows, cols, has_cls, with_qkv, with_attn);
        let bytes = t.encode_to_vec();
        let back = TraceFile::decode_from_slice(&bytes).unwrap();
        prop_assert_eq!(&t, &back);
        prop_assert_eq!(bytes, back.encode_to_vec());
    }

    #[test]
    fn select_keep_invariant_under_positive_rescaling(
        seed in 0u64..10_000,
        len in 1usize..24,
        keep_frac in 0.0f64..1.0,
        scale in 0.01f64..100.0,
    ) {
        let mut rng = SplitMix64::new(seed);
        let scores: Vec<f64> = (0..len).map(|_| rng.next_unit_f32() as f64).collect();
        let scaled: Vec<f64> = scores.iter().map(|&s| s * scale).collect();
        let keep = (keep_frac * len as f64) as usize;
        let a = select_keep(&scores, keep).unwrap();
        let b = select_keep(&scaled, keep).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn prune_count_non_increasing_in_entropy_ratio(
        n in 1usize..2000,
        t_frac in 0.0f64..1.0,
        l in 1usize..16,
        r1 in 0.0f64..1.0,
        r2 in 0.0f64..1.0,
    ) {
        let target = (t_frac * n as f64) as usize;
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        prop_assert!(prune_count(n, target, l, lo) >= prune_count(n, target, l, hi));
        prop_assert_eq!(prune_count(n, target, l, 1.0), 0);
    }

    #[test]
    fn flops_strictly_monotone(
        n in 1usize..1000,
        d in 1usize..512,
        m in 1usize..2048,
    ) {
        let base = layer_flops(n, d, m);
        prop_assert!(layer_flops(n + 1, d, m) > base);
        prop_assert!(layer_flops(n, d + 1, m) > base);
        prop_assert!(layer_flops(n, d, m + 1) > base);
    }

    #[test]
    fn flops_schedule_totals_monotone_in_visual_budget(
        layers in 1usize..8,
        visual in 0usize..600,
        text in 0usize..64,
    ) {
        let dims = ModelDims {
            language: StackDims { layers, hidden: 64, intermediate: 256 },
            vision: None,
        };
        let smaller = TokenSchedule::constant(layers, visual, 0, text);
        let larger = TokenSchedule::constant(layers, visual + 1, 0, text);
        let a = flowcut::efficiency::flops_prefill(&dims, &smaller).unwrap();
        let b = flowcut::efficiency::flops_prefill(&dims, &larger).unwrap();
        prop_assert!(b > a);
    }

    #[test]
    fn encoder_step_equals_batch(seed in 0u64..500) {
        let cfg = EncoderConfig {
            layers: 2,
            heads: 2,
            model_dim: 8,
            mlp_dim: 16,
            grid_rows: 2,
            grid_cols: 3,
            has_cls: seed % 2 == 0,
            seed,
        };
        let grid = cfg.synthetic_grid();
        let mut a = build_encoder(&cfg).unwrap();
        let batch = a.encode(&grid).unwrap();
        let mut b = build_encoder(&cfg).unwrap();
        b.embed_input(&grid).unwrap();
        for (l, expected) in batch.iter().enumerate() {
            let got = b.encode_step(l).unwrap();
            prop_assert_eq!(&got, expected);
        }
    }

    #[test]
    fn aligned_criteria_never_contradict(
        seed in 0u64..10_000,
        n in 2usize..32,
        q_steps in 1usize..10,
    ) {
        // three criteria with the same induced ranking: a positive scale
        // and a constant shift preserve order
        let mut rng = SplitMix64::new(seed);
        let base: Vec<f64> = (0..n).map(|_| rng.next_unit_f32() as f64).collect();
        let scaled: Vec<f64> = base.iter().map(|&v| v * 3.5).collect();
        let shifted: Vec<f64> = base.iter().map(|&v| v + 2.0).collect();
        let q = q_steps as f64 * 0.05;
        let report = CriteriaReport::from_values(0, q, base, scaled, shifted).unwrap();
        prop_assert!(report.contradictory.is_empty());
        prop_assert!((report.rho_attention_similarity - 1.0).abs() < 1e-9);
    }

    #[test]
    fn flow_graph_respects_grid_flip_symmetry(
        seed in 0u64..10_000,
        rows in 1usize..5,
        cols in 2usize..5,
    ) {
        // flipping the grid left-right is a relabeling that carries grid
        // cells along: argmax labels permute consistently and the mean
        // attention distance is unchanged
        let n = rows * cols;
        let mut rng = SplitMix64::new(seed);
        let mut data = vec![0.0f32; n * n];
        for row in data.chunks_mut(n) {
            let mut sum = 0.0f32;
            for v in row.iter_mut() {
                *v = rng.next_unit_f32() + 0.01;
                sum += *v;
            }
            row.iter_mut().for_each(|v| *v /= sum);
        }
        let perm: Vec<usize> = (0..n)
            .map(|i| {
                let (r, c) = (i / cols, i % cols);
                r * cols + (cols - 1 - c)
            })
            .collect();
        let mut flipped = vec![0.0f32; n * n];
        for i in 0..n {
            for j in 0..n {
                flipped[i * n + j] = data[perm[i] * n + perm[j]];
            }
        }
        let grid = TokenGrid::new(rows, cols, false);
        let g = flow_graph(&DenseTensor::new(vec![n, n], data).unwrap(), &grid, 0).unwrap();
        let gf =
            flow_graph(&DenseTensor::new(vec![n, n], flipped).unwrap(), &grid, 0).unwrap();
        for i in 0..n {
            prop_assert_eq!(gf.inflow[i], perm[g.inflow[perm[i]]]);
            prop_assert_eq!(gf.outflow[i], perm[g.outflow[perm[i]]]);
        }
        prop_assert!((g.mean_attention_distance - gf.mean_attention_distance).abs() < 1e-9);
    }
}
