mod common;

use fastconformer::attention::AttentionContext;
use fastconformer::encoder::{output_length, Encoder, EncoderConfig, SubsamplingSchema};
use fastconformer::longform::{
    buffered_encode, ctc_greedy_decode, plan_buffers, read_features, write_features,
};
use fastconformer::{MacCounter, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn keep_regions_partition_input(t in 1usize..5000, len in 2usize..600, cl in 0usize..200, cr in 0usize..200) {
        prop_assume!(len > cl + cr);
        let plan = plan_buffers(t, len, cl, cr).unwrap();
        let mut hits = vec![0u8; t];
        for b in &plan.buffers {
            prop_assert!(b.start <= b.keep_start && b.keep_end <= b.end && b.end - b.start <= len);
            for h in &mut hits[b.keep_start..b.keep_end] {
                *h += 1;
            }
        }
        prop_assert!(hits.iter().all(|&h| h == 1));
        for w in plan.buffers.windows(2) {
            prop_assert_eq!(w[0].end - w[1].start, cl + cr);
        }
    }

    #[test]
    fn greedy_matches_exhaustive_reference(seed: u64, blank in 0usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Small integer scores make ties likely.
        let data: Vec<f32> = (0..100).map(|_| rng.gen_range(0..4) as f32).collect();
        let lp = Tensor::new(vec![20, 5], data).unwrap();
        let got = ctc_greedy_decode(&lp, blank).unwrap();

        let path: Vec<usize> = (0..20)
            .map(|i| {
                let row = lp.row(i);
                (0..5).find(|&c| row.iter().all(|&v| v <= row[c])).unwrap()
            })
            .collect();
        let mut tokens = Vec::new();
        let mut spans = Vec::new();
        let mut i = 0;
        while i < path.len() {
            let mut j = i;
            while j < path.len() && path[j] == path[i] {
                j += 1;
            }
            if path[i] != blank {
                tokens.push(path[i]);
                spans.push([i, j]);
            }
            i = j;
        }
        prop_assert_eq!(&got.tokens, &tokens);
        prop_assert_eq!(&got.frame_spans, &spans);

        // Positive per-frame rescaling leaves the decode unchanged.
        let mut scaled = lp.clone();
        for r in 0..20 {
            let s = rng.gen_range(0.1f32..10.0);
            for v in scaled.row_mut(r) {
                *v *= s;
            }
        }
        prop_assert_eq!(ctc_greedy_decode(&scaled, blank).unwrap(), got);
    }
}

fn small_encoder(attention: AttentionContext) -> Encoder {
    let cfg = EncoderConfig {
        subsampling: SubsamplingSchema::fast(4),
        n_layers: 2,
        d_model: 16,
        n_heads: 2,
        ffn_expansion: 2,
        conv_kernel: 5,
        attention,
        feature_dim: 12,
        frame_hop_ms: 10,
    };
    Encoder::from_seed(cfg, 21).unwrap()
}

#[test]
fn full_attention_buffering_is_not_exact() {
    // Every frame attends to the whole buffer, so buffered output differs
    // from the whole-input pass even far from the seam.
    let enc = small_encoder(AttentionContext::full());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = common::features(&mut rng, 1200, 12);
    let plan = plan_buffers(1200, 800, 160, 160).unwrap();
    assert_eq!(plan.buffers.len(), 2);
    let whole = enc.encode(&x, &mut MacCounter::new()).unwrap();
    let merged = buffered_encode(&x, &enc, &plan, &mut MacCounter::new()).unwrap();
    assert_eq!(merged.shape(), whole.shape());
    let interior = merged.slice_rows(20, 40).unwrap();
    assert!(
        interior
            .max_abs_diff(&whole.slice_rows(20, 40).unwrap())
            .unwrap()
            > 0.0
    );
}

#[test]
fn limited_attention_buffering_is_exact_with_margins() {
    let enc = small_encoder(AttentionContext::limited(4, 4));
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let t = 3000;
    let x = common::features(&mut rng, t, 12);
    // Per layer the field grows by 4 + 2 output frames; 16 output frames of margin.
    let plan = plan_buffers(t, 512, 128, 128).unwrap();
    let whole = enc.encode(&x, &mut MacCounter::new()).unwrap();
    let merged = buffered_encode(&x, &enc, &plan, &mut MacCounter::new()).unwrap();
    assert_eq!(
        merged.shape()[0],
        output_length(t, &enc.config().subsampling).unwrap()
    );
    assert!(merged.max_abs_diff(&whole).unwrap() <= 1e-4);
}

#[test]
fn feature_file_round_trip_on_disk() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = common::features(&mut rng, 33, 80);
    let path = std::env::temp_dir().join(format!("fcft-{}.bin", std::process::id()));
    write_features(std::fs::File::create(&path).unwrap(), &x).unwrap();
    let y = read_features(std::fs::File::open(&path).unwrap()).unwrap();
    std::fs::remove_file(&path).unwrap();
    assert_eq!(x, y);
}
