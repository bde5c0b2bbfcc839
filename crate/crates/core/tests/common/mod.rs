#![allow(dead_code)]

use fastconformer::attention::{AttentionContext, AttentionParams, GlobalProjections};
use fastconformer::encoder::{EncoderConfig, LayerType, SubsamplingSchema, SubsamplingStage};
use fastconformer::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-bound..bound)).collect(),
    )
    .unwrap()
}

/// Attention weights with independent global projections when requested.
pub fn attention_params(
    rng: &mut ChaCha8Rng,
    d: usize,
    heads: usize,
    global: bool,
) -> AttentionParams {
    let b = 1.0 / (d as f32).sqrt();
    let dh = d / heads;
    let mut m = |shape: &[usize]| uniform(rng, shape, b);
    let mut p = AttentionParams {
        wq: m(&[d, d]),
        bq: m(&[d]),
        wk: m(&[d, d]),
        bk: m(&[d]),
        wv: m(&[d, d]),
        bv: m(&[d]),
        wo: m(&[d, d]),
        bo: m(&[d]),
        pos_proj: m(&[d, d]),
        u_bias: m(&[heads, dh]),
        v_bias: m(&[heads, dh]),
        global: None,
    };
    if global {
        p.global = Some(GlobalProjections {
            wq: m(&[d, d]),
            bq: m(&[d]),
            wk: m(&[d, d]),
            bk: m(&[d]),
            wv: m(&[d, d]),
            bv: m(&[d]),
        });
    }
    p
}

pub fn features(rng: &mut ChaCha8Rng, t: usize, f: usize) -> Tensor {
    uniform(rng, &[t, f], 1.0)
}

/// A random small but complete encoder config.
pub fn random_tiny_config(rng: &mut ChaCha8Rng) -> EncoderConfig {
    let n_stages = rng.gen_range(2..=3);
    let mut stages = vec![SubsamplingStage::new(
        LayerType::FullConv2d,
        rng.gen_range(1..=4),
    )];
    for _ in 1..n_stages {
        let kind = if rng.gen_bool(0.5) {
            LayerType::FullConv2d
        } else {
            LayerType::DepthwiseSeparable
        };
        stages.push(SubsamplingStage::new(kind, rng.gen_range(1..=4)));
    }
    for s in &mut stages {
        s.kernel = [[1, 3, 5][rng.gen_range(0..3)], [1, 3][rng.gen_range(0..2)]];
    }
    let heads = [1, 2, 4][rng.gen_range(0..3)];
    let d_model = heads * rng.gen_range(1..=32 / heads);
    let (l, r) = (rng.gen_range(0..12), rng.gen_range(0..12));
    let attention = match rng.gen_range(0..3) {
        0 => AttentionContext::full(),
        1 => AttentionContext::limited(l, r),
        _ => AttentionContext::limited_with_global(l, r),
    };
    EncoderConfig {
        subsampling: SubsamplingSchema::new(stages),
        n_layers: rng.gen_range(0..=2),
        d_model,
        n_heads: heads,
        ffn_expansion: rng.gen_range(1..=4),
        conv_kernel: [1, 3, 5, 9][rng.gen_range(0..4)],
        attention,
        feature_dim: rng.gen_range(4..=20),
        frame_hop_ms: 10,
    }
}
