mod common;

use fastconformer::attention::AttentionContext;
use fastconformer::encoder::{
    build_config, init_weights, output_length, Encoder, EncoderWeights, Preset,
};
use fastconformer::profiler::{count_macs, count_params};
use fastconformer::{Error, MacCounter};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn preset_param_counts_equal_weight_elements() {
    for p in Preset::ALL {
        let cfg = build_config(p);
        let w = init_weights(&cfg, 0).unwrap();
        assert_eq!(count_params(&cfg).unwrap(), w.element_count(), "{p:?}");
    }
}

#[test]
fn weights_file_round_trip_preserves_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let cfg = common::random_tiny_config(&mut rng);
        let enc = Encoder::from_seed(cfg.clone(), rng.gen()).unwrap();
        let mut buf = Vec::new();
        enc.weights().write_to(&mut buf).unwrap();
        let loaded = EncoderWeights::read_from(&cfg, buf.as_slice()).unwrap();
        let enc2 = Encoder::new(cfg.clone(), loaded).unwrap();
        let t = cfg.subsampling.min_input_frames() + 20;
        let x = common::features(&mut rng, t, cfg.feature_dim);
        let a = enc.encode(&x, &mut MacCounter::new()).unwrap();
        let b = enc2.encode(&x, &mut MacCounter::new()).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn output_shape_follows_length_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..10 {
        let cfg = common::random_tiny_config(&mut rng);
        let enc = Encoder::from_seed(cfg.clone(), 1).unwrap();
        let t = rng.gen_range(cfg.subsampling.min_input_frames()..150);
        let y = enc
            .encode(
                &common::features(&mut rng, t, cfg.feature_dim),
                &mut MacCounter::new(),
            )
            .unwrap();
        assert_eq!(
            y.shape(),
            &[output_length(t, &cfg.subsampling).unwrap(), cfg.d_model]
        );
        assert!(y.all_finite());
    }
}

#[test]
fn limited_backend_with_wide_window_matches_full() {
    let mut cfg = build_config(Preset::A4);
    cfg.n_layers = 2;
    cfg.d_model = 32;
    cfg.n_heads = 4;
    for s in &mut cfg.subsampling.stages {
        s.channels = 8;
    }
    let full = Encoder::from_seed(cfg.clone(), 4).unwrap();
    cfg.attention = AttentionContext::limited(1000, 1000);
    let limited = Encoder::from_seed(cfg, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = common::features(&mut rng, 400, 80);
    let a = full.encode(&x, &mut MacCounter::new()).unwrap();
    let b = limited.encode(&x, &mut MacCounter::new()).unwrap();
    assert!(a.max_abs_diff(&b).unwrap() <= 1e-4);
}

#[test]
fn instrumented_total_matches_profile_for_large_preset() {
    let cfg = build_config(Preset::A4);
    let enc = Encoder::from_seed(cfg.clone(), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = common::features(&mut rng, 96, 80);
    let mut c = MacCounter::new();
    enc.encode(&x, &mut c).unwrap();
    let report = count_macs(&cfg, 96).unwrap();
    assert_eq!(report.totals.macs, c.total());
    for l in &report.per_layer {
        assert_eq!(c.get(&l.name), l.macs, "{}", l.name);
    }
}

#[test]
fn config_json_is_fail_closed() {
    let cfg = build_config(Preset::A2);
    let json = serde_json::to_string(&cfg).unwrap();
    assert_eq!(
        fastconformer::encoder::EncoderConfig::from_json(&json).unwrap(),
        cfg
    );
    let typo = json.replacen("\"n_layers\"", "\"n_layer\"", 1);
    assert!(matches!(
        fastconformer::encoder::EncoderConfig::from_json(&typo),
        Err(Error::Json(_))
    ));
}
