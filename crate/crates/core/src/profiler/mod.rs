//! Analytical parameter, MAC and memory accounting.
//!
//! The closed forms follow the same counting convention as the
//! instrumented forward pass (matmuls and convolutions only), so for any
//! runnable config `count_macs` equals a real [`MacCounter`](crate::MacCounter) total.

mod ctc;
mod layers;
mod memory;
mod schemas;

pub use ctc::{
    corpus_feasibility, ctc_feasibility, read_manifest, CorpusFeasibility, DeficitBucket,
    Feasibility, ManifestRecord,
};
pub use layers::{attention_macs, encoder_layers, score_bytes, LayerProfile, BYTES_PER_ELEMENT};
pub use memory::{calibrate_budget, max_duration, memory_model, MemoryEstimate};
pub use schemas::{profile_reference_schema, profile_reference_schemas, ReferenceSchema};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, LayerType};
use crate::error::Result;
use layers::{attention_params, conv_params, ffn_params};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileTotals {
    pub params: u64,
    pub macs: u64,
    /// Sum of the per-layer activation peaks.
    pub peak_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub schema_name: String,
    pub input_duration_s: f64,
    pub input_frames: usize,
    pub per_layer: Vec<LayerProfile>,
    pub totals: ProfileTotals,
    /// Weights plus the largest single-layer activation footprint.
    pub peak_memory_bytes: u64,
}

impl ProfileReport {
    pub fn from_layers(per_layer: Vec<LayerProfile>, input_frames: usize, hop_ms: usize) -> Self {
        let totals = per_layer
            .iter()
            .fold(ProfileTotals::default(), |t, l| ProfileTotals {
                params: t.params + l.params,
                macs: t.macs + l.macs,
                peak_bytes: t.peak_bytes + l.peak_bytes,
            });
        let peak = per_layer.iter().map(|l| l.peak_bytes).max().unwrap_or(0);
        Self {
            schema_name: String::new(),
            input_duration_s: input_frames as f64 * hop_ms as f64 / 1000.0,
            input_frames,
            per_layer,
            peak_memory_bytes: totals.params * BYTES_PER_ELEMENT + peak,
            totals,
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.schema_name = name.into();
        self
    }

    pub fn gmacs(&self) -> f64 {
        self.totals.macs as f64 / 1e9
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data")
    }

    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "schema {}  input {:.2} s ({} frames)",
            self.schema_name, self.input_duration_s, self.input_frames
        );
        let w = self
            .per_layer
            .iter()
            .map(|l| l.name.len())
            .max()
            .unwrap_or(5)
            .max(5);
        let _ = writeln!(
            s,
            "{:<w$}  {:>12}  {:>16}  {:>14}",
            "layer", "params", "macs", "peak_bytes"
        );
        for l in &self.per_layer {
            let _ = writeln!(
                s,
                "{:<w$}  {:>12}  {:>16}  {:>14}",
                l.name, l.params, l.macs, l.peak_bytes
            );
        }
        let _ = writeln!(
            s,
            "{:<w$}  {:>12}  {:>16}  {:>14}",
            "total", self.totals.params, self.totals.macs, self.totals.peak_bytes
        );
        let _ = writeln!(
            s,
            "params {:.2} M  GMACs {:.2}  peak memory {:.1} MiB",
            self.totals.params as f64 / 1e6,
            self.gmacs(),
            self.peak_memory_bytes as f64 / (1024.0 * 1024.0)
        );
        s
    }
}

/// Short description used as the report name for ad-hoc configs.
pub fn describe(cfg: &EncoderConfig) -> String {
    let kinds: Vec<&str> = cfg
        .subsampling
        .stages
        .iter()
        .map(|s| match s.layer_type {
            LayerType::FullConv2d => "conv",
            LayerType::DepthwiseSeparable => "dwsep",
        })
        .collect();
    format!(
        "{}x[{}] ch{} k{} {}x{}",
        cfg.subsampling.total_factor,
        kinds.join(","),
        cfg.subsampling.out_channels(),
        cfg.conv_kernel,
        cfg.n_layers,
        cfg.d_model
    )
}

/// Exact parameter count; equals the element count of `init_weights(cfg)`.
pub fn count_params(cfg: &EncoderConfig) -> Result<u64> {
    cfg.validate()?;
    let mut total = 0u64;
    let mut c_in = 1u64;
    for s in &cfg.subsampling.stages {
        let taps = (s.kernel[0] * s.kernel[1]) as u64;
        let c = s.channels as u64;
        total += match s.layer_type {
            LayerType::FullConv2d => c * c_in * taps + c,
            LayerType::DepthwiseSeparable => c_in * taps + c_in + c * c_in + c,
        };
        c_in = c;
    }
    let d = cfg.d_model as u64;
    total += cfg.subsampling.flatten_dim(cfg.feature_dim)? as u64 * d + d;
    let block = ffn_params(d, cfg.ffn_dim() as u64) * 2
        + attention_params(d, cfg.has_global())
        + conv_params(d, cfg.conv_kernel as u64)
        + 2 * d;
    total += block * cfg.n_layers as u64;
    if cfg.has_global() && cfg.n_layers > 0 {
        total += d;
    }
    Ok(total)
}

/// Per-layer closed-form profile for `t_in` input frames.
pub fn count_macs(cfg: &EncoderConfig, t_in: usize) -> Result<ProfileReport> {
    Ok(
        ProfileReport::from_layers(encoder_layers(cfg, t_in)?, t_in, cfg.frame_hop_ms)
            .with_name(describe(cfg)),
    )
}
