//! Peak-memory model and maximum-duration estimation.
//!
//! Peak memory is the weight footprint plus the largest per-layer
//! activation footprint (layers run one at a time). Attention score
//! matrices make full attention quadratic in the encoded length; with a
//! bounded window every term is affine.

use serde::Serialize;

use super::count_params;
use super::layers::{layers_for_length, score_bytes, BYTES_PER_ELEMENT};
use crate::encoder::{output_length, EncoderConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MemoryEstimate {
    pub input_frames: usize,
    pub encoded_frames: usize,
    pub weights_bytes: u64,
    /// Largest single-layer activation footprint.
    pub activation_bytes: u64,
    pub peak_layer: String,
    /// Score-matrix bytes of one attention layer at the encoded length.
    pub score_bytes: u64,
    pub total_bytes: u64,
}

pub fn memory_model(cfg: &EncoderConfig, t_in: usize) -> Result<MemoryEstimate> {
    let layers = layers_for_length(cfg, t_in)?;
    let t = output_length(t_in, &cfg.subsampling)?;
    let peak = layers
        .iter()
        .max_by_key(|l| l.peak_bytes)
        .expect("projection layer always present");
    let weights_bytes = count_params(cfg)? * BYTES_PER_ELEMENT;
    let score = if cfg.n_layers > 0 {
        score_bytes(t, cfg.n_heads, &cfg.attention)
    } else {
        0
    };
    Ok(MemoryEstimate {
        input_frames: t_in,
        encoded_frames: t,
        weights_bytes,
        activation_bytes: peak.peak_bytes,
        peak_layer: peak.name.clone(),
        score_bytes: score,
        total_bytes: weights_bytes + peak.peak_bytes,
    })
}

fn minutes(cfg: &EncoderConfig, frames: usize) -> f64 {
    frames as f64 * cfg.frame_hop_ms as f64 / 60_000.0
}

/// Budget that makes `cfg` top out at exactly `minutes` of audio.
pub fn calibrate_budget(cfg: &EncoderConfig, minutes: f64) -> Result<u64> {
    if minutes.is_nan() || minutes <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "calibration duration must be positive, got {minutes}"
        )));
    }
    let frames = cfg.frames_for_seconds(minutes * 60.0).max(1);
    Ok(memory_model(cfg, frames)?.total_bytes)
}

/// Longest input (in minutes) whose modelled peak memory fits `budget_bytes`.
pub fn max_duration(cfg: &EncoderConfig, budget_bytes: u64) -> Result<f64> {
    let fits = |t: usize| -> Result<bool> { Ok(memory_model(cfg, t)?.total_bytes <= budget_bytes) };
    let weights = count_params(cfg)? * BYTES_PER_ELEMENT;
    if budget_bytes <= weights {
        return Err(Error::InvalidArgument(format!(
            "budget of {budget_bytes} bytes does not exceed the {weights} bytes of weights"
        )));
    }
    if !fits(1)? {
        return Err(Error::InvalidArgument(format!(
            "budget of {budget_bytes} bytes cannot hold a single input frame"
        )));
    }
    const LIMIT: usize = 1 << 40;
    let mut lo = 1;
    let mut hi = 2;
    while fits(hi)? {
        lo = hi;
        hi *= 2;
        if hi > LIMIT {
            return Err(Error::InvalidArgument(
                "budget exceeds the modelled range".into(),
            ));
        }
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if fits(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(minutes(cfg, lo))
}
