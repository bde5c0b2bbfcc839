//! Analytical profiles of the downsampling schedules used by related
//! encoders. Only `conformer` and `fast_conformer` are runnable; the
//! progressive (Efficient Conformer) and U-Net (Squeezeformer) schedules
//! exist here as layer lists only.

use std::fmt;
use std::str::FromStr;

use super::layers::{
    block_layers, projection_layer, stage_geometry, stage_layer, BlockDims, LayerProfile,
    BYTES_PER_ELEMENT,
};
use super::{count_macs, ProfileReport};
use crate::attention::AttentionContext;
use crate::encoder::{
    build_config, LayerType, Preset, SubsamplingSchema, SubsamplingStage, FEATURE_DIM,
    LARGE_D_MODEL, LARGE_FFN_EXPANSION, LARGE_HEADS,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ReferenceSchema {
    Conformer,
    Squeezeformer,
    EfficientConformer,
    FastConformer,
}

impl ReferenceSchema {
    pub const ALL: [ReferenceSchema; 4] = [
        ReferenceSchema::Conformer,
        ReferenceSchema::Squeezeformer,
        ReferenceSchema::EfficientConformer,
        ReferenceSchema::FastConformer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ReferenceSchema::Conformer => "conformer",
            ReferenceSchema::Squeezeformer => "squeezeformer",
            ReferenceSchema::EfficientConformer => "efficient_conformer",
            ReferenceSchema::FastConformer => "fast_conformer",
        }
    }

    pub fn valid_names() -> String {
        Self::ALL.map(|s| s.name()).join(", ")
    }
}

impl fmt::Display for ReferenceSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ReferenceSchema {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown schema {s:?} (valid: {})",
                    Self::valid_names()
                ))
            })
    }
}

/// One segment of a multi-rate block stack.
#[derive(Debug, Clone, Copy)]
enum Segment {
    Blocks(usize),
    /// Stride-2 depthwise conv1d plus pointwise projection.
    Downsample,
    /// Repeat each frame twice and add the skip connection saved before
    /// the matching downsample.
    Upsample,
}

struct MultiRate {
    conv_kernel: usize,
    segments: &'static [Segment],
}

const EFFICIENT_CONFORMER: MultiRate = MultiRate {
    conv_kernel: 15,
    segments: &[Segment::Blocks(11), Segment::Downsample, Segment::Blocks(6)],
};

const SQUEEZEFORMER: MultiRate = MultiRate {
    conv_kernel: 31,
    segments: &[
        Segment::Blocks(7),
        Segment::Downsample,
        Segment::Blocks(8),
        Segment::Upsample,
        Segment::Blocks(2),
    ],
};

fn downsample_layer(name: String, t: usize, t_out: usize, d: usize, k: usize) -> LayerProfile {
    let (t, to, d, k) = (t as u64, t_out as u64, d as u64, k as u64);
    LayerProfile {
        name,
        params: d * k + d + d * d + d,
        macs: d * k * to + to * d * d,
        peak_bytes: (t * d + 2 * to * d) * BYTES_PER_ELEMENT,
    }
}

fn multi_rate_layers(schema: &MultiRate, t_in: usize) -> Result<Vec<LayerProfile>> {
    // 4x stem: full conv then depthwise-separable, 512 channels.
    let stem = SubsamplingSchema::new(vec![
        SubsamplingStage::new(LayerType::FullConv2d, LARGE_D_MODEL),
        SubsamplingStage::new(LayerType::DepthwiseSeparable, LARGE_D_MODEL),
    ]);
    let min = stem.min_input_frames();
    if t_in < min {
        return Err(Error::InputTooShort {
            frames: t_in,
            min_frames: min,
            detail: "4x stem needs a full receptive field".into(),
        });
    }
    let geometry = stage_geometry(&stem, t_in, FEATURE_DIM)?;
    let mut out: Vec<LayerProfile> = geometry
        .iter()
        .enumerate()
        .map(|(i, g)| stage_layer(i, g))
        .collect();
    let mut t = geometry.last().map_or(t_in, |g| g.t_out);
    out.push(projection_layer(
        t,
        stem.flatten_dim(FEATURE_DIM)?,
        LARGE_D_MODEL,
    ));

    let dims = BlockDims {
        d_model: LARGE_D_MODEL,
        heads: LARGE_HEADS,
        ffn_dim: LARGE_D_MODEL * LARGE_FFN_EXPANSION,
        conv_kernel: schema.conv_kernel,
    };
    let ctx = AttentionContext::full();
    let mut skips = Vec::new();
    let mut block = 0;
    for (i, seg) in schema.segments.iter().enumerate() {
        match *seg {
            Segment::Blocks(n) => {
                for _ in 0..n {
                    out.extend(block_layers(&format!("block{block}"), t, &dims, &ctx, 0));
                    block += 1;
                }
            }
            Segment::Downsample => {
                let k = schema.conv_kernel;
                let to = (t + 2 * (k / 2) - k) / 2 + 1;
                out.push(downsample_layer(
                    format!("downsample{i}"),
                    t,
                    to,
                    LARGE_D_MODEL,
                    k,
                ));
                skips.push(t);
                t = to;
            }
            Segment::Upsample => {
                let skip = skips.pop().ok_or_else(|| {
                    Error::Config("upsample segment without a matching downsample".into())
                })?;
                let d = LARGE_D_MODEL as u64;
                out.push(LayerProfile {
                    name: format!("upsample{i}"),
                    params: 0,
                    macs: 0,
                    peak_bytes: (t as u64 + 2 * skip as u64) * d * BYTES_PER_ELEMENT,
                });
                t = skip;
            }
        }
    }
    Ok(out)
}

/// Profile of a named downsampling schedule at Large dimensions.
/// `conformer` and `fast_conformer` are the A0 and A4 presets.
pub fn profile_reference_schema(schema: ReferenceSchema, t_in: usize) -> Result<ProfileReport> {
    let report = match schema {
        ReferenceSchema::Conformer => count_macs(&build_config(Preset::A0), t_in)?,
        ReferenceSchema::FastConformer => count_macs(&build_config(Preset::A4), t_in)?,
        ReferenceSchema::EfficientConformer => {
            ProfileReport::from_layers(multi_rate_layers(&EFFICIENT_CONFORMER, t_in)?, t_in, 10)
        }
        ReferenceSchema::Squeezeformer => {
            ProfileReport::from_layers(multi_rate_layers(&SQUEEZEFORMER, t_in)?, t_in, 10)
        }
    };
    Ok(report.with_name(schema.name()))
}

/// As [`profile_reference_schema`], looking the schedule up by name.
pub fn profile_reference_schemas(name: &str, t_in: usize) -> Result<ProfileReport> {
    profile_reference_schema(name.parse()?, t_in)
}
