//! Closed-form per-layer parameter, MAC and activation accounting.
//!
//! Each function mirrors the corresponding forward code path: MACs are the
//! matmul and convolution counts the instrumented forward reports, and
//! activation figures count the f32 tensors live at the layer's busiest
//! point.

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionContext, AttentionKind};
use crate::encoder::{EncoderConfig, LayerType, SubsamplingSchema};
use crate::error::{Error, Result};

pub const BYTES_PER_ELEMENT: u64 = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerProfile {
    pub name: String,
    pub params: u64,
    pub macs: u64,
    /// Activation bytes live at the layer's peak.
    pub peak_bytes: u64,
}

/// Per-stage geometry of a subsampling stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageGeometry {
    pub layer_type: LayerType,
    pub kernel: [usize; 2],
    pub c_in: usize,
    pub t_in: usize,
    pub f_in: usize,
    pub c_out: usize,
    pub t_out: usize,
    pub f_out: usize,
}

fn conv_extent(len: usize, k: usize, stride: usize) -> Option<usize> {
    let p = k / 2;
    (len + 2 * p >= k).then(|| (len + 2 * p - k) / stride + 1)
}

pub fn stage_geometry(
    schema: &SubsamplingSchema,
    t_in: usize,
    feature_dim: usize,
) -> Result<Vec<StageGeometry>> {
    let mut out = Vec::new();
    let (mut c, mut t, mut f) = (1, t_in, feature_dim);
    for s in &schema.stages {
        let (Some(to), Some(fo)) = (
            conv_extent(t, s.kernel[0], s.stride),
            conv_extent(f, s.kernel[1], s.stride),
        ) else {
            return Err(Error::InputTooShort {
                frames: t_in,
                min_frames: schema.min_input_frames(),
                detail: "subsampling stage has no complete window".into(),
            });
        };
        out.push(StageGeometry {
            layer_type: s.layer_type,
            kernel: s.kernel,
            c_in: c,
            t_in: t,
            f_in: f,
            c_out: s.channels,
            t_out: to,
            f_out: fo,
        });
        (c, t, f) = (s.channels, to, fo);
    }
    Ok(out)
}

pub fn stage_layer(i: usize, g: &StageGeometry) -> LayerProfile {
    let [kh, kw] = g.kernel;
    let (ci, co) = (g.c_in as u64, g.c_out as u64);
    let taps = (kh * kw) as u64;
    let out_px = (g.t_out * g.f_out) as u64;
    let in_elems = ci * (g.t_in * g.f_in) as u64;
    let (params, macs, elems) = match g.layer_type {
        LayerType::FullConv2d => (
            co * ci * taps + co,
            co * ci * taps * out_px,
            in_elems + co * out_px,
        ),
        LayerType::DepthwiseSeparable => (
            ci * taps + ci + co * ci + co,
            ci * taps * out_px + co * ci * out_px,
            in_elems + ci * out_px + co * out_px,
        ),
    };
    LayerProfile {
        name: format!("subsampling.stage{i}"),
        params,
        macs,
        peak_bytes: elems * BYTES_PER_ELEMENT,
    }
}

pub fn projection_layer(t: usize, flat: usize, d: usize) -> LayerProfile {
    let (t, flat, d) = (t as u64, flat as u64, d as u64);
    LayerProfile {
        name: "subsampling.proj".into(),
        params: flat * d + d,
        macs: t * flat * d,
        peak_bytes: (t * flat + t * d) * BYTES_PER_ELEMENT,
    }
}

/// Dimensions shared by every block in a stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockDims {
    pub d_model: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub conv_kernel: usize,
}

impl BlockDims {
    pub fn of(cfg: &EncoderConfig) -> Self {
        Self {
            d_model: cfg.d_model,
            heads: cfg.n_heads,
            ffn_dim: cfg.ffn_dim(),
            conv_kernel: cfg.conv_kernel,
        }
    }
}

pub fn ffn_params(d: u64, f: u64) -> u64 {
    2 * d + d * f + f + f * d + d
}

pub fn ffn_layer(name: String, t: usize, dims: &BlockDims, extra_params: u64) -> LayerProfile {
    let (t, d, f) = (t as u64, dims.d_model as u64, dims.ffn_dim as u64);
    LayerProfile {
        name,
        params: ffn_params(d, f) + extra_params,
        macs: 2 * t * d * f,
        peak_bytes: (3 * t * d + t * f) * BYTES_PER_ELEMENT,
    }
}

/// Attention MACs for `t` positions, following the chunked schedule: query
/// blocks of `max(left, right)` rows (the whole sequence for full
/// attention), each scored against its window-extended key chunk.
pub fn attention_macs(t: usize, d: usize, ctx: &AttentionContext) -> u64 {
    let (left, right) = ctx.effective_window(t);
    let block = match ctx.kind {
        AttentionKind::Full => t,
        _ => left.max(right).max(1),
    };
    let band = (left + right + 1) as u64;
    let (tu, du) = (t as u64, d as u64);
    let mut pairs = 0u64;
    let mut qs = 0;
    while qs < t {
        let qe = (qs + block).min(t);
        let ks = qs.saturating_sub(left);
        let ke = (qe + right).min(t);
        pairs += ((qe - qs) * (ke - ks)) as u64;
        qs = qe;
    }
    let global = u64::from(ctx.has_global());
    // q, k, v, output projections and the projected position band.
    let projections = 4 * tu * du * du + band * du * du;
    let content = du * (pairs + global * tu);
    let position = tu * band * du;
    let context = du * (pairs + global * tu);
    // Token keys/values, its query, keys/values over [token; x], its output.
    let token = global * (du * du * (2 * tu + 6) + du * 2 * (tu + 1));
    projections + content + position + context + token
}

/// Elements of the attention score matrices per head row: the whole
/// sequence for full attention, the window otherwise.
pub fn score_width(t: usize, ctx: &AttentionContext) -> u64 {
    let (left, right) = ctx.effective_window(t);
    let w = match ctx.kind {
        AttentionKind::Full => t,
        _ => left + right + 1,
    };
    (w + usize::from(ctx.has_global())) as u64
}

/// Bytes of score matrices (content scores plus position band) at `t`.
pub fn score_bytes(t: usize, heads: usize, ctx: &AttentionContext) -> u64 {
    2 * heads as u64 * t as u64 * score_width(t, ctx) * BYTES_PER_ELEMENT
}

pub fn attention_params(d: u64, global: bool) -> u64 {
    let local = 2 * d + 4 * (d * d + d) + d * d + 2 * d;
    local + if global { 3 * (d * d + d) } else { 0 }
}

pub fn mhsa_layer(
    name: String,
    t: usize,
    dims: &BlockDims,
    ctx: &AttentionContext,
    extra_params: u64,
) -> LayerProfile {
    let d = dims.d_model as u64;
    let tu = t as u64;
    let (left, right) = ctx.effective_window(t);
    let band = (left + right + 1) as u64;
    let mut elems = 7 * tu * d + 2 * band * d;
    if ctx.has_global() {
        elems += 2 * (tu + 1) * d + 4 * d + dims.heads as u64 * (tu + 1);
    }
    LayerProfile {
        name,
        params: attention_params(d, ctx.has_global()) + extra_params,
        macs: attention_macs(t, dims.d_model, ctx),
        peak_bytes: elems * BYTES_PER_ELEMENT + score_bytes(t, dims.heads, ctx),
    }
}

pub fn conv_params(d: u64, k: u64) -> u64 {
    2 * d + (2 * d * d + 2 * d) + (d * k + d) + 2 * d + (d * d + d)
}

pub fn conv_layer(name: String, t: usize, dims: &BlockDims) -> LayerProfile {
    let (t, d, k) = (t as u64, dims.d_model as u64, dims.conv_kernel as u64);
    LayerProfile {
        name,
        params: conv_params(d, k),
        macs: t * d * 2 * d + d * k * t + t * d * d,
        peak_bytes: 8 * t * d * BYTES_PER_ELEMENT,
    }
}

/// The four scoped layers of one block. The output LayerNorm is booked
/// with the second feed-forward module.
pub fn block_layers(
    prefix: &str,
    t: usize,
    dims: &BlockDims,
    ctx: &AttentionContext,
    mhsa_extra_params: u64,
) -> [LayerProfile; 4] {
    let d = dims.d_model as u64;
    [
        ffn_layer(format!("{prefix}.ffn1"), t, dims, 0),
        mhsa_layer(format!("{prefix}.mhsa"), t, dims, ctx, mhsa_extra_params),
        conv_layer(format!("{prefix}.conv"), t, dims),
        ffn_layer(format!("{prefix}.ffn2"), t, dims, 2 * d),
    ]
}

/// Every scoped layer of a runnable encoder for `t_in` input frames.
pub fn encoder_layers(cfg: &EncoderConfig, t_in: usize) -> Result<Vec<LayerProfile>> {
    cfg.validate()?;
    let min = cfg.subsampling.min_input_frames();
    if t_in < min {
        return Err(Error::InputTooShort {
            frames: t_in,
            min_frames: min,
            detail: format!(
                "{}x subsampling needs a full receptive field",
                cfg.subsampling.total_factor
            ),
        });
    }
    layers_for_length(cfg, t_in)
}

/// As [`encoder_layers`] without the receptive-field check, for the memory
/// model, which is defined for any non-empty input.
pub fn layers_for_length(cfg: &EncoderConfig, t_in: usize) -> Result<Vec<LayerProfile>> {
    cfg.validate()?;
    if t_in == 0 {
        return Err(Error::InputTooShort {
            frames: 0,
            min_frames: 1,
            detail: "empty input".into(),
        });
    }
    let geometry = stage_geometry(&cfg.subsampling, t_in, cfg.feature_dim)?;
    let mut out: Vec<LayerProfile> = geometry
        .iter()
        .enumerate()
        .map(|(i, g)| stage_layer(i, g))
        .collect();
    let t = geometry.last().map_or(t_in, |g| g.t_out);
    out.push(projection_layer(
        t,
        cfg.subsampling.flatten_dim(cfg.feature_dim)?,
        cfg.d_model,
    ));
    let dims = BlockDims::of(cfg);
    for i in 0..cfg.n_layers {
        // The learned initial global-token state lives with the first block.
        let extra = if i == 0 && cfg.has_global() {
            cfg.d_model as u64
        } else {
            0
        };
        out.extend(block_layers(
            &format!("block{i}"),
            t,
            &dims,
            &cfg.attention,
            extra,
        ));
    }
    Ok(out)
}
