//! Buffered long-audio inference: overlapping buffers are encoded
//! independently and only each buffer's keep region survives the merge.

mod decode;
mod features;

pub use decode::{ctc_greedy_decode, CtcHead, DecodeResult};
pub use features::{concat_utterances, read_features, write_features, FEATURES_MAGIC};

use serde::{Deserialize, Serialize};

use crate::encoder::{output_length, Encoder};
use crate::error::{Error, Result};
use crate::profiler::memory_model;
use crate::tensor::{MacCounter, Tensor};

/// One buffer in input-frame units: encode `[start, end)`, keep `[keep_start, keep_end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferSpan {
    pub start: usize,
    pub end: usize,
    pub keep_start: usize,
    pub keep_end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferPlan {
    pub total_frames: usize,
    pub buffer_len: usize,
    pub context_left: usize,
    pub context_right: usize,
    pub buffers: Vec<BufferSpan>,
}

impl BufferPlan {
    /// Checks that keep regions partition `[0, total_frames)` in order and
    /// sit inside their buffers.
    pub fn verify(&self) -> Result<()> {
        let mut next = 0;
        for (i, b) in self.buffers.iter().enumerate() {
            let ok = b.keep_start == next
                && b.start <= b.keep_start
                && b.keep_start < b.keep_end
                && b.keep_end <= b.end
                && b.end <= self.total_frames
                && b.end - b.start <= self.buffer_len;
            if !ok {
                return Err(Error::InvalidArgument(format!(
                    "buffer {i} breaks the plan: {b:?}"
                )));
            }
            next = b.keep_end;
        }
        if next != self.total_frames {
            return Err(Error::InvalidArgument(format!(
                "keep regions end at {next}, input has {} frames",
                self.total_frames
            )));
        }
        Ok(())
    }
}

/// Splits `t` frames into buffers of `buffer_len` that overlap by
/// `context_left + context_right`. Interior buffers keep everything but
/// their context margins; the first and last keep up to the input edges.
pub fn plan_buffers(
    t: usize,
    buffer_len: usize,
    context_left: usize,
    context_right: usize,
) -> Result<BufferPlan> {
    if t == 0 || buffer_len == 0 {
        return Err(Error::InvalidArgument(format!(
            "input and buffer lengths must be positive, got {t} and {buffer_len}"
        )));
    }
    if buffer_len <= context_left + context_right {
        return Err(Error::InvalidArgument(format!(
            "buffer length {buffer_len} must exceed total context {}",
            context_left + context_right
        )));
    }
    let mut buffers = Vec::new();
    if t <= buffer_len {
        buffers.push(BufferSpan {
            start: 0,
            end: t,
            keep_start: 0,
            keep_end: t,
        });
    } else {
        let mut keep_start = 0;
        let mut start = 0;
        loop {
            let end = (start + buffer_len).min(t);
            let keep_end = if end < t { end - context_right } else { t };
            buffers.push(BufferSpan {
                start,
                end,
                keep_start,
                keep_end,
            });
            if keep_end == t {
                break;
            }
            keep_start = keep_end;
            start = keep_end - context_left;
        }
    }
    let plan = BufferPlan {
        total_frames: t,
        buffer_len,
        context_left,
        context_right,
        buffers,
    };
    debug_assert!(plan.verify().is_ok());
    Ok(plan)
}

/// Output frames `[0, n)` attributed to input frames `[0, k)`: an output frame
/// belongs to the buffer that keeps the input frame at its stride
/// position, so seam frames go to the earlier buffer.
fn output_boundary(k: usize, stride: usize) -> usize {
    k.div_ceil(stride)
}

/// Per-buffer record of a buffered run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BufferReport {
    pub span: BufferSpan,
    /// Input frames actually encoded (extended backwards if the buffer was
    /// shorter than the subsampling receptive field).
    pub encoded: [usize; 2],
    /// Merged output frames contributed by this buffer.
    pub output: [usize; 2],
    pub peak_memory_bytes: u64,
}

pub struct BufferedOutput {
    pub output: Tensor,
    pub buffers: Vec<BufferReport>,
}

/// Encodes each buffer separately and concatenates the keep regions.
pub fn buffered_encode(
    features: &Tensor,
    encoder: &Encoder,
    plan: &BufferPlan,
    counter: &mut MacCounter,
) -> Result<Tensor> {
    Ok(buffered_encode_with_report(features, encoder, plan, counter)?.output)
}

pub fn buffered_encode_with_report(
    features: &Tensor,
    encoder: &Encoder,
    plan: &BufferPlan,
    counter: &mut MacCounter,
) -> Result<BufferedOutput> {
    let (t, _) = features.dims2()?;
    if plan.total_frames != t {
        return Err(Error::InvalidArgument(format!(
            "plan covers {} frames, input has {t}",
            plan.total_frames
        )));
    }
    plan.verify()?;
    let cfg = encoder.config();
    let stride = cfg.subsampling.total_factor.max(1);
    let min = cfg.subsampling.min_input_frames();
    let mut parts = Vec::with_capacity(plan.buffers.len());
    let mut reports = Vec::with_capacity(plan.buffers.len());
    for span in &plan.buffers {
        let start = span.start.min(span.end.saturating_sub(min));
        let y = encoder.encode(&features.slice_rows(start, span.end)?, counter)?;
        let out_start = output_boundary(span.keep_start, stride);
        let out_end = if span.keep_end == t {
            output_length(t, &cfg.subsampling)?
        } else {
            output_boundary(span.keep_end, stride)
        };
        let offset = start / stride;
        let last = y.dims2()?.0.saturating_sub(1);
        let rows: Vec<Tensor> = (out_start..out_end)
            .map(|g| y.slice_rows((g - offset).min(last), (g - offset).min(last) + 1))
            .collect::<Result<_>>()?;
        if !rows.is_empty() {
            parts.push(Tensor::concat_rows(&rows)?);
        }
        reports.push(BufferReport {
            span: *span,
            encoded: [start, span.end],
            output: [out_start, out_end],
            peak_memory_bytes: memory_model(cfg, span.end - start)?.total_bytes,
        });
    }
    let output = if parts.is_empty() {
        Tensor::zeros(&[0, cfg.d_model])
    } else {
        Tensor::concat_rows(&parts)?
    };
    Ok(BufferedOutput {
        output,
        buffers: reports,
    })
}
