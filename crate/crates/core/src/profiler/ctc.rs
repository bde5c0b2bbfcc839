//! CTC length feasibility: the encoder must emit at least as many frames as
//! the target has tokens.

use std::io::BufRead;

use serde::Serialize;

use crate::encoder::{output_length, SubsamplingSchema};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Feasibility {
    pub feasible: bool,
    pub output_frames: usize,
    pub target_len: usize,
    /// Tokens that do not fit (0 when feasible).
    pub deficit: usize,
}

pub fn ctc_feasibility(t_in: usize, schema: &SubsamplingSchema, target_len: usize) -> Feasibility {
    let output_frames = if t_in == 0 {
        0
    } else {
        output_length(t_in, schema).unwrap_or(0)
    };
    let deficit = target_len.saturating_sub(output_frames);
    Feasibility {
        feasible: deficit == 0,
        output_frames,
        target_len,
        deficit,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ManifestRecord {
    pub duration_s: f64,
    pub transcript_len: usize,
}

/// Reads one JSON object per line, taking `duration_s` and the token count
/// from `length_field`. Blank lines are skipped; other keys are ignored.
pub fn read_manifest(reader: impl BufRead, length_field: &str) -> Result<Vec<ManifestRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: String| Error::InvalidArgument(format!("manifest line {}: {what}", i + 1));
        let v: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| bad(format!("invalid JSON ({e})")))?;
        let duration_s = v
            .get("duration_s")
            .and_then(|d| d.as_f64())
            .filter(|d| *d >= 0.0)
            .ok_or_else(|| bad("missing or negative duration_s".into()))?;
        let transcript_len = v
            .get(length_field)
            .and_then(|d| d.as_u64())
            .ok_or_else(|| bad(format!("missing non-negative integer {length_field}")))?
            as usize;
        out.push(ManifestRecord {
            duration_s,
            transcript_len,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DeficitBucket {
    pub label: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusFeasibility {
    pub records: usize,
    pub infeasible: usize,
    pub infeasible_fraction: f64,
    pub histogram: Vec<DeficitBucket>,
}

const BUCKETS: [(usize, usize, &str); 5] = [
    (0, 0, "0"),
    (1, 10, "1-10"),
    (11, 50, "11-50"),
    (51, 100, "51-100"),
    (101, usize::MAX, "101+"),
];

pub fn corpus_feasibility(
    records: &[ManifestRecord],
    schema: &SubsamplingSchema,
    frame_hop_ms: usize,
) -> CorpusFeasibility {
    let mut counts = [0usize; BUCKETS.len()];
    let mut infeasible = 0;
    for r in records {
        let frames = (r.duration_s * 1000.0 / frame_hop_ms as f64).round() as usize;
        let f = ctc_feasibility(frames, schema, r.transcript_len);
        if !f.feasible {
            infeasible += 1;
        }
        let b = BUCKETS
            .iter()
            .position(|&(lo, hi, _)| f.deficit >= lo && f.deficit <= hi)
            .expect("buckets cover all deficits");
        counts[b] += 1;
    }
    CorpusFeasibility {
        records: records.len(),
        infeasible,
        infeasible_fraction: if records.is_empty() {
            0.0
        } else {
            infeasible as f64 / records.len() as f64
        },
        histogram: BUCKETS
            .iter()
            .zip(counts)
            .map(|(&(_, _, label), count)| DeficitBucket {
                label: label.into(),
                count,
            })
            .collect(),
    }
}
