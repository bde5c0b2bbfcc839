//! `FCFT0001` feature files and utterance concatenation.
//!
//! Layout: magic `FCFT0001`, u32 LE `T`, u32 LE `F`, then `T·F` f32 LE
//! values, time-major.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FEATURES_MAGIC: &[u8; 8] = b"FCFT0001";

pub fn write_features(mut w: impl Write, features: &Tensor) -> Result<()> {
    let (t, f) = features.dims2()?;
    let too_big = |n: usize| {
        u32::try_from(n).map_err(|_| Error::InvalidArgument(format!("extent {n} exceeds u32")))
    };
    let mut buf = Vec::with_capacity(16 + 4 * features.len());
    buf.extend_from_slice(FEATURES_MAGIC);
    buf.extend_from_slice(&too_big(t)?.to_le_bytes());
    buf.extend_from_slice(&too_big(f)?.to_le_bytes());
    for v in features.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_features(mut r: impl Read) -> Result<Tensor> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 8 {
        return Err(Error::Format {
            offset: bytes.len(),
            detail: "truncated magic".into(),
        });
    }
    if &bytes[..8] != FEATURES_MAGIC {
        return Err(Error::Format {
            offset: 0,
            detail: format!(
                "bad magic {:?}, expected \"FCFT0001\"",
                String::from_utf8_lossy(&bytes[..8])
            ),
        });
    }
    if bytes.len() < 16 {
        return Err(Error::Format {
            offset: bytes.len(),
            detail: "truncated header".into(),
        });
    }
    let u32_at = |o: usize| {
        u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
    };
    let (t, f) = (u32_at(8), u32_at(12));
    let expected = 16 + 4 * t * f;
    if bytes.len() != expected {
        return Err(Error::Format {
            offset: bytes.len().min(expected),
            detail: format!(
                "header says {t}x{f} ({expected} bytes), file has {} bytes",
                bytes.len()
            ),
        });
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(vec![t, f], data)
}

/// Shuffles utterances with a seeded ChaCha8 stream and joins them with
/// `gap_frames` zero frames in between. Returns the features and the
/// order in which input indices were placed.
pub fn concat_utterances(
    utterances: &[Tensor],
    gap_frames: usize,
    seed: u64,
) -> Result<(Tensor, Vec<usize>)> {
    let f = match utterances.first() {
        Some(u) => u.dims2()?.1,
        None => {
            return Err(Error::InvalidArgument(
                "no utterances to concatenate".into(),
            ))
        }
    };
    for (i, u) in utterances.iter().enumerate() {
        let (_, fi) = u.dims2()?;
        if fi != f {
            return Err(Error::shape(
                "concat_utterances",
                format!("utterance {i} has {fi} features, expected {f}"),
            ));
        }
    }
    let mut order: Vec<usize> = (0..utterances.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let gap = Tensor::zeros(&[gap_frames, f]);
    let mut parts = Vec::with_capacity(2 * order.len());
    for (n, &i) in order.iter().enumerate() {
        if n > 0 && gap_frames > 0 {
            parts.push(gap.clone());
        }
        parts.push(utterances[i].clone());
    }
    Ok((Tensor::concat_rows(&parts)?, order))
}
