//! Greedy CTC decoding and a seeded random CTC head for exercising it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{linear, MacCounter, Tensor};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeResult {
    pub tokens: Vec<usize>,
    /// `[start, end)` encoder frames of the run that emitted each token.
    pub frame_spans: Vec<[usize; 2]>,
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Per-frame argmax (ties go to the lowest id), collapse repeats, drop blanks.
pub fn ctc_greedy_decode(log_probs: &Tensor, blank_id: usize) -> Result<DecodeResult> {
    let (t, v) = log_probs.dims2()?;
    if v < 2 || blank_id >= v {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 classes and blank < vocabulary, got vocabulary {v}, blank {blank_id}"
        )));
    }
    let mut out = DecodeResult::default();
    let mut run_start = 0;
    for i in 0..=t {
        let boundary =
            i == t || (i > 0 && argmax(log_probs.row(i)) != argmax(log_probs.row(i - 1)));
        if i > 0 && boundary {
            let id = argmax(log_probs.row(i - 1));
            if id != blank_id {
                out.tokens.push(id);
                out.frame_spans.push([run_start, i]);
            }
            run_start = i;
        }
    }
    Ok(out)
}

/// Linear projection to `vocab` classes followed by log-softmax.
#[derive(Debug, Clone)]
pub struct CtcHead {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl CtcHead {
    pub fn random(d_model: usize, vocab: usize, seed: u64) -> Result<Self> {
        if vocab < 2 {
            return Err(Error::InvalidArgument(format!(
                "vocabulary must be ≥ 2, got {vocab}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (d_model.max(1) as f32).sqrt();
        let mut draw =
            |n: usize| -> Vec<f32> { (0..n).map(|_| rng.gen_range(-bound..bound)).collect() };
        Ok(Self {
            weight: Tensor::new(vec![vocab, d_model], draw(vocab * d_model))?,
            bias: Tensor::new(vec![vocab], draw(vocab))?,
        })
    }

    pub fn log_probs(&self, x: &Tensor, counter: &mut MacCounter) -> Result<Tensor> {
        let mut y = linear(x, &self.weight, Some(&self.bias), counter)?;
        let v = self.bias.len();
        for row in y.data_mut().chunks_mut(v) {
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let lse = max as f64
                + row
                    .iter()
                    .map(|&s| ((s - max) as f64).exp())
                    .sum::<f64>()
                    .ln();
            for s in row.iter_mut() {
                *s = (*s as f64 - lse) as f32;
            }
        }
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(ids: &[usize], v: usize) -> Tensor {
        let mut t = Tensor::zeros(&[ids.len(), v]);
        for (i, &id) in ids.iter().enumerate() {
            t.row_mut(i)[id] = 1.0;
        }
        t
    }

    #[test]
    fn collapse_then_drop_blanks() {
        let r = ctc_greedy_decode(&one_hot(&[1, 1, 0, 1], 3), 0).unwrap();
        assert_eq!(r.tokens, vec![1, 1]);
        assert_eq!(r.frame_spans, vec![[0, 2], [3, 4]]);
        let r = ctc_greedy_decode(&one_hot(&[0, 0, 0], 3), 0).unwrap();
        assert!(r.tokens.is_empty());
        let r = ctc_greedy_decode(&Tensor::zeros(&[0, 3]), 0).unwrap();
        assert!(r.tokens.is_empty());
    }

    #[test]
    fn ties_pick_lowest_id() {
        let r = ctc_greedy_decode(&Tensor::filled(&[2, 4], -1.0), 3).unwrap();
        assert_eq!(r.tokens, vec![0]);
    }

    #[test]
    fn rejects_bad_vocabulary() {
        assert!(ctc_greedy_decode(&Tensor::zeros(&[2, 1]), 0).is_err());
        assert!(ctc_greedy_decode(&Tensor::zeros(&[2, 3]), 3).is_err());
    }

    #[test]
    fn head_rows_are_normalised() {
        let head = CtcHead::random(8, 5, 1).unwrap();
        let x = Tensor::filled(&[3, 8], 0.3);
        let lp = head.log_probs(&x, &mut MacCounter::new()).unwrap();
        for i in 0..3 {
            let z: f32 = lp.row(i).iter().map(|v| v.exp()).sum();
            assert!((z - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn json_shape() {
        let r = DecodeResult {
            tokens: vec![4],
            frame_spans: vec![[2, 5]],
        };
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"tokens":[4],"frame_spans":[[2,5]]}"#
        );
    }
}
