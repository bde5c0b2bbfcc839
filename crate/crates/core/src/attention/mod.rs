//! Self-attention backends: full relative-position MHSA, limited-context
//! MHSA over overlapping key chunks, and limited-context MHSA with one
//! global token that has its own query/key/value projections.

mod mhsa;
pub mod reference;

pub use mhsa::{full_mhsa, limited_global_mhsa, limited_mhsa, self_attention};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_WINDOW: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    Full,
    Limited,
    LimitedWithGlobal,
}

impl std::str::FromStr for AttentionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "limited" => Ok(Self::Limited),
            "limited_with_global" => Ok(Self::LimitedWithGlobal),
            other => Err(Error::InvalidArgument(format!(
                "unknown attention kind {other:?} (expected full, limited, limited_with_global)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionContext {
    pub kind: AttentionKind,
    #[serde(default = "default_window")]
    pub window_left: usize,
    #[serde(default = "default_window")]
    pub window_right: usize,
}

fn default_window() -> usize {
    DEFAULT_WINDOW
}

impl Default for AttentionContext {
    fn default() -> Self {
        Self {
            kind: AttentionKind::Full,
            window_left: DEFAULT_WINDOW,
            window_right: DEFAULT_WINDOW,
        }
    }
}

impl AttentionContext {
    pub fn full() -> Self {
        Self::default()
    }

    pub fn limited(window_left: usize, window_right: usize) -> Self {
        Self {
            kind: AttentionKind::Limited,
            window_left,
            window_right,
        }
    }

    pub fn limited_with_global(window_left: usize, window_right: usize) -> Self {
        Self {
            kind: AttentionKind::LimitedWithGlobal,
            window_left,
            window_right,
        }
    }

    /// Window extents clipped to what a sequence of `t` positions can use.
    /// Full attention behaves as an unbounded window.
    pub fn effective_window(&self, t: usize) -> (usize, usize) {
        let cap = t.saturating_sub(1);
        match self.kind {
            AttentionKind::Full => (cap, cap),
            _ => (self.window_left.min(cap), self.window_right.min(cap)),
        }
    }

    pub fn has_global(&self) -> bool {
        self.kind == AttentionKind::LimitedWithGlobal
    }
}

/// Query/key/value projections owned by the global token.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalProjections {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
}

/// Weights of one attention layer. Linear weights use `[out×in]` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    /// Projection of the sinusoidal relative-position table, no bias.
    pub pos_proj: Tensor,
    /// Content bias, `[heads×head_dim]`.
    pub u_bias: Tensor,
    /// Position bias, `[heads×head_dim]`.
    pub v_bias: Tensor,
    pub global: Option<GlobalProjections>,
}

impl AttentionParams {
    pub fn zeros(d_model: usize, heads: usize) -> Self {
        let dh = d_model / heads.max(1);
        let m = || Tensor::zeros(&[d_model, d_model]);
        let v = || Tensor::zeros(&[d_model]);
        Self {
            wq: m(),
            bq: v(),
            wk: m(),
            bk: v(),
            wv: m(),
            bv: v(),
            wo: m(),
            bo: v(),
            pos_proj: m(),
            u_bias: Tensor::zeros(&[heads, dh]),
            v_bias: Tensor::zeros(&[heads, dh]),
            global: None,
        }
    }

    /// Seeded uniform weights, scale `1/sqrt(d_model)`. With `with_global`
    /// the global projections are drawn independently of the local ones.
    pub fn random(d_model: usize, heads: usize, with_global: bool, seed: u64) -> Result<Self> {
        if heads == 0 || d_model == 0 || !d_model.is_multiple_of(heads) {
            return Err(Error::Attention(format!(
                "d_model {d_model} is not divisible by {heads} heads"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (d_model as f32).sqrt();
        let mut m = |shape: &[usize]| -> Tensor {
            let n = shape.iter().product();
            let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
            Tensor::new(shape.to_vec(), data).expect("sized from shape")
        };
        let (d, dh) = (d_model, d_model / heads);
        let mut p = Self {
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
        if with_global {
            p.global = Some(GlobalProjections {
                wq: m(&[d, d]),
                bq: m(&[d]),
                wk: m(&[d, d]),
                bk: m(&[d]),
                wv: m(&[d, d]),
                bv: m(&[d]),
            });
        }
        Ok(p)
    }

    pub fn d_model(&self) -> usize {
        self.wq.shape().first().copied().unwrap_or(0)
    }

    pub fn validate(&self, heads: usize) -> Result<()> {
        let d = self.d_model();
        if heads == 0 || d == 0 || !d.is_multiple_of(heads) {
            return Err(Error::Attention(format!(
                "d_model {d} is not divisible by {heads} heads"
            )));
        }
        let dh = d / heads;
        let mats = [
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("wo", &self.wo),
            ("pos_proj", &self.pos_proj),
        ];
        for (name, m) in mats {
            if m.shape() != [d, d] {
                return Err(Error::Attention(format!(
                    "{name} has shape {:?}, expected [{d}, {d}]",
                    m.shape()
                )));
            }
        }
        for (name, b) in [
            ("bq", &self.bq),
            ("bk", &self.bk),
            ("bv", &self.bv),
            ("bo", &self.bo),
        ] {
            if b.len() != d {
                return Err(Error::Attention(format!("{name} must have {d} entries")));
            }
        }
        for (name, b) in [("u_bias", &self.u_bias), ("v_bias", &self.v_bias)] {
            if b.shape() != [heads, dh] {
                return Err(Error::Attention(format!(
                    "{name} has shape {:?}, expected [{heads}, {dh}]",
                    b.shape()
                )));
            }
        }
        if let Some(g) = &self.global {
            for (name, m) in [
                ("global_wq", &g.wq),
                ("global_wk", &g.wk),
                ("global_wv", &g.wv),
            ] {
                if m.shape() != [d, d] {
                    return Err(Error::Attention(format!(
                        "{name} has shape {:?}, expected [{d}, {d}]",
                        m.shape()
                    )));
                }
            }
            for b in [&g.bq, &g.bk, &g.bv] {
                if b.len() != d {
                    return Err(Error::Attention(format!(
                        "global biases must have {d} entries"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Seeds the global-token projections with deep copies of the local ones.
pub fn init_global_from_local(params: &AttentionParams) -> Result<AttentionParams> {
    if params.global.is_some() {
        return Err(Error::Attention(
            "global projections are already present".into(),
        ));
    }
    let mut out = params.clone();
    out.global = Some(GlobalProjections {
        wq: params.wq.clone(),
        bq: params.bq.clone(),
        wk: params.wk.clone(),
        bk: params.bk.clone(),
        wv: params.wv.clone(),
        bv: params.bv.clone(),
    });
    Ok(out)
}

/// Sinusoidal table for relative distances `-right..=left`; row `c` holds
/// distance `c - right`, where distance is `query - key`.
pub fn relative_positions(left: usize, right: usize, d_model: usize) -> Tensor {
    let rows = left + right + 1;
    let mut data = vec![0.0f32; rows * d_model];
    for c in 0..rows {
        let r = c as f64 - right as f64;
        let row = &mut data[c * d_model..(c + 1) * d_model];
        for m in 0..d_model.div_ceil(2) {
            let freq = (-((2 * m) as f64) * (10000f64).ln() / d_model as f64).exp();
            row[2 * m] = (r * freq).sin() as f32;
            if 2 * m + 1 < d_model {
                row[2 * m + 1] = (r * freq).cos() as f32;
            }
        }
    }
    Tensor::new(vec![rows, d_model], data).expect("sized above")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checksum(t: &Tensor) -> u64 {
        t.data().iter().fold(0xcbf29ce484222325u64, |h, v| {
            (h ^ v.to_bits() as u64).wrapping_mul(0x100000001b3)
        })
    }

    fn sample_params() -> AttentionParams {
        let mut p = AttentionParams::zeros(4, 2);
        for (i, v) in p.wq.data_mut().iter_mut().enumerate() {
            *v = i as f32 * 0.1;
        }
        for (i, v) in p.wk.data_mut().iter_mut().enumerate() {
            *v = -(i as f32) * 0.2;
        }
        p.bv.data_mut()[1] = 3.0;
        p
    }

    #[test]
    fn global_init_copies_weights() {
        let p = sample_params();
        let mut g = init_global_from_local(&p).unwrap();
        let gp = g.global.as_ref().unwrap();
        assert_eq!(gp.wq, p.wq);
        assert_eq!(gp.wk, p.wk);
        assert_eq!(gp.bv, p.bv);
        assert_eq!(checksum(&gp.wq), checksum(&g.wq));
        assert_eq!(checksum(&gp.wv), checksum(&g.wv));

        g.global.as_mut().unwrap().wq.data_mut()[0] = 42.0;
        assert_eq!(g.wq, p.wq);
        assert_ne!(g.global.as_ref().unwrap().wq, g.wq);
    }

    #[test]
    fn global_init_rejects_existing() {
        let p = init_global_from_local(&sample_params()).unwrap();
        assert!(init_global_from_local(&p).is_err());
    }

    #[test]
    fn effective_window_clips() {
        let ctx = AttentionContext::limited(128, 4);
        assert_eq!(ctx.effective_window(10), (9, 4));
        assert_eq!(AttentionContext::full().effective_window(10), (9, 9));
        assert_eq!(ctx.effective_window(1), (0, 0));
    }

    #[test]
    fn context_defaults() {
        let ctx: AttentionContext = serde_json::from_str(r#"{"kind":"limited"}"#).unwrap();
        assert_eq!((ctx.window_left, ctx.window_right), (128, 128));
        assert!(serde_json::from_str::<AttentionContext>(r#"{"kind":"full","extra":1}"#).is_err());
    }

    #[test]
    fn validate_catches_bad_heads() {
        let p = AttentionParams::zeros(6, 3);
        assert!(p.validate(3).is_ok());
        assert!(p.validate(4).is_err());
    }

    #[test]
    fn position_table_layout() {
        let pe = relative_positions(2, 1, 4);
        assert_eq!(pe.shape(), &[4, 4]);
        // Row 1 is distance 0: sin(0) = 0, cos(0) = 1.
        assert_eq!(pe.row(1), &[0.0, 1.0, 0.0, 1.0]);
        // Distance -1 and +1 are mirror images in the sine terms.
        assert!((pe.row(0)[0] + pe.row(2)[0]).abs() < 1e-7);
    }
}
