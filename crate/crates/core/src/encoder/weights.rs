//! Encoder parameter tree, seeded initialisation and the `FCWT0001`
//! weight container.
//!
//! Container layout (all integers unsigned 32-bit little-endian):
//! magic `FCWT0001`, then entries until end of file, each
//! `name_len, name (UTF-8), rank, extents[rank], data (f32 LE, row-major)`.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{EncoderConfig, LayerType};
use crate::attention::{init_global_from_local, AttentionParams, GlobalProjections};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const WEIGHTS_MAGIC: &[u8; 8] = b"FCWT0001";

#[derive(Debug, Clone, PartialEq)]
pub enum StageWeights {
    Full {
        weight: Tensor,
        bias: Tensor,
    },
    DepthwiseSeparable {
        dw_weight: Tensor,
        dw_bias: Tensor,
        pw_weight: Tensor,
        pw_bias: Tensor,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsamplingWeights {
    pub stages: Vec<StageWeights>,
    pub proj_weight: Tensor,
    pub proj_bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormWeights {
    pub gamma: Tensor,
    pub beta: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardWeights {
    pub norm: NormWeights,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvModuleWeights {
    pub norm: NormWeights,
    pub pw1_weight: Tensor,
    pub pw1_bias: Tensor,
    pub dw_weight: Tensor,
    pub dw_bias: Tensor,
    pub dw_norm: NormWeights,
    pub pw2_weight: Tensor,
    pub pw2_bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub ffn1: FeedForwardWeights,
    pub attn_norm: NormWeights,
    pub attn: AttentionParams,
    pub conv: ConvModuleWeights,
    pub ffn2: FeedForwardWeights,
    pub out_norm: NormWeights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    pub subsampling: SubsamplingWeights,
    pub blocks: Vec<BlockWeights>,
    /// Initial state of the global attention token (`[d_model]`), present
    /// only for the global-token backend.
    pub global_token: Option<Tensor>,
}

#[derive(Clone, Copy)]
enum Init {
    Uniform { fan_in: usize },
    Ones,
    Zeros,
}

trait WeightSource {
    fn take(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor>;
}

struct RandomSource(ChaCha8Rng);

impl WeightSource for RandomSource {
    fn take(&mut self, _name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        Ok(match init {
            Init::Ones => Tensor::filled(shape, 1.0),
            Init::Zeros => Tensor::zeros(shape),
            Init::Uniform { fan_in } => {
                let bound = 1.0 / (fan_in.max(1) as f32).sqrt();
                let n = shape.iter().product();
                let data = (0..n).map(|_| self.0.gen_range(-bound..bound)).collect();
                Tensor::new(shape.to_vec(), data)?
            }
        })
    }
}

struct NamedSource(HashMap<String, Tensor>);

impl WeightSource for NamedSource {
    fn take(&mut self, name: &str, shape: &[usize], _init: Init) -> Result<Tensor> {
        let t = self
            .0
            .remove(name)
            .ok_or_else(|| Error::MissingWeight(name.to_string()))?;
        if t.shape() != shape {
            return Err(Error::shape(
                "load_weights",
                format!("{name}: stored {:?}, expected {shape:?}", t.shape()),
            ));
        }
        Ok(t)
    }
}

fn norm(src: &mut dyn WeightSource, name: &str, d: usize) -> Result<NormWeights> {
    Ok(NormWeights {
        gamma: src.take(&format!("{name}.gamma"), &[d], Init::Ones)?,
        beta: src.take(&format!("{name}.beta"), &[d], Init::Zeros)?,
    })
}

fn ffn(src: &mut dyn WeightSource, name: &str, d: usize, f: usize) -> Result<FeedForwardWeights> {
    Ok(FeedForwardWeights {
        norm: norm(src, &format!("{name}.norm"), d)?,
        w1: src.take(
            &format!("{name}.linear1.weight"),
            &[f, d],
            Init::Uniform { fan_in: d },
        )?,
        b1: src.take(
            &format!("{name}.linear1.bias"),
            &[f],
            Init::Uniform { fan_in: d },
        )?,
        w2: src.take(
            &format!("{name}.linear2.weight"),
            &[d, f],
            Init::Uniform { fan_in: f },
        )?,
        b2: src.take(
            &format!("{name}.linear2.bias"),
            &[d],
            Init::Uniform { fan_in: f },
        )?,
    })
}

fn attention(
    src: &mut dyn WeightSource,
    name: &str,
    d: usize,
    heads: usize,
    global: bool,
    loading: bool,
) -> Result<AttentionParams> {
    let u = Init::Uniform { fan_in: d };
    let mut lin = |w: &str| -> Result<(Tensor, Tensor)> {
        Ok((
            src.take(&format!("{name}.{w}.weight"), &[d, d], u)?,
            src.take(&format!("{name}.{w}.bias"), &[d], u)?,
        ))
    };
    let (wq, bq) = lin("linear_q")?;
    let (wk, bk) = lin("linear_k")?;
    let (wv, bv) = lin("linear_v")?;
    let (wo, bo) = lin("linear_out")?;
    let dh = d / heads;
    let mut params = AttentionParams {
        wq,
        bq,
        wk,
        bk,
        wv,
        bv,
        wo,
        bo,
        pos_proj: src.take(&format!("{name}.linear_pos.weight"), &[d, d], u)?,
        u_bias: src.take(&format!("{name}.pos_bias_u"), &[heads, dh], u)?,
        v_bias: src.take(&format!("{name}.pos_bias_v"), &[heads, dh], u)?,
        global: None,
    };
    if global {
        if loading {
            let mut lin = |w: &str| -> Result<(Tensor, Tensor)> {
                Ok((
                    src.take(&format!("{name}.{w}.weight"), &[d, d], u)?,
                    src.take(&format!("{name}.{w}.bias"), &[d], u)?,
                ))
            };
            let (gq, gbq) = lin("global_q")?;
            let (gk, gbk) = lin("global_k")?;
            let (gv, gbv) = lin("global_v")?;
            params.global = Some(GlobalProjections {
                wq: gq,
                bq: gbq,
                wk: gk,
                bk: gbk,
                wv: gv,
                bv: gbv,
            });
        } else {
            params = init_global_from_local(&params)?;
        }
    }
    Ok(params)
}

impl EncoderWeights {
    fn build(cfg: &EncoderConfig, src: &mut dyn WeightSource, loading: bool) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let mut stages = Vec::new();
        let mut c_in = 1;
        for (i, s) in cfg.subsampling.stages.iter().enumerate() {
            let name = format!("subsampling.stage{i}");
            let [kh, kw] = s.kernel;
            let c = s.channels;
            stages.push(match s.layer_type {
                LayerType::FullConv2d => {
                    let fan_in = c_in * kh * kw;
                    StageWeights::Full {
                        weight: src.take(
                            &format!("{name}.weight"),
                            &[c, c_in, kh, kw],
                            Init::Uniform { fan_in },
                        )?,
                        bias: src.take(&format!("{name}.bias"), &[c], Init::Uniform { fan_in })?,
                    }
                }
                LayerType::DepthwiseSeparable => StageWeights::DepthwiseSeparable {
                    dw_weight: src.take(
                        &format!("{name}.dw.weight"),
                        &[c_in, kh, kw],
                        Init::Uniform { fan_in: kh * kw },
                    )?,
                    dw_bias: src.take(
                        &format!("{name}.dw.bias"),
                        &[c_in],
                        Init::Uniform { fan_in: kh * kw },
                    )?,
                    pw_weight: src.take(
                        &format!("{name}.pw.weight"),
                        &[c, c_in, 1, 1],
                        Init::Uniform { fan_in: c_in },
                    )?,
                    pw_bias: src.take(
                        &format!("{name}.pw.bias"),
                        &[c],
                        Init::Uniform { fan_in: c_in },
                    )?,
                },
            });
            c_in = c;
        }
        let flat = cfg.subsampling.flatten_dim(cfg.feature_dim)?;
        let subsampling = SubsamplingWeights {
            stages,
            proj_weight: src.take(
                "subsampling.proj.weight",
                &[d, flat],
                Init::Uniform { fan_in: flat },
            )?,
            proj_bias: src.take(
                "subsampling.proj.bias",
                &[d],
                Init::Uniform { fan_in: flat },
            )?,
        };

        let global = cfg.has_global();
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for i in 0..cfg.n_layers {
            let b = format!("block{i}");
            let k = cfg.conv_kernel;
            blocks.push(BlockWeights {
                ffn1: ffn(src, &format!("{b}.ffn1"), d, cfg.ffn_dim())?,
                attn_norm: norm(src, &format!("{b}.attn_norm"), d)?,
                attn: attention(src, &format!("{b}.attn"), d, cfg.n_heads, global, loading)?,
                conv: ConvModuleWeights {
                    norm: norm(src, &format!("{b}.conv.norm"), d)?,
                    pw1_weight: src.take(
                        &format!("{b}.conv.pointwise1.weight"),
                        &[2 * d, d],
                        Init::Uniform { fan_in: d },
                    )?,
                    pw1_bias: src.take(
                        &format!("{b}.conv.pointwise1.bias"),
                        &[2 * d],
                        Init::Uniform { fan_in: d },
                    )?,
                    dw_weight: src.take(
                        &format!("{b}.conv.depthwise.weight"),
                        &[d, k],
                        Init::Uniform { fan_in: k },
                    )?,
                    dw_bias: src.take(
                        &format!("{b}.conv.depthwise.bias"),
                        &[d],
                        Init::Uniform { fan_in: k },
                    )?,
                    dw_norm: norm(src, &format!("{b}.conv.depthwise_norm"), d)?,
                    pw2_weight: src.take(
                        &format!("{b}.conv.pointwise2.weight"),
                        &[d, d],
                        Init::Uniform { fan_in: d },
                    )?,
                    pw2_bias: src.take(
                        &format!("{b}.conv.pointwise2.bias"),
                        &[d],
                        Init::Uniform { fan_in: d },
                    )?,
                },
                ffn2: ffn(src, &format!("{b}.ffn2"), d, cfg.ffn_dim())?,
                out_norm: norm(src, &format!("{b}.out_norm"), d)?,
            });
        }
        let global_token = if global && cfg.n_layers > 0 {
            Some(src.take("global_token", &[d], Init::Zeros)?)
        } else {
            None
        };
        Ok(Self {
            subsampling,
            blocks,
            global_token,
        })
    }

    /// Every tensor with its container name, in serialisation order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        for (i, s) in self.subsampling.stages.iter().enumerate() {
            let name = format!("subsampling.stage{i}");
            match s {
                StageWeights::Full { weight, bias } => {
                    out.push((format!("{name}.weight"), weight));
                    out.push((format!("{name}.bias"), bias));
                }
                StageWeights::DepthwiseSeparable {
                    dw_weight,
                    dw_bias,
                    pw_weight,
                    pw_bias,
                } => {
                    out.push((format!("{name}.dw.weight"), dw_weight));
                    out.push((format!("{name}.dw.bias"), dw_bias));
                    out.push((format!("{name}.pw.weight"), pw_weight));
                    out.push((format!("{name}.pw.bias"), pw_bias));
                }
            }
        }
        out.push((
            "subsampling.proj.weight".into(),
            &self.subsampling.proj_weight,
        ));
        out.push(("subsampling.proj.bias".into(), &self.subsampling.proj_bias));

        fn push_norm<'a>(out: &mut Vec<(String, &'a Tensor)>, name: &str, n: &'a NormWeights) {
            out.push((format!("{name}.gamma"), &n.gamma));
            out.push((format!("{name}.beta"), &n.beta));
        }
        fn push_ffn<'a>(
            out: &mut Vec<(String, &'a Tensor)>,
            name: &str,
            f: &'a FeedForwardWeights,
        ) {
            push_norm(out, &format!("{name}.norm"), &f.norm);
            out.push((format!("{name}.linear1.weight"), &f.w1));
            out.push((format!("{name}.linear1.bias"), &f.b1));
            out.push((format!("{name}.linear2.weight"), &f.w2));
            out.push((format!("{name}.linear2.bias"), &f.b2));
        }

        for (i, b) in self.blocks.iter().enumerate() {
            let p = format!("block{i}");
            push_ffn(&mut out, &format!("{p}.ffn1"), &b.ffn1);
            push_norm(&mut out, &format!("{p}.attn_norm"), &b.attn_norm);
            let a = &b.attn;
            for (w, wt, bt) in [
                ("linear_q", &a.wq, &a.bq),
                ("linear_k", &a.wk, &a.bk),
                ("linear_v", &a.wv, &a.bv),
                ("linear_out", &a.wo, &a.bo),
            ] {
                out.push((format!("{p}.attn.{w}.weight"), wt));
                out.push((format!("{p}.attn.{w}.bias"), bt));
            }
            out.push((format!("{p}.attn.linear_pos.weight"), &a.pos_proj));
            out.push((format!("{p}.attn.pos_bias_u"), &a.u_bias));
            out.push((format!("{p}.attn.pos_bias_v"), &a.v_bias));
            if let Some(g) = &a.global {
                for (w, wt, bt) in [
                    ("global_q", &g.wq, &g.bq),
                    ("global_k", &g.wk, &g.bk),
                    ("global_v", &g.wv, &g.bv),
                ] {
                    out.push((format!("{p}.attn.{w}.weight"), wt));
                    out.push((format!("{p}.attn.{w}.bias"), bt));
                }
            }
            let c = &b.conv;
            push_norm(&mut out, &format!("{p}.conv.norm"), &c.norm);
            out.push((format!("{p}.conv.pointwise1.weight"), &c.pw1_weight));
            out.push((format!("{p}.conv.pointwise1.bias"), &c.pw1_bias));
            out.push((format!("{p}.conv.depthwise.weight"), &c.dw_weight));
            out.push((format!("{p}.conv.depthwise.bias"), &c.dw_bias));
            push_norm(&mut out, &format!("{p}.conv.depthwise_norm"), &c.dw_norm);
            out.push((format!("{p}.conv.pointwise2.weight"), &c.pw2_weight));
            out.push((format!("{p}.conv.pointwise2.bias"), &c.pw2_bias));
            push_ffn(&mut out, &format!("{p}.ffn2"), &b.ffn2);
            push_norm(&mut out, &format!("{p}.out_norm"), &b.out_norm);
        }
        if let Some(g) = &self.global_token {
            out.push(("global_token".into(), g));
        }
        out
    }

    pub fn element_count(&self) -> u64 {
        self.named_tensors()
            .iter()
            .map(|(_, t)| t.len() as u64)
            .sum()
    }

    /// FNV-1a over the bit patterns of every tensor in container order.
    pub fn checksum(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for (_, t) in self.named_tensors() {
            for v in t.data() {
                for byte in v.to_bits().to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    pub fn from_named(cfg: &EncoderConfig, tensors: Vec<(String, Tensor)>) -> Result<Self> {
        let mut src = NamedSource(tensors.into_iter().collect());
        let w = Self::build(cfg, &mut src, true)?;
        if let Some(extra) = src.0.keys().min() {
            return Err(Error::Config(format!(
                "weight file has tensor {extra:?} that the config does not use"
            )));
        }
        Ok(w)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(WEIGHTS_MAGIC)?;
        for (name, t) in self.named_tensors() {
            let bytes = name.as_bytes();
            w.write_all(&(bytes.len() as u32).to_le_bytes())?;
            w.write_all(bytes)?;
            w.write_all(&(t.rank() as u32).to_le_bytes())?;
            for &e in t.shape() {
                w.write_all(&(e as u32).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(t.len() * 4);
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(cfg: &EncoderConfig, r: impl Read) -> Result<Self> {
        Self::from_named(cfg, read_weight_entries(r)?)
    }
}

/// Deterministic fan-in-scaled uniform initialisation from a 64-bit seed.
/// Norm gains are one, norm shifts and the global token start at zero, and
/// global projections start as copies of the local ones.
pub fn init_weights(cfg: &EncoderConfig, seed: u64) -> Result<EncoderWeights> {
    let mut src = RandomSource(ChaCha8Rng::seed_from_u64(seed));
    EncoderWeights::build(cfg, &mut src, false)
}

struct Cursor<R> {
    inner: R,
    offset: usize,
}

impl<R: Read> Cursor<R> {
    /// Reads exactly `n` bytes; `Ok(None)` on a clean end of file before the first byte.
    fn take(&mut self, n: usize, what: &str, eof_ok: bool) -> Result<Option<Vec<u8>>> {
        let mut buf = vec![0u8; n];
        let mut filled = 0;
        while filled < n {
            let got = self.inner.read(&mut buf[filled..])?;
            if got == 0 {
                if filled == 0 && eof_ok {
                    return Ok(None);
                }
                return Err(Error::Format {
                    offset: self.offset + filled,
                    detail: format!("truncated while reading {what}"),
                });
            }
            filled += got;
        }
        self.offset += n;
        Ok(Some(buf))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what, false)?.expect("eof not allowed");
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parses an `FCWT0001` stream into its named tensors.
pub fn read_weight_entries(r: impl Read) -> Result<Vec<(String, Tensor)>> {
    let mut cur = Cursor {
        inner: r,
        offset: 0,
    };
    let magic = cur.take(8, "magic", false)?.expect("eof not allowed");
    if magic.as_slice() != WEIGHTS_MAGIC {
        return Err(Error::Format {
            offset: 0,
            detail: format!(
                "bad magic {:?}, expected \"FCWT0001\"",
                String::from_utf8_lossy(&magic)
            ),
        });
    }
    let mut out = Vec::new();
    loop {
        let start = cur.offset;
        let Some(len) = cur.take(4, "name length", true)? else {
            break;
        };
        let len = u32::from_le_bytes([len[0], len[1], len[2], len[3]]) as usize;
        let name_bytes = cur
            .take(len, "tensor name", false)?
            .expect("eof not allowed");
        let name = String::from_utf8(name_bytes).map_err(|_| Error::Format {
            offset: start + 4,
            detail: "tensor name is not UTF-8".into(),
        })?;
        let rank = cur.u32("rank")? as usize;
        if rank > 8 {
            return Err(Error::Format {
                offset: cur.offset - 4,
                detail: format!("implausible rank {rank} for {name}"),
            });
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32("extent")? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = cur
            .take(n * 4, "tensor data", false)?
            .expect("eof not allowed");
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}
