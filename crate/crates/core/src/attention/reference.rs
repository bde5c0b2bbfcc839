//! Direct masked attention in 64-bit arithmetic.
//!
//! Materialises the whole score matrix (with the global token as an extra
//! row and column when present) and masks pairs outside the window. Shares
//! no code with the chunked backends; used as their equivalence reference.

use super::{AttentionContext, AttentionKind, AttentionParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn affine(x: &[f64], w: &Tensor, b: Option<&Tensor>) -> Vec<f64> {
    let (out, inp) = (w.shape()[0], w.shape()[1]);
    (0..out)
        .map(|o| {
            let acc = b.map_or(0.0, |b| b.data()[o] as f64);
            let row = &w.data()[o * inp..(o + 1) * inp];
            acc + row.iter().zip(x).map(|(&w, &v)| w as f64 * v).sum::<f64>()
        })
        .collect()
}

fn sinusoid(distance: f64, d: usize) -> Vec<f64> {
    (0..d)
        .map(|c| {
            let m = c / 2;
            let freq = 1.0 / 10000f64.powf((2 * m) as f64 / d as f64);
            if c % 2 == 0 {
                (distance * freq).sin()
            } else {
                (distance * freq).cos()
            }
        })
        .collect()
}

fn softmax(row: &[Option<f64>]) -> Vec<f64> {
    let max = row
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row
        .iter()
        .map(|s| s.map_or(0.0, |s| (s - max).exp()))
        .collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Output of the reference: regular rows, plus the global row when present.
pub struct ReferenceOutput {
    pub output: Tensor,
    pub global: Option<Tensor>,
}

/// Masked multi-head attention over `x[T×D]`. `ctx.kind == Full` disables
/// the mask; `LimitedWithGlobal` requires `global` (the token state).
pub fn masked_mhsa(
    x: &Tensor,
    params: &AttentionParams,
    heads: usize,
    ctx: &AttentionContext,
    global: Option<&Tensor>,
) -> Result<ReferenceOutput> {
    params.validate(heads)?;
    let (t, d) = x.dims2()?;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (left, right) = match ctx.kind {
        AttentionKind::Full => (usize::MAX / 2, usize::MAX / 2),
        _ => (ctx.window_left, ctx.window_right),
    };
    let rows: Vec<Vec<f64>> = (0..t)
        .map(|i| x.row(i).iter().map(|&v| v as f64).collect())
        .collect();
    let q: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| affine(r, &params.wq, Some(&params.bq)))
        .collect();
    let k: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| affine(r, &params.wk, Some(&params.bk)))
        .collect();
    let v: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| affine(r, &params.wv, Some(&params.bv)))
        .collect();

    let gstate: Option<Vec<f64>> = match ctx.kind {
        AttentionKind::LimitedWithGlobal => {
            let g = global
                .ok_or_else(|| Error::Attention("reference needs the global token".into()))?;
            Some(g.data().iter().map(|&v| v as f64).collect())
        }
        _ => None,
    };

    // Projected position vectors indexed by distance + (t - 1).
    let pos: Vec<Vec<f64>> = (0..2 * t - 1)
        .map(|r| {
            affine(
                &sinusoid(r as f64 - (t as f64 - 1.0), d),
                &params.pos_proj,
                None,
            )
        })
        .collect();

    let mut out = vec![vec![0.0f64; d]; t];
    let mut gout = gstate.as_ref().map(|_| vec![0.0f64; d]);

    for h in 0..heads {
        let hs = h * dh..(h + 1) * dh;
        let u = &params.u_bias.row(h);
        let vb = &params.v_bias.row(h);
        // Extended matrix: index 0 is the global token when present.
        let n = t + usize::from(gstate.is_some());
        let off = n - t;
        let mut scores = vec![vec![None; n]; n];
        for i in 0..t {
            for j in 0..t {
                let visible = (j + left >= i) && (j <= i + right);
                if !visible {
                    continue;
                }
                let p = &pos[i + t - 1 - j];
                let mut s = 0.0;
                for c in hs.clone() {
                    s += (q[i][c] + u[c - h * dh] as f64) * k[j][c];
                    s += (q[i][c] + vb[c - h * dh] as f64) * p[c];
                }
                scores[off + i][off + j] = Some(s * scale);
            }
        }
        if let (Some(g), Some(gp)) = (&gstate, &params.global) {
            let kg = affine(g, &params.wk, Some(&params.bk));
            let vg = affine(g, &params.wv, Some(&params.bv));
            // Regular rows see the token through the local projections.
            for i in 0..t {
                let s: f64 = hs
                    .clone()
                    .map(|c| (q[i][c] + u[c - h * dh] as f64) * kg[c])
                    .sum();
                scores[1 + i][0] = Some(s * scale);
            }
            // The token's own row uses the global projections over everything.
            let gq = affine(g, &gp.wq, Some(&gp.bq));
            let ext: Vec<&Vec<f64>> = std::iter::once(g).chain(rows.iter()).collect();
            let gk: Vec<Vec<f64>> = ext
                .iter()
                .map(|r| affine(r, &gp.wk, Some(&gp.bk)))
                .collect();
            let gv: Vec<Vec<f64>> = ext
                .iter()
                .map(|r| affine(r, &gp.wv, Some(&gp.bv)))
                .collect();
            for (j, kj) in gk.iter().enumerate() {
                let s: f64 = hs.clone().map(|c| gq[c] * kj[c]).sum();
                scores[0][j] = Some(s * scale);
            }
            let p = softmax(&scores[0]);
            let go = gout.as_mut().expect("global row allocated");
            for (j, pj) in p.iter().enumerate() {
                for c in hs.clone() {
                    go[c] += pj * gv[j][c];
                }
            }
            for i in 0..t {
                let p = softmax(&scores[1 + i]);
                for c in hs.clone() {
                    out[i][c] += p[0] * vg[c];
                }
                for j in 0..t {
                    for c in hs.clone() {
                        out[i][c] += p[1 + j] * v[j][c];
                    }
                }
            }
        } else {
            for i in 0..t {
                let p = softmax(&scores[i]);
                for j in 0..t {
                    for c in hs.clone() {
                        out[i][c] += p[j] * v[j][c];
                    }
                }
            }
        }
    }

    let finish = |ctx_row: &[f64]| -> Vec<f32> {
        affine(ctx_row, &params.wo, Some(&params.bo))
            .into_iter()
            .map(|v| v as f32)
            .collect()
    };
    let data: Vec<f32> = out.iter().flat_map(|r| finish(r)).collect();
    Ok(ReferenceOutput {
        output: Tensor::new(vec![t, d], data)?,
        global: match gout {
            Some(g) => Some(Tensor::new(vec![d], finish(&g))?),
            None => None,
        },
    })
}
