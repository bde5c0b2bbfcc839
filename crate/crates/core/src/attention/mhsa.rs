use super::{relative_positions, AttentionContext, AttentionKind, AttentionParams};
use crate::error::{Error, Result};
use crate::tensor::{linear, matmul, matmul_t, MacCounter, Tensor};

/// Score assigned to pairs outside the window before softmax.
pub(crate) const MASKED_SCORE: f32 = f32::MIN;

struct Projected {
    q: Tensor,
    k: Tensor,
    v: Tensor,
    pos: Tensor,
}

fn check_input(x: &Tensor, params: &AttentionParams, heads: usize) -> Result<(usize, usize)> {
    params.validate(heads)?;
    let (t, d) = x.dims2()?;
    if t == 0 {
        return Err(Error::Attention(
            "sequence must have at least one position".into(),
        ));
    }
    if d != params.d_model() {
        return Err(Error::shape(
            "attention",
            format!("input width {d} differs from d_model {}", params.d_model()),
        ));
    }
    Ok((t, d))
}

fn project(
    x: &Tensor,
    params: &AttentionParams,
    window: (usize, usize),
    counter: &mut MacCounter,
) -> Result<Projected> {
    let q = linear(x, &params.wq, Some(&params.bq), counter)?;
    let k = linear(x, &params.wk, Some(&params.bk), counter)?;
    let v = linear(x, &params.wv, Some(&params.bv), counter)?;
    let table = relative_positions(window.0, window.1, params.d_model());
    let pos = matmul_t(&table, &params.pos_proj, counter)?;
    Ok(Projected { q, k, v, pos })
}

/// Columns of head `h` as a contiguous `[rows×dh]` tensor, optionally offset by `bias`.
fn head_cols(x: &Tensor, h: usize, dh: usize, bias: Option<&[f32]>) -> Tensor {
    let d = x.shape()[1];
    let rows = x.shape()[0];
    let mut out = Vec::with_capacity(rows * dh);
    for r in 0..rows {
        let src = &x.data()[r * d + h * dh..r * d + (h + 1) * dh];
        match bias {
            Some(b) => out.extend(src.iter().zip(b).map(|(a, b)| a + b)),
            None => out.extend_from_slice(src),
        }
    }
    Tensor::new(vec![rows, dh], out).expect("sized above")
}

fn write_head(dst: &mut Tensor, row0: usize, h: usize, dh: usize, src: &Tensor) {
    let d = dst.shape()[1];
    for (a, row) in src.data().chunks(dh).enumerate() {
        let r = row0 + a;
        dst.data_mut()[r * d + h * dh..r * d + (h + 1) * dh].copy_from_slice(row);
    }
}

/// Local keys/values of the global token, one row each.
struct GlobalKv {
    k: Tensor,
    v: Tensor,
}

/// Attention over query blocks of `block` rows, each paired with the
/// overlapping key chunk `[start - left, end + right)` clipped to the
/// sequence. Pairs outside the window are masked.
fn attend_blocks(
    proj: &Projected,
    params: &AttentionParams,
    heads: usize,
    (left, right): (usize, usize),
    block: usize,
    global: Option<&GlobalKv>,
    counter: &mut MacCounter,
) -> Result<Tensor> {
    let (t, d) = proj.q.dims2()?;
    let dh = d / heads;
    let scale = 1.0 / (dh as f32).sqrt();
    let off = usize::from(global.is_some());
    let mut ctx = Tensor::zeros(&[t, d]);
    for h in 0..heads {
        let qu = head_cols(&proj.q, h, dh, Some(params.u_bias.row(h)));
        let qv = head_cols(&proj.q, h, dh, Some(params.v_bias.row(h)));
        let kh = head_cols(&proj.k, h, dh, None);
        let vh = head_cols(&proj.v, h, dh, None);
        let ph = head_cols(&proj.pos, h, dh, None);
        let g = global.map(|g| (head_cols(&g.k, h, dh, None), head_cols(&g.v, h, dh, None)));

        let mut qs = 0;
        while qs < t {
            let qe = (qs + block).min(t);
            let ks = qs.saturating_sub(left);
            let ke = (qe + right).min(t);
            let (keys, vals) = match &g {
                Some((gk, gv)) => (
                    Tensor::concat_rows(&[gk.clone(), kh.slice_rows(ks, ke)?])?,
                    Tensor::concat_rows(&[gv.clone(), vh.slice_rows(ks, ke)?])?,
                ),
                None => (kh.slice_rows(ks, ke)?, vh.slice_rows(ks, ke)?),
            };
            let mut scores = matmul_t(&qu.slice_rows(qs, qe)?, &keys, counter)?;
            let band = matmul_t(&qv.slice_rows(qs, qe)?, &ph, counter)?;
            for a in 0..qe - qs {
                let i = qs + a;
                let brow = band.row(a);
                let row = scores.row_mut(a);
                if off == 1 {
                    row[0] *= scale;
                }
                for (b, s) in row[off..].iter_mut().enumerate() {
                    let j = ks + b;
                    if j + left < i || j > i + right {
                        *s = MASKED_SCORE;
                    } else {
                        *s = (*s + brow[i + right - j]) * scale;
                    }
                }
                crate::tensor::softmax_in_place(row);
            }
            let c = matmul(&scores, &vals, counter)?;
            write_head(&mut ctx, qs, h, dh, &c);
            qs = qe;
        }
    }
    Ok(ctx)
}

/// Full relative-position multi-head self-attention over `x[T×D]`.
pub fn full_mhsa(
    x: &Tensor,
    params: &AttentionParams,
    heads: usize,
    counter: &mut MacCounter,
) -> Result<Tensor> {
    let (t, _) = check_input(x, params, heads)?;
    let window = AttentionContext::full().effective_window(t);
    let proj = project(x, params, window, counter)?;
    let ctx = attend_blocks(&proj, params, heads, window, t, None, counter)?;
    linear(&ctx, &params.wo, Some(&params.bo), counter)
}

fn block_len(window: (usize, usize)) -> usize {
    window.0.max(window.1).max(1)
}

/// Sliding-window attention: position `t` sees `[t - window_left, t + window_right]`.
pub fn limited_mhsa(
    x: &Tensor,
    params: &AttentionParams,
    heads: usize,
    ctx: &AttentionContext,
    counter: &mut MacCounter,
) -> Result<Tensor> {
    if ctx.kind != AttentionKind::Limited {
        return Err(Error::Attention(format!(
            "limited_mhsa called with {:?} context",
            ctx.kind
        )));
    }
    let (t, _) = check_input(x, params, heads)?;
    let window = ctx.effective_window(t);
    let proj = project(x, params, window, counter)?;
    let out = attend_blocks(
        &proj,
        params,
        heads,
        window,
        block_len(window),
        None,
        counter,
    )?;
    linear(&out, &params.wo, Some(&params.bo), counter)
}

/// Sliding-window attention plus one global token.
///
/// `global` is the token's current state (`D` values). Regular positions
/// attend to it through the local key/value projections; the token itself
/// attends to every position through the global projections. Returns the
/// `T` regular rows and the token's own output row.
pub fn limited_global_mhsa(
    x: &Tensor,
    global: &Tensor,
    params: &AttentionParams,
    heads: usize,
    ctx: &AttentionContext,
    counter: &mut MacCounter,
) -> Result<(Tensor, Tensor)> {
    if ctx.kind != AttentionKind::LimitedWithGlobal {
        return Err(Error::Attention(format!(
            "limited_global_mhsa called with {:?} context",
            ctx.kind
        )));
    }
    let (t, d) = check_input(x, params, heads)?;
    let gp = params
        .global
        .as_ref()
        .ok_or_else(|| Error::Attention("global projections are missing".into()))?;
    if global.len() != d {
        return Err(Error::shape(
            "limited_global_mhsa",
            format!("global token has {} values, d_model is {d}", global.len()),
        ));
    }
    let g = Tensor::new(vec![1, d], global.data().to_vec())?;
    let window = ctx.effective_window(t);
    let proj = project(x, params, window, counter)?;
    let kv = GlobalKv {
        k: linear(&g, &params.wk, Some(&params.bk), counter)?,
        v: linear(&g, &params.wv, Some(&params.bv), counter)?,
    };
    let out = attend_blocks(
        &proj,
        params,
        heads,
        window,
        block_len(window),
        Some(&kv),
        counter,
    )?;
    let out = linear(&out, &params.wo, Some(&params.bo), counter)?;

    // The global token attends to itself and all T positions.
    let dh = d / heads;
    let scale = 1.0 / (dh as f32).sqrt();
    let ext = Tensor::concat_rows(&[g.clone(), x.clone()])?;
    let gq = linear(&g, &gp.wq, Some(&gp.bq), counter)?;
    let gk = linear(&ext, &gp.wk, Some(&gp.bk), counter)?;
    let gv = linear(&ext, &gp.wv, Some(&gp.bv), counter)?;
    let mut gctx = Tensor::zeros(&[1, d]);
    for h in 0..heads {
        let mut s = matmul_t(
            &head_cols(&gq, h, dh, None),
            &head_cols(&gk, h, dh, None),
            counter,
        )?;
        s.data_mut().iter_mut().for_each(|v| *v *= scale);
        crate::tensor::softmax_in_place(s.data_mut());
        let c = matmul(&s, &head_cols(&gv, h, dh, None), counter)?;
        write_head(&mut gctx, 0, h, dh, &c);
    }
    let gout = linear(&gctx, &params.wo, Some(&params.bo), counter)?.reshape(&[d])?;
    Ok((out, gout))
}

/// Dispatch on the backend kind. `global` is required for the global-token
/// backend and ignored otherwise.
pub fn self_attention(
    x: &Tensor,
    params: &AttentionParams,
    heads: usize,
    ctx: &AttentionContext,
    global: Option<&Tensor>,
    counter: &mut MacCounter,
) -> Result<(Tensor, Option<Tensor>)> {
    match ctx.kind {
        AttentionKind::Full => Ok((full_mhsa(x, params, heads, counter)?, None)),
        AttentionKind::Limited => Ok((limited_mhsa(x, params, heads, ctx, counter)?, None)),
        AttentionKind::LimitedWithGlobal => {
            let g = global.ok_or_else(|| {
                Error::Attention("global-token attention needs the token state".into())
            })?;
            let (y, g) = limited_global_mhsa(x, g, params, heads, ctx, counter)?;
            Ok((y, Some(g)))
        }
    }
}
