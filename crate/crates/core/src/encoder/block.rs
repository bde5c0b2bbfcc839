//! One Conformer block: half-step FFN, self-attention, convolution module,
//! half-step FFN, output LayerNorm, each sub-module residual.

use super::weights::{BlockWeights, ConvModuleWeights, FeedForwardWeights};
use crate::attention::{self_attention, AttentionContext};
use crate::error::{Error, Result};
use crate::tensor::{
    add, depthwise_conv1d, glu, layer_norm, linear, silu, transpose2d, MacCounter, Tensor,
    LAYER_NORM_EPS,
};

fn scaled_add(x: &Tensor, y: &Tensor, scale: f32) -> Result<Tensor> {
    if x.shape() != y.shape() {
        return Err(Error::shape(
            "residual",
            format!("{:?} vs {:?}", x.shape(), y.shape()),
        ));
    }
    let data = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| a + scale * b)
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

pub fn feed_forward(
    x: &Tensor,
    w: &FeedForwardWeights,
    counter: &mut MacCounter,
) -> Result<Tensor> {
    let h = layer_norm(x, &w.norm.gamma, &w.norm.beta, LAYER_NORM_EPS)?;
    let h = silu(&linear(&h, &w.w1, Some(&w.b1), counter)?);
    linear(&h, &w.w2, Some(&w.b2), counter)
}

pub fn conv_module(x: &Tensor, w: &ConvModuleWeights, counter: &mut MacCounter) -> Result<Tensor> {
    let h = layer_norm(x, &w.norm.gamma, &w.norm.beta, LAYER_NORM_EPS)?;
    let h = glu(&linear(&h, &w.pw1_weight, Some(&w.pw1_bias), counter)?, 1)?;
    let k = w.dw_weight.dims2()?.1;
    let h = transpose2d(&depthwise_conv1d(
        &transpose2d(&h)?,
        &w.dw_weight,
        Some(&w.dw_bias),
        1,
        k / 2,
        counter,
    )?)?;
    let h = silu(&layer_norm(
        &h,
        &w.dw_norm.gamma,
        &w.dw_norm.beta,
        LAYER_NORM_EPS,
    )?);
    linear(&h, &w.pw2_weight, Some(&w.pw2_bias), counter)
}

/// Runs block `index` on `x[T×D]`. With the global-token backend `global`
/// carries the token state in and the updated state out; the token passes
/// through the attention LayerNorm and attention residual only.
pub fn conformer_block(
    x: &Tensor,
    w: &BlockWeights,
    heads: usize,
    ctx: &AttentionContext,
    index: usize,
    global: Option<&Tensor>,
    counter: &mut MacCounter,
) -> Result<(Tensor, Option<Tensor>)> {
    x.dims2()?;
    counter.set_scope(format!("block{index}.ffn1"));
    let x = scaled_add(x, &feed_forward(x, &w.ffn1, counter)?, 0.5)?;

    counter.set_scope(format!("block{index}.mhsa"));
    let h = layer_norm(&x, &w.attn_norm.gamma, &w.attn_norm.beta, LAYER_NORM_EPS)?;
    let g_in = match global {
        Some(g) if ctx.has_global() => Some(
            layer_norm(
                &g.clone().reshape(&[1, g.len()])?,
                &w.attn_norm.gamma,
                &w.attn_norm.beta,
                LAYER_NORM_EPS,
            )?
            .reshape(&[g.len()])?,
        ),
        _ => None,
    };
    let (a, g_out) = self_attention(&h, &w.attn, heads, ctx, g_in.as_ref(), counter)?;
    let x = add(&x, &a)?;
    let global = match (global, g_out) {
        (Some(g), Some(go)) => Some(add(g, &go)?),
        _ => None,
    };

    counter.set_scope(format!("block{index}.conv"));
    let x = add(&x, &conv_module(&x, &w.conv, counter)?)?;

    counter.set_scope(format!("block{index}.ffn2"));
    let x = scaled_add(&x, &feed_forward(&x, &w.ffn2, counter)?, 0.5)?;
    let y = layer_norm(&x, &w.out_norm.gamma, &w.out_norm.beta, LAYER_NORM_EPS)?;
    counter.clear_scope();
    Ok((y, global))
}
