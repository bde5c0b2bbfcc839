use super::{MacCounter, Tensor};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f32 = 1e-5;

/// Rows of output computed per im2col tile in `conv2d`.
const CONV_TILE_ROWS: usize = 32;

/// `c[m×n] = a[m×k] · b[k×n]` with arbitrary element strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    c: &mut [f32],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                c[i * rsc + j * csc] = 0.0;
            }
        }
        return;
    }
    assert!((m - 1) * rsa + (k - 1) * csa < a.len());
    assert!((k - 1) * rsb + (n - 1) * csb < b.len());
    assert!((m - 1) * rsc + (n - 1) * csc < c.len());
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Standard matrix product `a[M×K] · b[K×N]`; counts M·K·N MACs.
pub fn matmul(a: &Tensor, b: &Tensor, counter: &mut MacCounter) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::shape(
            "matmul",
            format!("inner extents differ: [{m}x{k}] x [{k2}x{n}]"),
        ));
    }
    let mut out = Tensor::zeros(&[m, n]);
    gemm(
        m,
        k,
        n,
        a.data(),
        (k, 1),
        b.data(),
        (n, 1),
        out.data_mut(),
        (n, 1),
    );
    counter.add("matmul", (m * k * n) as u64);
    Ok(out)
}

/// `a[M×K] · bᵀ` where `b` is stored `[N×K]`; counts M·K·N MACs.
pub fn matmul_t(a: &Tensor, b: &Tensor, counter: &mut MacCounter) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (n, k2) = b.dims2()?;
    if k != k2 {
        return Err(Error::shape(
            "matmul_t",
            format!("inner extents differ: [{m}x{k}] x [{n}x{k2}]^T"),
        ));
    }
    let mut out = Tensor::zeros(&[m, n]);
    gemm(
        m,
        k,
        n,
        a.data(),
        (k, 1),
        b.data(),
        (1, k),
        out.data_mut(),
        (n, 1),
    );
    counter.add("matmul", (m * k * n) as u64);
    Ok(out)
}

/// Affine layer with torch-layout weight `[out×in]`: `x·wᵀ + bias`.
pub fn linear(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    counter: &mut MacCounter,
) -> Result<Tensor> {
    let mut y = matmul_t(x, weight, counter)?;
    if let Some(b) = bias {
        let (_, n) = y.dims2()?;
        if b.len() != n {
            return Err(Error::shape(
                "linear",
                format!("bias has {} entries, output has {n} columns", b.len()),
            ));
        }
        for row in y.data_mut().chunks_mut(n) {
            for (v, bv) in row.iter_mut().zip(b.data()) {
                *v += bv;
            }
        }
    }
    Ok(y)
}

/// Numerically stable softmax over the last axis.
pub fn softmax_last(x: &Tensor) -> Tensor {
    let n = *x.shape().last().unwrap_or(&1);
    let mut out = x.clone();
    if n == 0 {
        return out;
    }
    for row in out.data_mut().chunks_mut(n) {
        softmax_in_place(row);
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f64;
    for v in row.iter_mut() {
        let e = ((*v as f64) - (max as f64)).exp();
        *v = e as f32;
        sum += e;
    }
    let inv = 1.0 / sum;
    for v in row.iter_mut() {
        *v = ((*v as f64) * inv) as f32;
    }
}

/// Layer normalisation over the last axis with 64-bit statistics.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<Tensor> {
    let d = *x.shape().last().unwrap_or(&0);
    if d == 0 {
        return Err(Error::shape("layer_norm", "normalised axis is empty"));
    }
    if gamma.len() != d || beta.len() != d {
        return Err(Error::shape(
            "layer_norm",
            format!(
                "gamma/beta have {}/{} entries, axis has {d}",
                gamma.len(),
                beta.len()
            ),
        ));
    }
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(d) {
        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / d as f64;
        let var = row
            .iter()
            .map(|&v| {
                let c = v as f64 - mean;
                c * c
            })
            .sum::<f64>()
            / d as f64;
        let inv = 1.0 / (var + eps as f64).sqrt();
        for ((v, g), b) in row.iter_mut().zip(gamma.data()).zip(beta.data()) {
            *v = (((*v as f64 - mean) * inv) as f32) * g + b;
        }
    }
    Ok(out)
}

fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || input + 2 * pad < kernel {
        return None;
    }
    Some((input + 2 * pad - kernel) / stride + 1)
}

/// 2-D cross-correlation of `x[Cin×H×W]` with `w[Cout×Cin×kH×kW]`.
/// Counts Cout·Cin·kH·kW·H'·W' MACs.
pub fn conv2d(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    stride: (usize, usize),
    padding: (usize, usize),
    counter: &mut MacCounter,
) -> Result<Tensor> {
    let (c_in, h, wd) = x.dims3()?;
    let (c_out, c_in_w, kh, kw) = match w.shape() {
        &[a, b, c, d] => (a, b, c, d),
        s => {
            return Err(Error::shape(
                "conv2d",
                format!("kernel must be rank 4, got {s:?}"),
            ))
        }
    };
    if c_in != c_in_w {
        return Err(Error::shape(
            "conv2d",
            format!("input has {c_in} channels, kernel expects {c_in_w}"),
        ));
    }
    let (ho, wo) = match (
        conv_out_extent(h, kh, stride.0, padding.0),
        conv_out_extent(wd, kw, stride.1, padding.1),
    ) {
        (Some(a), Some(b)) if a >= 1 && b >= 1 => (a, b),
        _ => {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "output extent < 1 for input {h}x{wd}, kernel {kh}x{kw}, stride {stride:?}, padding {padding:?}"
                ),
            ))
        }
    };
    if let Some(b) = bias {
        if b.len() != c_out {
            return Err(Error::shape(
                "conv2d",
                "bias length differs from output channels",
            ));
        }
    }

    let patch = c_in * kh * kw;
    let mut out = Tensor::zeros(&[c_out, ho, wo]);
    let xd = x.data();
    let plane = ho * wo;
    let mut cols = Vec::new();
    let mut row0 = 0;
    while row0 < ho {
        let rows = CONV_TILE_ROWS.min(ho - row0);
        let ncols = rows * wo;
        cols.clear();
        cols.resize(patch * ncols, 0.0f32);
        for ci in 0..c_in {
            for ky in 0..kh {
                for kx in 0..kw {
                    let prow = (ci * kh + ky) * kw + kx;
                    let dst = &mut cols[prow * ncols..(prow + 1) * ncols];
                    for r in 0..rows {
                        let iy = ((row0 + r) * stride.0 + ky) as isize - padding.0 as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &xd[(ci * h + iy as usize) * wd..(ci * h + iy as usize + 1) * wd];
                        for ox in 0..wo {
                            let ix = (ox * stride.1 + kx) as isize - padding.1 as isize;
                            if ix >= 0 && ix < wd as isize {
                                dst[r * wo + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        let offset = row0 * wo;
        gemm(
            c_out,
            patch,
            ncols,
            w.data(),
            (patch, 1),
            &cols,
            (ncols, 1),
            &mut out.data_mut()[offset..],
            (plane, 1),
        );
        row0 += rows;
    }
    if let Some(b) = bias {
        for (co, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let bv = b.data()[co];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
    }
    counter.add("conv2d", (c_out * c_in * kh * kw * ho * wo) as u64);
    Ok(out)
}

/// Per-channel 1-D convolution of `x[C×L]` with `w[C×k]`.
pub fn depthwise_conv1d(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
    counter: &mut MacCounter,
) -> Result<Tensor> {
    let (c, l) = x.dims2()?;
    let (cw, k) = w.dims2()?;
    if c != cw {
        return Err(Error::shape(
            "depthwise_conv1d",
            format!("input has {c} channels, kernel has {cw}"),
        ));
    }
    let lo = match conv_out_extent(l, k, stride, padding) {
        Some(v) if v >= 1 => v,
        _ => {
            return Err(Error::shape(
                "depthwise_conv1d",
                format!("output extent < 1 for length {l}, kernel {k}"),
            ))
        }
    };
    let mut out = Tensor::zeros(&[c, lo]);
    for ch in 0..c {
        let xs = x.row(ch);
        let ws = w.row(ch);
        let b = bias.map_or(0.0, |b| b.data()[ch]);
        let os = out.row_mut(ch);
        for (o, ov) in os.iter_mut().enumerate() {
            let mut acc = 0.0f32;
            let base = (o * stride) as isize - padding as isize;
            for (j, wv) in ws.iter().enumerate() {
                let i = base + j as isize;
                if i >= 0 && (i as usize) < l {
                    acc += xs[i as usize] * wv;
                }
            }
            *ov = acc + b;
        }
    }
    counter.add("depthwise_conv", (c * k * lo) as u64);
    Ok(out)
}

/// Per-channel 2-D convolution of `x[C×H×W]` with `w[C×kH×kW]`.
pub fn depthwise_conv2d(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    stride: (usize, usize),
    padding: (usize, usize),
    counter: &mut MacCounter,
) -> Result<Tensor> {
    let (c, h, wd) = x.dims3()?;
    let (cw, kh, kw) = w.dims3()?;
    if c != cw {
        return Err(Error::shape(
            "depthwise_conv2d",
            format!("input has {c} channels, kernel has {cw}"),
        ));
    }
    let (ho, wo) = match (
        conv_out_extent(h, kh, stride.0, padding.0),
        conv_out_extent(wd, kw, stride.1, padding.1),
    ) {
        (Some(a), Some(b)) if a >= 1 && b >= 1 => (a, b),
        _ => {
            return Err(Error::shape(
                "depthwise_conv2d",
                format!("output extent < 1 for input {h}x{wd}, kernel {kh}x{kw}"),
            ))
        }
    };
    let mut out = Tensor::zeros(&[c, ho, wo]);
    let xd = x.data();
    let wdat = w.data();
    let od = out.data_mut();
    for ch in 0..c {
        let xs = &xd[ch * h * wd..(ch + 1) * h * wd];
        let ws = &wdat[ch * kh * kw..(ch + 1) * kh * kw];
        let b = bias.map_or(0.0, |b| b.data()[ch]);
        let os = &mut od[ch * ho * wo..(ch + 1) * ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = 0.0f32;
                for ky in 0..kh {
                    let iy = (oy * stride.0 + ky) as isize - padding.0 as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * stride.1 + kx) as isize - padding.1 as isize;
                        if ix >= 0 && ix < wd as isize {
                            acc += xs[iy as usize * wd + ix as usize] * ws[ky * kw + kx];
                        }
                    }
                }
                os[oy * wo + ox] = acc + b;
            }
        }
    }
    counter.add("depthwise_conv", (c * kh * kw * ho * wo) as u64);
    Ok(out)
}

pub fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

pub fn silu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    out.data_mut().iter_mut().for_each(|v| *v *= sigmoid(*v));
    out
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Gated linear unit: splits `axis` in half and returns `first · σ(second)`.
pub fn glu(x: &Tensor, axis: usize) -> Result<Tensor> {
    let shape = x.shape();
    if axis >= shape.len() {
        return Err(Error::shape(
            "glu",
            format!("axis {axis} out of range for {shape:?}"),
        ));
    }
    let n = shape[axis];
    if !n.is_multiple_of(2) {
        return Err(Error::shape(
            "glu",
            format!("axis {axis} has odd extent {n}"),
        ));
    }
    let half = n / 2;
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out_shape = shape.to_vec();
    out_shape[axis] = half;
    let mut out = Vec::with_capacity(outer * half * inner);
    let xd = x.data();
    for o in 0..outer {
        let base = o * n * inner;
        for i in 0..half * inner {
            let a = xd[base + i];
            let g = xd[base + half * inner + i];
            out.push(a * sigmoid(g));
        }
    }
    Tensor::new(out_shape, out)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "add",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let mut out = a.clone();
    out.data_mut()
        .iter_mut()
        .zip(b.data())
        .for_each(|(x, y)| *x += y);
    Ok(out)
}

pub fn transpose2d(x: &Tensor) -> Result<Tensor> {
    let (r, c) = x.dims2()?;
    let mut out = vec![0.0; r * c];
    let xd = x.data();
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = xd[i * c + j];
        }
    }
    Tensor::new(vec![c, r], out)
}
