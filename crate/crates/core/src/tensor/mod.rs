//! Dense row-major f32 tensors and the multiply-accumulate counter that
//! every counted primitive reports into.

mod counter;
mod ops;

pub use counter::MacCounter;
pub(crate) use ops::softmax_in_place;
pub use ops::{
    add, conv2d, depthwise_conv1d, depthwise_conv2d, glu, layer_norm, linear, matmul, matmul_t,
    relu, sigmoid, silu, softmax_last, transpose2d, LAYER_NORM_EPS,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!(
                    "shape {:?} needs {} elements, got {}",
                    shape,
                    expected,
                    data.len()
                ),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f32) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[a, b] => Ok((a, b)),
            s => Err(Error::shape("dims2", format!("expected rank 2, got {s:?}"))),
        }
    }

    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape.as_slice() {
            &[a, b, c] => Ok((a, b, c)),
            s => Err(Error::shape("dims3", format!("expected rank 3, got {s:?}"))),
        }
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f32] {
        let cols = *self.shape.last().unwrap_or(&1);
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        let cols = *self.shape.last().unwrap_or(&1);
        &mut self.data[i * cols..(i + 1) * cols]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot reshape {:?} into {:?}", self.shape, shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Rows `start..end` of a rank-2 tensor as a new tensor.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        let (rows, cols) = self.dims2()?;
        if start > end || end > rows {
            return Err(Error::shape(
                "slice_rows",
                format!("range {start}..{end} out of bounds for {rows} rows"),
            ));
        }
        Ok(Self {
            shape: vec![end - start, cols],
            data: self.data[start * cols..end * cols].to_vec(),
        })
    }

    /// Stack rank-2 tensors with equal column counts along the row axis.
    pub fn concat_rows(parts: &[Tensor]) -> Result<Self> {
        let cols = match parts.first() {
            Some(p) => p.dims2()?.1,
            None => return Err(Error::shape("concat_rows", "no tensors to concatenate")),
        };
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let (r, c) = p.dims2()?;
            if c != cols {
                return Err(Error::shape(
                    "concat_rows",
                    format!("column mismatch: {c} vs {cols}"),
                ));
            }
            rows += r;
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            shape: vec![rows, cols],
            data,
        })
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f32> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "max_abs_diff",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
