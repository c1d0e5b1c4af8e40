//! Dense row-major `f32` arrays and the handful of kernels the model needs.
//!
//! Two layouts are used across the crate: sequence features are `[frames × channels]`
//! (time-major, as attention wants them) and convolution operands are
//! `[channels × frames]` (channel-major, as the conv kernels want them).
//! [`Tensor::transpose`] moves between the two.

use crate::error::{Error, Result};

/// Slope of the negative half of the leaky ReLU used throughout the generator.
pub const LEAKY_SLOPE: f32 = 0.1;

/// Default epsilon added to the variance in every normalization layer.
pub const LN_EPS: f32 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if dims.is_empty() {
            return Err(Error::shape("tensor needs at least one dimension"));
        }
        if expected != data.len() {
            return Err(Error::shape(format!(
                "dims {dims:?} need {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            dims: dims.to_vec(),
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn full(dims: &[usize], value: f32) -> Self {
        Self {
            dims: dims.to_vec(),
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn from_vec(data: Vec<f32>) -> Self {
        Self {
            dims: vec![data.len()],
            data,
        }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        Ok(Self {
            dims: vec![rows.len(), cols],
            data: rows.concat(),
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    /// Number of rows of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        self.dims[0]
    }

    /// Size of the last axis.
    pub fn cols(&self) -> usize {
        *self.dims.last().expect("rank >= 1")
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(self, dims: Vec<usize>) -> Result<Self> {
        Tensor::new(dims, self.data)
    }

    pub fn expect_rank(&self, rank: usize, what: &str) -> Result<()> {
        if self.rank() != rank {
            return Err(Error::shape(format!(
                "{what}: expected rank {rank}, got dims {:?}",
                self.dims
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Tensor {
        assert_eq!(self.rank(), 2, "transpose needs a matrix");
        let (r, c) = (self.dims[0], self.dims[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor {
            dims: vec![c, r],
            data: out,
        }
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Tensor {
        let c = self.cols();
        Tensor {
            dims: vec![end - start, c],
            data: self.data[start * c..end * c].to_vec(),
        }
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> Tensor {
        let (r, c) = (self.dims[0], self.dims[1]);
        let w = end - start;
        let mut data = Vec::with_capacity(r * w);
        for i in 0..r {
            data.extend_from_slice(&self.data[i * c + start..i * c + end]);
        }
        Tensor { dims: vec![r, w], data }
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
        let cols = parts.iter().find(|p| !p.dims.is_empty()).map(|p| p.cols()).unwrap_or(0);
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.rank() != 2 || p.cols() != cols {
                return Err(Error::shape(format!(
                    "concat_rows: {:?} does not have {cols} columns",
                    p.dims
                )));
            }
            rows += p.rows();
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor {
            dims: vec![rows, cols],
            data,
        })
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
        let rows = parts.first().map_or(0, |p| p.rows());
        if parts.iter().any(|p| p.rank() != 2 || p.rows() != rows) {
            return Err(Error::shape("concat_cols: row counts differ"));
        }
        let cols: usize = parts.iter().map(|p| p.cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row(i));
            }
        }
        Ok(Tensor {
            dims: vec![rows, cols],
            data,
        })
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, |a, b| a + b)
    }

    pub fn zip(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        if self.dims != other.dims {
            return Err(Error::shape(format!(
                "elementwise op on {:?} and {:?}",
                self.dims, other.dims
            )));
        }
        Ok(Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// Adds a length-`cols` vector to every row.
    pub fn add_row_vector(&self, bias: &Tensor) -> Result<Tensor> {
        if bias.len() != self.cols() {
            return Err(Error::shape(format!(
                "bias of length {} for {} columns",
                bias.len(),
                self.cols()
            )));
        }
        let mut out = self.clone();
        let c = self.cols();
        for row in out.data.chunks_mut(c) {
            for (v, b) in row.iter_mut().zip(&bias.data) {
                *v += b;
            }
        }
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.dims, other.dims, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

/// `a[m×k] · b[k×n]`.
///
/// Each output row depends only on the matching row of `a`, with the inner
/// sum always accumulated in ascending `k`, so projecting a subset of rows is
/// bitwise identical to slicing the projection of all rows.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.expect_rank(2, "matmul lhs")?;
    b.expect_rank(2, "matmul rhs")?;
    let (m, k) = (a.dims[0], a.dims[1]);
    let (k2, n) = (b.dims[0], b.dims[1]);
    if k != k2 {
        return Err(Error::shape(format!(
            "matmul inner dims disagree: {:?} x {:?}",
            a.dims, b.dims
        )));
    }
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        let arow = &a.data[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(Tensor {
        dims: vec![m, n],
        data: out,
    })
}

/// `x · w + bias` for a `[rows × in]` input and `[in × out]` weight.
pub fn linear(x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let y = matmul(x, w)?;
    match bias {
        Some(b) => y.add_row_vector(b),
        None => Ok(y),
    }
}

/// Normalizes every row of `x[T×d]` to zero mean and unit variance, then
/// applies `gamma`/`beta`.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<Tensor> {
    x.expect_rank(2, "layer_norm input")?;
    let d = x.cols();
    if d == 0 {
        return Err(Error::shape("layer_norm over zero features"));
    }
    if gamma.len() != d || beta.len() != d {
        return Err(Error::shape(format!(
            "layer_norm: gamma/beta lengths {}/{} for d={d}",
            gamma.len(),
            beta.len()
        )));
    }
    let mut out = x.clone();
    for row in out.data.chunks_mut(d) {
        let mean = row.iter().sum::<f32>() / d as f32;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
        let inv = 1.0 / (var + eps).sqrt();
        for ((v, g), b) in row.iter_mut().zip(&gamma.data).zip(&beta.data) {
            *v = (*v - mean) * inv * g + b;
        }
    }
    Ok(out)
}

/// Softmax along the last axis. `-inf` entries are masked and come out as
/// exactly zero.
pub fn softmax(x: &Tensor) -> Result<Tensor> {
    let n = x.cols();
    if n == 0 {
        return Err(Error::shape("softmax over an empty axis"));
    }
    let mut out = x.clone();
    for (r, row) in out.data.chunks_mut(n).enumerate() {
        softmax_in_place(row).map_err(|_| Error::FullyMasked { row: r })?;
    }
    Ok(out)
}

pub(crate) fn softmax_in_place(row: &mut [f32]) -> std::result::Result<(), ()> {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if max == f32::NEG_INFINITY {
        return Err(());
    }
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = if *v == f32::NEG_INFINITY { 0.0 } else { (*v - max).exp() };
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// Leaky ReLU with slope [`LEAKY_SLOPE`].
    LeakyRelu,
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply_scalar(self, v: f32) -> f32 {
        match self {
            Activation::LeakyRelu => {
                if v >= 0.0 {
                    v
                } else {
                    LEAKY_SLOPE * v
                }
            }
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
        }
    }
}

pub fn activation(x: &Tensor, kind: Activation) -> Tensor {
    x.map(|v| kind.apply_scalar(v))
}
