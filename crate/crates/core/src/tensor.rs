//! Dense row-major `f64` tensors.
//!
//! [`Tensor`] is a plain value type. Recording operations for reverse-mode
//! differentiation is the job of [`crate::autodiff::Tape`], which calls the
//! value-level kernels defined here.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTensor")]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl TryFrom<RawTensor> for Tensor {
    type Error = Error;

    fn try_from(raw: RawTensor) -> Result<Self> {
        Tensor::new(raw.shape, raw.data)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Tensor{:?} {:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?} [{} values]", self.shape, self.data.len())
        }
    }
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if shape.contains(&0) {
            return Err(Error::InvalidShape {
                op: "tensor",
                detail: format!("zero-sized dimension in {shape:?}"),
            });
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidShape {
                op: "tensor",
                detail: format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros([n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> f64) -> Self {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        Self {
            shape,
            data: (0..numel).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::InvalidShape {
                op: "item",
                detail: format!("expected one element, shape is {:?}", self.shape),
            });
        }
        Ok(self.data[0])
    }

    pub fn strides(&self) -> Vec<usize> {
        contiguous_strides(&self.shape)
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        let offset: usize = index
            .iter()
            .zip(self.strides())
            .map(|(i, s)| i * s)
            .sum();
        self.data[offset]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape,
            });
        }
        Ok(Self {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape == other.shape {
            return Ok(Self {
                shape: self.shape.clone(),
                data: self
                    .data
                    .iter()
                    .zip(&other.data)
                    .map(|(&a, &b)| f(a, b))
                    .collect(),
            });
        }
        let out_shape = broadcast_shape(&self.shape, &other.shape).ok_or_else(|| Error::Shape {
            op,
            lhs: self.shape.clone(),
            rhs: other.shape.clone(),
        })?;
        let sa = broadcast_strides(&self.shape, &out_shape);
        let sb = broadcast_strides(&other.shape, &out_shape);
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for_each_offset2(&out_shape, &sa, &sb, |ia, ib| data.push(f(self.data[ia], other.data[ib])));
        Ok(Self {
            shape: out_shape,
            data,
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, "div", |a, b| a / b)
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|v| v * k)
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape {
                op: "add_assign",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Materialize a broadcast of `self` to `shape`.
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Self> {
        match broadcast_shape(&self.shape, shape) {
            Some(out) if out == shape => {}
            _ => {
                return Err(Error::Shape {
                    op: "broadcast_to",
                    lhs: self.shape.clone(),
                    rhs: shape.to_vec(),
                })
            }
        }
        let strides = broadcast_strides(&self.shape, shape);
        let mut data = Vec::with_capacity(shape.iter().product());
        for_each_offset(shape, &strides, |i| data.push(self.data[i]));
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Sum a broadcast result back down to `shape`; the adjoint of
    /// [`Tensor::broadcast_to`].
    pub fn sum_to_shape(&self, shape: &[usize]) -> Result<Self> {
        if self.shape == shape {
            return Ok(self.clone());
        }
        match broadcast_shape(shape, &self.shape) {
            Some(out) if out == self.shape => {}
            _ => {
                return Err(Error::Shape {
                    op: "sum_to_shape",
                    lhs: self.shape.clone(),
                    rhs: shape.to_vec(),
                })
            }
        }
        let strides = broadcast_strides(shape, &self.shape);
        let mut out = Tensor::zeros(shape.to_vec());
        let mut k = 0;
        for_each_offset(&self.shape, &strides, |i| {
            out.data[i] += self.data[k];
            k += 1;
        });
        Ok(out)
    }

    fn reduced_shape(&self, axes: &[usize], op: &'static str) -> Result<Vec<usize>> {
        let mut shape = self.shape.clone();
        for &a in axes {
            if a >= shape.len() {
                return Err(Error::InvalidShape {
                    op,
                    detail: format!("axis {a} out of range for shape {:?}", self.shape),
                });
            }
            shape[a] = 1;
        }
        Ok(shape)
    }

    /// Sum over `axes`, keeping them as size-1 dimensions.
    pub fn sum_axes(&self, axes: &[usize]) -> Result<Self> {
        let shape = self.reduced_shape(axes, "sum")?;
        self.sum_to_shape(&shape)
    }

    pub fn mean_axes(&self, axes: &[usize]) -> Result<Self> {
        let shape = self.reduced_shape(axes, "mean")?;
        let count = (self.numel() / shape.iter().product::<usize>()) as f64;
        Ok(self.sum_to_shape(&shape)?.scale(1.0 / count))
    }

    /// Biased variance over `axes` (divides by the element count).
    pub fn var_axes(&self, axes: &[usize]) -> Result<Self> {
        let mean = self.mean_axes(axes)?;
        let centered = self.sub(&mean)?;
        centered.mul(&centered)?.mean_axes(axes)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.numel() as f64
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Self> {
        let (m, k) = as_matrix(self, "matmul")?;
        let (k2, n) = as_matrix(other, "matmul")?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * n..(p + 1) * n];
                for (o, &b) in row.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Tensor::new([m, n], out)
    }

    pub fn transpose(&self) -> Result<Self> {
        let (m, n) = as_matrix(self, "transpose")?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::new([n, m], out)
    }

    /// Select rows (first-axis slices) by index.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if self.shape.is_empty() {
            return Err(Error::InvalidShape {
                op: "select_rows",
                detail: "scalar has no rows".into(),
            });
        }
        let row_len = self.numel() / self.shape[0];
        let mut data = Vec::with_capacity(rows.len() * row_len);
        for &r in rows {
            if r >= self.shape[0] {
                return Err(Error::InvalidShape {
                    op: "select_rows",
                    detail: format!("row {r} out of range for {} rows", self.shape[0]),
                });
            }
            data.extend_from_slice(&self.data[r * row_len..(r + 1) * row_len]);
        }
        let mut shape = self.shape.clone();
        shape[0] = rows.len();
        Tensor::new(shape, data)
    }

    /// Concatenate along the first axis.
    pub fn concat_rows(parts: &[&Tensor]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::Empty("concat_rows".into()))?;
        let tail = &first.shape[1..];
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            if &p.shape[1..] != tail {
                return Err(Error::Shape {
                    op: "concat_rows",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
            rows += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = rows;
        Tensor::new(shape, data)
    }
}

fn as_matrix(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape.as_slice() {
        [m, n] => Ok((*m, *n)),
        other => Err(Error::InvalidShape {
            op,
            detail: format!("expected a matrix, got shape {other:?}"),
        }),
    }
}

pub(crate) fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Numpy-style broadcast of two shapes, aligned from the trailing axis.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides for reading `src` as if broadcast to `out` (0 on broadcast axes).
fn broadcast_strides(src: &[usize], out: &[usize]) -> Vec<usize> {
    let src_strides = contiguous_strides(src);
    let pad = out.len() - src.len();
    (0..out.len())
        .map(|i| {
            if i < pad || src[i - pad] == 1 {
                0
            } else {
                src_strides[i - pad]
            }
        })
        .collect()
}

fn for_each_offset(shape: &[usize], strides: &[usize], mut f: impl FnMut(usize)) {
    let total: usize = shape.iter().product();
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..total {
        f(off);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < shape[d] {
                break;
            }
            off -= strides[d] * shape[d];
            idx[d] = 0;
        }
    }
}

fn for_each_offset2(shape: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize)) {
    let total: usize = shape.iter().product();
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    for _ in 0..total {
        f(oa, ob);
        for d in (0..rank).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < shape[d] {
                break;
            }
            oa -= sa[d] * shape[d];
            ob -= sb[d] * shape[d];
            idx[d] = 0;
        }
    }
}

/// 2-D convolution with stride 1 and "same" zero padding.
///
/// `x` is `[B, Ci, H, W]`, `weight` is `[Co, Ci, K, K]` with odd `K`,
/// `bias` is `[Co]`.
pub fn conv2d_same(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (b, ci, h, w) = dims4(x, "conv2d")?;
    let (co, ci2, k, k2) = dims4(weight, "conv2d")?;
    if ci != ci2 || k != k2 || k % 2 == 0 || bias.shape() != [co] {
        return Err(Error::Shape {
            op: "conv2d",
            lhs: x.shape.clone(),
            rhs: weight.shape.clone(),
        });
    }
    let pad = (k / 2) as isize;
    let mut out = vec![0.0; b * co * h * w];
    for n in 0..b {
        for o in 0..co {
            let obase = (n * co + o) * h * w;
            out[obase..obase + h * w].fill(bias.data[o]);
            for c in 0..ci {
                let xbase = (n * ci + c) * h * w;
                let wbase = (o * ci + c) * k * k;
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = weight.data[wbase + ky * k + kx];
                        let dy = ky as isize - pad;
                        let dx = kx as isize - pad;
                        for y in 0..h {
                            let sy = y as isize + dy;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for xx in 0..w {
                                let sx = xx as isize + dx;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                out[obase + y * w + xx] += wv * x.data[xbase + sy as usize * w + sx as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new([b, co, h, w], out)
}

/// Gradients of [`conv2d_same`] with respect to input, weight and bias.
pub fn conv2d_same_backward(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (b, ci, h, w) = dims4(x, "conv2d_backward")?;
    let (co, _, k, _) = dims4(weight, "conv2d_backward")?;
    let pad = (k / 2) as isize;
    let mut gx = vec![0.0; x.numel()];
    let mut gw = vec![0.0; weight.numel()];
    let mut gb = vec![0.0; co];
    for n in 0..b {
        for o in 0..co {
            let obase = (n * co + o) * h * w;
            let go = &grad_out.data[obase..obase + h * w];
            gb[o] += go.iter().sum::<f64>();
            for c in 0..ci {
                let xbase = (n * ci + c) * h * w;
                let wbase = (o * ci + c) * k * k;
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = weight.data[wbase + ky * k + kx];
                        let dy = ky as isize - pad;
                        let dx = kx as isize - pad;
                        let mut acc = 0.0;
                        for y in 0..h {
                            let sy = y as isize + dy;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for xx in 0..w {
                                let sx = xx as isize + dx;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                let xi = xbase + sy as usize * w + sx as usize;
                                let g = go[y * w + xx];
                                acc += g * x.data[xi];
                                gx[xi] += g * wv;
                            }
                        }
                        gw[wbase + ky * k + kx] += acc;
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(x.shape.clone(), gx)?,
        Tensor::new(weight.shape.clone(), gw)?,
        Tensor::new([co], gb)?,
    ))
}

pub(crate) fn dims4(t: &Tensor, op: &'static str) -> Result<(usize, usize, usize, usize)> {
    match t.shape.as_slice() {
        [a, b, c, d] => Ok((*a, *b, *c, *d)),
        other => Err(Error::InvalidShape {
            op,
            detail: format!("expected a 4-D tensor, got shape {other:?}"),
        }),
    }
}
