//! Dense row-major tensors and the raw kernels the tape is built from.
//!
//! Values are stored as `f64`. A tensor tagged [`Precision::F32`] has every
//! kernel result rounded to the nearest `f32`, so 32-bit runs see single
//! precision arithmetic while the storage stays uniform.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index value that [`Tensor::gather`] reads as an implicit zero.
pub const ZERO_INDEX: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(try_from = "u32", into = "u32")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    #[inline]
    pub fn round(self, v: f64) -> f64 {
        match self {
            Precision::F32 => v as f32 as f64,
            Precision::F64 => v,
        }
    }

    pub fn bits(self) -> u32 {
        match self {
            Precision::F32 => 32,
            Precision::F64 => 64,
        }
    }
}

impl TryFrom<u32> for Precision {
    type Error = String;

    fn try_from(bits: u32) -> std::result::Result<Self, Self::Error> {
        match bits {
            32 => Ok(Precision::F32),
            64 => Ok(Precision::F64),
            other => Err(format!("precision must be 32 or 64, got {other}")),
        }
    }
}

impl From<Precision> for u32 {
    fn from(p: Precision) -> u32 {
        p.bits()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    precision: Precision,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * shape[d + 1];
    }
    s
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>, precision: Precision) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::shape("tensor", format!("zero-sized dimension in {shape:?}")));
        }
        if numel(&shape) != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {} values, got {}", numel(&shape), data.len()),
            ));
        }
        Ok(Self::from_parts(shape, data, precision))
    }

    /// Builds a tensor whose shape is already known to be consistent.
    pub(crate) fn from_parts(shape: Vec<usize>, mut data: Vec<f64>, precision: Precision) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        if precision == Precision::F32 {
            for v in &mut data {
                *v = precision.round(*v);
            }
        }
        Tensor {
            shape,
            data,
            precision,
        }
    }

    pub fn full(shape: &[usize], value: f64, precision: Precision) -> Self {
        Self::from_parts(shape.to_vec(), vec![value; numel(shape)], precision)
    }

    pub fn zeros(shape: &[usize], precision: Precision) -> Self {
        Self::full(shape, 0.0, precision)
    }

    pub fn ones(shape: &[usize], precision: Precision) -> Self {
        Self::full(shape, 1.0, precision)
    }

    /// Rank-0 tensor.
    pub fn scalar(value: f64, precision: Precision) -> Self {
        Self::from_parts(Vec::new(), vec![value], precision)
    }

    pub fn from_vec(data: Vec<f64>, precision: Precision) -> Self {
        let n = data.len();
        Self::from_parts(vec![n], data, precision)
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

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        match self.data.as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::shape("item", format!("expected one element, shape {:?}", self.shape))),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same values under a different precision tag (rounded when narrowing).
    pub fn with_precision(&self, precision: Precision) -> Self {
        Self::from_parts(self.shape.clone(), self.data.clone(), precision)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn same_precision(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.precision != other.precision {
            return Err(Error::Precision { op });
        }
        Ok(())
    }

    fn zip(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_precision(other, op)?;
        if self.shape != other.shape {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self::from_parts(self.shape.clone(), data, self.precision))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect(), self.precision)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() || shape.contains(&0) {
            return Err(Error::shape("reshape", format!("{:?} -> {:?}", self.shape, shape)));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
            precision: self.precision,
        })
    }

    /// `[m, k] x [k, p] -> [m, p]`, accumulating each output over `k` in order.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        self.same_precision(other, "matmul")?;
        let (m, k, p) = match (self.shape.as_slice(), other.shape.as_slice()) {
            ([m, k], [k2, p]) if k == k2 => (*m, *k, *p),
            _ => {
                return Err(Error::shape(
                    "matmul",
                    format!("{:?} x {:?}", self.shape, other.shape),
                ))
            }
        };
        let a = &self.data;
        let b = &other.data;
        let mut out = vec![0.0; m * p];
        for i in 0..m {
            let row = &mut out[i * p..(i + 1) * p];
            for kk in 0..k {
                let av = a[i * k + kk];
                let brow = &b[kk * p..(kk + 1) * p];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        Ok(Self::from_parts(vec![m, p], out, self.precision))
    }

    /// Reorders axes: output axis `d` is input axis `axes[d]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let rank = self.shape.len();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::shape("permute", format!("axes {axes:?} for shape {:?}", self.shape)));
        }
        let in_strides = strides(&self.shape);
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let mut out = Vec::with_capacity(self.numel());
        let mut idx = vec![0usize; rank];
        for _ in 0..self.numel() {
            let off: usize = idx.iter().zip(axes).map(|(&i, &a)| i * in_strides[a]).sum();
            out.push(self.data[off]);
            for d in (0..rank).rev() {
                idx[d] += 1;
                if idx[d] < out_shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(Tensor {
            shape: out_shape,
            data: out,
            precision: self.precision,
        })
    }

    fn check_broadcast(small: &[usize], large: &[usize], op: &'static str) -> Result<()> {
        let ok = small.len() == large.len()
            && small.iter().zip(large).all(|(&s, &l)| s == l || s == 1);
        if ok {
            Ok(())
        } else {
            Err(Error::shape(op, format!("{small:?} is not broadcastable to {large:?}")))
        }
    }

    /// Repeats size-1 axes up to `shape` (same rank).
    pub fn expand(&self, shape: &[usize]) -> Result<Tensor> {
        Self::check_broadcast(&self.shape, shape, "expand")?;
        let in_strides = strides(&self.shape);
        let rank = shape.len();
        let total = numel(shape);
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; rank];
        for _ in 0..total {
            let off: usize = (0..rank)
                .map(|d| if self.shape[d] == 1 { 0 } else { idx[d] * in_strides[d] })
                .sum();
            out.push(self.data[off]);
            for d in (0..rank).rev() {
                idx[d] += 1;
                if idx[d] < shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: out,
            precision: self.precision,
        })
    }

    /// Sums over the axes where `shape` has size 1 (same rank). Summation
    /// visits input elements in row-major order.
    pub fn sum_to(&self, shape: &[usize]) -> Result<Tensor> {
        Self::check_broadcast(shape, &self.shape, "sum_to")?;
        let out_strides = strides(shape);
        let rank = shape.len();
        let mut out = vec![0.0; numel(shape)];
        let mut idx = vec![0usize; rank];
        for &v in &self.data {
            let off: usize = (0..rank)
                .map(|d| if shape[d] == 1 { 0 } else { idx[d] * out_strides[d] })
                .sum();
            out[off] += v;
            for d in (0..rank).rev() {
                idx[d] += 1;
                if idx[d] < self.shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(Self::from_parts(shape.to_vec(), out, self.precision))
    }

    /// Left-to-right sum of all elements.
    pub fn sum(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, &v| acc + v)
    }

    /// `out[i] = self[idx[i]]`, or 0 where `idx[i] == ZERO_INDEX`.
    pub fn gather(&self, idx: &[usize], shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != idx.len() {
            return Err(Error::shape("gather", format!("{} indices for shape {shape:?}", idx.len())));
        }
        let mut out = Vec::with_capacity(idx.len());
        for &i in idx {
            if i == ZERO_INDEX {
                out.push(0.0);
            } else {
                out.push(*self.data.get(i).ok_or_else(|| {
                    Error::shape("gather", format!("index {i} out of range {}", self.numel()))
                })?);
            }
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: out,
            precision: self.precision,
        })
    }

    /// Adjoint of [`Tensor::gather`]: `out[idx[i]] += self[i]` into a zero tensor of `shape`.
    pub fn scatter(&self, idx: &[usize], shape: &[usize]) -> Result<Tensor> {
        if idx.len() != self.numel() {
            return Err(Error::shape("scatter", format!("{} indices for {} values", idx.len(), self.numel())));
        }
        let mut out = vec![0.0; numel(shape)];
        for (&i, &v) in idx.iter().zip(&self.data) {
            if i == ZERO_INDEX {
                continue;
            }
            let len = out.len();
            *out.get_mut(i).ok_or_else(|| {
                Error::shape("scatter", format!("index {i} out of range {len}"))
            })? += v;
        }
        Ok(Self::from_parts(shape.to_vec(), out, self.precision))
    }

    fn rows(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [n, k] => Ok((*n, *k)),
            _ => Err(Error::shape(op, format!("expected [rows, cols], got {:?}", self.shape))),
        }
    }

    /// Row-wise softmax of a `[n, k]` matrix, stabilized by the row maximum.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        let (n, k) = self.rows("softmax_rows")?;
        let mut out = Vec::with_capacity(n * k);
        for row in self.data.chunks(k) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
            let total = exps.iter().fold(0.0, |a, &b| a + b);
            out.extend(exps.iter().map(|e| e / total));
        }
        Ok(Self::from_parts(vec![n, k], out, self.precision))
    }

    /// Row-wise `log(sum(exp(x)))` of a `[n, k]` matrix, giving `[n]`.
    pub fn logsumexp_rows(&self) -> Result<Tensor> {
        let (n, k) = self.rows("logsumexp_rows")?;
        let out = self
            .data
            .chunks(k)
            .map(|row| {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let total = row.iter().fold(0.0, |a, &v| a + (v - max).exp());
                max + total.ln()
            })
            .collect();
        Ok(Self::from_parts(vec![n], out, self.precision))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec(), Precision::F64).unwrap()
    }

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3], Precision::F64).is_err());
        assert!(Tensor::new(vec![0], vec![], Precision::F64).is_err());
    }

    #[test]
    fn matmul_row_sums() {
        let a = t(&[2, 2], &[1., 2., 3., 4.]);
        let b = t(&[2, 1], &[1., 1.]);
        assert_eq!(a.matmul(&b).unwrap().data(), &[3., 7.]);
        assert!(a.matmul(&t(&[3, 1], &[1., 1., 1.])).is_err());
    }

    #[test]
    fn precision_mix_rejected() {
        let a = t(&[2], &[1., 2.]);
        let b = Tensor::new(vec![2], vec![1., 2.], Precision::F32).unwrap();
        assert!(matches!(a.add(&b), Err(Error::Precision { .. })));
    }

    #[test]
    fn f32_rounding_applied() {
        let a = Tensor::new(vec![1], vec![0.1], Precision::F32).unwrap();
        assert_eq!(a.data()[0], 0.1f32 as f64);
    }

    #[test]
    fn permute_transposes() {
        let a = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        let p = a.permute(&[1, 0]).unwrap();
        assert_eq!(p.shape(), &[3, 2]);
        assert_eq!(p.data(), &[1., 4., 2., 5., 3., 6.]);
        assert!(a.permute(&[0, 0]).is_err());
    }

    #[test]
    fn expand_and_sum_to_are_adjoint_shapes() {
        let b = t(&[1, 3], &[1., 2., 3.]);
        let e = b.expand(&[2, 3]).unwrap();
        assert_eq!(e.data(), &[1., 2., 3., 1., 2., 3.]);
        let s = e.sum_to(&[1, 3]).unwrap();
        assert_eq!(s.data(), &[2., 4., 6.]);
        let c = e.sum_to(&[2, 1]).unwrap();
        assert_eq!(c.data(), &[6., 6.]);
    }

    #[test]
    fn gather_scatter_with_zero_index() {
        let a = t(&[3], &[10., 20., 30.]);
        let g = a.gather(&[2, ZERO_INDEX, 0, 2], &[4]).unwrap();
        assert_eq!(g.data(), &[30., 0., 10., 30.]);
        let s = g.scatter(&[2, ZERO_INDEX, 0, 2], &[3]).unwrap();
        assert_eq!(s.data(), &[10., 0., 60.]);
    }

    #[test]
    fn logsumexp_uniform() {
        let a = t(&[1, 4], &[1., 1., 1., 1.]);
        let l = a.logsumexp_rows().unwrap();
        assert!((l.data()[0] - (1.0 + 4f64.ln())).abs() < 1e-15);
        let big = t(&[1, 2], &[1000., 1000.]);
        assert!(big.logsumexp_rows().unwrap().is_finite());
        assert!(big.softmax_rows().unwrap().is_finite());
    }
}
