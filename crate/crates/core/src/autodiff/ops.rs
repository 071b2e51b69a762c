use std::rc::Rc;

use super::{Op, Var};
use crate::error::{Error, Result};
use crate::tensor::{Tensor, ZERO_INDEX};

/// Output extent of a convolution or pooling window along one axis, if the
/// window tiles the padded extent exactly.
pub fn conv_output_size(extent: usize, window: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = extent + 2 * pad;
    if stride == 0 || window == 0 || window > padded || (padded - window) % stride != 0 {
        return None;
    }
    Some((padded - window) / stride + 1)
}

fn dims4(shape: &[usize], op: &'static str) -> Result<[usize; 4]> {
    match *shape {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(Error::shape(op, format!("expected a 4-d tensor, got {shape:?}"))),
    }
}

impl<'t> Var<'t> {
    fn same_tape(&self, other: &Var<'t>, op: &'static str) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::invalid(format!("{op}: operands live on different tapes")))
        }
    }

    fn unary(&self, value: Tensor, op: Op) -> Var<'t> {
        self.tape.push_op(value, op)
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other, "add")?;
        let v = self.value().add(&other.value())?;
        Ok(self.tape.push_op(v, Op::Add(self.id, other.id)))
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other, "sub")?;
        let v = self.value().sub(&other.value())?;
        Ok(self.tape.push_op(v, Op::Sub(self.id, other.id)))
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other, "mul")?;
        let v = self.value().mul(&other.value())?;
        Ok(self.tape.push_op(v, Op::Mul(self.id, other.id)))
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.unary(self.value().scale(c), Op::Scale(self.id, c))
    }

    pub fn neg(&self) -> Var<'t> {
        self.scale(-1.0)
    }

    /// Adds a constant to every element.
    pub fn add_const(&self, c: f64) -> Result<Var<'t>> {
        let v = self.value();
        let k = self.tape.constant(Tensor::full(v.shape(), c, v.precision()));
        self.add(&k)
    }

    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other, "matmul")?;
        let v = self.value().matmul(&other.value())?;
        Ok(self.tape.push_op(v, Op::MatMul(self.id, other.id)))
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Var<'t>> {
        let v = self.value().permute(axes)?;
        Ok(self.unary(v, Op::Permute(self.id, axes.into())))
    }

    /// Transpose of a matrix.
    pub fn t(&self) -> Result<Var<'t>> {
        self.permute(&[1, 0])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let v = self.value().reshape(shape)?;
        Ok(self.unary(v, Op::Reshape(self.id)))
    }

    pub fn expand(&self, shape: &[usize]) -> Result<Var<'t>> {
        if self.value().shape() == shape {
            return Ok(*self);
        }
        let v = self.value().expand(shape)?;
        Ok(self.unary(v, Op::Expand(self.id)))
    }

    pub fn sum_to(&self, shape: &[usize]) -> Result<Var<'t>> {
        if self.value().shape() == shape {
            return Ok(*self);
        }
        let v = self.value().sum_to(shape)?;
        Ok(self.unary(v, Op::SumTo(self.id)))
    }

    /// Broadcasts a one-element tensor (any rank) to `shape`.
    pub fn broadcast_scalar(&self, shape: &[usize]) -> Result<Var<'t>> {
        if self.value().numel() != 1 {
            return Err(Error::shape("broadcast_scalar", format!("{:?} is not a scalar", self.shape())));
        }
        let ones = vec![1; shape.len()];
        self.reshape(&ones)?.expand(shape)
    }

    /// Multiplies every element by the one-element node `s`.
    pub fn mul_scalar(&self, s: &Var<'t>) -> Result<Var<'t>> {
        let b = s.broadcast_scalar(&self.shape())?;
        self.mul(&b)
    }

    /// Sum of all elements as a rank-0 node.
    pub fn sum(&self) -> Result<Var<'t>> {
        let n = self.value().numel();
        self.reshape(&[n])?.sum_to(&[1])?.reshape(&[])
    }

    pub fn mean(&self) -> Result<Var<'t>> {
        let n = self.value().numel();
        Ok(self.sum()?.scale(1.0 / n as f64))
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(self.value().map(|v| v.max(0.0)), Op::Relu(self.id))
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(self.value().map(|v| 1.0 / (1.0 + (-v).exp())), Op::Sigmoid(self.id))
    }

    pub fn powf(&self, p: f64) -> Var<'t> {
        self.unary(self.value().map(|v| v.powf(p)), Op::Powf(self.id, p))
    }

    pub fn square(&self) -> Result<Var<'t>> {
        self.mul(self)
    }

    pub fn softmax_rows(&self) -> Result<Var<'t>> {
        let v = self.value().softmax_rows()?;
        Ok(self.unary(v, Op::SoftmaxRows(self.id)))
    }

    pub fn logsumexp_rows(&self) -> Result<Var<'t>> {
        let v = self.value().logsumexp_rows()?;
        Ok(self.unary(v, Op::LogSumExpRows(self.id)))
    }

    /// `out[i] = self[idx[i]]` with [`ZERO_INDEX`] reading as zero.
    pub fn gather(&self, idx: Rc<[usize]>, shape: &[usize]) -> Result<Var<'t>> {
        let v = self.value().gather(&idx, shape)?;
        Ok(self.unary(v, Op::Gather(self.id, idx)))
    }

    /// Adjoint of [`Var::gather`].
    pub fn scatter(&self, idx: Rc<[usize]>, shape: &[usize]) -> Result<Var<'t>> {
        let v = self.value().scatter(&idx, shape)?;
        Ok(self.unary(v, Op::Scatter(self.id, idx)))
    }

    /// Cross-correlation of `[N, C, H, W]` input with `[F, C, kh, kw]` kernels.
    ///
    /// Lowered to an im2col gather followed by a matrix product, so both
    /// halves are differentiable to any order.
    pub fn conv2d(&self, kernel: &Var<'t>, stride: usize, pad: usize) -> Result<Var<'t>> {
        let [n, c, h, w] = dims4(&self.shape(), "conv2d")?;
        let [f, kc, kh, kw] = dims4(&kernel.shape(), "conv2d")?;
        if kc != c {
            return Err(Error::shape("conv2d", format!("input has {c} channels, kernel expects {kc}")));
        }
        let (Some(oh), Some(ow)) = (
            conv_output_size(h, kh, stride, pad),
            conv_output_size(w, kw, stride, pad),
        ) else {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {kh}x{kw} stride {stride} pad {pad} does not tile {h}x{w}"),
            ));
        };
        let patch = c * kh * kw;
        let mut idx = Vec::with_capacity(n * oh * ow * patch);
        for b in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let y = (oy * stride + ky) as isize - pad as isize;
                                let x = (ox * stride + kx) as isize - pad as isize;
                                if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                                    idx.push(ZERO_INDEX);
                                } else {
                                    idx.push(((b * c + ch) * h + y as usize) * w + x as usize);
                                }
                            }
                        }
                    }
                }
            }
        }
        let cols = self.gather(idx.into(), &[n * oh * ow, patch])?;
        let kmat = kernel.reshape(&[f, patch])?.t()?;
        cols.matmul(&kmat)?
            .reshape(&[n, oh * ow, f])?
            .permute(&[0, 2, 1])?
            .reshape(&[n, f, oh, ow])
    }

    /// Max over `window x window` patches. Ties go to the first element in
    /// row-major order, and the gradient follows that element.
    pub fn max_pool2d(&self, window: usize, stride: usize) -> Result<Var<'t>> {
        let [n, c, h, w] = dims4(&self.shape(), "max_pool2d")?;
        let (Some(oh), Some(ow)) = (
            conv_output_size(h, window, stride, 0),
            conv_output_size(w, window, stride, 0),
        ) else {
            return Err(Error::shape(
                "max_pool2d",
                format!("window {window} stride {stride} does not tile {h}x{w}"),
            ));
        };
        let value = self.value();
        let data = value.data();
        let mut idx = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * stride * w + ox * stride;
                    for ky in 0..window {
                        for kx in 0..window {
                            let i = base + (oy * stride + ky) * w + ox * stride + kx;
                            if data[i] > data[best] {
                                best = i;
                            }
                        }
                    }
                    idx.push(best);
                }
            }
        }
        self.gather(idx.into(), &[n, c, oh, ow])
    }

    /// Mean over the batch of `-log softmax(logits)[label]` for `[N, K]` logits.
    pub fn softmax_cross_entropy(&self, labels: &[usize]) -> Result<Var<'t>> {
        let shape = self.shape();
        let [n, k] = shape[..] else {
            return Err(Error::shape("softmax_cross_entropy", format!("logits must be [N, K], got {shape:?}")));
        };
        if labels.len() != n {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("{} labels for {n} rows", labels.len()),
            ));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::invalid(format!("label {bad} out of range for {k} classes")));
        }
        let idx: Rc<[usize]> = labels.iter().enumerate().map(|(row, &l)| row * k + l).collect();
        let picked = self.gather(idx, &[n])?;
        self.logsumexp_rows()?.sub(&picked)?.mean()
    }

    /// Mean of squared differences against a constant target of the same shape.
    pub fn mse(&self, target: &Tensor) -> Result<Var<'t>> {
        let y = self.tape.constant(target.clone());
        self.sub(&y)?.square()?.mean()
    }
}
