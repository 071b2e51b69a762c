//! Vector-Jacobian products, written in terms of `Var` ops so that they are
//! recorded (and differentiable) whenever the tape is recording.

use super::{Op, Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

pub(super) fn vjp<'t>(
    tape: &'t Tape,
    id: usize,
    op: &Op,
    g: Var<'t>,
    needs: &dyn Fn(usize) -> bool,
) -> Result<Vec<(usize, Var<'t>)>> {
    let node = tape.handle(id);
    let h = |i: usize| tape.handle(i);
    let mut out = Vec::with_capacity(2);
    match op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if needs(*a) {
                out.push((*a, g));
            }
            if needs(*b) {
                out.push((*b, g));
            }
        }
        Op::Sub(a, b) => {
            if needs(*a) {
                out.push((*a, g));
            }
            if needs(*b) {
                out.push((*b, g.neg()));
            }
        }
        Op::Mul(a, b) => {
            if needs(*a) {
                out.push((*a, g.mul(&h(*b))?));
            }
            if needs(*b) {
                out.push((*b, g.mul(&h(*a))?));
            }
        }
        Op::Scale(a, c) => out.push((*a, g.scale(*c))),
        Op::MatMul(a, b) => {
            if needs(*a) {
                out.push((*a, g.matmul(&h(*b).t()?)?));
            }
            if needs(*b) {
                out.push((*b, h(*a).t()?.matmul(&g)?));
            }
        }
        Op::Permute(a, axes) => {
            let mut inverse = vec![0; axes.len()];
            for (i, &ax) in axes.iter().enumerate() {
                inverse[ax] = i;
            }
            out.push((*a, g.permute(&inverse)?));
        }
        Op::Reshape(a) => out.push((*a, g.reshape(&h(*a).shape())?)),
        Op::Expand(a) => out.push((*a, g.sum_to(&h(*a).shape())?)),
        Op::SumTo(a) => out.push((*a, g.expand(&h(*a).shape())?)),
        Op::Relu(a) => {
            let x = h(*a).value();
            let mask = x.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
            out.push((*a, g.mul(&tape.constant(mask))?));
        }
        Op::Sigmoid(a) => {
            // dy/dx = y - y^2, expressed through the output node itself
            let y = node;
            let slope = y.sub(&y.square()?)?;
            out.push((*a, g.mul(&slope)?));
        }
        Op::Powf(a, p) => {
            let x = h(*a);
            let slope = if *p == 1.0 {
                let v = x.value();
                tape.constant(Tensor::ones(v.shape(), v.precision()))
            } else {
                x.powf(p - 1.0).scale(*p)
            };
            out.push((*a, g.mul(&slope)?));
        }
        Op::SoftmaxRows(a) => {
            // s * (g - rowsum(g * s))
            let s = node;
            let shape = s.shape();
            let row_dot = g.mul(&s)?.sum_to(&[shape[0], 1])?.expand(&shape)?;
            out.push((*a, s.mul(&g.sub(&row_dot)?)?));
        }
        Op::LogSumExpRows(a) => {
            let x = h(*a);
            let shape = x.shape();
            let s = x.softmax_rows()?;
            let gb = g.reshape(&[shape[0], 1])?.expand(&shape)?;
            out.push((*a, s.mul(&gb)?));
        }
        Op::Gather(a, idx) => out.push((*a, g.scatter(idx.clone(), &h(*a).shape())?)),
        Op::Scatter(a, idx) => out.push((*a, g.gather(idx.clone(), &h(*a).shape())?)),
    }
    Ok(out)
}
