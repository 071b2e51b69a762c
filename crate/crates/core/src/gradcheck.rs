//! Central finite differences and the error measures used to compare them
//! with analytic gradients.

use crate::error::{Error, Result};
use crate::meta::AlphaSet;
use crate::nn::{GroupKind, ParamGroup, ParamRole, ParamSet};
use crate::tensor::{Precision, Tensor};

/// How the perturbation of each coordinate is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Step {
    /// The same `h` for every coordinate.
    Absolute(f64),
    /// `h * max(1, |theta|)`.
    Relative(f64),
}

impl Step {
    fn at(self, theta: f64) -> f64 {
        match self {
            Step::Absolute(h) => h,
            Step::Relative(h) => h * theta.abs().max(1.0),
        }
    }
}

/// `(f(theta + h e_k) - f(theta - h e_k)) / 2h` for every coordinate, shaped
/// like the parameter groups.
pub fn finite_diff(f: &mut dyn FnMut(&ParamSet) -> Result<f64>, params: &ParamSet, step: Step) -> Result<Vec<Vec<Tensor>>> {
    let mut probe = params.clone();
    let mut out = Vec::with_capacity(params.len());
    for (gi, group) in params.groups.iter().enumerate() {
        let mut grads = Vec::with_capacity(group.tensors.len());
        for (ti, t) in group.tensors.iter().enumerate() {
            let mut g = vec![0.0; t.numel()];
            for (k, slot) in g.iter_mut().enumerate() {
                let theta = t.data()[k];
                let h = step.at(theta);
                probe.groups[gi].tensors[ti].data_mut()[k] = theta + h;
                let up = f(&probe)?;
                probe.groups[gi].tensors[ti].data_mut()[k] = theta - h;
                let down = f(&probe)?;
                probe.groups[gi].tensors[ti].data_mut()[k] = theta;
                if !up.is_finite() || !down.is_finite() {
                    return Err(Error::Oracle(format!(
                        "non-finite objective while perturbing group {gi} tensor {ti} entry {k}"
                    )));
                }
                *slot = (up - down) / (2.0 * h);
            }
            grads.push(Tensor::new(t.shape().to_vec(), g, Precision::F64)?);
        }
        out.push(grads);
    }
    Ok(out)
}

/// [`finite_diff`] with a fixed absolute step.
pub fn finite_diff_grad(
    mut f: impl FnMut(&ParamSet) -> Result<f64>,
    params: &ParamSet,
    step: f64,
) -> Result<Vec<Vec<Tensor>>> {
    finite_diff(&mut f, params, Step::Absolute(step))
}

fn max_abs_diff(a: &[Tensor], b: &[Tensor]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.data().iter().zip(y.data()))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn max_abs(a: &[Tensor]) -> f64 {
    a.iter().map(Tensor::max_abs).fold(0.0, f64::max)
}

/// `||a - b||_inf / max(||b||_inf, 1e-8)` with `b` the reference.
pub fn relative_error(a: &[Tensor], b: &[Tensor]) -> f64 {
    max_abs_diff(a, b) / max_abs(b).max(1e-8)
}

/// [`relative_error`] per group.
pub fn group_errors(analytic: &[Vec<Tensor>], reference: &[Vec<Tensor>]) -> Vec<f64> {
    analytic
        .iter()
        .zip(reference)
        .map(|(a, b)| relative_error(a, b))
        .collect()
}

/// Appends the step sizes as one extra group, so they can be perturbed
/// alongside the weights.
pub fn pack_alpha(params: &ParamSet, alpha: &AlphaSet) -> ParamSet {
    let mut out = params.clone();
    let precision = params.tensors().next().map_or(Precision::F64, Tensor::precision);
    out.groups.push(ParamGroup {
        layer: usize::MAX,
        kind: GroupKind::Other,
        roles: vec![ParamRole::Scale],
        tensors: vec![Tensor::from_vec(alpha.values.clone(), precision)],
    });
    out
}

/// Inverse of [`pack_alpha`].
pub fn unpack_alpha(packed: &ParamSet, mode: crate::meta::AlphaMode) -> Result<(ParamSet, AlphaSet)> {
    let mut params = packed.clone();
    let group = params
        .groups
        .pop()
        .ok_or_else(|| Error::invalid("packed parameters are empty"))?;
    let values = group
        .tensors
        .into_iter()
        .next()
        .ok_or_else(|| Error::invalid("packed step-size group is empty"))?
        .into_data();
    Ok((params, AlphaSet { values, mode }))
}
