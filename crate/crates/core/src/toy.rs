//! A one-parameter linear model, `f(w, x) = w * x` with squared loss. Small
//! enough that every quantity of the meta-objective has a closed form.

use crate::autodiff::{Tape, Var};
use crate::data::{Batch, TaskPair, Targets};
use crate::error::{Error, Result};
use crate::nn::{GroupInfo, GroupKind, Loss, Model, ParamGroup, ParamRole, ParamSet, Pass};
use crate::tensor::{Precision, Tensor};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScalarLinear;

impl ScalarLinear {
    pub fn params(w: f64, precision: Precision) -> ParamSet {
        ParamSet {
            groups: vec![ParamGroup {
                layer: 0,
                kind: GroupKind::Fc,
                roles: vec![ParamRole::Weight],
                tensors: vec![Tensor::full(&[1, 1], w, precision)],
            }],
        }
    }

    /// A batch of `(x, y)` points.
    pub fn batch(points: &[(f64, f64)], precision: Precision) -> Result<Batch> {
        let n = points.len();
        let x = Tensor::new(vec![n, 1], points.iter().map(|p| p.0).collect(), precision)?;
        let y = Tensor::new(vec![n, 1], points.iter().map(|p| p.1).collect(), precision)?;
        Ok(Batch { x, y: Targets::Values(y) })
    }
}

impl Model for ScalarLinear {
    fn group_infos(&self) -> Result<Vec<GroupInfo>> {
        Ok(vec![GroupInfo {
            layer: 0,
            kind: GroupKind::Fc,
            roles: vec![ParamRole::Weight],
            shapes: vec![vec![1, 1]],
        }])
    }

    fn batch_loss<'t>(
        &self,
        tape: &'t Tape,
        params: &[Vec<Var<'t>>],
        batch: &Batch,
        _pass: &Pass<'_>,
    ) -> Result<Loss<'t>> {
        let w = params
            .first()
            .and_then(|g| g.first())
            .ok_or_else(|| Error::invalid("scalar model needs one weight"))?;
        let Targets::Values(y) = &batch.y else {
            return Err(Error::invalid("scalar model needs real-valued targets"));
        };
        let x = tape.constant(batch.x.clone());
        let value = x.matmul(w)?.mse(y)?;
        Ok(Loss {
            value,
            bn_stats: Vec::new(),
        })
    }
}

/// Task `i` is the point `(1, 1)`, task `j` the point `(2, 0)`.
pub fn scalar_quadratic_tasks(precision: Precision) -> TaskPair {
    TaskPair {
        task_i: ScalarLinear::batch(&[(1.0, 1.0)], precision).expect("static batch"),
        task_j: ScalarLinear::batch(&[(2.0, 0.0)], precision).expect("static batch"),
    }
}
