//! Outer-loop optimizers and step learning-rate schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerKind {
    Sgd,
    /// Heavy-ball momentum: `v = mu * v + g; theta -= lr * v`.
    #[serde(rename = "sgd_momentum", alias = "momentum")]
    Momentum { mu: f64 },
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Milestone {
    pub epoch: usize,
    pub factor: f64,
}

// Unknown keys are rejected by the flattened `kind` variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSpec {
    #[serde(flatten)]
    pub kind: OptimizerKind,
    pub base_lr: f64,
    #[serde(default)]
    pub schedule: Vec<Milestone>,
}

impl OptimizerSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr >= 0.0) || !self.base_lr.is_finite() {
            return Err(Error::invalid(format!("base_lr must be a finite non-negative number, got {}", self.base_lr)));
        }
        for pair in self.schedule.windows(2) {
            if pair[1].epoch <= pair[0].epoch {
                return Err(Error::invalid("schedule milestones must be strictly increasing"));
            }
        }
        if let Some(m) = self.schedule.iter().find(|m| !(m.factor > 0.0)) {
            return Err(Error::invalid(format!("schedule factor {} at epoch {} must be positive", m.factor, m.epoch)));
        }
        match self.kind {
            OptimizerKind::Sgd => {}
            OptimizerKind::Momentum { mu } if (0.0..1.0).contains(&mu) => {}
            OptimizerKind::Adam { beta1, beta2, eps }
                if (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0 => {}
            other => return Err(Error::invalid(format!("bad optimizer constants {other:?}"))),
        }
        Ok(())
    }

    /// Learning rate for a zero-based epoch index: the base rate times every
    /// milestone factor whose epoch is `<= epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.schedule
            .iter()
            .filter(|m| m.epoch <= epoch)
            .fold(self.base_lr, |lr, m| lr * m.factor)
    }
}

/// Per-slot moment buffers plus the global step count.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    /// `beta1^step` and `beta2^step`, kept as running products so the bias
    /// correction does not depend on how `pow` is lowered.
    decay: (f64, f64),
    pub step: u64,
}

impl Default for OptimizerState {
    fn default() -> Self {
        OptimizerState {
            first: Vec::new(),
            second: Vec::new(),
            decay: (1.0, 1.0),
            step: 0,
        }
    }
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }

    /// First-moment (or momentum) buffer of slot `i`, if allocated.
    pub fn momentum(&self, i: usize) -> Option<&[f64]> {
        self.first.get(i).map(Vec::as_slice)
    }

    /// Updates every `(value, grad)` slot in place. Slots are matched to
    /// buffers by position, so callers must pass them in a stable order.
    pub fn apply_update<'a>(
        &mut self,
        kind: &OptimizerKind,
        slots: impl IntoIterator<Item = (&'a mut Tensor, &'a Tensor)>,
        lr: f64,
    ) -> Result<()> {
        let slots: Vec<_> = slots.into_iter().collect();
        for (i, (v, g)) in slots.iter().enumerate() {
            if v.shape() != g.shape() {
                return Err(Error::shape(
                    "apply_update",
                    format!("slot {i}: value {:?} vs grad {:?}", v.shape(), g.shape()),
                ));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of slot {i}")));
            }
        }
        if self.first.is_empty() {
            self.first = slots.iter().map(|(v, _)| vec![0.0; v.numel()]).collect();
            if matches!(kind, OptimizerKind::Adam { .. }) {
                self.second = self.first.clone();
            }
        } else if self.first.len() != slots.len() {
            return Err(Error::shape(
                "apply_update",
                format!("{} slots for optimizer state of {}", slots.len(), self.first.len()),
            ));
        }
        self.step += 1;
        if let OptimizerKind::Adam { beta1, beta2, .. } = *kind {
            self.decay = (self.decay.0 * beta1, self.decay.1 * beta2);
        }
        let (c1, c2) = (1.0 - self.decay.0, 1.0 - self.decay.1);
        for (i, (value, grad)) in slots.into_iter().enumerate() {
            let precision = value.precision();
            let m = &mut self.first[i];
            let data = value.data_mut();
            match *kind {
                OptimizerKind::Sgd => {
                    for (w, &g) in data.iter_mut().zip(grad.data()) {
                        *w = precision.round(*w - lr * g);
                    }
                }
                OptimizerKind::Momentum { mu } => {
                    for ((w, &g), v) in data.iter_mut().zip(grad.data()).zip(m.iter_mut()) {
                        *v = mu * *v + g;
                        *w = precision.round(*w - lr * *v);
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let s = &mut self.second[i];
                    for (((w, &g), mv), sv) in data.iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(s.iter_mut()) {
                        *mv = beta1 * *mv + (1.0 - beta1) * g;
                        *sv = beta2 * *sv + (1.0 - beta2) * g * g;
                        let mhat = *mv / c1;
                        let vhat = *sv / c2;
                        *w = precision.round(*w - lr * mhat / (vhat.sqrt() + eps));
                    }
                }
            }
        }
        Ok(())
    }
}
