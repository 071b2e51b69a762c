//! The meta-learning training objective.
//!
//! A batch is split into two tasks. The objective takes one inner gradient
//! step on the first task with per-layer step sizes `alpha`, evaluates the
//! second task at the adapted parameters, and sums the two losses:
//!
//! ```text
//! w' = w - alpha * dC(w, task_i)/dw
//! J  = C(w, task_i) + eta * C(w', task_j)
//! ```
//!
//! `J` is differentiated with respect to both `w` and `alpha`. The full
//! variant keeps the inner gradient on the tape, so `dJ/dw` includes the
//! Hessian term; the first-order variant treats the inner gradient as a
//! constant. The conv/fc variants restrict the inner step to a subset of
//! layers.

use serde::{Deserialize, Serialize};

use rand_distr::{Distribution, Normal};

use crate::autodiff::{Tape, Var};
use crate::data::{Batch, TaskPair};
use crate::error::{Error, Result};
use crate::nn::{BnStats, GroupInfo, GroupKind, LayerMask, Loss, Model, ParamRole, ParamSet, Pass};
use crate::optim::{OptimizerKind, OptimizerState};
use crate::rng;
use crate::tensor::{Precision, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Plain training on the whole batch.
    Standard,
    #[serde(alias = "mltp")]
    MltpFull,
    MltpConv,
    MltpFc,
    MltpFo,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Standard,
        Variant::MltpFull,
        Variant::MltpConv,
        Variant::MltpFc,
        Variant::MltpFo,
    ];

    pub const META: [Variant; 4] = [Variant::MltpFull, Variant::MltpConv, Variant::MltpFc, Variant::MltpFo];

    pub fn is_meta(self) -> bool {
        self != Variant::Standard
    }

    /// Whether the inner gradient stays on the tape (second-order terms kept).
    pub fn second_order(self) -> bool {
        matches!(self, Variant::MltpFull | Variant::MltpConv | Variant::MltpFc)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Standard => "standard",
            Variant::MltpFull => "mltp_full",
            Variant::MltpConv => "mltp_conv",
            Variant::MltpFc => "mltp_fc",
            Variant::MltpFo => "mltp_fo",
        }
    }

    /// Layers the inner step covers when no explicit mask is given.
    pub fn default_mask(self, infos: &[GroupInfo]) -> LayerMask {
        let pick = |kind: GroupKind| LayerMask {
            layers: infos.iter().filter(|g| g.kind == kind).map(|g| g.layer).collect(),
        };
        match self {
            Variant::MltpConv => pick(GroupKind::Conv),
            Variant::MltpFc => pick(GroupKind::Fc),
            Variant::Standard | Variant::MltpFull | Variant::MltpFo => LayerMask::all_of(infos),
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "mltp" {
            return Ok(Variant::MltpFull);
        }
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown variant {s:?}")))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMode {
    #[default]
    Learnable,
    Fixed,
}

/// One inner step size per parameter group. Values are unconstrained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSet {
    pub values: Vec<f64>,
    pub mode: AlphaMode,
}

impl AlphaSet {
    pub fn normal(groups: usize, mean: f64, std: f64, mode: AlphaMode, seed: u64) -> Result<Self> {
        let dist = Normal::new(mean, std).map_err(|e| Error::invalid(format!("alpha init: {e}")))?;
        let mut rng = rng::stream(seed, rng::ALPHA, 0);
        Ok(AlphaSet {
            values: (0..groups).map(|_| dist.sample(&mut rng)).collect(),
            mode,
        })
    }

    pub fn uniform(groups: usize, value: f64, mode: AlphaMode) -> Self {
        AlphaSet {
            values: vec![value; groups],
            mode,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_learnable(&self) -> bool {
        self.mode == AlphaMode::Learnable
    }

    /// Rank-0 nodes, differentiable only in learnable mode.
    pub fn to_vars<'t>(&self, tape: &'t Tape, precision: Precision) -> Vec<Var<'t>> {
        self.values
            .iter()
            .map(|&a| {
                let t = Tensor::scalar(a, precision);
                if self.is_learnable() {
                    tape.var(t)
                } else {
                    tape.constant(t)
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveConfig {
    pub variant: Variant,
    pub eta: f64,
    /// Weight of the squared-norm penalty on weight tensors.
    pub beta: f64,
    /// Overrides the variant's default layer mask.
    pub mask: Option<LayerMask>,
}

impl ObjectiveConfig {
    pub fn new(variant: Variant, eta: f64) -> Self {
        ObjectiveConfig {
            variant,
            eta,
            beta: 0.0,
            mask: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) || !(self.beta >= 0.0) {
            return Err(Error::invalid(format!("eta and beta must be >= 0, got {} and {}", self.eta, self.beta)));
        }
        Ok(())
    }

    pub fn mask_flags(&self, infos: &[GroupInfo]) -> Vec<bool> {
        match &self.mask {
            Some(m) => m.flags(infos),
            None => self.variant.default_mask(infos).flags(infos),
        }
    }
}

/// Per-task forward settings (dropout streams, batch-norm mode).
#[derive(Debug, Clone, Copy)]
pub struct TaskPasses<'a> {
    pub task_i: Pass<'a>,
    pub task_j: Pass<'a>,
}

impl TaskPasses<'static> {
    /// Train-mode passes with independent dropout streams derived from `seed`.
    pub fn train(seed: u64) -> Self {
        TaskPasses {
            task_i: Pass::train(rng::derive_seed(seed, rng::DROPOUT, 0)),
            task_j: Pass::train(rng::derive_seed(seed, rng::DROPOUT, 1)),
        }
    }
}

/// How the inner gradient entering `w'` is obtained.
#[derive(Debug, Clone, Copy)]
pub enum InnerGrad<'a> {
    /// Computed on the tape from `C(w, task_i)`; kept differentiable for the
    /// second-order variants and detached for the first-order one.
    Live,
    /// Supplied constants, one entry per group (`None` for unmasked groups).
    Frozen(&'a [Option<Vec<Tensor>>]),
}

pub struct Objective<'t> {
    pub j: Var<'t>,
    pub c_i: Var<'t>,
    pub c_j: Var<'t>,
    pub adapted: Vec<Vec<Var<'t>>>,
    /// Batch-norm statistics of the task-i forward at `w`.
    pub bn_stats: Vec<BnStats>,
}

fn param_precision(params: &[Vec<Var<'_>>]) -> Precision {
    params
        .iter()
        .flatten()
        .next()
        .map_or(Precision::F64, |v| v.value().precision())
}

/// `C(w, batch)`: the mean loss of `batch` at the given parameters.
pub fn task_loss<'t, M: Model + ?Sized>(
    model: &M,
    tape: &'t Tape,
    params: &[Vec<Var<'t>>],
    batch: &Batch,
    pass: &Pass<'_>,
) -> Result<Loss<'t>> {
    if batch.is_empty() {
        return Err(Error::invalid("task batch is empty"));
    }
    model.batch_loss(tape, params, batch, pass)
}

/// `w'_i = w_i - alpha_i * g_i` for masked groups; other groups are passed
/// through as the very same nodes.
pub fn inner_step<'t>(
    params: &[Vec<Var<'t>>],
    grads: &[Option<Vec<Var<'t>>>],
    alpha: &[Var<'t>],
    mask: &[bool],
) -> Result<Vec<Vec<Var<'t>>>> {
    if grads.len() != params.len() || alpha.len() != params.len() || mask.len() != params.len() {
        return Err(Error::shape(
            "inner_step",
            format!(
                "{} groups, {} gradient groups, {} step sizes, {} mask flags",
                params.len(),
                grads.len(),
                alpha.len(),
                mask.len()
            ),
        ));
    }
    let mut adapted = Vec::with_capacity(params.len());
    for (i, group) in params.iter().enumerate() {
        if !mask[i] {
            adapted.push(group.clone());
            continue;
        }
        let g = grads[i]
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("masked group {i} has no inner gradient")))?;
        if g.len() != group.len() {
            return Err(Error::shape("inner_step", format!("group {i}: {} grads for {} tensors", g.len(), group.len())));
        }
        let mut out = Vec::with_capacity(group.len());
        for (w, gw) in group.iter().zip(g) {
            out.push(w.sub(&gw.mul_scalar(&alpha[i])?)?);
        }
        adapted.push(out);
    }
    Ok(adapted)
}

/// Gradients of `loss` for the flagged groups (`None` elsewhere).
fn masked_grads<'t>(
    tape: &'t Tape,
    loss: Var<'t>,
    params: &[Vec<Var<'t>>],
    mask: &[bool],
    create_graph: bool,
) -> Result<Vec<Option<Vec<Var<'t>>>>> {
    let wrt: Vec<Var<'t>> = params
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .flat_map(|(g, _)| g.iter().copied())
        .collect();
    let mut flat = if wrt.is_empty() {
        Vec::new().into_iter()
    } else {
        tape.grad(loss, &wrt, create_graph)?.into_iter()
    };
    Ok(params
        .iter()
        .zip(mask)
        .map(|(g, &m)| m.then(|| flat.by_ref().take(g.len()).collect()))
        .collect())
}

/// Builds `J` on `tape` with the inner gradient taken as described by `inner`.
pub fn mltp_objective_with<'t, M: Model + ?Sized>(
    model: &M,
    tape: &'t Tape,
    params: &[Vec<Var<'t>>],
    alpha: &[Var<'t>],
    pair: &TaskPair,
    config: &ObjectiveConfig,
    passes: &TaskPasses<'_>,
    inner: InnerGrad<'_>,
) -> Result<Objective<'t>> {
    if !config.variant.is_meta() {
        return Err(Error::invalid("the standard variant has no two-task objective"));
    }
    let infos = model.group_infos()?;
    let mask = config.mask_flags(&infos);
    let loss_i = task_loss(model, tape, params, &pair.task_i, &passes.task_i)?;
    let grads = match inner {
        InnerGrad::Live => masked_grads(tape, loss_i.value, params, &mask, config.variant.second_order())?,
        InnerGrad::Frozen(frozen) => {
            if frozen.len() != params.len() {
                return Err(Error::shape("mltp_objective", "frozen inner gradients do not match groups"));
            }
            frozen
                .iter()
                .map(|g| g.as_ref().map(|ts| ts.iter().map(|t| tape.constant(t.clone())).collect()))
                .collect()
        }
    };
    let adapted = inner_step(params, &grads, alpha, &mask)?;
    let loss_j = task_loss(model, tape, &adapted, &pair.task_j, &passes.task_j)?;
    let j = loss_i.value.add(&loss_j.value.scale(config.eta))?;
    Ok(Objective {
        j,
        c_i: loss_i.value,
        c_j: loss_j.value,
        adapted,
        bn_stats: loss_i.bn_stats,
    })
}

/// `J = C(w, task_i) + eta * C(w', task_j)`.
pub fn mltp_objective<'t, M: Model + ?Sized>(
    model: &M,
    tape: &'t Tape,
    params: &[Vec<Var<'t>>],
    alpha: &[Var<'t>],
    pair: &TaskPair,
    config: &ObjectiveConfig,
    passes: &TaskPasses<'_>,
) -> Result<Objective<'t>> {
    mltp_objective_with(model, tape, params, alpha, pair, config, passes, InnerGrad::Live)
}

/// Inner-step gradients of `C(w, task_i)` for the masked groups, as constants.
pub fn inner_gradients<M: Model + ?Sized>(
    model: &M,
    params: &ParamSet,
    pair: &TaskPair,
    config: &ObjectiveConfig,
    pass: &Pass<'_>,
) -> Result<Vec<Option<Vec<Tensor>>>> {
    let tape = Tape::new();
    let vars = params.to_vars(&tape);
    let infos = model.group_infos()?;
    let mask = config.mask_flags(&infos);
    let loss = task_loss(model, &tape, &vars, &pair.task_i, pass)?;
    let grads = masked_grads(&tape, loss.value, &vars, &mask, false)?;
    Ok(grads
        .into_iter()
        .map(|g| g.map(|vs| vs.iter().map(|v| (*v.value()).clone()).collect()))
        .collect())
}

/// `J + beta * R(w)` with `R` the sum of squares of every weight tensor
/// (biases and batch-norm parameters excluded). `beta = 0` returns `J` itself.
pub fn regularized_objective<'t>(
    j: Var<'t>,
    params: &[Vec<Var<'t>>],
    infos: &[GroupInfo],
    beta: f64,
) -> Result<Var<'t>> {
    if beta == 0.0 {
        return Ok(j);
    }
    if !(beta > 0.0) {
        return Err(Error::invalid(format!("beta must be >= 0, got {beta}")));
    }
    let mut penalty: Option<Var<'t>> = None;
    for (group, info) in params.iter().zip(infos) {
        for (w, role) in group.iter().zip(&info.roles) {
            if *role != ParamRole::Weight {
                continue;
            }
            let sq = w.square()?.sum()?;
            penalty = Some(match penalty {
                Some(p) => p.add(&sq)?,
                None => sq,
            });
        }
    }
    match penalty {
        Some(p) => j.add(&p.scale(beta)),
        None => Ok(j),
    }
}

/// First-order expansion of `J` in `alpha`:
/// `C_i(w) + eta * C_j(w) - eta * sum_l alpha_l <dC_i/dw_l, dC_j/dw_l>`.
pub fn taylor_objective<'t, M: Model + ?Sized>(
    model: &M,
    tape: &'t Tape,
    params: &[Vec<Var<'t>>],
    alpha: &[Var<'t>],
    pair: &TaskPair,
    eta: f64,
    passes: &TaskPasses<'_>,
) -> Result<Var<'t>> {
    if alpha.len() != params.len() {
        return Err(Error::shape("taylor_objective", format!("{} step sizes for {} groups", alpha.len(), params.len())));
    }
    let c_i = task_loss(model, tape, params, &pair.task_i, &passes.task_i)?.value;
    let c_j = task_loss(model, tape, params, &pair.task_j, &passes.task_j)?.value;
    let all = vec![true; params.len()];
    let g_i = masked_grads(tape, c_i, params, &all, true)?;
    let g_j = masked_grads(tape, c_j, params, &all, true)?;
    let mut alignment: Option<Var<'t>> = None;
    for (l, (gi, gj)) in g_i.iter().zip(&g_j).enumerate() {
        let (Some(gi), Some(gj)) = (gi, gj) else { continue };
        let mut dot: Option<Var<'t>> = None;
        for (a, b) in gi.iter().zip(gj) {
            let d = a.mul(b)?.sum()?;
            dot = Some(match dot {
                Some(acc) => acc.add(&d)?,
                None => d,
            });
        }
        if let Some(dot) = dot {
            let term = alpha[l].reshape(&[])?.mul(&dot)?;
            alignment = Some(match alignment {
                Some(acc) => acc.add(&term)?,
                None => term,
            });
        }
    }
    let base = c_i.add(&c_j.scale(eta))?;
    match alignment {
        Some(a) => base.sub(&a.scale(eta)),
        None => Ok(base),
    }
}

/// Value of `J + beta * R(w)` at the given point.
pub fn objective_value<M: Model + ?Sized>(
    model: &M,
    params: &ParamSet,
    alpha: &AlphaSet,
    pair: &TaskPair,
    config: &ObjectiveConfig,
    passes: &TaskPasses<'_>,
    inner: InnerGrad<'_>,
) -> Result<f64> {
    let infos = model.group_infos()?;
    let tape = Tape::new();
    let w = params.to_vars(&tape);
    let a = alpha.to_vars(&tape, param_precision(&w));
    let obj = mltp_objective_with(model, &tape, &w, &a, pair, config, passes, inner)?;
    regularized_objective(obj.j, &w, &infos, config.beta)?.item()
}

/// Gradients of the training objective with plain tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaGrads {
    pub w: Vec<Vec<Tensor>>,
    /// `None` when the step sizes are fixed.
    pub alpha: Option<Vec<f64>>,
    /// Value of the differentiated objective (including any penalty).
    pub objective: f64,
    pub c_i: f64,
    pub c_j: f64,
    pub bn_stats: Vec<BnStats>,
}

fn collect_grads(
    tape: &Tape,
    objective: Var<'_>,
    w: &[Vec<Var<'_>>],
    alpha: &[Var<'_>],
    learnable: bool,
) -> Result<(Vec<Vec<Tensor>>, Option<Vec<f64>>)> {
    let mut wrt: Vec<Var<'_>> = w.iter().flatten().copied().collect();
    if learnable {
        wrt.extend_from_slice(alpha);
    }
    let grads = tape.grad(objective, &wrt, false)?;
    let mut it = grads.iter();
    let w_grads = w
        .iter()
        .map(|g| it.by_ref().take(g.len()).map(|v| (*v.value()).clone()).collect())
        .collect();
    let a_grads = if learnable {
        Some(it.map(|v| v.item()).collect::<Result<Vec<f64>>>()?)
    } else {
        None
    };
    Ok((w_grads, a_grads))
}

/// `dJ/dw` and `dJ/dalpha` for a meta variant, with the weight penalty of
/// `config.beta` included in `J`.
pub fn mltp_grads<M: Model + ?Sized>(
    model: &M,
    params: &ParamSet,
    alpha: &AlphaSet,
    pair: &TaskPair,
    config: &ObjectiveConfig,
    passes: &TaskPasses<'_>,
) -> Result<MetaGrads> {
    mltp_grads_with(model, params, alpha, pair, config, passes, InnerGrad::Live)
}

pub fn mltp_grads_with<M: Model + ?Sized>(
    model: &M,
    params: &ParamSet,
    alpha: &AlphaSet,
    pair: &TaskPair,
    config: &ObjectiveConfig,
    passes: &TaskPasses<'_>,
    inner: InnerGrad<'_>,
) -> Result<MetaGrads> {
    let infos = model.group_infos()?;
    if alpha.len() != infos.len() {
        return Err(Error::shape("mltp_grads", format!("{} step sizes for {} groups", alpha.len(), infos.len())));
    }
    let tape = Tape::new();
    let w = params.to_vars(&tape);
    let a = alpha.to_vars(&tape, param_precision(&w));
    let obj = mltp_objective_with(model, &tape, &w, &a, pair, config, passes, inner)?;
    let total = regularized_objective(obj.j, &w, &infos, config.beta)?;
    let (w_grads, a_grads) = collect_grads(&tape, total, &w, &a, alpha.is_learnable())?;
    Ok(MetaGrads {
        w: w_grads,
        alpha: a_grads,
        objective: total.item()?,
        c_i: obj.c_i.item()?,
        c_j: obj.c_j.item()?,
        bn_stats: obj.bn_stats,
    })
}

/// Gradient of `C(w, batch) + beta * R(w)` for plain training.
pub fn standard_grads<M: Model + ?Sized>(
    model: &M,
    params: &ParamSet,
    batch: &Batch,
    beta: f64,
    pass: &Pass<'_>,
) -> Result<MetaGrads> {
    let infos = model.group_infos()?;
    let tape = Tape::new();
    let w = params.to_vars(&tape);
    let loss = task_loss(model, &tape, &w, batch, pass)?;
    let total = regularized_objective(loss.value, &w, &infos, beta)?;
    let (w_grads, _) = collect_grads(&tape, total, &w, &[], false)?;
    let c = loss.value.item()?;
    Ok(MetaGrads {
        w: w_grads,
        alpha: None,
        objective: total.item()?,
        c_i: c,
        c_j: f64::NAN,
        bn_stats: loss.bn_stats,
    })
}

/// Mutable state of one training run.
#[derive(Debug, Clone)]
pub struct TrainingState {
    pub params: ParamSet,
    pub alpha: AlphaSet,
    pub w_opt: OptimizerState,
    pub alpha_opt: OptimizerState,
    /// Running batch-norm statistics, one per batch-norm layer.
    pub running: Vec<BnStats>,
    pub steps: u64,
}

impl TrainingState {
    pub fn new(params: ParamSet, alpha: AlphaSet, running: Vec<BnStats>) -> Self {
        TrainingState {
            params,
            alpha,
            w_opt: OptimizerState::new(),
            alpha_opt: OptimizerState::new(),
            running,
            steps: 0,
        }
    }
}

/// Input of one optimization step.
#[derive(Debug, Clone)]
pub enum StepBatch {
    /// The whole batch, for the standard variant.
    Whole(Batch),
    Pair(TaskPair),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub objective: f64,
    pub c_i: f64,
    pub c_j: f64,
}

/// One outer update: compute the variant's gradients, then step `w` and (when
/// learnable) `alpha` with the same optimizer kind and learning rate.
pub fn train_step<M: Model + ?Sized>(
    state: &mut TrainingState,
    model: &M,
    batch: &StepBatch,
    config: &ObjectiveConfig,
    optimizer: &OptimizerKind,
    lr: f64,
    dropout_seed: u64,
) -> Result<StepOutcome> {
    let grads = match (config.variant, batch) {
        (Variant::Standard, StepBatch::Whole(b)) => {
            standard_grads(model, &state.params, b, config.beta, &Pass::train(dropout_seed))?
        }
        (Variant::Standard, StepBatch::Pair(_)) => {
            return Err(Error::invalid("the standard variant trains on whole batches"))
        }
        (_, StepBatch::Pair(pair)) => mltp_grads(
            model,
            &state.params,
            &state.alpha,
            pair,
            config,
            &TaskPasses::train(dropout_seed),
        )?,
        (v, StepBatch::Whole(_)) => {
            return Err(Error::invalid(format!("{} needs a task pair", v.name())))
        }
    };
    if !grads.objective.is_finite() {
        return Err(Error::NonFinite(format!(
            "objective {} at step {} (task losses {} and {})",
            grads.objective,
            state.steps + 1,
            grads.c_i,
            grads.c_j
        )));
    }

    let slots = state.params.tensors_mut().zip(grads.w.iter().flatten());
    state.w_opt.apply_update(optimizer, slots, lr)?;
    if let Some(ga) = &grads.alpha {
        let precision = state.params.tensors().next().map_or(Precision::F64, Tensor::precision);
        let mut values = Tensor::from_vec(state.alpha.values.clone(), precision);
        let g = Tensor::from_vec(ga.clone(), precision);
        state.alpha_opt.apply_update(optimizer, [(&mut values, &g)], lr)?;
        state.alpha.values = values.into_data();
    }
    for (running, batch_stats) in state.running.iter_mut().zip(&grads.bn_stats) {
        running.update(batch_stats);
    }
    state.steps += 1;
    Ok(StepOutcome {
        objective: grads.objective,
        c_i: grads.c_i,
        c_j: grads.c_j,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::{scalar_quadratic_tasks, ScalarLinear};

    const P: Precision = Precision::F64;

    fn grads(variant: Variant, w: f64, a: f64) -> MetaGrads {
        let alpha = AlphaSet::uniform(1, a, AlphaMode::Learnable);
        let cfg = ObjectiveConfig::new(variant, 1.0);
        mltp_grads(
            &ScalarLinear,
            &ScalarLinear::params(w, P),
            &alpha,
            &scalar_quadratic_tasks(P),
            &cfg,
            &TaskPasses::train(0),
        )
        .unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-10 * b.abs().max(1.0)
    }

    #[test]
    fn scalar_objective_and_gradients() {
        let g = grads(Variant::MltpFull, 2.0, 0.1);
        assert!(close(g.objective, 13.96), "{}", g.objective);
        assert!(close(g.w[0][0].data()[0], 13.52));
        assert!(close(g.alpha.as_ref().unwrap()[0], -28.8));
        let fo = grads(Variant::MltpFo, 2.0, 0.1);
        assert!(close(fo.objective, 13.96));
        assert!(close(fo.w[0][0].data()[0], 16.4));
        assert!(close(fo.alpha.unwrap()[0], -28.8));
    }

    fn taylor(a: f64) -> f64 {
        let tape = Tape::new();
        let w = ScalarLinear::params(2.0, P).to_vars(&tape);
        let alpha = AlphaSet::uniform(1, a, AlphaMode::Fixed).to_vars(&tape, P);
        let t = taylor_objective(&ScalarLinear, &tape, &w, &alpha, &scalar_quadratic_tasks(P), 1.0, &TaskPasses::train(0))
            .unwrap();
        t.item().unwrap()
    }

    #[test]
    fn scalar_taylor_residual() {
        assert!(close(taylor(0.1), 13.8));
        let r1 = grads(Variant::MltpFull, 2.0, 0.1).objective - taylor(0.1);
        let r2 = grads(Variant::MltpFull, 2.0, 0.05).objective - taylor(0.05);
        assert!(close(r1, 0.16));
        assert!(close(r2, 0.04));
    }

    #[test]
    fn scalar_sgd_step() {
        let mut state = TrainingState::new(ScalarLinear::params(2.0, P), AlphaSet::uniform(1, 0.1, AlphaMode::Learnable), vec![]);
        let cfg = ObjectiveConfig::new(Variant::MltpFull, 1.0);
        let batch = StepBatch::Pair(scalar_quadratic_tasks(P));
        train_step(&mut state, &ScalarLinear, &batch, &cfg, &OptimizerKind::Sgd, 0.01, 0).unwrap();
        assert!(close(state.params.groups[0].tensors[0].data()[0], 1.8648));
        assert!(close(state.alpha.values[0], 0.388));
    }

    #[test]
    fn fixed_alpha_is_untouched() {
        let mut state = TrainingState::new(ScalarLinear::params(2.0, P), AlphaSet::uniform(1, 0.1, AlphaMode::Fixed), vec![]);
        let cfg = ObjectiveConfig::new(Variant::MltpFull, 1.0);
        let batch = StepBatch::Pair(scalar_quadratic_tasks(P));
        train_step(&mut state, &ScalarLinear, &batch, &cfg, &OptimizerKind::Sgd, 0.01, 0).unwrap();
        assert_eq!(state.alpha.values, vec![0.1]);
    }

    #[test]
    fn penalty_on_weights() {
        let tape = Tape::new();
        let w = ScalarLinear::params(3.0, P).to_vars(&tape);
        let infos = ScalarLinear.group_infos().unwrap();
        let zero = tape.constant(Tensor::scalar(0.0, P));
        let j = regularized_objective(zero, &w, &infos, 0.1).unwrap();
        assert!(close(j.item().unwrap(), 0.9));
        let same = regularized_objective(zero, &w, &infos, 0.0).unwrap();
        assert_eq!(same.id(), zero.id());
    }

    #[test]
    fn zero_alpha_is_sum_of_losses() {
        let g = grads(Variant::MltpFull, 2.0, 0.0);
        assert!(close(g.objective, 1.0 + 16.0));
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().ok(), Some(v));
        }
    }
}
