//! Network descriptions and a functional forward pass.
//!
//! Parameters are never owned by layers: [`forward`] takes the parameter
//! groups as explicit `Var`s, so the same network can be evaluated at `w` or
//! at an adapted `w - alpha * g` that is itself a function of `w` and `alpha`.
//!
//! Conventions: conv layers use stride 1 and `kernel / 2` zero padding, max
//! pooling uses stride equal to the window, and the configured activation
//! follows every conv and fc layer except the softmax output.

use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{conv_output_size, Tape, Var};
use crate::data::{Batch, Dataset, Targets};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Precision, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv { filters: usize, kernel: usize },
    Fc { units: usize },
    #[serde(rename = "maxpool")]
    MaxPool { window: usize },
    Dropout { p: f64 },
    #[serde(rename = "batchnorm")]
    BatchNorm,
    /// Affine output layer with `classes` units; the softmax lives in the loss.
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub name: String,
    /// Per-sample input shape, `[C, H, W]` or `[D]`.
    pub input: Vec<usize>,
    pub classes: usize,
    #[serde(default)]
    pub activation: Activation,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    Conv,
    Fc,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    Weight,
    Bias,
    Scale,
    Shift,
}

/// Static description of one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupInfo {
    /// Position of the owning layer in the network's layer list.
    pub layer: usize,
    pub kind: GroupKind,
    pub roles: Vec<ParamRole>,
    pub shapes: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub layer: usize,
    pub kind: GroupKind,
    pub roles: Vec<ParamRole>,
    pub tensors: Vec<Tensor>,
}

/// All trainable parameters, one group per parameterized layer in network order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub groups: Vec<ParamGroup>,
}

impl ParamSet {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.groups.iter().flat_map(|g| &g.tensors).map(Tensor::numel).sum()
    }

    /// Registers every tensor as a differentiable leaf.
    pub fn to_vars<'t>(&self, tape: &'t Tape) -> Vec<Vec<Var<'t>>> {
        self.groups
            .iter()
            .map(|g| g.tensors.iter().map(|t| tape.var(t.clone())).collect())
            .collect()
    }

    /// Registers every tensor as a constant.
    pub fn to_constants<'t>(&self, tape: &'t Tape) -> Vec<Vec<Var<'t>>> {
        self.groups
            .iter()
            .map(|g| g.tensors.iter().map(|t| tape.constant(t.clone())).collect())
            .collect()
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.groups.iter().flat_map(|g| &g.tensors)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.groups.iter_mut().flat_map(|g| &mut g.tensors)
    }

    pub fn with_precision(&self, precision: Precision) -> ParamSet {
        let mut out = self.clone();
        for t in out.tensors_mut() {
            *t = t.with_precision(precision);
        }
        out
    }

    pub fn infos(&self) -> Vec<GroupInfo> {
        self.groups
            .iter()
            .map(|g| GroupInfo {
                layer: g.layer,
                kind: g.kind,
                roles: g.roles.clone(),
                shapes: g.tensors.iter().map(|t| t.shape().to_vec()).collect(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitScheme {
    /// Uniform on `+-sqrt(6 / (fan_in + fan_out))`.
    Xavier,
    /// Zero-mean normal with std `sqrt(2 / fan_in)`.
    Kaiming,
    Normal { mean: f64, std: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel batch-norm statistics. Batch estimates carry the unbiased variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BnStats {
    pub fn identity(channels: usize) -> Self {
        BnStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    /// Exponential moving update with a batch estimate.
    pub fn update(&mut self, batch: &BnStats) {
        for (r, b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
        for (r, b) in self.var.iter_mut().zip(&batch.var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
    }
}

/// How a forward pass treats dropout and batch norm.
#[derive(Debug, Clone, Copy)]
pub struct Pass<'a> {
    pub mode: Mode,
    pub dropout_seed: u64,
    /// Running statistics, one entry per batch-norm layer; required in eval mode.
    pub running: Option<&'a [BnStats]>,
}

impl Pass<'_> {
    pub fn train(dropout_seed: u64) -> Pass<'static> {
        Pass {
            mode: Mode::Train,
            dropout_seed,
            running: None,
        }
    }

    pub fn eval(running: Option<&[BnStats]>) -> Pass<'_> {
        Pass {
            mode: Mode::Eval,
            dropout_seed: 0,
            running,
        }
    }
}

pub struct ForwardOutput<'t> {
    pub logits: Var<'t>,
    /// Batch statistics of each batch-norm layer (train mode only).
    pub bn_stats: Vec<BnStats>,
}

/// Layers selected for the inner step, by position in the layer list.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LayerMask {
    pub layers: BTreeSet<usize>,
}

impl LayerMask {
    pub fn contains(&self, layer: usize) -> bool {
        self.layers.contains(&layer)
    }

    pub fn all_of(infos: &[GroupInfo]) -> Self {
        LayerMask {
            layers: infos.iter().map(|g| g.layer).collect(),
        }
    }

    /// Per-group membership flags.
    pub fn flags(&self, infos: &[GroupInfo]) -> Vec<bool> {
        infos.iter().map(|g| self.contains(g.layer)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSelector {
    All,
    ConvOnly,
    FcOnly,
    Explicit(Vec<usize>),
}

impl NetworkSpec {
    /// Per-sample output shape after each layer.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input.is_empty() || self.input.contains(&0) {
            return Err(Error::invalid(format!("network {}: bad input shape {:?}", self.name, self.input)));
        }
        if self.classes == 0 {
            return Err(Error::invalid(format!("network {}: classes must be positive", self.name)));
        }
        match self.layers.iter().filter(|l| matches!(l, LayerSpec::Softmax)).count() {
            1 if matches!(self.layers.last(), Some(LayerSpec::Softmax)) => {}
            _ => {
                return Err(Error::invalid(format!(
                    "network {}: exactly one softmax layer is required, at the end",
                    self.name
                )))
            }
        }
        let mut cur = self.input.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let bad = |msg: String| Error::invalid(format!("network {} layer {i}: {msg}", self.name));
            cur = match *layer {
                LayerSpec::Conv { filters, kernel } => {
                    let [_, h, w] = cur[..] else {
                        return Err(bad(format!("conv needs [C, H, W] input, got {cur:?}")));
                    };
                    if filters == 0 || kernel == 0 {
                        return Err(bad("conv filters and kernel must be positive".into()));
                    }
                    let pad = kernel / 2;
                    match (conv_output_size(h, kernel, 1, pad), conv_output_size(w, kernel, 1, pad)) {
                        (Some(oh), Some(ow)) => vec![filters, oh, ow],
                        _ => return Err(bad(format!("kernel {kernel} does not fit {h}x{w}"))),
                    }
                }
                LayerSpec::MaxPool { window } => {
                    let [c, h, w] = cur[..] else {
                        return Err(bad(format!("maxpool needs [C, H, W] input, got {cur:?}")));
                    };
                    match (
                        conv_output_size(h, window, window, 0),
                        conv_output_size(w, window, window, 0),
                    ) {
                        (Some(oh), Some(ow)) => vec![c, oh, ow],
                        _ => return Err(bad(format!("window {window} does not tile {h}x{w}"))),
                    }
                }
                LayerSpec::Fc { units } => {
                    if units == 0 {
                        return Err(bad("fc units must be positive".into()));
                    }
                    vec![units]
                }
                LayerSpec::Dropout { p } => {
                    if !(0.0..1.0).contains(&p) {
                        return Err(bad(format!("dropout probability {p} outside [0, 1)")));
                    }
                    cur
                }
                LayerSpec::BatchNorm => {
                    if cur.len() != 1 && cur.len() != 3 {
                        return Err(bad(format!("batchnorm needs [C, H, W] or [D], got {cur:?}")));
                    }
                    cur
                }
                LayerSpec::Softmax => vec![self.classes],
            };
            out.push(cur.clone());
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.shapes().map(|_| ())
    }

    pub fn group_infos(&self) -> Result<Vec<GroupInfo>> {
        let shapes = self.shapes()?;
        let mut infos = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let input = if i == 0 { &self.input } else { &shapes[i - 1] };
            let fan_in: usize = input.iter().product();
            match *layer {
                LayerSpec::Conv { filters, kernel } => infos.push(GroupInfo {
                    layer: i,
                    kind: GroupKind::Conv,
                    roles: vec![ParamRole::Weight, ParamRole::Bias],
                    shapes: vec![vec![filters, input[0], kernel, kernel], vec![filters]],
                }),
                LayerSpec::Fc { units } => infos.push(GroupInfo {
                    layer: i,
                    kind: GroupKind::Fc,
                    roles: vec![ParamRole::Weight, ParamRole::Bias],
                    shapes: vec![vec![fan_in, units], vec![units]],
                }),
                LayerSpec::Softmax => infos.push(GroupInfo {
                    layer: i,
                    kind: GroupKind::Fc,
                    roles: vec![ParamRole::Weight, ParamRole::Bias],
                    shapes: vec![vec![fan_in, self.classes], vec![self.classes]],
                }),
                LayerSpec::BatchNorm => infos.push(GroupInfo {
                    layer: i,
                    kind: GroupKind::Other,
                    roles: vec![ParamRole::Scale, ParamRole::Shift],
                    shapes: vec![vec![input[0]], vec![input[0]]],
                }),
                LayerSpec::MaxPool { .. } | LayerSpec::Dropout { .. } => {}
            }
        }
        Ok(infos)
    }

    pub fn num_params(&self) -> Result<usize> {
        Ok(self
            .group_infos()?
            .iter()
            .flat_map(|g| &g.shapes)
            .map(|s| s.iter().product::<usize>())
            .sum())
    }

    /// Number of batch-norm layers.
    pub fn batchnorm_count(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, LayerSpec::BatchNorm)).count()
    }

    /// Channel count of each batch-norm layer.
    pub fn batchnorm_channels(&self) -> Result<Vec<usize>> {
        Ok(self
            .group_infos()?
            .iter()
            .filter(|g| g.kind == GroupKind::Other)
            .map(|g| g.shapes[0][0])
            .collect())
    }

    /// The small CIFAR-style networks `CNet1`..`CNet4`, with every conv and fc
    /// width divided by `width_div`.
    pub fn cnet(which: u8, input: [usize; 3], classes: usize, width_div: usize) -> Result<NetworkSpec> {
        let d = |n: usize| (n / width_div.max(1)).max(1);
        let conv = |f: usize| LayerSpec::Conv {
            filters: d(f),
            kernel: 3,
        };
        let fc = |u: usize| LayerSpec::Fc { units: d(u) };
        let mp = LayerSpec::MaxPool { window: 2 };
        let layers = match which {
            1 => vec![conv(256), mp, fc(512), LayerSpec::Softmax],
            2 => vec![conv(128), conv(128), mp, fc(256), LayerSpec::Softmax],
            3 => vec![conv(128), conv(128), mp, fc(256), fc(256), LayerSpec::Softmax],
            4 => vec![
                conv(128),
                conv(128),
                mp.clone(),
                conv(256),
                conv(256),
                mp.clone(),
                conv(512),
                conv(512),
                mp,
                fc(1024),
                LayerSpec::Softmax,
            ],
            other => return Err(Error::invalid(format!("no preset cnet{other}"))),
        };
        let spec = NetworkSpec {
            name: format!("cnet{which}"),
            input: input.to_vec(),
            classes,
            activation: Activation::Relu,
            layers,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Fully connected network: hidden layers of the given widths, then softmax.
    pub fn mlp(name: &str, input: usize, hidden: &[usize], classes: usize, activation: Activation) -> NetworkSpec {
        let mut layers: Vec<LayerSpec> = hidden.iter().map(|&units| LayerSpec::Fc { units }).collect();
        layers.push(LayerSpec::Softmax);
        NetworkSpec {
            name: name.to_string(),
            input: vec![input],
            classes,
            activation,
            layers,
        }
    }
}

fn fans(shape: &[usize]) -> (f64, f64) {
    match *shape {
        [fan_in, fan_out] => (fan_in as f64, fan_out as f64),
        [f, c, kh, kw] => ((c * kh * kw) as f64, (f * kh * kw) as f64),
        _ => (shape.iter().product::<usize>() as f64, 1.0),
    }
}

/// Draws initial parameters. Weights follow `scheme`; biases and batch-norm
/// shifts start at zero and batch-norm scales at one.
pub fn init_params(spec: &NetworkSpec, scheme: InitScheme, seed: u64, precision: Precision) -> Result<ParamSet> {
    let infos = spec.group_infos()?;
    let mut rng = rng::stream(seed, rng::INIT, 0);
    let mut groups = Vec::with_capacity(infos.len());
    for info in infos {
        let mut tensors = Vec::with_capacity(info.shapes.len());
        for (shape, role) in info.shapes.iter().zip(&info.roles) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = match role {
                ParamRole::Weight => {
                    let (fan_in, fan_out) = fans(shape);
                    match scheme {
                        InitScheme::Xavier => {
                            let bound = (6.0 / (fan_in + fan_out)).sqrt();
                            let dist = Uniform::new_inclusive(-bound, bound)
                                .map_err(|e| Error::invalid(format!("xavier bound: {e}")))?;
                            (0..n).map(|_| dist.sample(&mut rng)).collect()
                        }
                        InitScheme::Kaiming => {
                            let dist = Normal::new(0.0, (2.0 / fan_in).sqrt())
                                .map_err(|e| Error::invalid(format!("kaiming std: {e}")))?;
                            (0..n).map(|_| dist.sample(&mut rng)).collect()
                        }
                        InitScheme::Normal { mean, std } => {
                            let dist = Normal::new(mean, std)
                                .map_err(|e| Error::invalid(format!("normal init: {e}")))?;
                            (0..n).map(|_| dist.sample(&mut rng)).collect()
                        }
                    }
                }
                ParamRole::Scale => vec![1.0; n],
                ParamRole::Bias | ParamRole::Shift => vec![0.0; n],
            };
            tensors.push(Tensor::new(shape.clone(), data, precision)?);
        }
        groups.push(ParamGroup {
            layer: info.layer,
            kind: info.kind,
            roles: info.roles,
            tensors,
        });
    }
    Ok(ParamSet { groups })
}

/// Resolves a selector to the set of parameterized layers it covers.
///
/// The softmax output counts as fc. Batch-norm layers are only picked up by
/// `All` or an explicit list.
pub fn select_mask(spec: &NetworkSpec, selector: &MaskSelector) -> Result<LayerMask> {
    let infos = spec.group_infos()?;
    let pick = |kind: GroupKind| infos.iter().filter(|g| g.kind == kind).map(|g| g.layer).collect();
    let layers = match selector {
        MaskSelector::All => infos.iter().map(|g| g.layer).collect(),
        MaskSelector::ConvOnly => pick(GroupKind::Conv),
        MaskSelector::FcOnly => pick(GroupKind::Fc),
        MaskSelector::Explicit(list) => {
            let mut set = BTreeSet::new();
            for &layer in list {
                if !infos.iter().any(|g| g.layer == layer) {
                    return Err(Error::invalid(format!("layer {layer} has no parameters")));
                }
                set.insert(layer);
            }
            set
        }
    };
    Ok(LayerMask { layers })
}

fn batchnorm<'t>(
    x: Var<'t>,
    scale: &Var<'t>,
    shift: &Var<'t>,
    pass: &Pass<'_>,
    running: Option<&BnStats>,
) -> Result<(Var<'t>, Option<BnStats>)> {
    let tape = x.tape();
    let shape = x.shape();
    let channels = shape[1];
    let mut stat_shape = vec![1; shape.len()];
    stat_shape[1] = channels;
    let count = shape.iter().product::<usize>() / channels;
    let precision = x.value().precision();

    let (centered, inv_std, stats) = match pass.mode {
        Mode::Train => {
            let mean = x.sum_to(&stat_shape)?.scale(1.0 / count as f64);
            let centered = x.sub(&mean.expand(&shape)?)?;
            let var = centered.square()?.sum_to(&stat_shape)?.scale(1.0 / count as f64);
            let inv_std = var.add_const(BN_EPS)?.powf(-0.5);
            // normalization uses the biased variance; the reported one is unbiased
            let unbias = if count > 1 { count as f64 / (count as f64 - 1.0) } else { 1.0 };
            let stats = BnStats {
                mean: mean.value().data().to_vec(),
                var: var.value().data().iter().map(|v| v * unbias).collect(),
            };
            (centered, inv_std, Some(stats))
        }
        Mode::Eval => {
            let r = running.ok_or_else(|| Error::invalid("eval-mode batch norm needs running statistics"))?;
            if r.mean.len() != channels {
                return Err(Error::shape("batchnorm", format!("{} running channels for {channels}", r.mean.len())));
            }
            let mean = tape.constant(Tensor::new(stat_shape.clone(), r.mean.clone(), precision)?);
            let inv: Vec<f64> = r.var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
            let inv_std = tape.constant(Tensor::new(stat_shape.clone(), inv, precision)?);
            (x.sub(&mean.expand(&shape)?)?, inv_std, None)
        }
    };
    let y = centered.mul(&inv_std.expand(&shape)?)?;
    let y = y
        .mul(&scale.reshape(&stat_shape)?.expand(&shape)?)?
        .add(&shift.reshape(&stat_shape)?.expand(&shape)?)?;
    Ok((y, stats))
}

fn dropout_mask(shape: &[usize], p: f64, seed: u64, layer: usize, precision: Precision) -> Tensor {
    let mut rng = rng::stream(seed, rng::DROPOUT, layer as u64);
    let keep = 1.0 / (1.0 - p);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    Tensor::from_parts(shape.to_vec(), data, precision)
}

fn flatten<'t>(x: Var<'t>) -> Result<Var<'t>> {
    let shape = x.shape();
    if shape.len() == 2 {
        return Ok(x);
    }
    let n = shape[0];
    x.reshape(&[n, shape[1..].iter().product()])
}

/// Evaluates the network at the supplied parameter groups.
pub fn forward<'t>(
    spec: &NetworkSpec,
    params: &[Vec<Var<'t>>],
    input: Var<'t>,
    pass: &Pass<'_>,
) -> Result<ForwardOutput<'t>> {
    let infos = spec.group_infos()?;
    if params.len() != infos.len() {
        return Err(Error::shape(
            "forward",
            format!("{} parameter groups for {} parameterized layers", params.len(), infos.len()),
        ));
    }
    for (g, info) in params.iter().zip(&infos) {
        let shapes: Vec<Vec<usize>> = g.iter().map(|v| v.shape()).collect();
        if shapes != info.shapes {
            return Err(Error::shape(
                "forward",
                format!("layer {} expects {:?}, got {:?}", info.layer, info.shapes, shapes),
            ));
        }
    }
    let in_shape = input.shape();
    if in_shape.len() != spec.input.len() + 1 || in_shape[1..] != spec.input[..] {
        return Err(Error::shape(
            "forward",
            format!("input {:?} does not match [N, {:?}]", in_shape, spec.input),
        ));
    }
    let batch = in_shape[0];
    let activate = |x: Var<'t>| match spec.activation {
        Activation::Relu => x.relu(),
        Activation::Sigmoid => x.sigmoid(),
    };

    let mut x = input;
    let mut group = 0;
    let mut bn_index = 0;
    let mut bn_stats = Vec::new();
    for (i, layer) in spec.layers.iter().enumerate() {
        x = match layer {
            LayerSpec::Conv { kernel, .. } => {
                let p = &params[group];
                group += 1;
                let y = x.conv2d(&p[0], 1, kernel / 2)?;
                let shape = y.shape();
                let bias = p[1].reshape(&[1, shape[1], 1, 1])?.expand(&shape)?;
                activate(y.add(&bias)?)
            }
            LayerSpec::Fc { .. } | LayerSpec::Softmax => {
                let p = &params[group];
                group += 1;
                let y = flatten(x)?.matmul(&p[0])?;
                let shape = y.shape();
                let y = y.add(&p[1].reshape(&[1, shape[1]])?.expand(&shape)?)?;
                if matches!(layer, LayerSpec::Softmax) {
                    y
                } else {
                    activate(y)
                }
            }
            LayerSpec::MaxPool { window } => x.max_pool2d(*window, *window)?,
            LayerSpec::Dropout { p } => {
                if pass.mode == Mode::Train && *p > 0.0 {
                    let shape = x.shape();
                    let mask = dropout_mask(&shape, *p, pass.dropout_seed, i, x.value().precision());
                    x.mul(&x.tape().constant(mask))?
                } else {
                    x
                }
            }
            LayerSpec::BatchNorm => {
                let p = &params[group];
                group += 1;
                let running = pass.running.and_then(|r| r.get(bn_index));
                bn_index += 1;
                let (y, stats) = batchnorm(x, &p[0], &p[1], pass, running)?;
                bn_stats.extend(stats);
                y
            }
        };
    }
    debug_assert_eq!(x.shape(), vec![batch, spec.classes]);
    Ok(ForwardOutput { logits: x, bn_stats })
}

/// Scalar loss of a batch plus the side outputs of the pass.
pub struct Loss<'t> {
    pub value: Var<'t>,
    pub bn_stats: Vec<BnStats>,
}

/// Anything the meta-objective can be built on: a parameter layout and a
/// differentiable per-batch loss evaluated at explicit parameters.
pub trait Model {
    fn group_infos(&self) -> Result<Vec<GroupInfo>>;

    fn batch_loss<'t>(
        &self,
        tape: &'t Tape,
        params: &[Vec<Var<'t>>],
        batch: &Batch,
        pass: &Pass<'_>,
    ) -> Result<Loss<'t>>;
}

impl Model for NetworkSpec {
    fn group_infos(&self) -> Result<Vec<GroupInfo>> {
        NetworkSpec::group_infos(self)
    }

    fn batch_loss<'t>(
        &self,
        tape: &'t Tape,
        params: &[Vec<Var<'t>>],
        batch: &Batch,
        pass: &Pass<'_>,
    ) -> Result<Loss<'t>> {
        let x = tape.constant(batch.x.clone());
        let out = forward(self, params, x, pass)?;
        let value = match &batch.y {
            Targets::Classes(labels) => out.logits.softmax_cross_entropy(labels)?,
            Targets::Values(t) => out.logits.mse(t)?,
        };
        Ok(Loss {
            value,
            bn_stats: out.bn_stats,
        })
    }
}

/// Mean loss and accuracy (percent) over a dataset in eval mode, computed in
/// chunks of `chunk` samples without recording gradients.
pub fn evaluate(
    spec: &NetworkSpec,
    params: &ParamSet,
    running: &[BnStats],
    data: &Dataset,
    chunk: usize,
) -> Result<(f64, f64)> {
    let n = data.len();
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..n).collect();
    for part in idx.chunks(chunk.max(1)) {
        let batch = data.batch(part)?;
        let tape = Tape::new();
        let vars = params.to_constants(&tape);
        let x = tape.constant(batch.x.clone());
        let out = forward(spec, &vars, x, &Pass::eval(Some(running)))?;
        let Targets::Classes(labels) = &batch.y else {
            return Err(Error::invalid("evaluate needs class labels"));
        };
        loss_sum += out.logits.softmax_cross_entropy(labels)?.item()? * part.len() as f64;
        let logits = out.logits.value();
        let k = spec.classes;
        for (row, &label) in logits.data().chunks(k).zip(labels) {
            let mut best = 0;
            for j in 1..k {
                if row[j] > row[best] {
                    best = j;
                }
            }
            if best == label {
                correct += 1;
            }
        }
    }
    Ok((loss_sum / n as f64, 100.0 * correct as f64 / n as f64))
}
