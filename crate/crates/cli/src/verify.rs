//! Gradient checks against finite differences, the Taylor residual scan and
//! the first-order gap scan.

use std::fmt;

use mltp_core::data::{epoch_order, split_task_pair, TaskPair};
use mltp_core::gradcheck::{finite_diff, group_errors, pack_alpha, relative_error, unpack_alpha, Step};
use mltp_core::meta::{
    inner_gradients, mltp_grads_with, mltp_objective, objective_value, taylor_objective, AlphaMode, AlphaSet,
    InnerGrad, ObjectiveConfig, TaskPasses, Variant,
};
use mltp_core::nn::{init_params, Activation, GroupInfo, LayerSpec, Model, ParamSet};
use mltp_core::toy::{scalar_quadratic_tasks, ScalarLinear};
use mltp_core::{NetworkSpec, Precision, Tape, Tensor};

use crate::config::ExperimentConfig;
use crate::train::load_data;
use crate::CliError;

/// Dropout stream used by every check, so perturbed evaluations share masks.
const CHECK_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupError {
    pub name: String,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantCheck {
    pub variant: Variant,
    pub groups: Vec<GroupError>,
    pub tolerance: f64,
}

impl VariantCheck {
    pub fn max_error(&self) -> f64 {
        self.groups.iter().map(|g| g.error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_error() <= self.tolerance
    }
}

fn group_name(info: &GroupInfo) -> String {
    format!("layer{}:{:?}", info.layer, info.kind).to_lowercase()
}

/// Compares the analytic gradients of one variant with central differences
/// of the same objective. For the first-order variant the oracle holds the
/// inner gradient fixed at its value at `params`, which is the function that
/// variant differentiates.
pub fn check_variant<M: Model + ?Sized>(
    model: &M,
    params: &ParamSet,
    alpha: &AlphaSet,
    pair: &TaskPair,
    config: &ObjectiveConfig,
    step: f64,
    tolerance: f64,
) -> Result<VariantCheck, CliError> {
    let infos = model.group_infos()?;
    let alpha = AlphaSet {
        values: alpha.values.clone(),
        mode: AlphaMode::Learnable,
    };
    let passes = TaskPasses::train(CHECK_SEED);
    let frozen = if config.variant == Variant::MltpFo {
        Some(inner_gradients(model, params, pair, config, &passes.task_i)?)
    } else {
        None
    };
    let inner = match &frozen {
        Some(g) => InnerGrad::Frozen(g),
        None => InnerGrad::Live,
    };
    let analytic = mltp_grads_with(model, params, &alpha, pair, config, &passes, InnerGrad::Live)?;
    let packed = pack_alpha(params, &alpha);
    let mut f = |p: &ParamSet| {
        let (w, a) = unpack_alpha(p, AlphaMode::Learnable)?;
        objective_value(model, &w, &a, pair, config, &passes, inner)
    };
    let numeric = finite_diff(&mut f, &packed, Step::Relative(step))?;

    let mut groups: Vec<GroupError> = group_errors(&analytic.w, &numeric[..params.len()])
        .into_iter()
        .zip(&infos)
        .map(|(error, info)| GroupError {
            name: group_name(info),
            error,
        })
        .collect();
    let precision = params.tensors().next().map_or(Precision::F64, Tensor::precision);
    let a_grad = Tensor::from_vec(analytic.alpha.unwrap_or_default(), precision);
    groups.push(GroupError {
        name: "alpha".into(),
        error: relative_error(&[a_grad], &numeric[params.len()]),
    });
    Ok(VariantCheck {
        variant: config.variant,
        groups,
        tolerance,
    })
}

/// Closed-form values of the one-parameter problem next to what the code
/// computes for them.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarCheck {
    pub objective: f64,
    pub dw_full: f64,
    pub dw_fo: f64,
    pub dalpha_full: f64,
    pub dalpha_fo: f64,
    /// Largest deviation from the closed forms.
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub network: String,
    pub num_params: usize,
    pub checks: Vec<VariantCheck>,
    pub scalar: Option<ScalarCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(VariantCheck::passed) && self.scalar.as_ref().is_none_or(|s| s.error < 1e-10)
    }
}

/// The one-parameter problem `f(w, x) = w x` at `w = 2`, `alpha = 0.1`,
/// `eta = 1` with tasks `(1, 1)` and `(2, 0)`.
pub fn gradcheck_scalar(step: f64, tolerance: f64) -> Result<GradcheckReport, CliError> {
    let p = Precision::F64;
    let params = ScalarLinear::params(2.0, p);
    let alpha = AlphaSet::uniform(1, 0.1, AlphaMode::Learnable);
    let pair = scalar_quadratic_tasks(p);
    let passes = TaskPasses::train(CHECK_SEED);
    let mut checks = Vec::new();
    let mut grads = Vec::new();
    for variant in [Variant::MltpFull, Variant::MltpFo] {
        let cfg = ObjectiveConfig::new(variant, 1.0);
        checks.push(check_variant(&ScalarLinear, &params, &alpha, &pair, &cfg, step, tolerance)?);
        grads.push(mltp_grads_with(&ScalarLinear, &params, &alpha, &pair, &cfg, &passes, InnerGrad::Live)?);
    }
    let scalar = ScalarCheck {
        objective: grads[0].objective,
        dw_full: grads[0].w[0][0].data()[0],
        dw_fo: grads[1].w[0][0].data()[0],
        dalpha_full: grads[0].alpha.as_ref().map_or(f64::NAN, |a| a[0]),
        dalpha_fo: grads[1].alpha.as_ref().map_or(f64::NAN, |a| a[0]),
        error: 0.0,
    };
    let error = [
        (scalar.objective, 13.96),
        (scalar.dw_full, 13.52),
        (scalar.dw_fo, 16.4),
        (scalar.dalpha_full, -28.8),
        (scalar.dalpha_fo, -28.8),
    ]
    .iter()
    .map(|(a, b)| (a - b).abs())
    .fold(0.0, f64::max);
    Ok(GradcheckReport {
        network: "scalar-quadratic".into(),
        num_params: 1,
        checks,
        scalar: Some(ScalarCheck { error, ..scalar }),
    })
}

/// A 64-bit network, parameters and task pair drawn from a config.
pub struct CheckProblem {
    pub spec: NetworkSpec,
    pub params: ParamSet,
    pub alpha: AlphaSet,
    pub pair: TaskPair,
}

pub fn problem_from_config(cfg: &ExperimentConfig, batch: usize) -> Result<CheckProblem, CliError> {
    let mut cfg = cfg.clone();
    cfg.precision = Precision::F64;
    let (train, _) = load_data(&cfg)?;
    let spec = cfg.network_spec(train.sample_shape(), train.classes)?;
    let seed = cfg.seeds[0];
    let params = init_params(&spec, cfg.init, seed, Precision::F64)?;
    let alpha = AlphaSet::normal(params.len(), cfg.alpha.mean, cfg.alpha.std, AlphaMode::Learnable, seed)?;
    let order = epoch_order(train.len(), seed, 0);
    let take = batch.min(train.len()) & !1;
    let pair = split_task_pair(&train.batch(&order[..take])?)?;
    Ok(CheckProblem {
        spec,
        params,
        alpha,
        pair,
    })
}

/// Runs every meta variant on the network of `cfg`.
pub fn gradcheck_config(cfg: &ExperimentConfig) -> Result<GradcheckReport, CliError> {
    let g = &cfg.gradcheck;
    let prob = problem_from_config(cfg, g.batch)?;
    let n = prob.params.num_params();
    if n > g.cap {
        return Err(CliError::Config(format!(
            "network has {n} parameters, above the gradcheck cap of {}",
            g.cap
        )));
    }
    let mut checks = Vec::new();
    for variant in Variant::META {
        let oc = ObjectiveConfig {
            variant,
            eta: cfg.objective.eta,
            beta: cfg.objective.beta,
            mask: None,
        };
        checks.push(check_variant(&prob.spec, &prob.params, &prob.alpha, &prob.pair, &oc, g.step, g.tolerance)?);
    }
    Ok(GradcheckReport {
        network: prob.spec.name.clone(),
        num_params: n,
        checks,
        scalar: None,
    })
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "gradcheck {} ({} parameters, 64-bit)", self.network, self.num_params)?;
        if let Some(s) = &self.scalar {
            writeln!(f, "  J            {:.12}", s.objective)?;
            writeln!(f, "  dJ/dw  full  {:.12}", s.dw_full)?;
            writeln!(f, "  dJ/dw  fo    {:.12}", s.dw_fo)?;
            writeln!(f, "  dJ/dw  gap   {:.12}", s.dw_fo - s.dw_full)?;
            writeln!(f, "  dJ/da  full  {:.12}", s.dalpha_full)?;
            writeln!(f, "  dJ/da  fo    {:.12}", s.dalpha_fo)?;
            writeln!(f, "  closed-form error {:.3e}", s.error)?;
        }
        for c in &self.checks {
            let verdict = if c.passed() { "PASS" } else { "FAIL" };
            writeln!(f, "  {:<10} max rel err {:.3e}  {verdict}", c.variant.name(), c.max_error())?;
            for g in &c.groups {
                writeln!(f, "    {:<16} {:.3e}", g.name, g.error)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaylorRow {
    pub scale: f64,
    pub exact: f64,
    pub taylor: f64,
    pub residual: f64,
    /// Residual of the previous row divided by this one.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaylorReport {
    pub network: String,
    pub rows: Vec<TaylorRow>,
}

impl TaylorReport {
    /// Every ratio between consecutive scales lies in `[3.5, 4.5]` after
    /// normalizing for scale steps other than a halving.
    pub fn passed(&self) -> bool {
        self.rows.windows(2).all(|w| {
            let Some(ratio) = w[1].ratio else { return false };
            let expected = (w[0].scale / w[1].scale).powi(2) / 4.0;
            (3.5..=4.5).contains(&(ratio / expected))
        })
    }
}

/// `|J - T|` at a uniform step size `s` for each scale, with every layer in
/// the inner step.
pub fn taylor_scan<M: Model + ?Sized>(
    model: &M,
    params: &ParamSet,
    pair: &TaskPair,
    eta: f64,
    scales: &[f64],
    name: &str,
) -> Result<TaylorReport, CliError> {
    let passes = TaskPasses::train(CHECK_SEED);
    let config = ObjectiveConfig::new(Variant::MltpFull, eta);
    let mut rows: Vec<TaylorRow> = Vec::new();
    for &s in scales {
        let alpha = AlphaSet::uniform(params.len(), s, AlphaMode::Fixed);
        let tape = Tape::new();
        let w = params.to_vars(&tape);
        let a = alpha.to_vars(&tape, Precision::F64);
        let exact = mltp_objective(model, &tape, &w, &a, pair, &config, &passes)?.j.item()?;
        let taylor = taylor_objective(model, &tape, &w, &a, pair, eta, &passes)?.item()?;
        let residual = (exact - taylor).abs();
        let ratio = rows.last().and_then(|p| (residual > 0.0).then(|| p.residual / residual));
        rows.push(TaylorRow {
            scale: s,
            exact,
            taylor,
            residual,
            ratio,
        });
    }
    Ok(TaylorReport {
        network: name.into(),
        rows,
    })
}

pub fn taylor_scalar(scales: &[f64]) -> Result<TaylorReport, CliError> {
    let p = Precision::F64;
    taylor_scan(&ScalarLinear, &ScalarLinear::params(2.0, p), &scalar_quadratic_tasks(p), 1.0, scales, "scalar-quadratic")
}

/// The scan requires a smooth network: no relu and no dropout.
pub fn taylor_config(cfg: &ExperimentConfig, scales: &[f64]) -> Result<TaylorReport, CliError> {
    let prob = problem_from_config(cfg, cfg.taylor.batch)?;
    if prob.spec.activation == Activation::Relu {
        return Err(CliError::Config("taylor-scan needs a smooth network (network.activation = \"sigmoid\")".into()));
    }
    if prob.spec.layers.iter().any(|l| matches!(l, LayerSpec::Dropout { .. })) {
        return Err(CliError::Config("taylor-scan needs dropout off".into()));
    }
    taylor_scan(&prob.spec, &prob.params, &prob.pair, cfg.objective.eta, scales, &prob.spec.name)
}

impl fmt::Display for TaylorReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "taylor-scan {}", self.network)?;
        writeln!(f, "  {:>10}  {:>18}  {:>18}  {:>12}  {:>8}", "alpha", "J", "taylor", "residual", "ratio")?;
        for r in &self.rows {
            let ratio = r.ratio.map_or("-".to_string(), |x| format!("{x:.4}"));
            writeln!(
                f,
                "  {:>10.3e}  {:>18.12}  {:>18.12}  {:>12.4e}  {:>8}",
                r.scale, r.exact, r.taylor, r.residual, ratio
            )?;
        }
        writeln!(f, "  {}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

/// `||g_full - g_fo|| / ||g_full||` of the weight gradient at each uniform
/// step size, plus the least-squares slope of its log against log scale.
pub fn fo_gap_scan<M: Model + ?Sized>(
    model: &M,
    params: &ParamSet,
    pair: &TaskPair,
    eta: f64,
    scales: &[f64],
) -> Result<(Vec<f64>, f64), CliError> {
    let passes = TaskPasses::train(CHECK_SEED);
    let norm = |ts: &[Vec<Tensor>]| ts.iter().flatten().flat_map(|t| t.data()).map(|v| v * v).sum::<f64>().sqrt();
    let mut gaps = Vec::new();
    for &s in scales {
        let alpha = AlphaSet::uniform(params.len(), s, AlphaMode::Learnable);
        let full = mltp_grads_with(model, params, &alpha, pair, &ObjectiveConfig::new(Variant::MltpFull, eta), &passes, InnerGrad::Live)?;
        let fo = mltp_grads_with(model, params, &alpha, pair, &ObjectiveConfig::new(Variant::MltpFo, eta), &passes, InnerGrad::Live)?;
        let diff: Vec<Vec<Tensor>> = full
            .w
            .iter()
            .zip(&fo.w)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x.sub(y)).collect::<Result<_, _>>())
            .collect::<Result<_, _>>()?;
        gaps.push(norm(&diff) / norm(&full.w));
    }
    let xs: Vec<f64> = scales.iter().map(|s| s.ln()).collect();
    let ys: Vec<f64> = gaps.iter().map(|g| g.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok((gaps, sxy / sxx))
}
