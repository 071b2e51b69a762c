//! The training loop and its on-disk outputs.
//!
//! Per seed the run directory receives `metrics_seed{N}.csv` (one row per
//! epoch, row 0 being the evaluation before any update) and
//! `params_seed{N}.json` with the final parameters, step sizes and running
//! batch-norm statistics. In deterministic mode the wall-time column is
//! written as 0 so that repeated runs are byte-identical; measured times go
//! to `timing_seed{N}.csv` instead.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use mltp_core::data::{
    augment, epoch_batches, load_csv, load_idx, make_synth, split_task_pair, standardize, Dataset, Split,
};
use mltp_core::meta::{train_step, AlphaSet, ObjectiveConfig, StepBatch, TrainingState, Variant};
use mltp_core::nn::{evaluate, init_params, select_mask, BnStats};
use mltp_core::{rng, Error, NetworkSpec, ParamSet};

use crate::config::{DataSource, ExperimentConfig, Sampler};
use crate::CliError;

const EVAL_CHUNK: usize = 500;

/// Loads, standardizes and converts the train and test splits.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset), CliError> {
    let (train, test) = match &cfg.data.source {
        DataSource::Synth {
            synth,
            n_train,
            n_test,
            classes,
            noise,
            seed,
        } => {
            let train = make_synth(*synth, n_train / classes, *classes, *noise, rng::derive_seed(*seed, rng::SYNTH, 0))?;
            let mut test = make_synth(*synth, n_test / classes, *classes, *noise, rng::derive_seed(*seed, rng::SYNTH, 1))?;
            test.split = Split::Test;
            (train, test)
        }
        DataSource::Csv {
            train,
            test,
            features,
            classes,
        } => {
            let tr = load_csv(train, *features, *classes)?;
            let mut te = load_csv(test, *features, *classes)?;
            te.split = Split::Test;
            (tr, te)
        }
        DataSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => {
            let mut tr = load_idx(train_images, train_labels)?;
            let mut te = load_idx(test_images, test_labels)?;
            let classes = tr.classes.max(te.classes);
            tr.classes = classes;
            te.classes = classes;
            te.split = Split::Test;
            (tr, te)
        }
    };
    if train.sample_shape() != test.sample_shape() {
        return Err(CliError::Config(format!(
            "train samples {:?} and test samples {:?} differ in shape",
            train.sample_shape(),
            test.sample_shape()
        )));
    }
    if let Some(aug) = &cfg.data.augment {
        let shape = train.sample_shape();
        if shape.len() != 3 || aug.crop != [shape[1], shape[2]] {
            return Err(CliError::Config(format!(
                "data.augment: crop {:?} must equal the image size of samples shaped {shape:?}",
                aug.crop
            )));
        }
    }
    let (train, test) = standardize(&train, &test, cfg.data.standardize);
    Ok((train.with_precision(cfg.precision), test.with_precision(cfg.precision)))
}

/// Everything a run needs besides the seed.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub spec: NetworkSpec,
    pub objective: ObjectiveConfig,
    pub train: Dataset,
    pub test: Dataset,
}

impl Experiment {
    pub fn prepare(config: ExperimentConfig) -> Result<Self, CliError> {
        let (train, test) = load_data(&config)?;
        let spec = config.network_spec(train.sample_shape(), train.classes)?;
        let mask = match config.objective.mask.selector()? {
            Some(sel) => Some(select_mask(&spec, &sel).map_err(|e| CliError::Config(format!("objective.mask: {e}")))?),
            None => None,
        };
        let objective = ObjectiveConfig {
            variant: config.objective.variant,
            eta: config.objective.eta,
            beta: config.objective.beta,
            mask,
        };
        Ok(Experiment {
            config,
            spec,
            objective,
            train,
            test,
        })
    }

    pub fn init(&self, seed: u64) -> Result<TrainingState, CliError> {
        let params = init_params(&self.spec, self.config.init, seed, self.config.precision)?;
        let a = &self.config.alpha;
        let alpha = AlphaSet::normal(params.len(), a.mean, a.std, a.mode, seed)?;
        let running = self
            .spec
            .batchnorm_channels()?
            .into_iter()
            .map(BnStats::identity)
            .collect();
        Ok(TrainingState::new(params, alpha, running))
    }

    /// Step inputs of one epoch, in order.
    pub fn epoch_steps(&self, seed: u64, epoch: usize) -> Result<Vec<StepBatch>, CliError> {
        let n = self.train.len();
        let bs = self.config.batch_size;
        let meta = self.objective.variant.is_meta();
        let batches = epoch_batches(n, bs, seed, epoch as u64, meta);
        let load = |k: usize, idx: &[usize]| -> Result<_, CliError> {
            let mut b = self.train.batch(idx)?;
            if let Some(aug) = &self.config.data.augment {
                let s = rng::derive_seed(seed, rng::AUGMENT, ((epoch as u64) << 32) | k as u64);
                b.x = augment(&b.x, aug, s)?;
            }
            Ok(b)
        };
        let mut steps = Vec::new();
        match (meta, self.config.data.sampler) {
            (false, _) => {
                for (k, idx) in batches.iter().enumerate() {
                    steps.push(StepBatch::Whole(load(k, idx)?));
                }
            }
            (true, Sampler::Split) => {
                for (k, idx) in batches.iter().enumerate() {
                    steps.push(StepBatch::Pair(split_task_pair(&load(k, idx)?)?));
                }
            }
            (true, Sampler::TwoBatches) => {
                for (k, two) in batches.chunks_exact(2).enumerate() {
                    steps.push(StepBatch::Pair(mltp_core::TaskPair {
                        task_i: load(2 * k, &two[0])?,
                        task_j: load(2 * k + 1, &two[1])?,
                    }));
                }
            }
        }
        if steps.is_empty() {
            return Err(CliError::Config(format!(
                "{n} training samples give no complete step at batch_size {bs}"
            )));
        }
        Ok(steps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Completed,
    /// Aborted by a non-finite loss or gradient.
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub status: RunStatus,
    /// Test accuracy after the last completed epoch.
    pub final_acc: f64,
    pub metrics: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub out: PathBuf,
    pub runs: Vec<SeedRun>,
}

impl TrainSummary {
    pub fn all_completed(&self) -> bool {
        self.runs.iter().all(|r| r.status == RunStatus::Completed)
    }
}

#[derive(Serialize)]
struct Snapshot<'a> {
    seed: u64,
    variant: Variant,
    network: &'a NetworkSpec,
    params: &'a ParamSet,
    alpha: &'a AlphaSet,
    running: &'a [BnStats],
}

pub fn metrics_header(alpha_columns: usize) -> String {
    let mut h = String::from("seed,epoch,wall_time_s,train_loss,test_acc,lr");
    for i in 0..alpha_columns {
        h.push_str(&format!(",alpha_{i}"));
    }
    h
}

struct MetricsWriter {
    out: BufWriter<File>,
    path: PathBuf,
}

impl MetricsWriter {
    fn create(path: PathBuf, header: &str) -> Result<Self, CliError> {
        let file = File::create(&path).map_err(CliError::io(&path))?;
        let mut w = MetricsWriter {
            out: BufWriter::new(file),
            path,
        };
        w.line(header)?;
        Ok(w)
    }

    /// Writes and flushes one complete line, so the file stays parseable if
    /// the process dies.
    fn line(&mut self, text: &str) -> Result<(), CliError> {
        writeln!(self.out, "{text}")
            .and_then(|_| self.out.flush())
            .map_err(CliError::io(&self.path))
    }
}

fn row(seed: u64, epoch: usize, wall: f64, loss: f64, acc: f64, lr: f64, alpha: Option<&[f64]>) -> String {
    let mut r = format!("{seed},{epoch},{wall:.3},{loss},{acc},{lr}");
    for a in alpha.into_iter().flatten() {
        r.push_str(&format!(",{a}"));
    }
    r
}

/// Trains one seed and writes its files into `out`.
pub fn run_seed(exp: &Experiment, seed: u64, out: &Path) -> Result<SeedRun, CliError> {
    let cfg = &exp.config;
    let mut state = exp.init(seed)?;
    let meta = exp.objective.variant.is_meta();
    let alpha_cols = if meta { state.alpha.len() } else { 0 };
    let metrics_path = out.join(format!("metrics_seed{seed}.csv"));
    let mut metrics = MetricsWriter::create(metrics_path.clone(), &metrics_header(alpha_cols))?;
    let mut timing = if cfg.deterministic {
        Some(MetricsWriter::create(out.join(format!("timing_seed{seed}.csv")), "seed,epoch,wall_time_s")?)
    } else {
        None
    };
    let started = Instant::now();
    let mut record = |metrics: &mut MetricsWriter, epoch: usize, loss: f64, acc: f64, lr: f64, alpha: &[f64]| {
        let wall = started.elapsed().as_secs_f64();
        if let Some(t) = timing.as_mut() {
            t.line(&format!("{seed},{epoch},{wall:.3}"))?;
        }
        let shown = if cfg.deterministic { 0.0 } else { wall };
        metrics.line(&row(seed, epoch, shown, loss, acc, lr, meta.then_some(alpha)))
    };

    let (train_loss, _) = evaluate(&exp.spec, &state.params, &state.running, &exp.train, EVAL_CHUNK)?;
    let (_, mut acc) = evaluate(&exp.spec, &state.params, &state.running, &exp.test, EVAL_CHUNK)?;
    record(&mut metrics, 0, train_loss, acc, cfg.optimizer.lr_at(0), &state.alpha.values)?;

    let mut status = RunStatus::Completed;
    let mut global_step = 0u64;
    'epochs: for epoch in 0..cfg.epochs {
        let lr = cfg.optimizer.lr_at(epoch);
        let steps = exp.epoch_steps(seed, epoch)?;
        let mut loss_sum = 0.0;
        for step in &steps {
            let dropout = rng::derive_seed(seed, rng::DROPOUT, global_step);
            global_step += 1;
            match train_step(&mut state, &exp.spec, step, &exp.objective, &cfg.optimizer.kind, lr, dropout) {
                Ok(o) => loss_sum += o.objective,
                Err(Error::NonFinite(msg)) => {
                    eprintln!("seed {seed}: epoch {}: {msg}", epoch + 1);
                    record(&mut metrics, epoch + 1, f64::NAN, f64::NAN, lr, &state.alpha.values)?;
                    status = RunStatus::NonFinite;
                    break 'epochs;
                }
                Err(e) => return Err(e.into()),
            }
        }
        let (_, a) = evaluate(&exp.spec, &state.params, &state.running, &exp.test, EVAL_CHUNK)?;
        acc = a;
        record(&mut metrics, epoch + 1, loss_sum / steps.len() as f64, acc, lr, &state.alpha.values)?;
    }

    let snapshot = Snapshot {
        seed,
        variant: exp.objective.variant,
        network: &exp.spec,
        params: &state.params,
        alpha: &state.alpha,
        running: &state.running,
    };
    let path = out.join(format!("params_seed{seed}.json"));
    let json = serde_json::to_string(&snapshot).map_err(|e| CliError::Numeric(format!("cannot serialize parameters: {e}")))?;
    fs::write(&path, json).map_err(CliError::io(&path))?;

    Ok(SeedRun {
        seed,
        status,
        final_acc: acc,
        metrics: metrics_path,
    })
}

/// Echoes the resolved config into the output directory and trains every seed.
pub fn run_train(config: ExperimentConfig) -> Result<TrainSummary, CliError> {
    let out = config.out.clone();
    fs::create_dir_all(&out).map_err(CliError::io(&out))?;
    let echo = out.join("config.toml");
    fs::write(&echo, config.to_toml_string()?).map_err(CliError::io(&echo))?;
    let exp = Experiment::prepare(config)?;
    let mut runs = Vec::new();
    for &seed in &exp.config.seeds {
        runs.push(run_seed(&exp, seed, &out)?);
    }
    Ok(TrainSummary { out, runs })
}
