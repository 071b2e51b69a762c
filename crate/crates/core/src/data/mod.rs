//! Datasets, preprocessing and the batch/task construction used by training.

mod csv_io;
mod idx;
mod synth;

pub use csv_io::{load_csv, save_csv};
pub use idx::{load_idx, parse_idx, write_idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use synth::{make_synth, SynthKind};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Precision, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `[N, C, H, W]` images or `[N, D]` feature rows.
    pub samples: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    /// Real-valued regression targets, shaped like the model output.
    Values(Tensor),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Tensor,
    pub y: Targets,
}

/// Two disjoint half-batches treated as separate tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskPair {
    pub task_i: Batch,
    pub task_j: Batch,
}

impl Dataset {
    pub fn new(samples: Tensor, labels: Vec<usize>, classes: usize, split: Split) -> Result<Self> {
        let n = samples.shape().first().copied().unwrap_or(0);
        if samples.shape().len() < 2 || n == 0 {
            return Err(Error::invalid(format!("dataset needs [N, ...] samples, got {:?}", samples.shape())));
        }
        if labels.len() != n {
            return Err(Error::invalid(format!("{} labels for {n} samples", labels.len())));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!("label {bad} outside [0, {classes})")));
        }
        Ok(Dataset {
            samples,
            labels,
            classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Shape of one sample.
    pub fn sample_shape(&self) -> &[usize] {
        &self.samples.shape()[1..]
    }

    fn sample_len(&self) -> usize {
        self.sample_shape().iter().product()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let d = self.sample_len();
        &self.samples.data()[i * d..(i + 1) * d]
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        if indices.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let d = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::invalid(format!("sample index {i} out of range {}", self.len())));
            }
            data.extend_from_slice(self.sample(i));
            labels.push(self.labels[i]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.sample_shape());
        Ok(Batch {
            x: Tensor::new(shape, data, self.samples.precision())?,
            y: Targets::Classes(labels),
        })
    }

    pub fn with_precision(&self, precision: Precision) -> Dataset {
        Dataset {
            samples: self.samples.with_precision(precision),
            ..self.clone()
        }
    }

    fn map_samples(&self, f: impl Fn(&[f64], &mut Vec<f64>)) -> Dataset {
        let mut out = Vec::with_capacity(self.samples.numel());
        for i in 0..self.len() {
            f(self.sample(i), &mut out);
        }
        Dataset {
            samples: Tensor::from_parts(self.samples.shape().to_vec(), out, self.samples.precision()),
            ..self.clone()
        }
    }
}

impl Batch {
    pub fn len(&self) -> usize {
        self.x.shape().first().copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows `range` of this batch.
    pub fn rows(&self, range: std::ops::Range<usize>) -> Result<Batch> {
        let n = self.len();
        if range.start >= range.end || range.end > n {
            return Err(Error::invalid(format!("rows {range:?} of a batch of {n}")));
        }
        let d = self.x.numel() / n;
        let mut shape = self.x.shape().to_vec();
        shape[0] = range.len();
        let x = Tensor::new(shape, self.x.data()[range.start * d..range.end * d].to_vec(), self.x.precision())?;
        let y = match &self.y {
            Targets::Classes(l) => Targets::Classes(l[range].to_vec()),
            Targets::Values(t) => {
                let dv = t.numel() / n;
                let mut vshape = t.shape().to_vec();
                vshape[0] = range.len();
                Targets::Values(Tensor::new(
                    vshape,
                    t.data()[range.start * dv..range.end * dv].to_vec(),
                    t.precision(),
                )?)
            }
        };
        Ok(Batch { x, y })
    }
}

/// Splits an (already shuffled) batch into two equal halves. An odd trailing
/// sample is dropped.
pub fn split_task_pair(batch: &Batch) -> Result<TaskPair> {
    let n = batch.len();
    if n < 2 {
        return Err(Error::invalid(format!("a task pair needs at least 2 samples, got {n}")));
    }
    let half = n / 2;
    Ok(TaskPair {
        task_i: batch.rows(0..half)?,
        task_j: batch.rows(half..2 * half)?,
    })
}

/// Index-level form of [`split_task_pair`].
pub fn split_indices(indices: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    if indices.len() < 2 {
        return Err(Error::invalid(format!("a task pair needs at least 2 samples, got {}", indices.len())));
    }
    let half = indices.len() / 2;
    Ok((indices[..half].to_vec(), indices[half..2 * half].to_vec()))
}

/// Shuffled sample order for one epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, rng::SHUFFLE, epoch));
    order
}

/// Batches of one epoch. With `drop_last` an incomplete final batch is discarded.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: u64, drop_last: bool) -> Vec<Vec<usize>> {
    epoch_order(n, seed, epoch)
        .chunks(batch_size.max(1))
        .filter(|c| !drop_last || c.len() == batch_size)
        .map(<[usize]>::to_vec)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Standardize {
    None,
    /// Each sample shifted and scaled by its own mean and std.
    PerImage,
    /// One mean and std for every value; taken from the training split when absent.
    Global {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mean: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        std: Option<f64>,
    },
}

const STD_FLOOR: f64 = 1e-8;

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn standardize_per_image(ds: &Dataset) -> Dataset {
    ds.map_samples(|s, out| {
        let (mean, std) = mean_std(s);
        let std = std.max(STD_FLOOR);
        out.extend(s.iter().map(|v| (v - mean) / std));
    })
}

/// Mean and (population) std over every value of the dataset.
pub fn global_stats(ds: &Dataset) -> (f64, f64) {
    mean_std(ds.samples.data())
}

pub fn standardize_global(ds: &Dataset, mean: f64, std: f64) -> Dataset {
    let std = std.max(STD_FLOOR);
    ds.map_samples(|s, out| out.extend(s.iter().map(|v| (v - mean) / std)))
}

/// Applies `mode` to a train/test pair. Global statistics come from `train`.
pub fn standardize(train: &Dataset, test: &Dataset, mode: Standardize) -> (Dataset, Dataset) {
    match mode {
        Standardize::None => (train.clone(), test.clone()),
        Standardize::PerImage => (standardize_per_image(train), standardize_per_image(test)),
        Standardize::Global { mean, std } => {
            let (m, s) = global_stats(train);
            let (m, s) = (mean.unwrap_or(m), std.unwrap_or(s));
            (standardize_global(train, m, s), standardize_global(test, m, s))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSpec {
    pub pad: usize,
    pub flip: bool,
    /// Output `[height, width]`.
    pub crop: [usize; 2],
}

/// Random choices for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Augmentation {
    pub flip: bool,
    pub dy: usize,
    pub dx: usize,
}

impl AugmentSpec {
    fn check(&self, h: usize, w: usize) -> Result<()> {
        let [ch, cw] = self.crop;
        if ch == 0 || cw == 0 || ch > h + 2 * self.pad || cw > w + 2 * self.pad {
            return Err(Error::invalid(format!(
                "crop {ch}x{cw} does not fit a {h}x{w} image padded by {}",
                self.pad
            )));
        }
        Ok(())
    }

    /// Flip with probability 1/2 (when enabled), then a uniform crop offset.
    pub fn draw(&self, h: usize, w: usize, rng: &mut impl Rng) -> Result<Augmentation> {
        self.check(h, w)?;
        let flip = self.flip && rng.random_bool(0.5);
        let dy = rng.random_range(0..=h + 2 * self.pad - self.crop[0]);
        let dx = rng.random_range(0..=w + 2 * self.pad - self.crop[1]);
        Ok(Augmentation { flip, dy, dx })
    }
}

/// Pads, flips and crops each image of an `[N, C, H, W]` tensor. The random
/// stream is fixed by `seed`, so identical seeds give identical batches.
pub fn augment(x: &Tensor, spec: &AugmentSpec, seed: u64) -> Result<Tensor> {
    let [n, c, h, w] = *x.shape() else {
        return Err(Error::invalid(format!("augmentation needs [N, C, H, W] images, got {:?}", x.shape())));
    };
    spec.check(h, w)?;
    let [ch, cw] = spec.crop;
    let pad = spec.pad;
    let mut rng = rng::stream(seed, rng::AUGMENT, 0);
    let data = x.data();
    let mut out = Vec::with_capacity(n * c * ch * cw);
    for b in 0..n {
        let a = spec.draw(h, w, &mut rng)?;
        for chan in 0..c {
            let plane = &data[(b * c + chan) * h * w..(b * c + chan + 1) * h * w];
            for oy in 0..ch {
                for ox in 0..cw {
                    // coordinates in the padded (and possibly flipped) image
                    let py = oy + a.dy;
                    let mut px = ox + a.dx;
                    if a.flip {
                        px = w + 2 * pad - 1 - px;
                    }
                    let inside = py >= pad && py < h + pad && px >= pad && px < w + pad;
                    out.push(if inside { plane[(py - pad) * w + (px - pad)] } else { 0.0 });
                }
            }
        }
    }
    Tensor::new(vec![n, c, ch, cw], out, x.precision())
}
