use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Precision, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// Isotropic Gaussians around centers on a circle, neighbours one unit apart.
    Blobs,
    /// Interleaved spiral arms, one per class, with radial noise.
    Spirals,
}

/// Class centers for `blobs`: evenly spaced on a circle whose adjacent centers
/// are exactly one unit apart.
pub fn blob_centers(classes: usize) -> Vec<[f64; 2]> {
    if classes == 1 {
        return vec![[0.0, 0.0]];
    }
    let radius = 0.5 / (PI / classes as f64).sin();
    (0..classes)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / classes as f64;
            [radius * a.cos(), radius * a.sin()]
        })
        .collect()
}

/// Two-dimensional synthetic classification data, deterministic in `seed`.
/// Samples are stored class by class.
pub fn make_synth(kind: SynthKind, n_per_class: usize, classes: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n_per_class == 0 || classes == 0 {
        return Err(Error::invalid("synthetic data needs at least one class and one sample per class"));
    }
    if !(noise >= 0.0) {
        return Err(Error::invalid(format!("noise must be non-negative, got {noise}")));
    }
    let mut rng = rng::stream(seed, rng::SYNTH, 0);
    let mut data = Vec::with_capacity(2 * n_per_class * classes);
    let mut labels = Vec::with_capacity(n_per_class * classes);
    let centers = blob_centers(classes);
    for k in 0..classes {
        for _ in 0..n_per_class {
            let (x, y) = match kind {
                SynthKind::Blobs => {
                    let e1: f64 = StandardNormal.sample(&mut rng);
                    let e2: f64 = StandardNormal.sample(&mut rng);
                    (centers[k][0] + noise * e1, centers[k][1] + noise * e2)
                }
                SynthKind::Spirals => {
                    let t: f64 = rng.random();
                    let e: f64 = StandardNormal.sample(&mut rng);
                    let theta = 2.5 * PI * t + 2.0 * PI * k as f64 / classes as f64;
                    let r = 0.5 + 3.0 * t + noise * e;
                    (r * theta.cos(), r * theta.sin())
                }
            };
            data.push(x);
            data.push(y);
            labels.push(k);
        }
    }
    let samples = Tensor::new(vec![labels.len(), 2], data, Precision::F64)?;
    Dataset::new(samples, labels, classes, Split::Train)
}
