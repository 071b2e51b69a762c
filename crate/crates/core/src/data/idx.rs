//! IDX binary files: a big-endian magic number, big-endian `u32` dimension
//! sizes, then raw unsigned bytes.

use std::fs;
use std::path::Path;

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::{Precision, Tensor};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize, what: &str, field: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Ingest(format!("{what}: truncated header, missing {field}")))
}

/// Parses an IDX payload with the expected magic, returning its dimension
/// sizes and data bytes.
pub fn parse_idx<'a>(bytes: &'a [u8], magic: u32, what: &str) -> Result<(Vec<usize>, &'a [u8])> {
    let found = be_u32(bytes, 0, what, "magic")?;
    if found != magic {
        return Err(Error::Ingest(format!(
            "{what}: bad magic 0x{found:08x}, expected 0x{magic:08x}"
        )));
    }
    let rank = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(rank);
    for d in 0..rank {
        dims.push(be_u32(bytes, 4 + 4 * d, what, &format!("dimension {d}"))? as usize);
    }
    let body = &bytes[4 + 4 * rank..];
    let expected: usize = dims.iter().product();
    if body.len() != expected {
        return Err(Error::Ingest(format!(
            "{what}: data section has {} bytes, header dimensions {dims:?} need {expected}",
            body.len()
        )));
    }
    Ok((dims, body))
}

/// Loads an image/label file pair. Pixels are scaled from bytes to `[0, 1]`;
/// the class count is one more than the largest label.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let img_bytes = fs::read(images.as_ref())?;
    let lbl_bytes = fs::read(labels.as_ref())?;
    let (dims, pixels) = parse_idx(&img_bytes, IDX_IMAGES_MAGIC, "images")?;
    let (ldims, raw_labels) = parse_idx(&lbl_bytes, IDX_LABELS_MAGIC, "labels")?;
    let (n, h, w) = (dims[0], dims[1], dims[2]);
    if ldims[0] != n {
        return Err(Error::Ingest(format!(
            "count mismatch: images file has {n} items, labels file has {}",
            ldims[0]
        )));
    }
    if n == 0 || h == 0 || w == 0 {
        return Err(Error::Ingest(format!("images: empty dimensions {dims:?}")));
    }
    let data = pixels.iter().map(|&b| b as f64 / 255.0).collect();
    let samples = Tensor::new(vec![n, 1, h, w], data, Precision::F64)?;
    let labels: Vec<usize> = raw_labels.iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().map_or(1, |m| m + 1);
    Dataset::new(samples, labels, classes, Split::Train)
}

/// Writes a single-channel image dataset as an IDX pair. Values are mapped
/// back to bytes with `round(v * 255)`, clamped to `[0, 255]`.
pub fn write_idx(ds: &Dataset, images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<()> {
    let [n, 1, h, w] = *ds.samples.shape() else {
        return Err(Error::invalid(format!(
            "IDX images must be [N, 1, H, W], got {:?}",
            ds.samples.shape()
        )));
    };
    if let Some(bad) = ds.labels.iter().find(|&&l| l > 255) {
        return Err(Error::invalid(format!("label {bad} does not fit in a byte")));
    }
    let mut img = Vec::with_capacity(16 + n * h * w);
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for d in [n, h, w] {
        img.extend_from_slice(&(d as u32).to_be_bytes());
    }
    img.extend(ds.samples.data().iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8));

    let mut lbl = Vec::with_capacity(8 + n);
    lbl.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lbl.extend_from_slice(&(n as u32).to_be_bytes());
    lbl.extend(ds.labels.iter().map(|&l| l as u8));

    fs::write(images.as_ref(), img)?;
    fs::write(labels.as_ref(), lbl)?;
    Ok(())
}
