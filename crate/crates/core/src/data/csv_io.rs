use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::{Precision, Tensor};

/// Reads rows of `D` real features followed by one integer label.
pub fn load_csv(path: impl AsRef<Path>, features: usize, classes: usize) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))?;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Ingest(format!("row {row}: {e}")))?;
        if record.len() != features + 1 {
            return Err(Error::Ingest(format!(
                "row {row}: expected {} columns, found {}",
                features + 1,
                record.len()
            )));
        }
        for (col, cell) in record.iter().take(features).enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::Ingest(format!("row {row} column {}: not a number: {cell:?}", col + 1)))?;
            data.push(v);
        }
        let cell = &record[features];
        let label: usize = cell
            .parse()
            .map_err(|_| Error::Ingest(format!("row {row}: label is not a class index: {cell:?}")))?;
        if label >= classes {
            return Err(Error::Ingest(format!("row {row}: label {label} outside [0, {classes})")));
        }
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(Error::Ingest(format!("{}: no rows", path.display())));
    }
    let samples = Tensor::new(vec![labels.len(), features], data, Precision::F64)?;
    Dataset::new(samples, labels, classes, Split::Train)
}

/// Writes `f1,...,fD,label` rows using the shortest round-trip float formatting.
pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    for i in 0..ds.len() {
        for v in ds.sample(i) {
            write!(out, "{v},")?;
        }
        writeln!(out, "{}", ds.labels[i])?;
    }
    out.flush()?;
    Ok(())
}
