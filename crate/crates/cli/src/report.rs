//! Multi-seed comparison tables built from finished run directories.
//!
//! Only the echoed `config.toml` and the `metrics_seed*.csv` files are read.
//! Each seed contributes the test accuracy of its last complete row; cells
//! show the mean and the population standard deviation (divisor `n`).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mltp_core::meta::Variant;

use crate::config::{ExperimentConfig, Preset};
use crate::CliError;

/// Column order of the table.
pub const PROCEDURES: [Variant; 5] = [
    Variant::Standard,
    Variant::MltpFull,
    Variant::MltpConv,
    Variant::MltpFc,
    Variant::MltpFo,
];

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub accuracies: Vec<f64>,
}

impl Cell {
    pub fn mean(&self) -> f64 {
        self.accuracies.iter().sum::<f64>() / self.accuracies.len() as f64
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        let m = self.mean();
        let var = self.accuracies.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / self.accuracies.len() as f64;
        var.sqrt()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Comparison {
    /// `(network, procedure) -> accuracies`, networks in name order.
    pub cells: BTreeMap<String, BTreeMap<Variant, Cell>>,
}

fn network_label(cfg: &ExperimentConfig) -> String {
    let n = &cfg.network;
    let base = match n.preset {
        Preset::Mlp => {
            let widths: Vec<String> = n.hidden.iter().map(usize::to_string).collect();
            format!("mlp-{}", widths.join("-"))
        }
        Preset::Custom => "custom".into(),
        p => format!("{p:?}").to_lowercase(),
    };
    if n.width_div > 1 && !matches!(n.preset, Preset::Mlp | Preset::Custom) {
        format!("{base}/{}", n.width_div)
    } else {
        base
    }
}

/// Test accuracy of the last complete row, if it is finite.
pub fn final_accuracy(metrics: &str) -> Option<f64> {
    let mut lines = metrics.lines();
    let header: Vec<&str> = lines.next()?.split(',').collect();
    let col = header.iter().position(|h| *h == "test_acc")?;
    lines
        .filter(|l| l.split(',').count() == header.len())
        .last()
        .and_then(|l| l.split(',').nth(col)?.parse::<f64>().ok())
        .filter(|a| a.is_finite())
}

fn run_dirs(path: &Path) -> Result<Vec<PathBuf>, CliError> {
    if path.join("config.toml").is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(path)
        .map_err(CliError::io(path))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("config.toml").is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}

/// Collects every run found at or directly below each path.
pub fn collect(paths: &[PathBuf]) -> Result<Comparison, CliError> {
    let mut cmp = Comparison::default();
    for path in paths {
        for dir in run_dirs(path)? {
            let cfg = ExperimentConfig::load(&dir.join("config.toml"))?;
            let mut files: Vec<PathBuf> = fs::read_dir(&dir)
                .map_err(CliError::io(&dir))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with("metrics_seed") && n.ends_with(".csv"))
                })
                .collect();
            files.sort();
            for f in files {
                let text = fs::read_to_string(&f).map_err(CliError::io(&f))?;
                if let Some(acc) = final_accuracy(&text) {
                    cmp.cells
                        .entry(network_label(&cfg))
                        .or_default()
                        .entry(cfg.objective.variant)
                        .or_insert_with(|| Cell { accuracies: Vec::new() })
                        .accuracies
                        .push(acc);
                }
            }
        }
    }
    Ok(cmp)
}

fn column_name(v: Variant) -> &'static str {
    match v {
        Variant::MltpFull => "mltp",
        other => other.name(),
    }
}

impl Comparison {
    pub fn cell(&self, network: &str, variant: Variant) -> Option<&Cell> {
        self.cells.get(network)?.get(&variant)
    }

    /// Aligned text table; missing cells print as `-`.
    pub fn to_text(&self) -> String {
        let mut rows: Vec<Vec<String>> = vec![std::iter::once("network".to_string())
            .chain(PROCEDURES.iter().map(|v| column_name(*v).to_string()))
            .collect()];
        for (net, cells) in &self.cells {
            let mut r = vec![net.clone()];
            for v in PROCEDURES {
                r.push(match cells.get(&v) {
                    Some(c) => format!("{:.2} ± {:.2} (n={})", c.mean(), c.std(), c.accuracies.len()),
                    None => "-".into(),
                });
            }
            rows.push(r);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|i| rows.iter().map(|r| r[i].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::from("final-epoch test accuracy (%), mean ± population std (divisor n) over seeds\n");
        for r in &rows {
            let line: Vec<String> = r
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| {
                    let pad = w - c.chars().count();
                    if i == 0 {
                        format!("{c}{}", " ".repeat(pad))
                    } else {
                        format!("{}{c}", " ".repeat(pad))
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        out
    }

    /// One line per present cell: `network,procedure,seeds,mean,std`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("network,procedure,seeds,mean,std\n");
        for (net, cells) in &self.cells {
            for v in PROCEDURES {
                if let Some(c) = cells.get(&v) {
                    let _ = writeln!(out, "{net},{},{},{},{}", column_name(v), c.accuracies.len(), c.mean(), c.std());
                }
            }
        }
        out
    }
}

/// Builds the comparison and, when `out` is given, writes `comparison.txt`
/// and `comparison.csv` there.
pub fn run_compare(paths: &[PathBuf], out: Option<&Path>) -> Result<Comparison, CliError> {
    let cmp = collect(paths)?;
    if cmp.cells.is_empty() {
        return Err(CliError::Config("no completed runs found".into()));
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        for (name, body) in [("comparison.txt", cmp.to_text()), ("comparison.csv", cmp.to_csv())] {
            let p = dir.join(name);
            fs::write(&p, body).map_err(CliError::io(&p))?;
        }
    }
    Ok(cmp)
}
