use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mltp_cli::config::{ExperimentConfig, Overrides};
use mltp_cli::{report, train, verify, CliError};
use mltp_core::data::{make_synth, save_csv, SynthKind};
use mltp_core::Precision;

#[derive(Parser)]
#[command(name = "mltp", version, about = "Train and check networks with the two-task meta-learning objective")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (TOML). Defaults to the built-in profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run only this seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (file for `synth`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Fixed reduction order and zeroed wall-time column.
    #[arg(long, global = true)]
    deterministic: bool,

    #[arg(long, global = true, value_parser = parse_precision)]
    precision: Option<Precision>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Problem {
    /// `f(w, x) = w x` with tasks (1, 1) and (2, 0), w = 2, alpha = 0.1.
    ScalarQuadratic,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Blobs,
    Spirals,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured seed and write metrics.
    Train,
    /// Compare analytic gradients of each variant with finite differences.
    Gradcheck {
        #[arg(long, value_enum)]
        problem: Option<Problem>,
    },
    /// Tabulate |J - taylor| over step-size scales.
    TaylorScan {
        #[arg(long, value_enum)]
        problem: Option<Problem>,
        /// Comma-separated scales; defaults to the config's list.
        #[arg(long, value_delimiter = ',')]
        scales: Option<Vec<f64>>,
    },
    /// Mean ± std of final test accuracy over finished runs.
    Compare {
        /// Run directories, or directories containing them.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
    /// Write a synthetic dataset as CSV.
    Synth {
        #[arg(long, value_enum, default_value = "spirals")]
        kind: Kind,
        #[arg(long, default_value_t = 500)]
        n_per_class: usize,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value_t = 0.2)]
        noise: f64,
    },
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    match s {
        "32" => Ok(Precision::F32),
        "64" => Ok(Precision::F64),
        _ => Err(format!("expected 32 or 64, got {s}")),
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default_profile(),
    };
    cfg.apply(&Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        deterministic: cli.deterministic,
        precision: cli.precision,
    })?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<ExitCode, CliError> {
    match &cli.command {
        Command::Train => {
            let summary = train::run_train(load_config(cli)?)?;
            for r in &summary.runs {
                println!("seed {}: {:?}, final test accuracy {:.2}%", r.seed, r.status, r.final_acc);
            }
            println!("outputs in {}", summary.out.display());
            if !summary.all_completed() {
                return Ok(ExitCode::from(3));
            }
        }
        Command::Gradcheck { problem } => {
            let report = match problem {
                Some(Problem::ScalarQuadratic) => {
                    let g = ExperimentConfig::default_profile().gradcheck;
                    verify::gradcheck_scalar(g.step, g.tolerance)?
                }
                None => verify::gradcheck_config(&load_config(cli)?)?,
            };
            print!("{report}");
            if !report.passed() {
                return Ok(ExitCode::from(3));
            }
        }
        Command::TaylorScan { problem, scales } => {
            let report = match problem {
                Some(Problem::ScalarQuadratic) => {
                    let s = scales.clone().unwrap_or_else(|| vec![0.1, 0.05, 0.025]);
                    verify::taylor_scalar(&s)?
                }
                None => {
                    let cfg = load_config(cli)?;
                    let s = scales.clone().unwrap_or_else(|| cfg.taylor.scales.clone());
                    verify::taylor_config(&cfg, &s)?
                }
            };
            print!("{report}");
            if !report.passed() {
                return Ok(ExitCode::from(3));
            }
        }
        Command::Compare { runs } => {
            let cmp = report::run_compare(runs, cli.out.as_deref())?;
            print!("{}", cmp.to_text());
        }
        Command::Synth {
            kind,
            n_per_class,
            classes,
            noise,
        } => {
            let kind = match kind {
                Kind::Blobs => SynthKind::Blobs,
                Kind::Spirals => SynthKind::Spirals,
            };
            let ds = make_synth(kind, *n_per_class, *classes, *noise, cli.seed.unwrap_or(0))?;
            let out = cli
                .out
                .clone()
                .ok_or_else(|| CliError::Config("synth needs --out FILE".into()))?;
            save_csv(&ds, &out)?;
            println!("wrote {} samples to {}", ds.len(), out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
