use std::fs;

use mltp_cli::report::{collect, final_accuracy};
use mltp_cli::train::{run_train, Experiment, RunStatus};
use mltp_cli::ExperimentConfig;
use mltp_core::meta::StepBatch;
use mltp_core::Variant;

fn blobs(variant: &str, epochs: usize, out: &std::path::Path) -> ExperimentConfig {
    let text = format!(
        r#"
epochs = {epochs}
seeds = [0]
batch_size = 32
precision = 64
deterministic = true
out = "{}"
[network]
hidden = [16]
[data.source]
kind = "synth"
synth = "blobs"
n_train = 400
n_test = 200
classes = 4
noise = 0.1
seed = 3
[objective]
variant = "{variant}"
[optimizer]
kind = "adam"
base_lr = 0.01
schedule = []
"#,
        out.display()
    );
    ExperimentConfig::from_toml_str(&text).unwrap()
}

#[test]
fn resolved_config_is_a_fixed_point() {
    for text in ["", "profile = \"large\"", "[objective]\nvariant = \"mltp_conv\"\nmask = [0]\n[network]\npreset = \"cnet1\""] {
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        let echo = cfg.to_toml_string().unwrap();
        let again = ExperimentConfig::from_toml_str(&echo).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.to_toml_string().unwrap(), echo);
    }
}

#[test]
fn standard_training_separates_blobs() {
    let dir = tempfile::tempdir().unwrap();
    let summary = run_train(blobs("standard", 20, dir.path())).unwrap();
    assert!(summary.all_completed());
    assert_eq!(summary.runs[0].final_acc, 100.0);
    let text = fs::read_to_string(&summary.runs[0].metrics).unwrap();
    assert_eq!(text.lines().count(), 22);
    assert_eq!(final_accuracy(&text), Some(100.0));
    let echo = ExperimentConfig::load(&dir.path().join("config.toml")).unwrap();
    assert_eq!(echo.objective.variant, Variant::Standard);
}

#[test]
fn meta_training_separates_blobs_and_logs_step_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let summary = run_train(blobs("mltp_full", 20, dir.path())).unwrap();
    assert_eq!(summary.runs[0].status, RunStatus::Completed);
    assert!(summary.runs[0].final_acc >= 99.0);
    let text = fs::read_to_string(&summary.runs[0].metrics).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.ends_with("alpha_0,alpha_1"), "{header}");
}

#[test]
fn meta_steps_split_full_batches_and_drop_the_remainder() {
    let dir = tempfile::tempdir().unwrap();
    let exp = Experiment::prepare(blobs("mltp_fo", 1, dir.path())).unwrap();
    let steps = exp.epoch_steps(0, 0).unwrap();
    assert_eq!(steps.len(), 400 / 32);
    for s in &steps {
        let StepBatch::Pair(p) = s else { panic!("meta variants train on pairs") };
        assert_eq!((p.task_i.len(), p.task_j.len()), (16, 16));
    }
    let std_exp = Experiment::prepare(blobs("standard", 1, dir.path())).unwrap();
    let steps = std_exp.epoch_steps(0, 0).unwrap();
    assert_eq!(steps.len(), 13);
    assert!(matches!(&steps[12], StepBatch::Whole(b) if b.len() == 400 % 32));
}

#[test]
fn two_batch_sampler_pairs_consecutive_batches() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = blobs("mltp_full", 1, dir.path());
    cfg.data.sampler = mltp_cli::config::Sampler::TwoBatches;
    let exp = Experiment::prepare(cfg).unwrap();
    let steps = exp.epoch_steps(0, 0).unwrap();
    assert_eq!(steps.len(), 400 / 32 / 2);
    let StepBatch::Pair(p) = &steps[0] else { panic!() };
    assert_eq!((p.task_i.len(), p.task_j.len()), (32, 32));
}

#[test]
fn comparison_uses_the_population_std() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    fs::create_dir_all(&run).unwrap();
    let cfg = blobs("standard", 1, &run);
    fs::write(run.join("config.toml"), cfg.to_toml_string().unwrap()).unwrap();
    for (seed, acc) in [(0, 50.0), (1, 60.0), (2, 70.0)] {
        let body = format!("seed,epoch,wall_time_s,train_loss,test_acc,lr\n{seed},0,0,1,10,0.01\n{seed},1,0,0.5,{acc},0.01\n");
        fs::write(run.join(format!("metrics_seed{seed}.csv")), body).unwrap();
    }
    let cmp = collect(&[dir.path().to_path_buf()]).unwrap();
    let cell = cmp.cell("mlp-16", Variant::Standard).unwrap();
    assert_eq!(cell.mean(), 60.0);
    // population convention: sqrt(((-10)^2 + 0 + 10^2) / 3)
    assert!((cell.std() - (200.0f64 / 3.0).sqrt()).abs() < 1e-12);
    assert!(cmp.to_text().contains("60.00 ± 8.16 (n=3)"));
    assert!(cmp.to_csv().contains("mlp-16,standard,3,60,"));
}
