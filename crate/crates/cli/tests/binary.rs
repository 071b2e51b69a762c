use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mltp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mltp")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("c.toml");
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

const TINY: &str = r#"
epochs = 2
seeds = [0]
batch_size = 32
[network]
hidden = [8]
[data.source]
kind = "synth"
synth = "blobs"
n_train = 128
n_test = 64
classes = 2
noise = 0.1
seed = 0
"#;

#[test]
fn unknown_key_exits_with_config_status() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "epochs = 1\nlearning_rate = 0.1\n");
    let out = mltp(&["--config", &cfg, "train"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("learning_rate"), "{err}");
}

#[test]
fn bad_mask_exits_with_config_status() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{TINY}\n[objective]\nmask = [5]\n"));
    let out = mltp(&["--config", &cfg, "--out", dir.path().join("r").to_str().unwrap(), "train"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn divergence_exits_with_numeric_status() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("{TINY}\n[optimizer]\nkind = \"sgd\"\nbase_lr = 1e200\nschedule = []\n");
    let cfg = write_config(dir.path(), &body);
    let run = dir.path().join("r");
    let out = mltp(&["--config", &cfg, "--out", run.to_str().unwrap(), "--precision", "64", "train"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = fs::read_to_string(run.join("metrics_seed0.csv")).unwrap();
    assert!(metrics.lines().last().unwrap().contains("NaN"), "{metrics}");
}

#[test]
fn zero_epochs_writes_only_the_initial_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &TINY.replace("epochs = 2", "epochs = 0"));
    let run = dir.path().join("r");
    let out = mltp(&["--config", &cfg, "--out", run.to_str().unwrap(), "--deterministic", "train"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = fs::read_to_string(run.join("metrics_seed0.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("seed,epoch,wall_time_s,train_loss,test_acc,lr,alpha_0"));
    assert!(lines[1].starts_with("0,0,0.000,"));
    assert!(run.join("params_seed0.json").is_file());
}

#[test]
fn scalar_gradcheck_and_taylor_scan_pass() {
    let out = mltp(&["gradcheck", "--problem", "scalar-quadratic"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("13.960000000000"), "{text}");
    assert!(text.contains("-28.800000000000"), "{text}");

    let out = mltp(&["taylor-scan", "--problem", "scalar-quadratic"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("4.0000") && text.contains("PASS"), "{text}");
}

#[test]
fn taylor_scan_rejects_relu_networks() {
    let out = mltp(&["taylor-scan"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_writes_a_loadable_csv() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.csv");
    let out = mltp(&["synth", "--kind", "blobs", "--n-per-class", "10", "--classes", "3", "--out", p.to_str().unwrap()]);
    assert!(out.status.success());
    let ds = mltp_core::data::load_csv(&p, 2, 3).unwrap();
    assert_eq!(ds.len(), 30);
}

#[test]
fn compare_over_cli_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let runs = dir.path().join("runs");
    for v in ["standard", "mltp_fo"] {
        let body = format!("{TINY}\n[objective]\nvariant = \"{v}\"\n");
        fs::write(&cfg, body).unwrap();
        let out = mltp(&["--config", &cfg, "--out", runs.join(v).to_str().unwrap(), "train"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let table = dir.path().join("table");
    let out = mltp(&["compare", runs.to_str().unwrap(), "--out", table.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    let row = text.lines().find(|l| l.starts_with("mlp-8")).expect("mlp row");
    assert_eq!(row.matches("(n=1)").count(), 2, "{text}");
    assert_eq!(fs::read_to_string(table.join("comparison.txt")).unwrap(), text);
    assert!(table.join("comparison.csv").is_file());
}
