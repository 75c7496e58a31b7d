use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
name = "small"
train_steps = 200
adapt_steps = 100
eval_window = 40
seeds = [0, 1]
diag_every = 50
[cell]
arch = "vanilla"
n_in = 1
n_hidden = 4
n_out = 1
[credit]
method = "trace"
decay = 0.0
[optim]
method = "adam"
lr = 0.01
[task]
kind = "sine_shift"
"#;

fn olrn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_olrn"))
        .args(args)
        .args(["--out", dir.join("out").to_str().unwrap(), "--quiet"])
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn run_writes_results_diag_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = olrn(dir.path(), &["run", "--config", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let (header, rows) = csv_rows(&dir.path().join("out/results.csv"));
    for col in ["seed", "lr", "pre_mse", "post_mse", "recovery", "diverged", "wall_time"] {
        assert!(header.iter().any(|h| h == col), "missing {col} in {header:?}");
    }
    // Two cell runs plus a frozen and a reference companion per seed.
    assert_eq!(rows.len(), 6);
    let kind = header.iter().position(|h| h == "kind").unwrap();
    assert_eq!(rows.iter().filter(|r| r[kind] == "cell").count(), 2);

    let (diag_header, diag_rows) = csv_rows(&dir.path().join("out/diag.csv"));
    assert_eq!(&diag_header[..2], ["run_id", "t"]);
    assert!(!diag_rows.is_empty());

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["name"], "small");
    let cells = summary["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 1);
    assert!(cells[0]["best"]["recovery"]["mean"].is_number());
    assert!(cells[0]["best"]["recovery"]["std"].is_number());
}

#[test]
fn grid_file_sweeps_axes_and_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[base]".to_string() + &SMALL.replace("\n[", "\n[base.")
        + "[axes]\ndecay = [0.0, 0.5]\nlr = [0.01, 0.001]\n";
    let cfg = write_config(dir.path(), &text);
    let out = olrn(dir.path(), &["grid", "--config", &cfg, "--seeds", "3..4", "--format", "json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let results: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/results.json")).unwrap()).unwrap();
    let runs = results.as_array().unwrap();
    let cells: Vec<_> = runs.iter().filter(|r| r["kind"] == "cell").collect();
    assert_eq!(cells.len(), 4);
    assert!(runs.iter().all(|r| r["seed"] == 3));
    assert!(!dir.path().join("out/results.csv").exists());
}

#[test]
fn diverged_cells_still_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("lr = 0.01", "lr = 1e300"));
    let out = olrn(dir.path(), &["run", "--config", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv_rows(&dir.path().join("out/results.csv"));
    let (kind, diverged) = (
        header.iter().position(|h| h == "kind").unwrap(),
        header.iter().position(|h| h == "diverged").unwrap(),
    );
    assert!(rows.iter().filter(|r| r[kind] == "cell").all(|r| r[diverged] == "true"));
}

#[test]
fn config_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(olrn(dir.path(), &["run"]).status.code(), Some(1));
    assert_eq!(olrn(dir.path(), &["run", "--config", "/nonexistent.toml"]).status.code(), Some(1));
    let cfg = write_config(dir.path(), &SMALL.replace("eval_window = 40", "eval_window = 400"));
    let out = olrn(dir.path(), &["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let cfg = write_config(dir.path(), SMALL);
    assert_eq!(olrn(dir.path(), &["run", "--config", &cfg, "--seeds", "4..4"]).status.code(), Some(1));
}

#[test]
fn export_task_writes_the_stream() {
    let dir = tempfile::tempdir().unwrap();
    let out = olrn(dir.path(), &["export-task", "--task", "delayed", "--steps", "120", "--shift", "60"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv_rows(&dir.path().join("out/delayed.csv"));
    assert_eq!(header, ["t", "phase", "warmup", "x0", "y0"]);
    assert_eq!(rows.len(), 120);
    assert_eq!(rows[59][1], "pre");
    assert_eq!(rows[60][1], "post");
}

#[test]
fn memscale_writes_the_memory_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = olrn(dir.path(), &["memscale", "--n", "8,16"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv_rows(&dir.path().join("out/memory.csv"));
    assert_eq!(header[0], "method");
    assert_eq!(rows.len(), 8);
}
