use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use searchrank::evalmetrics::read_metrics;
use searchrank::harness::read_report;

fn searchrank(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_searchrank"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

const WORLD: &str = r#"
[data.synthetic]
queries = 40
products = 150
customers = 30
categories = 3
impressions = 2000
list_length = 10
seed = 4
"#;

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("experiment.toml");
    let text = format!("# tiny world\nname = \"tiny\"\nseed = 4\nout_dir = \"out\"\n{extra}\n{WORLD}\n[train]\nepochs = 1\nbatch_size = 128\n");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn pipeline_subcommands_write_their_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let cfg = cfg.to_str().unwrap();
    let dir = |name: &str| tmp.path().join(name);
    let run = |sub: &str, out: &str, extra: &[&str]| {
        let d = dir(out);
        let mut args = vec![sub, "--config", cfg, "--out", d.to_str().unwrap()];
        args.extend_from_slice(extra);
        let o = searchrank(&args);
        assert_eq!(code(&o), 0, "{sub}: {}", String::from_utf8_lossy(&o.stderr));
        d
    };

    let gen = run("gen", "gen", &[]);
    assert!(gen.join("impressions.jsonl").exists());
    assert!(gen.join("ground_truth.jsonl").exists());
    assert!(gen.join("gen.log").exists());
    assert_eq!(
        std::fs::read_to_string(gen.join("config.toml")).unwrap(),
        std::fs::read_to_string(cfg).unwrap()
    );

    let sample = run("sample", "sample", &[]);
    assert!(sample.join("sampled.jsonl").exists());
    assert!(sample.join("sample_report.csv").exists());

    let label = run("label", "label", &[]);
    let labels = std::fs::read_to_string(label.join("labels.jsonl")).unwrap();
    assert!(labels.lines().count() > 0);

    let train = run("train", "train", &[]);
    for f in ["metrics.json", "report.csv", "checkpoint.json", "run.log", "config.toml"] {
        assert!(train.join(f).exists(), "missing {f}");
    }
    let trained = read_metrics(train.join("metrics.json")).unwrap();

    let ckpt = train.join("checkpoint.json");
    let eval = run("eval", "eval", &["--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(read_metrics(eval.join("metrics.json")).unwrap(), trained);
    let rows = read_report(eval.join("report.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].name, "tiny");

    let pd = run("pd", "pd", &["--checkpoint", ckpt.to_str().unwrap(), "-k", "3"]);
    let records = read_metrics(pd.join("pd.json")).unwrap();
    assert_eq!(records[0].k, Some(3));
    let v = records[0].value.unwrap();
    assert!((0.0..=1.0).contains(&v));
}

#[test]
fn grid_reports_best_weights() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let o = searchrank(&["grid", "-c", cfg.to_str().unwrap(), "--step", "1.0"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("7 grid points"), "{stdout}");
    let csv = std::fs::read_to_string(tmp.path().join("out/grid.csv")).unwrap();
    assert_eq!(csv.lines().count(), 8);
}

#[test]
fn usage_and_config_errors_exit_1() {
    assert_eq!(code(&searchrank(&[])), 1);
    assert_eq!(code(&searchrank(&["frobnicate"])), 1);
    assert_eq!(code(&searchrank(&["train"])), 1);
    assert_eq!(code(&searchrank(&["--help"])), 0);

    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.toml");
    assert_eq!(code(&searchrank(&["train", "-c", missing.to_str().unwrap()])), 1);

    let cfg = write_config(tmp.path(), "unknown_key = 3");
    assert_eq!(code(&searchrank(&["train", "-c", cfg.to_str().unwrap()])), 1);

    let cfg = write_config(tmp.path(), "");
    let o = searchrank(&["grid", "-c", cfg.to_str().unwrap(), "--step", "0.3"]);
    assert_eq!(code(&o), 1);

    let o = searchrank(&["eval", "-c", cfg.to_str().unwrap(), "--checkpoint", missing.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn malformed_impressions_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.jsonl"), "{\"query\": 5}\n").unwrap();
    let path = tmp.path().join("experiment.toml");
    std::fs::write(&path, "name = \"bad\"\nout_dir = \"out\"\n[data]\nimpressions = \"bad.jsonl\"\n").unwrap();
    let o = searchrank(&["sample", "-c", path.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn divergence_exits_3_and_keeps_last_good_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("experiment.toml");
    std::fs::write(
        &path,
        format!("name = \"div\"\nseed = 1\nout_dir = \"out\"\n{WORLD}\n[train]\nepochs = 2\nlearning_rate = 1e200\n"),
    )
    .unwrap();
    let o = searchrank(&["train", "-c", path.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let failed = tmp.path().join("out/failed");
    assert!(failed.join("checkpoint.json").exists());
    assert!(std::fs::read_to_string(failed.join("error.txt")).unwrap().contains("diverged"));
    searchrank::networks::Checkpoint::load(failed.join("checkpoint.json")).unwrap();
}
