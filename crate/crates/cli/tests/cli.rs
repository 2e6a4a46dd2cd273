use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use scr_core::harness::ExperimentConfig;

fn scr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scr")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tiny_config(dir: &Path) -> PathBuf {
    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/consistency_vs_length.toml");
    let mut c = ExperimentConfig::load(&shipped).unwrap();
    c.seeds = vec![3];
    c.output_dir = Some(dir.join("run"));
    c.model.d_model = 16;
    c.model.n_heads = 2;
    c.model.d_ff = 32;
    c.model.max_seq_len = 256;
    c.train.warmup_steps = 2;
    c.train.finetune_steps = 2;
    c.train.batch_size = 2;
    c.train.seq_len = 16;
    c.data.corpus_length = 1000;
    c.data.segment_len = 16;
    c.grid.lengths = Some(vec![64, 128]);
    c.grid.latency_repeats = 3;
    let path = dir.join("tiny.toml");
    std::fs::write(&path, c.to_toml().unwrap()).unwrap();
    path
}

#[test]
fn bad_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "experiment = \"nope\"\n").unwrap();
    let o = scr(&["train", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: config:"), "{}", stderr(&o));

    let o = scr(&["train", "--config", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: "));
}

#[test]
fn usage_errors_exit_two() {
    let o = scr(&["train"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error: usage:"));
    assert_eq!(scr(&["--help"]).status.code(), Some(0));
}

#[test]
fn train_eval_experiment_compare() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let run = dir.path().join("run");

    let o = scr(&["train", "--config", cfg, "--scr", "off", "--quiet"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = run.join("model_baseline_seed3.ckpt");
    assert!(ckpt.exists());
    assert!(run.join("loss_baseline_seed3.csv").exists());

    let out = dir.path().join("eval");
    let o = scr(&[
        "eval",
        "--config",
        cfg,
        "--scr",
        "off",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("eval_baseline_seed3.json")).unwrap()).unwrap();
    assert!(json["perplexity"].as_f64().unwrap() >= 1.0);

    let o = scr(&["experiment", "--config", cfg, "--quiet"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = std::fs::read_to_string(run.join("summary.md")).unwrap();
    let o = scr(&["compare", "--config", cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(run.join("summary.md")).unwrap(), summary);
    assert!(String::from_utf8_lossy(&o.stdout).contains("| seq_len | baseline | scr | delta |"));

    let o = scr(&["profile", "--config", cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("profile_seed3.json").exists());
}
