use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL_CONFIG: &str = r#"{
  "model": {"dim": 8, "layers_a": 1, "layers_b": 1, "ffn_hidden": 8},
  "train": {"epochs": 1},
  "data": {"synthetic_count": 80, "synthetic_vocab": 20}
}"#;

fn duosent(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_duosent"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), SMALL_CONFIG).unwrap();
    dir
}

#[test]
fn preprocess_generic_toy_csv() {
    let dir = setup();
    fs::write(
        dir.path().join("in.csv"),
        "text,score,year\nGreat stay! http://x.co @bob #fun,8.8,2016\nawful room,2.0,2017\nfine enough,6,2017\n",
    )
    .unwrap();
    let out = duosent(dir.path(), &["preprocess", "in.csv", "--out", "pp"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let records: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("pp/records.json")).unwrap()).unwrap();
    let records = records["records"].as_array().unwrap();
    assert_eq!(records.len(), 3);
    assert_eq!(records[0]["clean_text"], "great stay fun");
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("pp/manifest.json")).unwrap()).unwrap();
    for artifact in manifest["outputs"].as_array().unwrap() {
        assert!(dir.path().join(artifact.as_str().unwrap()).exists(), "{artifact}");
    }
}

#[test]
fn out_of_range_score_fails_unless_allowed() {
    let dir = setup();
    fs::write(dir.path().join("in.csv"), "text,score\ngood,8\nbad,12\n").unwrap();
    let out = duosent(dir.path(), &["preprocess", "in.csv", "--out", "a"]);
    assert!(!out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("a/integrity.json")).unwrap()).unwrap();
    assert_eq!(report["out_of_range_scores"], 1);
    let out = duosent(dir.path(), &["preprocess", "in.csv", "--out", "b", "--allow-dirty"]);
    assert!(out.status.success());
}

#[test]
fn booking_schema_concatenates_halves() {
    let dir = setup();
    fs::write(
        dir.path().join("b.csv"),
        "Positive_Review,Negative_Review,Reviewer_Score,Review_Date\nLovely staff,Tiny room,7.5,8/3/2017\n",
    )
    .unwrap();
    let out = duosent(dir.path(), &["preprocess", "b.csv", "--schema", "booking", "--out", "bk"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let file: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("bk/records.json")).unwrap()).unwrap();
    assert_eq!(file["records"][0]["clean_text"], "lovely staff tiny room");
    assert_eq!(file["records"][0]["year"], 2017);
}

#[test]
fn missing_column_is_an_error() {
    let dir = setup();
    fs::write(dir.path().join("in.csv"), "body,score\nx,1\n").unwrap();
    let out = duosent(dir.path(), &["preprocess", "in.csv", "--out", "m"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("text"));
}

#[test]
fn train_is_reproducible_and_eval_matches() {
    let dir = setup();
    for out_dir in ["r1", "r2"] {
        let out = duosent(dir.path(), &["train", "--config", "cfg.json", "--seed", "3", "--out", out_dir]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["model.bin", "model.json", "metrics.csv", "loss_curve.csv"] {
        let a = fs::read(dir.path().join("r1").join(f)).unwrap();
        let b = fs::read(dir.path().join("r2").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between identical runs");
    }
    let out = duosent(
        dir.path(),
        &["eval", "--config", "cfg.json", "--seed", "3", "--checkpoint", "r1/model.json", "--out", "ev"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = |p: &str| {
        let text = fs::read_to_string(dir.path().join(p)).unwrap();
        text.lines().nth(1).unwrap().splitn(3, ',').nth(2).unwrap().to_string()
    };
    assert_eq!(metrics("r1/metrics.csv"), metrics("ev/metrics.csv"));
}

#[test]
fn ablate_writes_four_rows() {
    let dir = setup();
    let out = duosent(dir.path(), &["ablate", "--config", "cfg.json", "--out", "ab"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("ab/ablation.csv")).unwrap();
    let variants: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(variants, ["wo-gf-hg-dl", "wo-hg-dl", "wo-dl", "full"]);
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("ab/manifest.json")).unwrap()).unwrap();
    let wo_dl = manifest["variants"]
        .as_array()
        .unwrap()
        .iter()
        .find(|v| v["variant"] == "wo-dl")
        .unwrap();
    assert_eq!(wo_dl["final_log_weights"], serde_json::json!([0.0, 0.0, 0.0]));
    assert_eq!(wo_dl["initial_loss"], wo_dl["initial_task_sum"]);
}

#[test]
fn gradcheck_passes_and_zero_threshold_fails() {
    let dir = setup();
    let out = duosent(dir.path(), &["gradcheck", "--out", "gc"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let report = String::from_utf8_lossy(&out.stdout);
    for module in ["encoder_a", "encoder_b", "fusion_a", "fusion_b", "gate", "heads", "loss_weights"] {
        assert!(report.contains(module), "{module} not reported");
    }
    let out = duosent(dir.path(), &["gradcheck", "--threshold", "0", "--out", "gc0"]);
    assert!(!out.status.success());
}

#[test]
fn unknown_variant_rejected() {
    let dir = setup();
    let out = duosent(dir.path(), &["train", "--variant", "wo-everything"]);
    assert!(!out.status.success());
}
