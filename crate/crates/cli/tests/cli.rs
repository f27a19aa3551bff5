use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dclnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dclnet"))
        .args(args)
        .output()
        .expect("spawn dclnet")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_phantom_config(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("phantom.json");
    fs::write(&p, r#"{"dims": [32, 32, 32]}"#).unwrap();
    p
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gen_phantom_writes_manifest_and_provenance() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_phantom_config(tmp.path());
    let out = tmp.path().join("d");
    let o = dclnet(&["gen-phantom", "--seed", "7", "--n", "10", "--config", s(&cfg), "--out", s(&out), "--quiet"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["seed"], 7);
    assert_eq!(m["subjects"].as_array().unwrap().len(), 10);
    let run = json(&out.join("run.json"));
    assert_eq!(run["status"], "ok");
    assert_eq!(run["seed"], 7);
    assert_eq!(run["config"]["phantom"]["dims"][0], 32);
}

#[test]
fn unknown_flag_is_a_usage_error_naming_it() {
    let o = dclnet(&["gen-phantom", "--n", "2", "--bogus-flag"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--bogus-flag"), "{}", stderr(&o));
    let o = dclnet(&["no-such-command"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no-such-command"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(&cfg, r#"{"seed": 1, "tube_count": 3}"#).unwrap();
    let o = dclnet(&["gen-phantom", "--n", "1", "--config", s(&cfg), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("tube_count"), "{}", stderr(&o));
}

#[test]
fn rerun_needs_overwrite_and_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_phantom_config(tmp.path());
    let out = tmp.path().join("d");
    let args = ["gen-phantom", "--seed", "3", "--n", "2", "--config", s(&cfg), "--out", s(&out), "--quiet"];
    assert_eq!(dclnet(&args).status.code(), Some(0));
    let first = fs::read(out.join("sub-000/t1w.raw")).unwrap();
    let o = dclnet(&args);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--overwrite"));
    let mut again = args.to_vec();
    again.push("--overwrite");
    assert_eq!(dclnet(&again).status.code(), Some(0));
    assert_eq!(fs::read(out.join("sub-000/t1w.raw")).unwrap(), first);
}

#[test]
fn eval_with_mismatched_geometry_fails_at_runtime() {
    let tmp = tempfile::tempdir().unwrap();
    let (big, small) = (tmp.path().join("big"), tmp.path().join("small"));
    let cfg = small_phantom_config(tmp.path());
    assert_eq!(dclnet(&["gen-phantom", "--n", "1", "--out", s(&big), "--quiet"]).status.code(), Some(0));
    assert_eq!(
        dclnet(&["gen-phantom", "--n", "1", "--config", s(&cfg), "--out", s(&small), "--quiet"]).status.code(),
        Some(0)
    );
    let report = tmp.path().join("eval/metrics.json");
    let o = dclnet(&[
        "eval",
        "--pred",
        s(&big.join("sub-000/precise")),
        "--truth",
        s(&small.join("sub-000/precise")),
        "--out",
        s(&report),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("[64, 80, 64]") && err.contains("[32, 32, 32]"), "{err}");
    let run = json(&tmp.path().join("eval/run.json"));
    assert_eq!(run["status"], "failed");
    assert!(run["error"].as_str().unwrap().contains("dims"));
}

#[test]
fn voxelize_streamline_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_phantom_config(tmp.path());
    let ph = tmp.path().join("ph");
    assert_eq!(dclnet(&["gen-phantom", "--n", "1", "--config", s(&cfg), "--out", s(&ph), "--quiet"]).status.code(), Some(0));
    let lines = tmp.path().join("lines.jsonl");
    let mut text = String::new();
    for i in 0..3 {
        let y = 10.0 + i as f64 * 0.2;
        text += &format!("{{\"id\": \"a{i}\", \"class\": \"CN II\", \"points\": [[2, {y}, 5], [20, {y}, 5], [20, 25, 9]]}}\n");
    }
    text += "{\"id\": \"b0\", \"class\": \"CN V\", \"points\": [[5, 5, 5], [6, 5, 5]]}\n";
    fs::write(&lines, text).unwrap();
    let out = tmp.path().join("labels");
    let o = dclnet(&[
        "voxelize",
        "--streamlines",
        s(&lines),
        "--geometry",
        s(&ph.join("sub-000/t1w.json")),
        "--tau",
        "2",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    // the single CN V streamline never reaches tau = 2
    assert!(stdout.contains("CN V: 0 voxels"), "{stdout}");
    assert!(!stdout.contains("CN II: 0 voxels"), "{stdout}");
    assert_eq!(json(&out.join("labels.json"))["classes"][0], "CN II");
}

#[test]
fn train_predict_eval_plot_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let pcfg = small_phantom_config(tmp.path());
    let ph = tmp.path().join("ph");
    assert_eq!(
        dclnet(&["gen-phantom", "--n", "4", "--config", s(&pcfg), "--out", s(&ph), "--quiet"]).status.code(),
        Some(0)
    );
    let tcfg = tmp.path().join("train.json");
    fs::write(&tcfg, r#"{"epochs": 2, "folds": 2, "model": {"widths": [2, 3, 4, 6, 8]}}"#).unwrap();
    let run = tmp.path().join("run");
    let manifest = ph.join("manifest.json");
    let o = dclnet(&["train", "--manifest", s(&manifest), "--config", s(&tcfg), "--out", s(&run), "--quiet"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let log = fs::read_to_string(run.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    for key in ["epoch", "dice_loss", "bce_loss", "coarse_loss", "total", "val_dice"] {
        assert!(log.lines().next().unwrap().contains(&format!("\"{key}\"")));
    }

    let pred = tmp.path().join("pred");
    let subject = ph.join("sub-001");
    let o = dclnet(&[
        "predict",
        "--checkpoint",
        s(&run.join("best.ckpt")),
        "--t1w",
        s(&subject.join("t1w.json")),
        "--fa",
        s(&subject.join("fa.json")),
        "--out",
        s(&pred),
        "--quiet",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let t1w = json(&subject.join("t1w.json"));
    let label = json(&pred.join("labels/labels.json"));
    let first = label["files"][0].as_str().unwrap();
    let header = json(&pred.join("labels").join(first));
    assert_eq!(header["dims"], t1w["dims"]);
    assert_eq!(header["affine"], t1w["affine"]);
    assert_eq!(json(&pred.join("probabilities/probabilities.json"))["classes"][0], "CN II");
    assert!(pred.join("probabilities/class0.json").exists());

    let metrics = tmp.path().join("m/metrics.json");
    let o = dclnet(&[
        "eval",
        "--pred",
        s(&pred.join("labels")),
        "--truth",
        s(&subject.join("precise")),
        "--out",
        s(&metrics),
        "--quiet",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = json(&metrics);
    assert!(m["classes"]["CN II"].get("tp").is_some());

    let plots = tmp.path().join("plots");
    let o = dclnet(&[
        "metrics-plot",
        "--log",
        s(&run.join("train_log.jsonl")),
        "--metrics",
        s(&metrics),
        "--out",
        s(&plots),
        "--quiet",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["loss_curves.svg", "class_metrics.svg"] {
        assert!(fs::read_to_string(plots.join(f)).unwrap().starts_with("<svg"));
    }

    let o = dclnet(&["model-summary", "--checkpoint", s(&run.join("best.ckpt")), "--out", s(&tmp.path().join("sum"))]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("total"));
}
