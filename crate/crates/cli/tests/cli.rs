use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn cvgeo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cvgeo"))
        .args(args)
        .env_remove("CVGEO_THREADS")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = cvgeo(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn small_config(dir: &Path, channels: usize) -> PathBuf {
    let cfg = json!({
        "synthetic": {"aerial_size": 16, "street_width": 32, "street_height": 4, "channels": channels},
        "split": {"train": 30, "val": 8, "test": 8},
        "training": {"epochs": 2, "warmup_epochs": 1, "batch_pairs": 6},
        "ablation": {"kind": "mining", "seeds": [0]},
        "regression": {"epochs": 2}
    });
    let path = dir.join(format!("cfg{channels}.json"));
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, r#"{"trainig": {"epochs": 1}}"#).unwrap();
    let out = cvgeo(&["gen", "--config", s(&cfg), "--out", s(&tmp.path().join("run"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("trainig"), "{err}");
}

#[test]
fn invalid_thread_count_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_cvgeo"))
        .args(["gen", "--out", s(&tmp.path().join("run"))])
        .env("CVGEO_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pipeline_runs_end_to_end_and_reruns_bit_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let cfg = small_config(t, 3);
    let data = t.join("data");
    ok(&["gen", "--config", s(&cfg), "--out", s(&data)]);
    for f in ["train.json", "val.json", "test.json", "config.json", "timing.log"] {
        assert!(data.join(f).is_file(), "missing {f}");
    }
    let train_m = data.join("train.json");
    let val_m = data.join("val.json");
    let test_m = data.join("test.json");

    let train = |out: &Path| {
        ok(&[
            "train",
            "--config",
            s(&cfg),
            "--out",
            s(out),
            "--train-manifest",
            s(&train_m),
            "--val-manifest",
            s(&val_m),
            "--mining",
            "global",
        ])
    };
    let (a, b) = (t.join("a"), t.join("b"));
    train(&a);
    train(&b);
    for f in [
        "checkpoint.cvmp",
        "report.json",
        "config.json",
        "loss.svg",
        "recall.svg",
        "similarity.svg",
    ] {
        let fa = fs::read(a.join(f)).unwrap();
        let fb = fs::read(b.join(f)).unwrap();
        if f == "report.json" {
            // wall-clock times are the only field allowed to differ
            let strip = |bytes: &[u8]| {
                let mut v: Value = serde_json::from_slice(bytes).unwrap();
                for e in v["epochs"].as_array_mut().unwrap() {
                    e.as_object_mut().unwrap().remove("wall_clock_secs");
                }
                v
            };
            assert_eq!(strip(&fa), strip(&fb));
        } else {
            assert!(fa == fb, "{f} differs between reruns");
        }
    }
    let report: Value = serde_json::from_slice(&fs::read(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["epochs"].as_array().unwrap().len(), 2);

    let ckpt = a.join("checkpoint.cvmp");
    let ev = t.join("eval");
    let summary = ok(&[
        "eval",
        "--config",
        s(&cfg),
        "--checkpoint",
        s(&ckpt),
        "--manifest",
        s(&test_m),
        "--out",
        s(&ev),
    ]);
    assert!(summary.contains("8 queries"), "{summary}");
    let eval: Value = serde_json::from_slice(&fs::read(ev.join("eval.json")).unwrap()).unwrap();
    assert!(eval.is_object());
    assert!(ev.join("recall_curve.svg").is_file());

    let gc = t.join("gradcam");
    ok(&[
        "gradcam",
        "--checkpoint",
        s(&ckpt),
        "--manifest",
        s(&test_m),
        "--out",
        s(&gc),
    ]);
    let records: Value = serde_json::from_slice(&fs::read(gc.join("gradcam.json")).unwrap()).unwrap();
    assert_eq!(records.as_array().unwrap().len(), 1);
    let pgm = fs::read_dir(&gc)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|x| x == "pgm"))
        .unwrap();
    assert!(fs::read(pgm).unwrap().starts_with(b"P"));

    let or = t.join("orient");
    ok(&[
        "orient",
        "--config",
        s(&cfg),
        "--checkpoint",
        s(&ckpt),
        "--manifest",
        s(&test_m),
        "--out",
        s(&or),
        "--bins",
        "36",
    ]);
    let est: Value = serde_json::from_slice(&fs::read(or.join("orientation.json")).unwrap()).unwrap();
    assert_eq!(est.as_array().unwrap().len(), 8);
    assert!(or.join("orientation_errors.svg").is_file());
}

#[test]
fn eval_rejects_a_manifest_with_the_wrong_channel_count() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let cfg3 = small_config(t, 3);
    let cfg5 = small_config(t, 5);
    ok(&[
        "train",
        "--config",
        s(&cfg3),
        "--out",
        s(&t.join("m")),
        "--epochs",
        "1",
    ]);
    ok(&["gen", "--config", s(&cfg5), "--out", s(&t.join("d5"))]);
    let out = cvgeo(&[
        "eval",
        "--checkpoint",
        s(&t.join("m/checkpoint.cvmp")),
        "--manifest",
        s(&t.join("d5/test.json")),
        "--out",
        s(&t.join("e")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Shape"), "{err}");
}

#[test]
fn ablation_grid_writes_table() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let cfg = small_config(t, 3);
    let out = t.join("ab");
    ok(&["ablate", "--config", s(&cfg), "--out", s(&out), "--epochs", "1"]);
    let rows: Value = serde_json::from_slice(&fs::read(out.join("ablation.json")).unwrap()).unwrap();
    assert!(!rows.as_array().unwrap().is_empty());
    assert!(!fs::read_to_string(out.join("ablation.txt")).unwrap().is_empty());
}
