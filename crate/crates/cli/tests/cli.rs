use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn famae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_famae")).args(args).output().expect("spawn famae")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn channel(name: &str, bands: &[f64]) -> Value {
    json!({ "name": name, "bands": bands.iter().map(|f| vec![*f]).collect::<Vec<_>>(), "snr": 1.0 })
}

fn synth(name: &str, channels: Vec<Value>) -> Value {
    json!({
        "name": name,
        "n_classes": 3,
        "length": 100,
        "sampling_rate_hz": 100.0,
        "noise_exponent": 1.0,
        "shared_latent": true,
        "channels": channels,
        "sizes": { "train": 24, "val": 6, "test": 30 }
    })
}

/// A config small enough that every command finishes in well under a second.
fn tiny_config(dir: &Path) -> PathBuf {
    let cfg = json!({
        "seed": 3,
        "output_dir": dir.join("runs"),
        "model": {
            "depth": 1, "width": 8, "heads": 2, "patch": 10, "mlp_dim": 16, "dropout": 0.0,
            "aux_depth": 1, "aux_heads": 2, "aux_mlp_dim": 16, "max_channels": 4
        },
        "pretrain": { "epochs": 1, "batch": 8 },
        "finetune": { "epochs": 2, "batch": 8 },
        "data": {
            "pretrain": { "synth": synth("corpus", vec![channel("a", &[5.0, 10.0, 20.0]), channel("b", &[8.0, 15.0, 30.0])]) },
            "target": { "synth": synth("target", vec![
                channel("c0", &[5.0, 10.0, 20.0]),
                channel("c1", &[6.0, 12.0, 24.0]),
                channel("c2", &[7.0, 14.0, 28.0]),
                channel("c3", &[9.0, 18.0, 36.0]),
            ]) }
        }
    });
    let p = dir.join("config.json");
    fs::write(&p, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    p
}

fn csv_rows(path: &Path) -> Vec<String> {
    let text = fs::read_to_string(path).unwrap();
    text.lines().skip(1).map(str::to_string).collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_writes_bundle_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = famae(&["synth", "--config", s(&cfg), "--seed", "7", "--out", s(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let mut names: Vec<String> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names.len(), 7, "{names:?}");
    assert!(names.contains(&"manifest.json".to_string()));
    for n in &names {
        assert_eq!(fs::read(a.join(n)).unwrap(), fs::read(b.join(n)).unwrap(), "{n} differs");
    }
}

#[test]
fn band_above_nyquist_is_a_config_error_naming_the_channel() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let mut v: Value = serde_json::from_str(&fs::read_to_string(&cfg).unwrap()).unwrap();
    v["data"]["target"]["synth"]["channels"][2]["bands"] = json!([[7.0], [14.0], [49.9]]);
    fs::write(&cfg, v.to_string()).unwrap();
    let o = famae(&["synth", "--config", s(&cfg), "--out", s(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("c2"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let o = famae(&["finetune", "--config", s(&cfg), "--set", "finetune.epohcs=3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("epohcs"), "{}", stderr(&o));
}

#[test]
fn missing_artifacts_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let ghost = dir.path().join("nope.bin");
    for args in [
        vec!["finetune", "--config", s(&cfg), "--checkpoint", s(&ghost)],
        vec!["attn", "--config", s(&cfg), "--checkpoint", s(&ghost)],
        vec!["mismatch", "--config", s(&cfg), "--checkpoint", s(&ghost)],
        vec!["synth", "--config", s(&ghost)],
    ] {
        let o = famae(&args);
        assert_eq!(o.status.code(), Some(3), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn finetune_without_checkpoint_is_the_scratch_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("ft");
    let o = famae(&["finetune", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&out.join("results.csv"));
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("finetune,scratch,"), "{}", rows[0]);
    for f in ["config.json", "runlog.json", "results.json", "classifier.bin"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let log: Value = serde_json::from_str(&fs::read_to_string(out.join("runlog.json")).unwrap()).unwrap();
    assert!(log["wall_clock_secs"].as_f64().unwrap() >= 0.0);
    assert!(log["n_params"].as_u64().unwrap() > 0);
}

#[test]
fn resolved_config_echo_reproduces_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let o = famae(&["finetune", "--config", s(&cfg), "--set", "finetune.lr=0.002", "--out", s(&a)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = famae(&["finetune", "--config", s(&a.join("config.json")), "--out", s(&b)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(a.join("results.csv")).unwrap(), fs::read(b.join("results.csv")).unwrap());
}

#[test]
fn pretrain_then_finetune_and_attn() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let pre = dir.path().join("pre");
    let o = famae(&["pretrain", "--config", s(&cfg), "--out", s(&pre)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ck = pre.join("checkpoint.bin");
    assert!(ck.exists());
    assert_eq!(csv_rows(&pre.join("losses.csv")).len(), 1);

    let ft = dir.path().join("ft");
    let o = famae(&["finetune", "--config", s(&cfg), "--checkpoint", s(&ck), "--out", s(&ft)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(csv_rows(&ft.join("results.csv"))[0].starts_with("finetune,pretrained,"));

    let at = dir.path().join("attn");
    let o = famae(&["attn", "--config", s(&cfg), "--checkpoint", s(&ck), "--out", s(&at)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let printed = String::from_utf8_lossy(&o.stdout);
    let lines: Vec<&str> = printed.lines().collect();
    assert_eq!(lines.len(), 4);
    for l in lines {
        let sum: f64 = l.split_whitespace().map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-3, "{l}");
    }
}

#[test]
fn ablate_emits_the_two_by_two_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("ab");
    let o = famae(&["ablate", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&out.join("results.csv"));
    assert_eq!(rows.len(), 4);
    for (row, v) in rows.iter().zip(["fa=on,fm=on", "fa=on,fm=off", "fa=off,fm=on", "fa=off,fm=off"]) {
        assert!(row.starts_with(&format!("ablate,\"{v}\",")), "{row}");
    }
}

#[test]
fn mismatch_dropout_four_to_one_emits_four_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("mm");
    let o = famae(&["mismatch", "--config", s(&cfg), "--mode", "dropout", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&out.join("results.csv"));
    assert_eq!(rows.len(), 4, "{rows:?}");
    assert!(rows.iter().all(|r| r.starts_with("dropout,")));
}
