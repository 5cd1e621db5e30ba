use std::path::Path;
use std::process::{Command, Output};

fn patclass(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_patclass")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "patclass {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_train_evaluate_predict_export() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let spec = root.join("spec.txt");
    std::fs::write(&spec, "assignees=4\npatents_per_assignee=6\nvocab_size=80\n").unwrap();
    let corpus = root.join("corpus");
    patclass(&["synth", "--spec", s(&spec), "--seed", "2", "--out", s(&corpus)]);
    for f in ["train.jsonl", "valid.jsonl", "test.jsonl", "taxonomy.json"] {
        assert!(corpus.join(f).exists(), "{f}");
    }

    let cfg = root.join("model.cfg");
    std::fs::write(&cfg, "T=8\nF=4\nN=20\nD=4\ns=2\nmax_epochs=3\nmin_count=1\nbatch_size=8\n").unwrap();
    let out = root.join("run");
    let tax = corpus.join("taxonomy.json");
    patclass(&[
        "train", "--config", s(&cfg), "--corpus", s(&corpus), "--taxonomy", s(&tax), "--out", s(&out),
        "--seed", "4", "--icl", "adaptive_h", "--no-pe", "--level", "2",
    ]);
    let ckpt = out.join("model.ckpt");
    assert!(ckpt.exists() && out.join("report.json").exists());

    let text = patclass(&["evaluate", "--checkpoint", s(&ckpt), "--split", "test", "--k", "1,3,5"]);
    let text = String::from_utf8(text.stdout).unwrap();
    assert!(text.contains("Precision") && text.lines().count() == 4, "{text}");

    let csv = patclass(&["evaluate", "--checkpoint", s(&ckpt), "--split", "test", "--k", "1,3", "--csv"]);
    let csv = String::from_utf8(csv.stdout).unwrap();
    assert!(csv.starts_with("metric,K,value\n"));
    assert_eq!(csv.lines().count(), 1 + 3 * 2);
    let again = patclass(&["evaluate", "--checkpoint", s(&ckpt), "--split", "test", "--k", "1,3", "--csv", "--workers", "2"]);
    assert_eq!(csv, String::from_utf8(again.stdout).unwrap());
    let coarse = patclass(&["evaluate", "--checkpoint", s(&ckpt), "--k", "1,3,5", "--csv", "--level", "1"]);
    // Level 1 has four codes, so K=5 is dropped.
    assert_eq!(String::from_utf8(coarse.stdout).unwrap().lines().count(), 1 + 3 * 2);

    let pred = patclass(&["predict", "--checkpoint", s(&ckpt), "--input", s(&corpus.join("test.jsonl")), "--k", "2"]);
    let pred = String::from_utf8(pred.stdout).unwrap();
    assert_eq!(pred.lines().count(), 4);
    for line in pred.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let top = v["topk"].as_array().unwrap();
        assert_eq!(top.len(), 2);
        assert!(top[0]["prob"].as_f64().unwrap() >= top[1]["prob"].as_f64().unwrap());
        assert_eq!(top[0]["code"].as_str().unwrap().len(), 3);
    }

    let emb = root.join("codes.jsonl");
    patclass(&["export-embeddings", "--checkpoint", s(&ckpt), "--out", s(&emb)]);
    let lines = std::fs::read_to_string(&emb).unwrap();
    assert_eq!(lines.lines().count(), 4 + 12);
    let first: serde_json::Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    assert_eq!(first["level"], 1);
    assert_eq!(first["vector"].as_array().unwrap().len(), 8);
}

#[test]
fn reports_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.ckpt");
    let out = Command::new(env!("CARGO_BIN_EXE_patclass"))
        .args(["evaluate", "--checkpoint", s(&missing)])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let out = Command::new(env!("CARGO_BIN_EXE_patclass"))
        .args(["train", "--corpus", "x", "--taxonomy", "y", "--out", "z", "--icl", "sideways"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
