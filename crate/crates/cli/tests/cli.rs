use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mqc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mqc"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) {
    let out = mqc(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, n: usize, size: usize, noise: f64) {
    ok(&[
        "synth",
        "--out",
        s(dir),
        "--n",
        &n.to_string(),
        "--seed",
        "3",
        "--size",
        &size.to_string(),
        "--rater-noise",
        &noise.to_string(),
    ]);
}

#[test]
fn synth_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    synth(&a, 30, 32, 0.15);
    synth(&b, 30, 32, 0.15);
    let manifest = fs::read(a.join("manifest.csv")).unwrap();
    assert_eq!(manifest, fs::read(b.join("manifest.csv")).unwrap());
    let text = String::from_utf8(manifest).unwrap();
    assert!(text.starts_with("id,path,rater_a,rater_b,severity,split,volume\n"));
    assert_eq!(text.lines().count(), 31);
}

#[test]
fn exit_codes_distinguish_usage_from_failure() {
    assert_eq!(mqc(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(mqc(&["synth", "--n", "10"]).status.code(), Some(2));
    assert_eq!(mqc(&["--help"]).status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let out = mqc(&[
        "agreement",
        "--manifest",
        s(&missing),
        "--out",
        s(&dir.path().join("a.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn noiseless_raters_agree_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 40, 32, 0.0);
    let out = dir.path().join("agreement.json");
    ok(&[
        "agreement",
        "--manifest",
        s(&dir.path().join("manifest.csv")),
        "--out",
        s(&out),
    ]);
    let json: serde_json::Value = serde_json::from_slice(&fs::read(out).unwrap()).unwrap();
    assert_eq!(json["images"], 40);
    let expected = serde_json::json!([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
    assert_eq!(json["jaccard"], expected);
}

#[test]
fn pipeline_from_training_to_analysis() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, 60, 32, 0.15);
    let manifest = d.join("manifest.csv");
    let ckpt = d.join("net.ckpt");
    let curve = d.join("curve.csv");
    ok(&[
        "train",
        "--manifest",
        s(&manifest),
        "--arch",
        "convnet4",
        "--task",
        "three",
        "--seed",
        "1",
        "--steps",
        "20",
        "--batch",
        "8",
        "--size",
        "32",
        "--eval-interval",
        "10",
        "--out",
        s(&ckpt),
        "--curve",
        s(&curve),
    ]);
    let curve_text = fs::read_to_string(&curve).unwrap();
    assert!(curve_text.starts_with("step,train_acc,eval_acc,train_loss,eval_loss\n"));
    assert_eq!(curve_text.lines().count(), 4);

    let metrics = d.join("metrics.json");
    let roc = d.join("roc.csv");
    ok(&[
        "eval",
        "--manifest",
        s(&manifest),
        "--ckpt",
        s(&ckpt),
        "--task",
        "three",
        "--out",
        s(&metrics),
        "--roc",
        s(&roc),
    ]);
    let json: serde_json::Value = serde_json::from_slice(&fs::read(&metrics).unwrap()).unwrap();
    assert!(json["accuracy"].is_number());
    assert_eq!(json["auc_per_class"].as_array().unwrap().len(), 3);
    assert!(fs::read_to_string(&roc)
        .unwrap()
        .starts_with("class,threshold,fpr,tpr\n"));

    let mismatch = mqc(&[
        "eval",
        "--manifest",
        s(&manifest),
        "--ckpt",
        s(&ckpt),
        "--task",
        "three",
        "--size",
        "64",
        "--out",
        s(&metrics),
    ]);
    assert_eq!(mismatch.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&mismatch.stderr).contains("shape mismatch"));
    let wrong_task = mqc(&[
        "eval",
        "--manifest",
        s(&manifest),
        "--ckpt",
        s(&ckpt),
        "--task",
        "binary",
        "--out",
        s(&metrics),
    ]);
    assert_eq!(wrong_task.status.code(), Some(1));

    let suspects = d.join("suspects.csv");
    ok(&[
        "suspects",
        "--manifest",
        s(&manifest),
        "--ckpt",
        s(&ckpt),
        "--tau",
        "0.6",
        "--out",
        s(&suspects),
    ]);
    assert!(fs::read_to_string(&suspects)
        .unwrap()
        .starts_with("id,given,predicted,confidence\n"));
    assert_eq!(
        mqc(&[
            "suspects",
            "--manifest",
            s(&manifest),
            "--ckpt",
            s(&ckpt),
            "--tau",
            "0.4",
            "--out",
            s(&suspects)
        ])
        .status
        .code(),
        Some(1)
    );

    let maps = d.join("maps");
    let image = d.join("images").join(
        fs::read_dir(d.join("images"))
            .unwrap()
            .next()
            .unwrap()
            .unwrap()
            .file_name(),
    );
    ok(&[
        "activations",
        "--ckpt",
        s(&ckpt),
        "--image",
        s(&image),
        "--out",
        s(&maps),
        "--compare",
        s(&image),
    ]);
    for k in 1..=4 {
        assert!(maps.join(format!("layer{k}.pgm")).exists());
    }
    let scores: Vec<f64> = serde_json::from_slice(&fs::read(maps.join("discriminability.json")).unwrap()).unwrap();
    assert_eq!(scores, vec![0.0; 4]);
}

#[test]
fn gradcheck_reports_each_check() {
    let out = mqc(&["gradcheck", "--draws", "2"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert!(text.lines().all(|l| l.ends_with("ok")));
}
