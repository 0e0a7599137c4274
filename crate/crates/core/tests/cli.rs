use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn comprf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_comprf")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SHALLOW: &str = r#"{
  "inputs": [
    {"id": 1, "space": {"kind": "circle"}},
    {"id": 2, "space": {"kind": "circle"}},
    {"id": 3, "space": {"kind": "categorical", "n": 4}}
  ],
  "internal": [{"id": 4, "activation": {"kind": "exp", "c": 0.25}, "in": [1, 2, 3]}],
  "output": 4
}"#;

const CYCLIC: &str = r#"{
  "inputs": [{"id": 1, "space": {"kind": "binary"}}],
  "internal": [
    {"id": 2, "activation": {"kind": "exp", "c": 1.0}, "in": [1, 3]},
    {"id": 3, "activation": {"kind": "exp", "c": 1.0}, "in": [2]}
  ],
  "output": 3
}"#;

#[test]
fn validate_exit_codes() {
    let dir = TempDir::new().unwrap();
    let ok = comprf(&["validate", "--config", s(&write(&dir, "ok.json", SHALLOW))]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(stdout(&ok).starts_with("valid"));

    let cyc = comprf(&["validate", "--config", s(&write(&dir, "cyc.json", CYCLIC))]);
    assert_eq!(cyc.status.code(), Some(1));
    assert!(stdout(&cyc).contains("cycle"), "{}", stdout(&cyc));

    let bad = comprf(&["validate", "--config", s(&write(&dir, "bad.json", "{\"inputs\": [,"))]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("line 1"));

    let missing = comprf(&["validate", "--config", s(&dir.path().join("nope.json"))]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn complexity_examples() {
    let dir = TempDir::new().unwrap();
    let single = r#"{"inputs": [{"id": 1, "space": {"kind": "circle"}}],
        "internal": [{"id": 2, "activation": {"kind": "exp", "c": 1}, "in": [1]}], "output": 2}"#;
    let o = comprf(&["complexity", "--config", s(&write(&dir, "a.json", single))]);
    assert!(stdout(&o).starts_with("C(S) = 1.000000\n"), "{}", stdout(&o));

    let constant = r#"{"inputs": [{"id": 1, "space": {"kind": "circle"}}],
        "internal": [{"id": 2, "activation": {"kind": "explicit", "coeffs": [1.0]}, "in": [1]}], "output": 2}"#;
    let o = comprf(&["complexity", "--config", s(&write(&dir, "b.json", constant))]);
    assert!(stdout(&o).starts_with("C(S) = 0.000000\n"));

    let layered = r#"{"inputs": [{"id": 1, "space": {"kind": "binary"}}, {"id": 2, "space": {"kind": "binary"}}],
        "internal": [
          {"id": 3, "activation": {"kind": "exp", "c": 2}, "in": [1, 2]},
          {"id": 4, "activation": {"kind": "exp", "c": 2}, "in": [1, 2]},
          {"id": 5, "activation": {"kind": "exp", "c": 2}, "in": [3, 4]}],
        "output": 5}"#;
    let o = comprf(&["complexity", "--config", s(&write(&dir, "c.json", layered))]);
    let text = stdout(&o);
    assert!(text.starts_with("C(S) = 4.000000\n"), "{text}");
    assert!(text.contains("node 3: C = 2.000000"));

    let o = comprf(&["complexity", "--config", s(&write(&dir, "d.json", CYCLIC))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn features_summary_and_determinism() {
    let dir = TempDir::new().unwrap();
    let binary = write(
        &dir,
        "bin.json",
        r#"{"inputs": [{"id": 1, "space": {"kind": "binary"}}], "output": 1}"#,
    );
    let out = dir.path().join("reg.json");
    let o = comprf(&[
        "features",
        "--config",
        s(&binary),
        "--q",
        "100",
        "--seed",
        "3",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(
        text.contains("distinct 1\n") && text.contains("mean_atoms 1.000000\n"),
        "{text}"
    );

    let constant = write(
        &dir,
        "const.json",
        r#"{"inputs": [{"id": 1, "space": {"kind": "circle"}}],
            "internal": [{"id": 2, "activation": {"kind": "explicit", "coeffs": [1.0]}, "in": [1]}], "output": 2}"#,
    );
    let o = comprf(&["features", "--config", s(&constant), "--q", "50", "--out", s(&out)]);
    let text = stdout(&o);
    assert!(
        text.contains("distinct 1\n") && text.contains("mean_atoms 0.000000\n"),
        "{text}"
    );

    let cfg = write(&dir, "shallow.json", SHALLOW);
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    comprf(&[
        "features",
        "--config",
        s(&cfg),
        "--q",
        "2000",
        "--seed",
        "11",
        "--out",
        s(&a),
    ]);
    comprf(&[
        "features",
        "--config",
        s(&cfg),
        "--q",
        "2000",
        "--seed",
        "11",
        "--out",
        s(&b),
    ]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let o = comprf(&["features", "--config", s(&cfg), "--q", "0", "--out", s(&a)]);
    assert_eq!(o.status.code(), Some(1));
    let o = comprf(&[
        "features",
        "--config",
        s(&cfg),
        "--q",
        "5",
        "--out",
        s(&dir.path().join("no/such/dir.json")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bench_writes_report() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "shallow.json", SHALLOW);
    let csv = dir.path().join("bench.csv");
    let o = comprf(&[
        "bench",
        "--config",
        s(&cfg),
        "--synth",
        "iid",
        "12",
        "--budgets",
        "32,128",
        "--trials",
        "2",
        "--seed",
        "5",
        "--out",
        s(&csv),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "budget,trial,mae,rmse,max_err,pearson");
    assert_eq!(lines.len(), 1 + 4 + 2);
    assert!(lines[5].starts_with("32,pooled,"));
    assert!(stdout(&o).contains("budget"));

    // without --out the CSV goes to standard output
    let o = comprf(&[
        "bench",
        "--config",
        s(&cfg),
        "--synth",
        "iid",
        "5",
        "--budgets",
        "16",
        "--trials",
        "1",
    ]);
    assert!(stdout(&o).starts_with("budget,trial,"));

    // data with the wrong number of columns
    let data = write(&dir, "data.csv", "x1,x2\n0.1,0.2\n0.3,0.4\n");
    let o = comprf(&["bench", "--config", s(&cfg), "--data", s(&data), "--budgets", "16"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn cooccur_matrix_has_node_header() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "shallow.json", SHALLOW);
    let out = dir.path().join("co.csv");
    let o = comprf(&[
        "cooccur",
        "--config",
        s(&cfg),
        "--q",
        "5000",
        "--seed",
        "2",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "1,2,3");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("1,"));
}

#[test]
fn synth_train_predict_round_trip() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "shallow.json", SHALLOW);
    let train = dir.path().join("train.csv");
    let test = dir.path().join("test.csv");
    let reg = dir.path().join("reg.json");
    let model = dir.path().join("model.json");
    let preds = dir.path().join("preds.csv");
    for (path, seed) in [(&train, "1"), (&test, "2")] {
        let o = comprf(&[
            "synth",
            "--config",
            s(&cfg),
            "--synth",
            "iid",
            "200",
            "--seed",
            seed,
            "--teacher",
            "5",
            "--out",
            s(path),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(std::fs::read_to_string(&train).unwrap().starts_with("x1,x2,x3,label\n"));
    let metric =
        |o: &Output, key: &str| -> String { stdout(o).lines().find_map(|l| l.strip_prefix(key)).unwrap().to_string() };

    // predicting on the training file reproduces the training error
    comprf(&[
        "features",
        "--config",
        s(&cfg),
        "--q",
        "1024",
        "--seed",
        "4",
        "--out",
        s(&reg),
    ]);
    let o = comprf(&[
        "train",
        "--config",
        s(&cfg),
        "--registry",
        s(&reg),
        "--data",
        s(&train),
        "--lambda",
        "1e-4",
        "--out",
        s(&model),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let train_mse = metric(&o, "train_mse ");
    let o = comprf(&[
        "predict",
        "--config",
        s(&cfg),
        "--registry",
        s(&reg),
        "--model",
        s(&model),
        "--data",
        s(&train),
        "--out",
        s(&preds),
    ]);
    assert_eq!(metric(&o, "test_mse "), train_mse);

    // a large registry fits the teacher far better than the zero predictor
    let labels: Vec<f64> = std::fs::read_to_string(&test)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    let zero_mse = labels.iter().map(|y| y * y).sum::<f64>() / labels.len() as f64;
    comprf(&[
        "features",
        "--config",
        s(&cfg),
        "--q",
        "8192",
        "--seed",
        "4",
        "--out",
        s(&reg),
    ]);
    comprf(&[
        "train",
        "--config",
        s(&cfg),
        "--registry",
        s(&reg),
        "--data",
        s(&train),
        "--lambda",
        "1e-4",
        "--out",
        s(&model),
    ]);
    let o = comprf(&[
        "predict",
        "--config",
        s(&cfg),
        "--registry",
        s(&reg),
        "--model",
        s(&model),
        "--data",
        s(&test),
        "--out",
        s(&preds),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let mse: f64 = metric(&o, "test_mse ").parse().unwrap();
    assert!(mse < 0.1 * zero_mse, "test mse {mse} vs {zero_mse}");
    let p = std::fs::read_to_string(&preds).unwrap();
    assert!(p.starts_with("row,prediction\n"));
    assert_eq!(p.lines().count(), 201);

    let o = comprf(&[
        "train",
        "--config",
        s(&cfg),
        "--registry",
        s(&reg),
        "--data",
        s(&train),
        "--auto-lambda",
        "2",
        "1",
        "--out",
        s(&model),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let expected = 2f64.sqrt() / (200f64.sqrt() * 2.0);
    let lambda: f64 = stdout(&o)
        .lines()
        .find_map(|l| l.strip_prefix("lambda "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((lambda - expected).abs() < 1e-12);

    // a registry for another skeleton is rejected
    let other = write(
        &dir,
        "other.json",
        r#"{"inputs": [{"id": 1, "space": {"kind": "circle"}}, {"id": 2, "space": {"kind": "circle"}}, {"id": 3, "space": {"kind": "categorical", "n": 4}}], "internal": [{"id": 4, "activation": {"kind": "exp", "c": 1.0}, "in": [1, 2, 3]}], "output": 4}"#,
    );
    let o = comprf(&[
        "train",
        "--config",
        s(&other),
        "--registry",
        s(&reg),
        "--data",
        s(&train),
        "--out",
        s(&model),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn classification_with_logistic_loss() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "bin.json",
        r#"{"inputs": [{"id": 1, "space": {"kind": "binary"}}, {"id": 2, "space": {"kind": "binary"}}], "internal": [{"id": 3, "activation": {"kind": "exp", "c": 1}, "in": [1, 2]}], "output": 3}"#,
    );
    let mut rows = String::from("x1,x2,label\n");
    for (a, b) in [(1, 1), (1, -1), (-1, 1), (-1, -1)] {
        for _ in 0..5 {
            rows.push_str(&format!("{a},{b},{}\n", if a == b { 7 } else { 3 }));
        }
    }
    let data = write(&dir, "xor.csv", &rows);
    let reg = dir.path().join("reg.json");
    let model = dir.path().join("model.json");
    let preds = dir.path().join("preds.csv");
    comprf(&[
        "features",
        "--config",
        s(&cfg),
        "--q",
        "500",
        "--seed",
        "9",
        "--out",
        s(&reg),
    ]);
    for loss in ["logistic", "squared"] {
        let o = comprf(&[
            "train",
            "--config",
            s(&cfg),
            "--registry",
            s(&reg),
            "--data",
            s(&data),
            "--loss",
            loss,
            "--classify",
            "--lambda",
            "1e-3",
            "--out",
            s(&model),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains("train_accuracy 1.000000"), "{}", stdout(&o));
        let o = comprf(&[
            "predict",
            "--config",
            s(&cfg),
            "--registry",
            s(&reg),
            "--model",
            s(&model),
            "--data",
            s(&data),
            "--out",
            s(&preds),
        ]);
        assert!(stdout(&o).contains("test_accuracy 1.000000"));
        let p = std::fs::read_to_string(&preds).unwrap();
        assert!(p.starts_with("row,score_1,score_2,class\n"));
        assert!(p.lines().nth(1).unwrap().ends_with(",7"));
    }
}

#[test]
fn embed_and_kernel_exports() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "shallow.json", SHALLOW);
    let reg = dir.path().join("reg.json");
    comprf(&[
        "features",
        "--config",
        s(&cfg),
        "--q",
        "64",
        "--seed",
        "1",
        "--out",
        s(&reg),
    ]);
    let emb = dir.path().join("emb.csv");
    let o = comprf(&[
        "embed",
        "--config",
        s(&cfg),
        "--registry",
        s(&reg),
        "--synth",
        "local",
        "6",
        "0.5",
        "--out",
        s(&emb),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(&emb).unwrap().lines().count(), 7);
    let o = comprf(&[
        "embed",
        "--complex",
        "--config",
        s(&cfg),
        "--registry",
        s(&reg),
        "--synth",
        "iid",
        "3",
        "--out",
        s(&emb),
    ]);
    assert_eq!(o.status.code(), Some(1));

    let k = dir.path().join("k.csv");
    let o = comprf(&["kernel", "--config", s(&cfg), "--synth", "iid", "5", "--out", s(&k)]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&k).unwrap();
    let first: Vec<f64> = text
        .lines()
        .next()
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(first.len(), 5);
    assert!((first[0] - 1.0).abs() < 1e-12);
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "shallow.json", SHALLOW);
    let mut outs = Vec::new();
    for t in ["1", "3"] {
        let p = dir.path().join(format!("r{t}.json"));
        let o = comprf(&[
            "--threads",
            t,
            "features",
            "--config",
            s(&cfg),
            "--q",
            "4000",
            "--seed",
            "8",
            "--out",
            s(&p),
        ]);
        assert_eq!(o.status.code(), Some(0));
        outs.push(std::fs::read(&p).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
    let o = comprf(&["--threads", "0", "validate", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
}
