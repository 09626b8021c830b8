use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn piacn(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_piacn"))
        .args(args)
        .current_dir(dir)
        .env("PIACN_LOG", "info")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("stdout not JSON ({e}): {}", String::from_utf8_lossy(&o.stdout)))
}

const SMALL: &str = r#"{
  "seed": 3,
  "synthetic": { "cascades_per_cluster": 12 },
  "train": {
    "max_epochs": 3,
    "early_stop_patience": 3,
    "batch_size": 16,
    "cluster_warmup_epochs": 1,
    "model": { "hidden_dim": 8, "heads": 2, "user_dim": 4, "max_adopters_per_snapshot": 6 }
  }
}"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn generate_default_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let o = piacn(&["generate", "--out", "run"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let corpus = std::fs::read_to_string(dir.path().join("run/corpus.txt")).unwrap();
    assert_eq!(corpus.lines().count(), 1000);
    let summary = stdout_json(&o);
    assert_eq!(summary["cascades"], 1000);
    assert_eq!(summary["clusters"], 5);
    let means = summary["mean_final_popularity"].as_array().unwrap();
    assert_eq!(means.len(), 5);
    assert!(means.windows(2).all(|w| w[0].as_f64() < w[1].as_f64()));
    let truth: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/ground_truth.json")).unwrap()).unwrap();
    assert_eq!(truth.as_object().unwrap().len(), 1000);
    assert!(dir.path().join("run/config.json").exists());
}

#[test]
fn generate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SMALL);
    for out in ["a", "b"] {
        let o = piacn(&["generate", "--config", &cfg, "--out", out], dir.path());
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for f in ["corpus.txt", "ground_truth.json", "config.json"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
    let o = piacn(&["generate", "--config", &cfg, "--seed", "4", "--out", "c"], dir.path());
    assert_eq!(code(&o), 0);
    assert_ne!(
        std::fs::read(dir.path().join("a/corpus.txt")).unwrap(),
        std::fs::read(dir.path().join("c/corpus.txt")).unwrap()
    );
}

#[test]
fn unknown_config_key_is_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"clusterz": 5}"#);
    let o = piacn(&["generate", "--config", &cfg], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("clusterz"), "{}", stderr(&o));

    let cfg = write(dir.path(), "d.json", r#"{"train": {"model": {"hiden_dim": 5}}}"#);
    let o = piacn(&["train", "--config", &cfg], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("train.model"), "{}", stderr(&o));
}

#[test]
fn missing_config_file_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = piacn(&["generate", "--config", "nope.json"], dir.path());
    assert_eq!(code(&o), 3);
}

#[test]
fn invalid_values_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"train": {"batch_size": 0}}"#);
    assert_eq!(code(&piacn(&["train", "--config", &cfg], dir.path())), 2);
    assert_eq!(code(&piacn(&["generate", "--threads", "0"], dir.path())), 2);
}

fn richards(alpha: f64, beta: f64, gamma: f64, delta: f64, x: f64) -> f64 {
    let s = (beta - gamma * x).exp().ln_1p();
    alpha * (-s / delta).exp()
}

#[test]
fn fit_recovers_a_known_curve() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("time,value\n");
    for i in 0..20 {
        let t = i as f64 * 0.75;
        text += &format!("{t},{}\n", richards(250.0, 3.0, 0.8, 1.2, t));
    }
    let csv = write(dir.path(), "curve.csv", &text);
    let o = piacn(&["fit", &csv], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = stdout_json(&o);
    assert!(report["r_squared"].as_f64().unwrap() >= 0.999);
    assert!((report["params"]["alpha"].as_f64().unwrap() - 250.0).abs() < 2.5);
    assert_eq!(report["converged"], true);
}

#[test]
fn fit_rejects_degenerate_input() {
    let dir = tempfile::tempdir().unwrap();
    let flat = write(dir.path(), "flat.csv", "0,5\n1,5\n2,5\n3,5\n");
    let o = piacn(&["fit", &flat], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("no curvature"), "{}", stderr(&o));

    let short = write(dir.path(), "short.csv", "0,1\n1,2\n2,4\n");
    assert_eq!(code(&piacn(&["fit", &short], dir.path())), 2);

    let bad = write(dir.path(), "bad.csv", "0,1\n1,x\n2,4\n3,5\n");
    assert_eq!(code(&piacn(&["fit", &bad], dir.path())), 2);

    assert_eq!(code(&piacn(&["fit", "absent.csv"], dir.path())), 3);
}

#[test]
fn fit_reports_non_convergence() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::new();
    for i in 0..20 {
        let t = i as f64 * 0.75;
        text += &format!("{t},{}\n", richards(250.0, 3.0, 0.8, 1.2, t));
    }
    let csv = write(dir.path(), "curve.csv", &text);
    let cfg = write(dir.path(), "c.json", r#"{"fit": {"max_iterations": 1}}"#);
    let o = piacn(&["fit", &csv, "--config", &cfg], dir.path());
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    let report = stdout_json(&o);
    assert_eq!(report["converged"], false);
    assert!(report["params"]["alpha"].as_f64().unwrap() > 0.0);
}

#[test]
fn generate_train_eval_export() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SMALL);
    let run = |args: &[&str]| {
        let mut full = args.to_vec();
        full.extend(["--config", &cfg, "--out", "run"]);
        piacn(&full, dir.path())
    };

    let o = run(&["generate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    assert_eq!(code(&run(&["eval"])), 3, "missing checkpoint");

    let o = run(&["train"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = stdout_json(&o);
    assert_eq!(summary["epochs_run"], 3);
    let log = std::fs::read_to_string(dir.path().join("run/train_log.jsonl")).unwrap();
    let records: Vec<Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 3);
    for (i, r) in records.iter().enumerate() {
        assert_eq!(r["epoch"], i + 1);
        assert!(r["train"]["total"].as_f64().unwrap().is_finite());
        assert!(r["wall_time_s"].as_f64().unwrap() >= 0.0);
    }
    let ck: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/checkpoint.json")).unwrap()).unwrap();
    assert_eq!(ck["config"]["train"]["model"]["hidden_dim"], 8);
    assert_eq!(ck["config_hash"].as_str().unwrap().len(), 64);

    let first = std::fs::read(dir.path().join("run/checkpoint.json")).unwrap();
    assert_eq!(code(&run(&["train"])), 0);
    assert_eq!(first, std::fs::read(dir.path().join("run/checkpoint.json")).unwrap(), "retraining differs");

    let o = run(&["eval"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = stdout_json(&o);
    let n = report["samples"].as_u64().unwrap();
    // 60 cascades: 9 validation and 9 test
    assert_eq!(n, 9);
    assert!(report["msle"].as_f64().unwrap().is_finite());
    assert!(report["adjusted_rand_index"].is_number());
    assert_eq!(report["config"]["seed"], 3);

    let o = run(&["export"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    check_exports(&dir.path().join("run"), &report);

    // a different architecture is rejected
    let retrain = write(
        dir.path(),
        "other.json",
        &SMALL.replace("\"hidden_dim\": 8", "\"hidden_dim\": 12"),
    );
    let o = piacn(&["eval", "--config", &retrain, "--out", "run"], dir.path());
    assert_eq!(code(&o), 5, "{}", stderr(&o));
    let o = piacn(&["export", "--config", &retrain, "--out", "run"], dir.path());
    assert_eq!(code(&o), 5);

    // training hyperparameters are not part of the compatibility key
    let tweaked = write(dir.path(), "lr.json", &SMALL.replace("\"batch_size\": 16", "\"batch_size\": 8"));
    assert_eq!(code(&piacn(&["eval", "--config", &tweaked, "--out", "run"], dir.path())), 0);
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn check_exports(run: &Path, eval: &Value) {
    let (header, params) = read_csv(&run.join("richards_params.csv"));
    assert_eq!(header, ["cascade_id", "alpha", "beta", "gamma", "delta"]);
    assert_eq!(params.len(), 60);
    for row in &params {
        for v in &row[1..] {
            assert!(v.parse::<f64>().unwrap() > 0.0);
        }
    }

    let (header, clusters) = read_csv(&run.join("clusters.csv"));
    assert_eq!(header, ["cascade_id", "cluster", "q_0", "q_1", "q_2", "q_3", "q_4"]);
    assert_eq!(clusters.len(), 60);
    for row in &clusters {
        let q: Vec<f64> = row[2..].iter().map(|v| v.parse().unwrap()).collect();
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let hard: usize = row[1].parse().unwrap();
        assert!(q.iter().all(|&v| v <= q[hard]));
    }

    let (header, curves) = read_csv(&run.join("curves.csv"));
    assert_eq!(header, ["cascade_id", "step", "seconds", "popularity", "log2_popularity"]);
    // 24 snapshot times per cascade
    assert_eq!(curves.len(), 60 * 24);
    let mut last = std::collections::BTreeMap::new();
    for row in &curves {
        last.insert(row[0].clone(), (row[1].parse::<f64>().unwrap(), row[3].parse::<f64>().unwrap()));
    }
    for p in eval["predictions"].as_array().unwrap() {
        let id = p["cascade_id"].as_str().unwrap();
        let (step, at_horizon) = last[id];
        assert_eq!(step, 24.0);
        let observed = p["observed_popularity"].as_f64().unwrap();
        let expected = (1.0 + (at_horizon - observed).max(0.0)).log2();
        let y_phy = p["y_phy"].as_f64().unwrap();
        assert!((expected - y_phy).abs() < 1e-9, "{id}: {expected} vs {y_phy}");
    }
}
