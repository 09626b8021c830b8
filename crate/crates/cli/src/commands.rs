use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use piacn::adaptive_clustering::adjusted_rand_index;
use piacn::cascade_data::{
    generate_synthetic_corpus, make_sample, parse_corpus, read_ground_truth, snapshot_series,
    split_corpus, write_corpus, write_ground_truth, CorpusSplit, PredictionSample,
};
use piacn::model::ModelState;
use piacn::richards::{fit_richards, FitConfig};
use piacn::training_eval::{evaluate_model, train_model_with, MetricsReport, SamplePrediction};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{io_err, CliError};

#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config_hash: String,
    pub config: RunConfig,
    pub best_epoch: usize,
    pub best_validation_msle: f64,
    pub epochs_run: usize,
    pub state: ModelState,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("artifact serializes");
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

fn print_json(value: &impl Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("report serializes"));
}

pub fn generate(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let corpus = generate_synthetic_corpus(&cfg.synthetic, cfg.seed)?;
    let corpus_path = cfg.corpus_path(out);
    let file = File::create(&corpus_path).map_err(io_err(&corpus_path))?;
    let mut w = BufWriter::new(file);
    write_corpus(&mut w, &corpus.cascades).map_err(io_err(&corpus_path))?;
    w.flush().map_err(io_err(&corpus_path))?;
    write_ground_truth(cfg.ground_truth_path(out), &corpus)?;
    write_json(&out.join("config.json"), cfg)?;

    let clusters = cfg.synthetic.clusters.len();
    let mut totals = vec![(0.0f64, 0usize); clusters];
    for (c, t) in corpus.cascades.iter().zip(&corpus.truth) {
        totals[t.cluster].0 += c.events.len() as f64;
        totals[t.cluster].1 += 1;
    }
    let mean_final: Vec<f64> = totals.iter().map(|(s, n)| s / (*n).max(1) as f64).collect();
    info!(
        "wrote {} cascades in {clusters} clusters to {}",
        corpus.cascades.len(),
        corpus_path.display()
    );
    print_json(&serde_json::json!({
        "cascades": corpus.cascades.len(),
        "clusters": clusters,
        "mean_final_popularity": mean_final,
    }));
    Ok(())
}

pub fn fit(csv_path: &Path, settings: &FitConfig) -> Result<(), CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(csv_path)
        .map_err(|e| CliError::Io(format!("{}: {e}", csv_path.display())))?;
    let mut points = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Config(format!("{}: {e}", csv_path.display())))?;
        if record.len() != 2 {
            return Err(CliError::Config(format!(
                "{} line {}: expected two columns, got {}",
                csv_path.display(),
                i + 1,
                record.len()
            )));
        }
        let parsed = (record[0].parse::<f64>(), record[1].parse::<f64>());
        match parsed {
            (Ok(t), Ok(v)) => points.push((t, v)),
            // a leading header row
            _ if i == 0 => continue,
            _ => {
                return Err(CliError::Config(format!(
                    "{} line {}: non-numeric value",
                    csv_path.display(),
                    i + 1
                )))
            }
        }
    }
    let report = fit_richards(&points, None, settings)?;
    print_json(&report);
    if report.converged {
        info!("fit converged in {} iterations, R² = {:.6}", report.iterations, report.r_squared);
        Ok(())
    } else {
        Err(CliError::NotConverged(format!(
            "no convergence after {} iterations; best-so-far report printed",
            report.iterations
        )))
    }
}

/// Parses the corpus, labels every cascade, attaches ground truth when a
/// sidecar is available, and splits.
fn load_split(cfg: &RunConfig, out: &Path) -> Result<CorpusSplit, CliError> {
    let cascades = parse_corpus(cfg.corpus_path(out), cfg.format)?;
    let truth_path = cfg.ground_truth_path(out);
    let truth = if cfg.ground_truth.is_some() || truth_path.exists() {
        read_ground_truth(&truth_path)?
    } else {
        BTreeMap::new()
    };
    let samples = cascades
        .iter()
        .map(|c| {
            let series = snapshot_series(c, cfg.snapshot_length(), cfg.observable_window())?;
            let sample = make_sample(c, series, cfg.prediction_horizon())?;
            Ok(match truth.get(&c.id) {
                Some(t) => sample.with_ground_truth(*t),
                None => sample,
            })
        })
        .collect::<piacn::Result<Vec<PredictionSample>>>()?;
    info!("loaded {} cascades", samples.len());
    Ok(split_corpus(samples, cfg.seed)?)
}

pub fn train(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let split = load_split(cfg, out)?;
    info!(
        "training on {} / validating on {} / testing on {}",
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );
    let log_path = out.join("train_log.jsonl");
    let mut log = BufWriter::new(File::create(&log_path).map_err(io_err(&log_path))?);
    let mut log_error = None;
    let outcome = train_model_with(&split, &cfg.train, |rec| {
        info!(
            "epoch {:>3}  loss {:.5}  val msle {:.5}  ({:.2}s)",
            rec.epoch, rec.train.total, rec.validation_msle, rec.wall_time_s
        );
        let line = serde_json::to_string(rec).expect("epoch record serializes");
        if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
            log_error.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_error {
        return Err(io_err(&log_path)(e));
    }
    let checkpoint = Checkpoint {
        config_hash: cfg.compatibility_hash(),
        config: cfg.clone(),
        best_epoch: outcome.best_epoch,
        best_validation_msle: outcome.best_validation_msle,
        epochs_run: outcome.epochs_run,
        state: outcome.state,
    };
    let path = cfg.checkpoint_path(out);
    write_json(&path, &checkpoint)?;
    write_json(&out.join("config.json"), cfg)?;
    info!(
        "best epoch {} (val msle {:.5}); checkpoint at {}",
        checkpoint.best_epoch,
        checkpoint.best_validation_msle,
        path.display()
    );
    print_json(&serde_json::json!({
        "best_epoch": checkpoint.best_epoch,
        "best_validation_msle": checkpoint.best_validation_msle,
        "epochs_run": checkpoint.epochs_run,
        "checkpoint": path,
    }));
    Ok(())
}

fn load_checkpoint(cfg: &RunConfig, out: &Path, explicit: Option<PathBuf>) -> Result<Checkpoint, CliError> {
    let path = explicit.unwrap_or_else(|| cfg.checkpoint_path(out));
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    let ck: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let expected = cfg.compatibility_hash();
    if ck.config_hash != expected {
        return Err(CliError::Incompatible(format!(
            "{} was trained under config hash {}, current config hashes to {expected}",
            path.display(),
            ck.config_hash
        )));
    }
    Ok(ck)
}

#[derive(Debug, Serialize)]
struct EvalOutput<'a> {
    config: &'a RunConfig,
    best_epoch: usize,
    /// Hard assignments against the sidecar's clusters, when available.
    adjusted_rand_index: Option<f64>,
    #[serde(flatten)]
    metrics: MetricsReport,
}

fn cluster_agreement(samples: &[PredictionSample], preds: &[SamplePrediction]) -> Option<f64> {
    let truth: Option<Vec<usize>> = samples.iter().map(|s| s.ground_truth.map(|g| g.cluster)).collect();
    let hard: Vec<usize> = preds.iter().map(|p| p.cluster).collect();
    truth.map(|t| adjusted_rand_index(&t, &hard))
}

pub fn eval(cfg: &RunConfig, out: &Path, checkpoint: Option<PathBuf>) -> Result<(), CliError> {
    let ck = load_checkpoint(cfg, out, checkpoint)?;
    let split = load_split(cfg, out)?;
    let metrics = evaluate_model(&ck.state, &split.test)?;
    let ari = cluster_agreement(&split.test, &metrics.predictions);
    info!("test msle {:.5}  mape {:.5} on {} cascades", metrics.msle, metrics.mape, metrics.samples);
    print_json(&EvalOutput {
        config: cfg,
        best_epoch: ck.best_epoch,
        adjusted_rand_index: ari,
        metrics,
    });
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

/// Curve sample times on the snapshot axis, from the first snapshot to
/// the horizon inclusive.
fn curve_times(horizon_step: f64, per_snapshot: usize) -> Vec<f64> {
    let n = (horizon_step * per_snapshot as f64 + 1e-9).floor() as usize;
    let mut ts: Vec<f64> = (per_snapshot..=n).map(|i| i as f64 / per_snapshot as f64).collect();
    if ts.last().map_or(true, |&t| t < horizon_step) {
        ts.push(horizon_step);
    }
    ts
}

pub fn export(cfg: &RunConfig, out: &Path, checkpoint: Option<PathBuf>) -> Result<(), CliError> {
    let ck = load_checkpoint(cfg, out, checkpoint)?;
    let split = load_split(cfg, out)?;
    let mut all: Vec<PredictionSample> = Vec::new();
    all.extend(split.train);
    all.extend(split.validation);
    all.extend(split.test);
    all.sort_by(|a, b| natural_key(&a.cascade_id).cmp(&natural_key(&b.cascade_id)));
    let preds = evaluate_model(&ck.state, &all)?.predictions;

    let params_path = out.join("richards_params.csv");
    let mut w = csv_writer(&params_path)?;
    w.write_record(["cascade_id", "alpha", "beta", "gamma", "delta"]).map_err(csv_err(&params_path))?;
    for p in &preds {
        let r = p.params;
        w.write_record([
            p.cascade_id.clone(),
            r.alpha.to_string(),
            r.beta.to_string(),
            r.gamma.to_string(),
            r.delta.to_string(),
        ])
        .map_err(csv_err(&params_path))?;
    }
    w.flush().map_err(io_err(&params_path))?;

    let curves_path = out.join("curves.csv");
    let mut w = csv_writer(&curves_path)?;
    w.write_record(["cascade_id", "step", "seconds", "popularity", "log2_popularity"])
        .map_err(csv_err(&curves_path))?;
    let len = cfg.snapshot_length();
    for p in &preds {
        for t in curve_times(p.horizon_step, cfg.export.points_per_snapshot) {
            let v = p.params.eval(t);
            w.write_record([
                p.cascade_id.clone(),
                t.to_string(),
                (t * len).to_string(),
                v.to_string(),
                (1.0 + v).log2().to_string(),
            ])
            .map_err(csv_err(&curves_path))?;
        }
    }
    w.flush().map_err(io_err(&curves_path))?;

    let clusters_path = out.join("clusters.csv");
    let mut w = csv_writer(&clusters_path)?;
    let c = ck.state.config.max_clusters;
    let mut header = vec!["cascade_id".to_string(), "cluster".to_string()];
    header.extend((0..c).map(|j| format!("q_{j}")));
    w.write_record(&header).map_err(csv_err(&clusters_path))?;
    for p in &preds {
        let mut row = vec![p.cascade_id.clone(), p.cluster.to_string()];
        row.extend(p.q.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(csv_err(&clusters_path))?;
    }
    w.flush().map_err(io_err(&clusters_path))?;
    write_json(&out.join("config.json"), cfg)?;

    info!("exported {} cascades to {}", preds.len(), out.display());
    print_json(&serde_json::json!({
        "cascades": preds.len(),
        "richards_params": params_path,
        "curves": curves_path,
        "clusters": clusters_path,
    }));
    Ok(())
}

/// Numeric ids sort numerically, anything else lexically after them.
fn natural_key(id: &str) -> (u8, u64, &str) {
    match id.parse::<u64>() {
        Ok(n) => (0, n, id),
        Err(_) => (1, 0, id),
    }
}
