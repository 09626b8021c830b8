use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eval::predict_all;
use super::losses::{msle, mape, total_loss, LossBreakdown, LossParts, LossWeights};
use super::optim::{Adam, EarlyStopping, Verdict};
use crate::adaptive_clustering::{clustering_loss, kmeans_best_of, target_distribution};
use crate::cascade_data::{CorpusSplit, PredictionSample};
use crate::model::{Layout, ModelConfig, ModelState, Network, NetworkGrads, OutputScaling, Prepared, Upstream, Vocab};
use crate::{Error, Result};

/// Samples per gradient buffer. Fixed so the reduction order, and hence
/// every floating-point result, does not depend on the thread count.
const CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub model: ModelConfig,
    /// Lloyd iterations after k-means++ seeding of the centers.
    pub kmeans_iterations: usize,
    /// Independent k-means++ runs; the lowest-inertia one seeds the centers.
    pub kmeans_restarts: usize,
    /// Epochs trained with the clustering network bypassed before the
    /// centers are seeded from `Z_h`.
    pub cluster_warmup_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            learning_rate: 1e-4,
            max_epochs: 100,
            early_stop_patience: 30,
            seed: 0,
            loss_weights: LossWeights::default(),
            model: ModelConfig::default(),
            kmeans_iterations: 50,
            kmeans_restarts: 10,
            cluster_warmup_epochs: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("early_stop_patience", self.early_stop_patience),
            ("kmeans_restarts", self.kmeans_restarts),
        ] {
            if v == 0 {
                return Err(Error::Argument(format!("{name} must be positive")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Argument(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.early_stop_patience > self.max_epochs {
            return Err(Error::Argument(format!(
                "early_stop_patience {} exceeds max_epochs {}",
                self.early_stop_patience, self.max_epochs
            )));
        }
        self.loss_weights.validate()?;
        self.model.validate()
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        match ablation {
            Ablation::Full => {}
            Ablation::WithoutClustering => {
                self.model.clustering = false;
                self.loss_weights.lambda_clu = 0.0;
            }
            Ablation::WithoutPhysics => self.loss_weights.lambda_phy = 0.0,
        }
        self
    }
}

/// Model variants of the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    /// No cluster centers are injected and the clustering loss is off.
    WithoutClustering,
    /// The physical loss is off.
    WithoutPhysics,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossBreakdown,
    pub validation_msle: f64,
    pub validation_mape: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch.
    pub state: ModelState,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_validation_msle: f64,
    pub epochs_run: usize,
}

#[derive(Default)]
struct Accumulated {
    grad: Vec<f64>,
    parts: LossParts,
}

/// Per-term coefficients for gradient computation. The physical weight
/// covers both `l_rc` and `l_pc`; keeping them apart lets each term be
/// differentiated on its own.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermWeights {
    pub pred: f64,
    pub rc: f64,
    pub pc: f64,
    pub clu: f64,
}

impl From<&LossWeights> for TermWeights {
    fn from(w: &LossWeights) -> Self {
        Self {
            pred: w.lambda_pred,
            rc: w.lambda_phy,
            pc: w.lambda_phy,
            clu: w.lambda_clu,
        }
    }
}

impl TermWeights {
    pub fn combine(&self, parts: &LossParts) -> f64 {
        self.pred * parts.l_pred + self.rc * parts.l_rc + self.pc * parts.l_pc + self.clu * parts.l_clu
    }
}

/// Summed (not averaged) loss parts plus the gradient of the weighted
/// terms times `scale` over `preps`. `targets` holds each sample's frozen
/// target row when the clustering loss is active.
fn chunk_pass(
    net: &Network<'_>,
    layout: &Layout,
    preps: &[&Prepared],
    targets: &[Option<&[f64]>],
    weights: &TermWeights,
    scale: f64,
    with_grad: bool,
) -> Result<Accumulated> {
    let mut acc = Accumulated {
        grad: if with_grad { vec![0.0; layout.total] } else { Vec::new() },
        parts: LossParts::default(),
    };
    for (prep, target) in preps.iter().zip(targets) {
        let tr = net.forward(prep)?;
        let t = prep.times.len() as f64;
        let e_pred = tr.y_pred - prep.label;
        let e_pc = tr.y_pred - tr.y_phy;
        let e_rc: Vec<f64> = tr.reconstruction.iter().zip(&prep.snapshot_labels).map(|(r, y)| r - y).collect();
        acc.parts.l_pred += e_pred.abs();
        acc.parts.l_pc += e_pc.abs();
        acc.parts.l_rc += e_rc.iter().map(|e| e.abs()).sum::<f64>() / t;
        if let Some(p) = target {
            acc.parts.l_clu += clustering_loss(p, &tr.q);
        }
        if with_grad {
            let pc = weights.pc * scale;
            let rc = weights.rc * scale;
            let up = Upstream {
                y_pred: weights.pred * scale * sign(e_pred) + pc * sign(e_pc),
                y_phy: -pc * sign(e_pc),
                reconstruction: e_rc.iter().map(|e| rc * sign(*e) / t).collect(),
                clustering: target.map(|p| (p, weights.clu * scale)),
            };
            let mut grads = NetworkGrads::new(net.config, layout, &mut acc.grad);
            net.backward(prep, &tr, &up, &mut grads);
        }
    }
    Ok(acc)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Batch-mean loss breakdown and, when requested, its gradient with
/// respect to every parameter.
pub fn loss_and_gradient(
    state: &ModelState,
    preps: &[&Prepared],
    targets: &[Option<&[f64]>],
    weights: &LossWeights,
    with_grad: bool,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let (parts, grad) = term_gradient(state, preps, targets, &TermWeights::from(weights), with_grad)?;
    Ok((total_loss(parts, weights)?, grad))
}

/// Batch-mean loss parts and the gradient of `weights.combine(parts)`.
/// Work is spread over fixed-size chunks and reduced in order.
pub fn term_gradient(
    state: &ModelState,
    preps: &[&Prepared],
    targets: &[Option<&[f64]>],
    weights: &TermWeights,
    with_grad: bool,
) -> Result<(LossParts, Vec<f64>)> {
    if preps.is_empty() {
        return Err(Error::Argument("loss over an empty batch".into()));
    }
    assert_eq!(preps.len(), targets.len(), "one target slot per sample");
    let layout = state.layout();
    let net = state.network(&layout)?;
    let scale = 1.0 / preps.len() as f64;
    let chunks: Vec<Accumulated> = preps
        .par_chunks(CHUNK)
        .zip(targets.par_chunks(CHUNK))
        .map(|(p, t)| chunk_pass(&net, &layout, p, t, weights, scale, with_grad))
        .collect::<Result<_>>()?;
    let mut grad = if with_grad { vec![0.0; layout.total] } else { Vec::new() };
    let mut parts = LossParts::default();
    for c in chunks {
        parts.l_pred += c.parts.l_pred;
        parts.l_rc += c.parts.l_rc;
        parts.l_pc += c.parts.l_pc;
        parts.l_clu += c.parts.l_clu;
        if with_grad {
            crate::linalg::axpy(1.0, &c.grad, &mut grad);
        }
    }
    parts.l_pred *= scale;
    parts.l_rc *= scale;
    parts.l_pc *= scale;
    parts.l_clu *= scale;
    Ok((parts, grad))
}

/// Soft assignments `q` (`N × C`, row-major) of every sample.
pub fn assignments(state: &ModelState, preps: &[Prepared]) -> Result<Vec<f64>> {
    let layout = state.layout();
    let net = state.network(&layout)?;
    let rows: Vec<Vec<f64>> = preps.par_iter().map(|p| net.forward(p).map(|t| t.q)).collect::<Result<_>>()?;
    Ok(rows.concat())
}

fn hidden_representations(state: &ModelState, preps: &[Prepared]) -> Result<Vec<f64>> {
    let layout = state.layout();
    let net = state.network(&layout)?;
    let rows: Vec<Vec<f64>> = preps
        .par_iter()
        .map(|p| net.encode(p).map(|(_, t)| t.output))
        .collect::<Result<_>>()?;
    Ok(rows.concat())
}

pub fn train_model(split: &CorpusSplit, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_model_with(split, cfg, |_| {})
}

/// Trains and calls `on_epoch` after every epoch, e.g. to stream the log.
pub fn train_model_with(split: &CorpusSplit, cfg: &TrainConfig, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainOutcome> {
    cfg.validate()?;
    if split.train.is_empty() || split.validation.is_empty() {
        return Err(Error::Argument("training needs non-empty train and validation sets".into()));
    }
    let steps = split.train.iter().map(|s| s.series.len()).max().unwrap_or(0);
    let vocab = Vocab::from_samples(&split.train);
    let scaling = OutputScaling::from_training(&split.train)?;
    let mut state = ModelState::init(cfg.model.clone(), vocab, scaling, steps, cfg.seed)?;
    let train: Vec<Prepared> = split.train.iter().map(|s| state.prepare(s)).collect();
    let validation: Vec<&PredictionSample> = split.validation.iter().collect();
    let layout = state.layout();
    let clusters = cfg.model.max_clusters;
    let h = cfg.model.hidden_dim;
    let use_kl = cfg.model.clustering || cfg.loss_weights.lambda_clu > 0.0;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let warmup = if use_kl { cfg.cluster_warmup_epochs } else { 0 };
    let full_model = state.config.clone();
    let full_weights = cfg.loss_weights;
    let mut weights = cfg.loss_weights;
    if warmup > 0 {
        state.config.clustering = false;
        weights.lambda_clu = 0.0;
    }
    let seed_centers = |state: &mut ModelState, rng: &mut ChaCha8Rng| -> Result<()> {
        let z = hidden_representations(state, &train)?;
        let centers = kmeans_best_of(&z, h, clusters, cfg.kmeans_iterations, cfg.kmeans_restarts, rng);
        state.params[layout.range("centers")].copy_from_slice(&centers);
        Ok(())
    };
    if use_kl && warmup == 0 {
        seed_centers(&mut state, &mut rng)?;
    }

    let mut adam = Adam::new(layout.total, cfg.learning_rate);
    let mut stopper = EarlyStopping::new(cfg.early_stop_patience);
    let mut best = state.params.clone();
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let started = Instant::now();

    for epoch in 1..=cfg.max_epochs {
        if warmup > 0 && epoch == warmup + 1 {
            state.config = full_model.clone();
            weights = full_weights;
            seed_centers(&mut state, &mut rng)?;
        }
        let targets = if weights.lambda_clu > 0.0 {
            target_distribution(&assignments(&state, &train)?, clusters)
        } else {
            Vec::new()
        };
        order.shuffle(&mut rng);
        let mut sums = LossParts::default();
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let preps: Vec<&Prepared> = batch.iter().map(|&i| &train[i]).collect();
            let rows: Vec<Option<&[f64]>> = batch
                .iter()
                .map(|&i| (!targets.is_empty()).then(|| &targets[i * clusters..(i + 1) * clusters]))
                .collect();
            let (loss, grad) = loss_and_gradient(&state, &preps, &rows, &weights, true).map_err(|e| {
                Error::Training {
                    epoch,
                    batch: b,
                    msg: e.to_string(),
                }
            })?;
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training {
                    epoch,
                    batch: b,
                    msg: "non-finite gradient".into(),
                });
            }
            adam.step(&mut state.params, &grad);
            let n = batch.len() as f64;
            sums.l_pred += loss.l_pred * n;
            sums.l_rc += loss.l_rc * n;
            sums.l_pc += loss.l_pc * n;
            sums.l_clu += loss.l_clu * n;
        }
        let n = train.len() as f64;
        let mean = LossParts {
            l_pred: sums.l_pred / n,
            l_rc: sums.l_rc / n,
            l_pc: sums.l_pc / n,
            l_clu: sums.l_clu / n,
        };
        let train_loss = total_loss(mean, &weights).map_err(|e| Error::Training {
            epoch,
            batch: 0,
            msg: e.to_string(),
        })?;

        let preds = predict_all(&state, &validation)?;
        let truth: Vec<f64> = preds.iter().map(|p| p.true_increment).collect();
        let guess: Vec<f64> = preds.iter().map(|p| p.predicted_increment).collect();
        let validation_msle = msle(&truth, &guess)?;
        let record = EpochRecord {
            epoch,
            train: train_loss,
            validation_msle,
            validation_mape: mape(&truth, &guess)?,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        log::debug!(
            "epoch {epoch}: loss {:.4} (pred {:.4} phy {:.4} clu {:.4}) val msle {:.4}",
            train_loss.total,
            train_loss.l_pred,
            train_loss.l_phy,
            train_loss.l_clu,
            validation_msle
        );
        on_epoch(&record);
        log.push(record);
        match stopper.observe(epoch, validation_msle) {
            Verdict::Improved => best.copy_from_slice(&state.params),
            Verdict::Stale => {}
            Verdict::Stop => break,
        }
    }

    let epochs_run = log.len();
    // centers are still zero in any warm-up state, so this is a no-op there
    state.config = full_model;
    state.params = best;
    Ok(TrainOutcome {
        state,
        log,
        best_epoch: stopper.best_epoch,
        best_validation_msle: stopper.best,
        epochs_run,
    })
}
