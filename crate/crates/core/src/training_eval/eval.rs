use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::losses::{mape, msle};
use super::train::{train_model, TrainConfig};
use crate::cascade_data::{CorpusSplit, PredictionSample};
use crate::model::ModelState;
use crate::richards::RichardsParams;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePrediction {
    pub cascade_id: String,
    pub label: f64,
    pub y_pred: f64,
    pub y_phy: f64,
    pub true_increment: f64,
    /// `max(2^Y_pred − 1, 0)`.
    pub predicted_increment: f64,
    pub observed_popularity: f64,
    pub final_popularity: f64,
    pub horizon_step: f64,
    pub cluster: usize,
    pub q: Vec<f64>,
    pub params: RichardsParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub msle: f64,
    pub mape: f64,
    pub samples: usize,
    pub predictions: Vec<SamplePrediction>,
}

pub(super) fn predict_all(state: &ModelState, samples: &[&PredictionSample]) -> Result<Vec<SamplePrediction>> {
    let layout = state.layout();
    let net = state.network(&layout)?;
    samples
        .par_iter()
        .map(|s| {
            let prep = state.prepare(s);
            let tr = net.forward(&prep)?;
            Ok(SamplePrediction {
                cascade_id: s.cascade_id.clone(),
                label: s.label,
                y_pred: tr.y_pred,
                y_phy: tr.y_phy,
                true_increment: s.increment() as f64,
                predicted_increment: (tr.y_pred.exp2() - 1.0).max(0.0),
                observed_popularity: prep.observed,
                final_popularity: prep.final_popularity,
                horizon_step: prep.horizon_step,
                cluster: tr.cluster(),
                q: tr.q,
                params: tr.physics.params,
            })
        })
        .collect()
}

/// Metrics of the neural head's predictions converted back to counts.
pub fn evaluate_model(state: &ModelState, samples: &[PredictionSample]) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::Argument("evaluation needs at least one sample".into()));
    }
    let refs: Vec<&PredictionSample> = samples.iter().collect();
    let predictions = predict_all(state, &refs)?;
    let truth: Vec<f64> = predictions.iter().map(|p| p.true_increment).collect();
    let guess: Vec<f64> = predictions.iter().map(|p| p.predicted_increment).collect();
    Ok(MetricsReport {
        msle: msle(&truth, &guess)?,
        mape: mape(&truth, &guess)?,
        samples: samples.len(),
        predictions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub msle: f64,
    pub mape: f64,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub runs: Vec<SeedMetrics>,
    pub mean_msle: f64,
    pub mean_mape: f64,
}

/// Trains once per seed (weight initialization and batch order vary, the
/// split does not) and reports test metrics per run and their mean.
pub fn evaluate_seeds(split: &CorpusSplit, cfg: &TrainConfig, seeds: &[u64]) -> Result<SeedReport> {
    if seeds.is_empty() {
        return Err(Error::Argument("need at least one seed".into()));
    }
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let outcome = train_model(split, &TrainConfig { seed, ..cfg.clone() })?;
        let report = evaluate_model(&outcome.state, &split.test)?;
        runs.push(SeedMetrics {
            seed,
            msle: report.msle,
            mape: report.mape,
            best_epoch: outcome.best_epoch,
        });
    }
    let n = runs.len() as f64;
    Ok(SeedReport {
        mean_msle: runs.iter().map(|r| r.msle).sum::<f64>() / n,
        mean_mape: runs.iter().map(|r| r.mape).sum::<f64>() / n,
        runs,
    })
}
