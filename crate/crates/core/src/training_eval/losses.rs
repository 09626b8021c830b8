use serde::{Deserialize, Serialize};

use crate::cascade_data::log2_1p;
use crate::error::shape_check;
use crate::{Error, Result};

/// Trade-off weights of the prediction, physical and clustering losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_pred: f64,
    pub lambda_phy: f64,
    pub lambda_clu: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_pred: 1.0,
            lambda_phy: 1.0,
            lambda_clu: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_pred, self.lambda_phy, self.lambda_clu];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Argument(format!("loss weights must be finite and >= 0, got {all:?}")));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(Error::Argument("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

/// Unweighted loss components.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub l_pred: f64,
    pub l_rc: f64,
    pub l_pc: f64,
    pub l_clu: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_pred: f64,
    pub l_rc: f64,
    pub l_pc: f64,
    pub l_phy: f64,
    pub l_clu: f64,
    pub total: f64,
}

/// Mean absolute error.
pub fn prediction_loss(labels: &[f64], preds: &[f64]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Argument("prediction loss of an empty batch".into()));
    }
    shape_check!(labels.len() == preds.len(), "{} labels but {} predictions", labels.len(), preds.len());
    Ok(labels.iter().zip(preds).map(|(y, p)| (y - p).abs()).sum::<f64>() / labels.len() as f64)
}

/// Reconstruction and prediction-consistency terms, `(l_rc, l_pc)`.
pub fn physical_loss(
    snapshot_labels: &[Vec<f64>],
    reconstructions: &[Vec<f64>],
    preds: &[f64],
    physical: &[f64],
) -> Result<(f64, f64)> {
    let n = preds.len();
    shape_check!(
        n > 0 && snapshot_labels.len() == n && reconstructions.len() == n && physical.len() == n,
        "physical loss inputs disagree on batch size"
    );
    let mut rc = 0.0;
    for (y, r) in snapshot_labels.iter().zip(reconstructions) {
        shape_check!(!y.is_empty() && y.len() == r.len(), "reconstruction has {} steps, labels {}", r.len(), y.len());
        rc += y.iter().zip(r).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64;
    }
    let pc = preds.iter().zip(physical).map(|(a, b)| (a - b).abs()).sum::<f64>();
    Ok((rc / n as f64, pc / n as f64))
}

pub fn total_loss(parts: LossParts, w: &LossWeights) -> Result<LossBreakdown> {
    for (term, v) in [("prediction", parts.l_pred), ("reconstruction", parts.l_rc), ("consistency", parts.l_pc), ("clustering", parts.l_clu)] {
        if !v.is_finite() {
            return Err(Error::Numeric { term });
        }
    }
    let l_phy = parts.l_rc + parts.l_pc;
    let total = w.lambda_pred * parts.l_pred + w.lambda_phy * l_phy + w.lambda_clu * parts.l_clu;
    if !total.is_finite() {
        return Err(Error::Numeric { term: "total" });
    }
    Ok(LossBreakdown {
        l_pred: parts.l_pred,
        l_rc: parts.l_rc,
        l_pc: parts.l_pc,
        l_phy,
        l_clu: parts.l_clu,
        total,
    })
}

fn log_pairs<'a>(truth: &'a [f64], predicted: &'a [f64]) -> Result<impl Iterator<Item = (f64, f64)> + 'a> {
    if truth.is_empty() {
        return Err(Error::Argument("metric over no samples".into()));
    }
    shape_check!(truth.len() == predicted.len(), "{} targets but {} predictions", truth.len(), predicted.len());
    if let Some(x) = truth.iter().chain(predicted).find(|x| !(**x >= 0.0)) {
        return Err(Error::Argument(format!("counts must be non-negative, got {x}")));
    }
    Ok(truth.iter().zip(predicted).map(|(t, p)| (log2_1p(*t), log2_1p(*p))))
}

/// Mean squared error of `log2(1 + ·)` counts.
pub fn msle(truth: &[f64], predicted: &[f64]) -> Result<f64> {
    let n = truth.len() as f64;
    Ok(log_pairs(truth, predicted)?.map(|(t, p)| (p - t).powi(2)).sum::<f64>() / n)
}

/// Mean absolute relative error on the log scale, denominator floored at 1.
pub fn mape(truth: &[f64], predicted: &[f64]) -> Result<f64> {
    let n = truth.len() as f64;
    Ok(log_pairs(truth, predicted)?.map(|(t, p)| (p - t).abs() / t.max(1.0)).sum::<f64>() / n)
}
