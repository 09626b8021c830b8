use std::path::{Path, PathBuf};

use piacn::cascade_data::{DatasetFormat, SyntheticSpec};
use piacn::model::ModelConfig;
use piacn::richards::FitConfig;
use piacn::training_eval::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Everything a run reads. Every key is optional; unknown keys are errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Corpus file; defaults to `<out>/corpus.txt`.
    pub corpus: Option<PathBuf>,
    pub format: DatasetFormat,
    /// Ground-truth sidecar; defaults to `<out>/ground_truth.json` when it exists.
    pub ground_truth: Option<PathBuf>,
    /// Checkpoint file; defaults to `<out>/checkpoint.json`.
    pub checkpoint: Option<PathBuf>,
    pub synthetic: SyntheticSpec,
    /// Snapshot length in seconds; defaults to the synthetic time unit.
    pub snapshot_length: Option<f64>,
    /// Observable window in seconds; defaults to the synthetic window.
    pub observable_window: Option<f64>,
    /// Prediction horizon in seconds; defaults to the synthetic horizon.
    pub prediction_horizon: Option<f64>,
    pub train: TrainConfig,
    /// Levenberg–Marquardt settings for `fit`.
    pub fit: FitConfig,
    pub export: ExportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            corpus: None,
            format: DatasetFormat::default(),
            ground_truth: None,
            checkpoint: None,
            synthetic: SyntheticSpec::default(),
            snapshot_length: None,
            observable_window: None,
            prediction_horizon: None,
            train: TrainConfig::default(),
            fit: FitConfig::default(),
            export: ExportConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportConfig {
    /// Curve points per snapshot between `t = 0` and the horizon.
    pub points_per_snapshot: usize,
}

impl Default for ExportConfig {
    fn default() -> Self {
        Self { points_per_snapshot: 1 }
    }
}

/// The part of the configuration a checkpoint must agree with.
#[derive(Debug, Serialize)]
struct Compatibility<'a> {
    model: &'a ModelConfig,
    snapshot_length: f64,
    observable_window: f64,
    prediction_horizon: f64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Strict parse; the message names the offending field path.
    pub fn parse(text: &str) -> Result<Self, String> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            if path == "." {
                e.inner().to_string()
            } else {
                format!("{path}: {}", e.inner())
            }
        })
    }

    pub fn snapshot_length(&self) -> f64 {
        self.snapshot_length.unwrap_or(self.synthetic.time_unit)
    }

    pub fn observable_window(&self) -> f64 {
        self.observable_window.unwrap_or(self.synthetic.observable_window)
    }

    pub fn prediction_horizon(&self) -> f64 {
        self.prediction_horizon.unwrap_or(self.synthetic.horizon)
    }

    pub fn corpus_path(&self, out: &Path) -> PathBuf {
        self.corpus.clone().unwrap_or_else(|| out.join("corpus.txt"))
    }

    pub fn ground_truth_path(&self, out: &Path) -> PathBuf {
        self.ground_truth.clone().unwrap_or_else(|| out.join("ground_truth.json"))
    }

    pub fn checkpoint_path(&self, out: &Path) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| out.join("checkpoint.json"))
    }

    pub fn compatibility_hash(&self) -> String {
        let key = Compatibility {
            model: &self.train.model,
            snapshot_length: self.snapshot_length(),
            observable_window: self.observable_window(),
            prediction_horizon: self.prediction_horizon(),
        };
        let bytes = serde_json::to_vec(&key).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.synthetic.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.export.points_per_snapshot == 0 {
            return Err(CliError::Config("export.points_per_snapshot must be positive".into()));
        }
        Ok(())
    }
}
