//! Cascade corpora: parsing, snapshotting, labels, splits and synthetic
//! generation with known growth-law ground truth.

mod format;
mod snapshot;
mod split;
mod synthetic;

use serde::{Deserialize, Serialize};

use crate::richards::RichardsParams;

pub use format::{parse_corpus, parse_corpus_str, write_corpus, DatasetFormat};
pub use snapshot::{make_sample, snapshot_series};
pub use split::{split_corpus, CorpusSplit, SPLIT_RATIOS};
pub use synthetic::{
    generate_synthetic_corpus, read_ground_truth, write_ground_truth, ClusterSpec, GroundTruth,
    ParamRange, SyntheticCorpus, SyntheticSpec,
};

/// One adoption of the root message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub user: String,
    pub parent: String,
    /// Seconds since the root was published.
    pub offset: f64,
}

/// A root message and its timestamped adoptions, sorted by offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cascade {
    pub id: String,
    pub root_user: String,
    pub publish_time: i64,
    pub events: Vec<Event>,
}

impl Cascade {
    /// Number of events strictly before `t` seconds.
    pub fn popularity_before(&self, t: f64) -> u64 {
        self.events.partition_point(|e| e.offset < t) as u64
    }
}

/// One adopter inside a snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adoption {
    pub user: String,
    /// Gap to the previous adoption anywhere in the cascade (0 for the first).
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub adopters: Vec<Adoption>,
    /// Cumulative popularity at the end of this snapshot.
    pub cumulative: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotSeries {
    pub snapshot_length: f64,
    pub observable_window: f64,
    pub snapshots: Vec<Snapshot>,
}

impl SnapshotSeries {
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn cumulative(&self) -> impl Iterator<Item = u64> + '_ {
        self.snapshots.iter().map(|s| s.cumulative)
    }
}

/// A labelled training example built from one cascade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSample {
    pub cascade_id: String,
    pub series: SnapshotSeries,
    pub prediction_horizon: f64,
    /// Popularity at the end of the observable window.
    pub observed_popularity: u64,
    /// Popularity at the prediction horizon.
    pub final_popularity: u64,
    /// `log2(1 + final - observed)`.
    pub label: f64,
    pub ground_truth: Option<GroundTruth>,
}

impl PredictionSample {
    pub fn increment(&self) -> u64 {
        self.final_popularity - self.observed_popularity
    }

    pub fn with_ground_truth(mut self, truth: GroundTruth) -> Self {
        self.ground_truth = Some(truth);
        self
    }

    /// Observable window length in snapshots.
    pub fn observed_steps(&self) -> usize {
        self.series.len()
    }

    /// Prediction horizon on the snapshot-index time axis.
    pub fn horizon_steps(&self) -> f64 {
        self.prediction_horizon / self.series.snapshot_length
    }

    pub fn ground_truth_params(&self) -> Option<RichardsParams> {
        self.ground_truth.as_ref().map(|g| g.params)
    }
}

/// `log2(1 + x)`, the transform shared by labels, inputs and metrics.
#[inline]
pub fn log2_1p(x: f64) -> f64 {
    (1.0 + x).log2()
}
