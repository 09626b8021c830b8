//! Synthetic cascades whose cumulative popularity follows a Richards curve.
//!
//! Each cascade draws its growth parameters from its cluster's ranges. Time
//! is measured in `time_unit` seconds on the Richards axis, so the stored
//! ground-truth parameters live on the snapshot-index axis whenever
//! `time_unit` equals the snapshot length.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Cascade, Event};
use crate::richards::RichardsParams;
use crate::{Error, Result};

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRange(pub f64, pub f64);

impl ParamRange {
    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.0 == self.1 {
            self.0
        } else {
            rng.gen_range(self.0..=self.1)
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(self.0.is_finite() && self.1.is_finite() && self.0 > 0.0 && self.0 <= self.1) {
            return Err(Error::Argument(format!(
                "{what} range [{}, {}] is empty or not positive",
                self.0, self.1
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub alpha: ParamRange,
    pub beta: ParamRange,
    pub gamma: ParamRange,
    pub delta: ParamRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub clusters: Vec<ClusterSpec>,
    pub cascades_per_cluster: usize,
    pub user_pool: usize,
    /// Seconds per unit of the Richards time axis.
    pub time_unit: f64,
    pub observable_window: f64,
    /// Events are generated over `[0, horizon)` seconds.
    pub horizon: f64,
    /// Relative half-width of the uniform jitter on the final event count.
    pub noise: f64,
    pub publish_start: i64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let cluster = |a: f64| ClusterSpec {
            alpha: ParamRange(a, 1.3 * a),
            beta: ParamRange(5.0, 6.0),
            gamma: ParamRange(0.6, 0.8),
            delta: ParamRange(0.8, 1.2),
        };
        Self {
            clusters: [12.0, 36.0, 108.0, 324.0, 972.0].map(cluster).to_vec(),
            cascades_per_cluster: 200,
            user_pool: 5000,
            time_unit: 600.0,
            observable_window: 3600.0,
            horizon: 14_400.0,
            noise: 0.05,
            publish_start: 1_464_739_200,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.clusters.is_empty() {
            return Err(Error::Argument("at least one cluster is required".into()));
        }
        for (i, c) in self.clusters.iter().enumerate() {
            c.alpha.validate(&format!("cluster {i} alpha"))?;
            c.beta.validate(&format!("cluster {i} beta"))?;
            c.gamma.validate(&format!("cluster {i} gamma"))?;
            c.delta.validate(&format!("cluster {i} delta"))?;
        }
        if self.cascades_per_cluster == 0 || self.user_pool == 0 {
            return Err(Error::Argument(
                "cascades_per_cluster and user_pool must be positive".into(),
            ));
        }
        if !(self.time_unit > 0.0 && self.horizon > 0.0) {
            return Err(Error::Argument("time_unit and horizon must be positive".into()));
        }
        if !(self.observable_window > 0.0 && self.observable_window <= self.horizon) {
            return Err(Error::Argument(
                "observable_window must lie in (0, horizon]".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return Err(Error::Argument(format!("noise {} outside [0, 1)", self.noise)));
        }
        Ok(())
    }
}

/// Ground truth for one synthetic cascade.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub cluster: usize,
    #[serde(flatten)]
    pub params: RichardsParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub cascades: Vec<Cascade>,
    /// Aligned with `cascades`.
    pub truth: Vec<GroundTruth>,
}

impl SyntheticCorpus {
    pub fn truth_by_id(&self) -> BTreeMap<String, GroundTruth> {
        self.cascades
            .iter()
            .zip(&self.truth)
            .map(|(c, t)| (c.id.clone(), *t))
            .collect()
    }
}

pub fn generate_synthetic_corpus(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let total = spec.clusters.len() * spec.cascades_per_cluster;
    let (cascades, truth) = (0..total)
        .into_par_iter()
        .map(|g| generate_one(spec, seed, g))
        .unzip();
    Ok(SyntheticCorpus { cascades, truth })
}

fn generate_one(spec: &SyntheticSpec, seed: u64, g: usize) -> (Cascade, GroundTruth) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(g as u64);

    let cluster = g / spec.cascades_per_cluster;
    let ranges = &spec.clusters[cluster];
    let params = RichardsParams {
        alpha: ranges.alpha.sample(&mut rng),
        beta: ranges.beta.sample(&mut rng),
        gamma: ranges.gamma.sample(&mut rng),
        delta: ranges.delta.sample(&mut rng),
    };
    let jitter = if spec.noise > 0.0 {
        rng.gen_range(-spec.noise..=spec.noise)
    } else {
        0.0
    };
    let n = (params.alpha * (1.0 + jitter)).round().max(0.0) as usize;

    let pool = spec.user_pool;
    let root = rng.gen_range(0..pool);
    // adopters are distinct and never the root unless the pool is too small
    let adopters: Vec<usize> = if n < pool {
        index::sample(&mut rng, pool - 1, n)
            .into_iter()
            .map(|i| if i >= root { i + 1 } else { i })
            .collect()
    } else {
        (0..n).map(|_| rng.gen_range(0..pool)).collect()
    };

    let horizon = spec.horizon / spec.time_unit;
    let at_horizon = params.eval(horizon);
    let mut events = Vec::with_capacity(n);
    let mut last = 0.0f64;
    for (i, &user) in adopters.iter().enumerate() {
        let level = (i as f64 + 0.5) / n as f64 * at_horizon;
        let t = params.inverse(level).clamp(0.0, horizon).max(last);
        last = t;
        let parent = if i == 0 {
            root
        } else {
            adopters[rng.gen_range(0..i)]
        };
        events.push(Event {
            user: format!("u{user}"),
            parent: format!("u{parent}"),
            offset: t * spec.time_unit,
        });
    }

    let cascade = Cascade {
        id: g.to_string(),
        root_user: format!("u{root}"),
        publish_time: spec.publish_start + 60 * g as i64,
        events,
    };
    (cascade, GroundTruth { cluster, params })
}

/// Writes the `id -> {cluster, alpha, beta, gamma, delta}` sidecar.
pub fn write_ground_truth(path: impl AsRef<Path>, corpus: &SyntheticCorpus) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(&corpus.truth_by_id())
        .expect("ground truth always serializes");
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<BTreeMap<String, GroundTruth>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        msg: e.to_string(),
    })
}
