use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PredictionSample;
use crate::{Error, Result};

pub const SPLIT_RATIOS: (f64, f64, f64) = (0.70, 0.15, 0.15);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: Vec<PredictionSample>,
    pub validation: Vec<PredictionSample>,
    pub test: Vec<PredictionSample>,
    pub split_ratios: (f64, f64, f64),
    pub seed: u64,
}

/// Seeded 70/15/15 split. Validation and test take the floor of their
/// share; the remainder goes to training.
pub fn split_corpus(samples: Vec<PredictionSample>, seed: u64) -> Result<CorpusSplit> {
    let n = samples.len();
    if n < 10 {
        return Err(Error::Argument(format!(
            "need at least 10 samples to split, got {n}"
        )));
    }
    let n_val = (n as f64 * SPLIT_RATIOS.1).floor() as usize;
    let n_test = (n as f64 * SPLIT_RATIOS.2).floor() as usize;
    let n_train = n - n_val - n_test;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut slots: Vec<Option<PredictionSample>> = samples.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| -> Vec<PredictionSample> {
        idx.iter().map(|&i| slots[i].take().expect("index used once")).collect()
    };
    let train = take(&order[..n_train]);
    let validation = take(&order[n_train..n_train + n_val]);
    let test = take(&order[n_train + n_val..]);
    Ok(CorpusSplit {
        train,
        validation,
        test,
        split_ratios: SPLIT_RATIOS,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade_data::SnapshotSeries;

    fn samples(n: usize) -> Vec<PredictionSample> {
        (0..n)
            .map(|i| PredictionSample {
                cascade_id: format!("{i:04}"),
                series: SnapshotSeries {
                    snapshot_length: 1.0,
                    observable_window: 1.0,
                    snapshots: vec![],
                },
                prediction_horizon: 2.0,
                observed_popularity: 0,
                final_popularity: 0,
                label: 0.0,
                ground_truth: None,
            })
            .collect()
    }

    fn sizes(s: &CorpusSplit) -> (usize, usize, usize) {
        (s.train.len(), s.validation.len(), s.test.len())
    }

    #[test]
    fn ratio_sizes() {
        assert_eq!(sizes(&split_corpus(samples(100), 1).unwrap()), (70, 15, 15));
        assert_eq!(sizes(&split_corpus(samples(101), 1).unwrap()), (71, 15, 15));
        assert_eq!(sizes(&split_corpus(samples(10), 1).unwrap()), (8, 1, 1));
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(split_corpus(samples(9), 0), Err(Error::Argument(_))));
    }

    #[test]
    fn partition_is_exhaustive_and_disjoint() {
        let s = split_corpus(samples(57), 3).unwrap();
        let mut ids: Vec<_> = s
            .train
            .iter()
            .chain(&s.validation)
            .chain(&s.test)
            .map(|x| x.cascade_id.clone())
            .collect();
        ids.sort();
        let want: Vec<_> = samples(57).into_iter().map(|x| x.cascade_id).collect();
        assert_eq!(ids, want);
    }

    #[test]
    fn seed_changes_membership_not_sizes() {
        let a = split_corpus(samples(200), 1).unwrap();
        let b = split_corpus(samples(200), 2).unwrap();
        let a2 = split_corpus(samples(200), 1).unwrap();
        assert_eq!(sizes(&a), sizes(&b));
        let ids = |s: &CorpusSplit| s.test.iter().map(|x| x.cascade_id.clone()).collect::<Vec<_>>();
        assert_ne!(ids(&a), ids(&b));
        assert_eq!(ids(&a), ids(&a2));
    }
}
