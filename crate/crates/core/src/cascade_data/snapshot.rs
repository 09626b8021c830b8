use super::{log2_1p, Adoption, Cascade, PredictionSample, Snapshot, SnapshotSeries};
use crate::{Error, Result};

/// Buckets the events before `observable_window` into half-open snapshots
/// of `snapshot_length` seconds.
pub fn snapshot_series(
    c: &Cascade,
    snapshot_length: f64,
    observable_window: f64,
) -> Result<SnapshotSeries> {
    if !(snapshot_length > 0.0 && snapshot_length.is_finite()) {
        return Err(Error::Argument(format!(
            "snapshot length must be positive, got {snapshot_length}"
        )));
    }
    if !(observable_window >= snapshot_length && observable_window.is_finite()) {
        return Err(Error::Argument(format!(
            "observable window {observable_window} shorter than snapshot length {snapshot_length}"
        )));
    }
    let count = (observable_window / snapshot_length).ceil() as usize;
    let mut snapshots: Vec<Snapshot> = (0..count)
        .map(|_| Snapshot {
            adopters: Vec::new(),
            cumulative: 0,
        })
        .collect();

    let mut previous = None;
    for e in &c.events {
        let gap = previous.map_or(0.0, |p| e.offset - p);
        previous = Some(e.offset);
        if e.offset >= observable_window {
            break;
        }
        let k = ((e.offset / snapshot_length).floor() as usize).min(count - 1);
        snapshots[k].adopters.push(Adoption {
            user: e.user.clone(),
            gap,
        });
    }
    for (k, s) in snapshots.iter_mut().enumerate() {
        let end = ((k + 1) as f64 * snapshot_length).min(observable_window);
        s.cumulative = c.popularity_before(end);
    }

    Ok(SnapshotSeries {
        snapshot_length,
        observable_window,
        snapshots,
    })
}

/// Labels a cascade with `log2(1 + P_p - P_o)`.
pub fn make_sample(
    c: &Cascade,
    series: SnapshotSeries,
    prediction_horizon: f64,
) -> Result<PredictionSample> {
    if prediction_horizon < series.observable_window {
        return Err(Error::Argument(format!(
            "prediction horizon {prediction_horizon} shorter than observable window {}",
            series.observable_window
        )));
    }
    let observed = c.popularity_before(series.observable_window);
    let final_popularity = c.popularity_before(prediction_horizon);
    Ok(PredictionSample {
        cascade_id: c.id.clone(),
        label: log2_1p((final_popularity - observed) as f64),
        observed_popularity: observed,
        final_popularity,
        prediction_horizon,
        series,
        ground_truth: None,
    })
}
