//! Tracking error statistics: median absolute error, interquartile range
//! and the dropped-frame rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::TrackRow;

/// Distance error above which a microphone's frame counts as dropped, meters.
pub const DROPPED_THRESHOLD: f64 = 0.0376;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub count: usize,
    pub medae: f64,
    pub p25: f64,
    pub p75: f64,
    pub iqr: f64,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    let u = pos - i as f64;
    if u == 0.0 {
        sorted[i]
    } else {
        sorted[i] + u * (sorted[j] - sorted[i])
    }
}

/// Statistics of absolute errors; non-finite entries are skipped.
pub fn error_stats(errors: impl IntoIterator<Item = f64>) -> ErrorStats {
    let mut v: Vec<f64> = errors.into_iter().filter(|e| e.is_finite()).map(f64::abs).collect();
    v.sort_by(f64::total_cmp);
    let (p25, medae, p75) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
    ErrorStats { count: v.len(), medae, p25, p75, iqr: p75 - p25 }
}

pub fn median(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Scenario grid position label, when the take declares one.
    pub grid: Option<String>,
    pub frames: usize,
    /// Head-center distance error, millimeters.
    pub distance_mm: ErrorStats,
    /// Per-microphone distance errors (left, right, speech), millimeters.
    pub mic_distance_mm: [ErrorStats; 3],
    pub yaw_deg: ErrorStats,
    pub pitch_deg: ErrorStats,
    /// Share of microphone frames whose distance is off by more than the
    /// dropped-frame threshold (or missing), percent.
    pub dropped_pct: f64,
}

/// Pairs each prediction with the truth row nearest in time, keeping pairs no
/// further apart than `max_gap` seconds.
pub fn align(pred: &[TrackRow], truth: &[TrackRow], max_gap: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        let j = truth.partition_point(|r| r.t < p.t);
        let best = [j.checked_sub(1), Some(j)]
            .into_iter()
            .flatten()
            .filter(|&k| k < truth.len())
            .min_by(|&a, &b| (truth[a].t - p.t).abs().total_cmp(&(truth[b].t - p.t).abs()));
        if let Some(k) = best {
            if (truth[k].t - p.t).abs() <= max_gap {
                out.push((i, k));
            }
        }
    }
    out
}

/// Compares predictions against ground truth. Rows are joined by nearest
/// timestamp within half a frame period.
pub fn evaluate(pred: &[TrackRow], truth: &[TrackRow], frame_period: f64) -> Result<MetricsReport> {
    if truth.windows(2).any(|w| w[1].t < w[0].t) {
        return Err(Error::Alignment("truth timestamps must be sorted".into()));
    }
    let pairs = align(pred, truth, 0.5 * frame_period + 1e-9);
    if pairs.is_empty() {
        return Err(Error::Alignment("predictions and truth do not overlap in time".into()));
    }
    let diff = |f: fn(&TrackRow) -> f64, scale: f64| {
        error_stats(pairs.iter().map(move |&(i, k)| (f(&pred[i]) - f(&truth[k])) * scale))
    };
    let mic = |m: usize| {
        error_stats(pairs.iter().map(move |&(i, k)| (pred[i].distances()[m] - truth[k].distances()[m]) * 1e3))
    };
    let mut dropped = 0usize;
    for &(i, k) in &pairs {
        let (p, t) = (pred[i].distances(), truth[k].distances());
        for m in 0..3 {
            let e = (p[m] - t[m]).abs();
            if !(e <= DROPPED_THRESHOLD) {
                dropped += 1;
            }
        }
    }
    Ok(MetricsReport {
        grid: None,
        frames: pairs.len(),
        distance_mm: diff(|r| r.d_m, 1e3),
        mic_distance_mm: [mic(0), mic(1), mic(2)],
        yaw_deg: diff(|r| r.yaw, 1.0),
        pitch_deg: diff(|r| r.pitch, 1.0),
        dropped_pct: 100.0 * dropped as f64 / (3 * pairs.len()) as f64,
    })
}
