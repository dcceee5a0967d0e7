use std::collections::VecDeque;

use super::cfar::Peak;
use super::spectrum::Spectrum;
use super::RangingConfig;
use crate::dsp::parabolic_peak;

/// Least-squares line through `(t, value)` points evaluated at `t`. A single
/// point is held constant.
pub fn ols_predict(points: &[(f64, f64)], t: f64) -> Option<f64> {
    match points.len() {
        0 => None,
        1 => Some(points[0].1),
        n => {
            let n = n as f64;
            let mt = points.iter().map(|p| p.0).sum::<f64>() / n;
            let mv = points.iter().map(|p| p.1).sum::<f64>() / n;
            let (mut sxy, mut sxx) = (0.0, 0.0);
            for &(x, y) in points {
                sxy += (x - mt) * (y - mv);
                sxx += (x - mt) * (x - mt);
            }
            let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
            Some(mv + slope * (t - mt))
        }
    }
}

/// Tracking state of one slope of one microphone.
///
/// Peak history is stored relative to the zero-distance reference so frame
/// re-timing and drift correction do not show up as motion.
#[derive(Debug, Clone)]
pub struct SlopeTrack {
    capacity: usize,
    history: Vec<(f64, f64)>,
    /// Previous spectra for integration with their frame time and reference.
    prior: VecDeque<(Spectrum, f64, f64)>,
    fallbacks: usize,
    lost: bool,
    /// Consecutive frames showing a strong peak ahead of the gate, with the
    /// last such peak relative to the reference.
    early: Option<(usize, f64)>,
}

impl SlopeTrack {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            history: Vec::new(),
            prior: VecDeque::new(),
            fallbacks: 0,
            lost: false,
            early: None,
        }
    }

    pub fn history(&self) -> Vec<(f64, f64)> {
        self.history.clone()
    }

    /// Predicted beat (relative to the reference) at time `t`. The trend is
    /// extrapolated no further ahead than the history reaches back; beyond
    /// that the prediction holds.
    pub fn predict(&self, t: f64) -> Option<f64> {
        let (first, last) = (self.history.first()?.0, self.history.last()?.0);
        ols_predict(&self.history, t.min(2.0 * last - first))
    }

    pub fn is_lost(&self) -> bool {
        self.lost
    }

    pub fn consecutive_fallbacks(&self) -> usize {
        self.fallbacks
    }

    /// Records an accepted peak.
    pub fn accept(&mut self, t: f64, relative_hz: f64) {
        if self.lost {
            self.history.clear();
            self.lost = false;
        }
        self.history.push((t, relative_hz));
        if self.history.len() > self.capacity {
            self.history.remove(0);
        }
        self.fallbacks = 0;
    }

    /// Records a rejected frame. Returns true once the channel is lost.
    pub fn reject(&mut self, max_fallbacks: usize) -> bool {
        self.fallbacks += 1;
        if self.fallbacks >= max_fallbacks {
            self.lost = true;
        }
        self.lost
    }

    /// Counts frames in which a strong peak shows up ahead of the tracked
    /// one, at a consistent position. Returns the streak length.
    pub(crate) fn note_earlier(&mut self, relative_hz: Option<f64>, tolerance_hz: f64) -> usize {
        self.early = match (relative_hz, self.early) {
            (Some(f), Some((n, prev))) if (f - prev).abs() <= tolerance_hz => Some((n + 1, f)),
            (Some(f), _) => Some((1, f)),
            (None, _) => None,
        };
        self.early.map_or(0, |(n, _)| n)
    }

    /// Drops the history so the next accepted peak starts a new track.
    pub(crate) fn restart(&mut self) {
        self.history.clear();
        self.early = None;
        self.fallbacks = 0;
        self.lost = false;
    }

    pub(crate) fn prior(&self) -> impl Iterator<Item = &(Spectrum, f64, f64)> {
        self.prior.iter()
    }

    pub(crate) fn push_spectrum(&mut self, s: Spectrum, t: f64, reference: f64, keep: usize) {
        self.prior.push_back((s, t, reference));
        while self.prior.len() > keep {
            self.prior.pop_front();
        }
    }
}

/// Outcome of direct-path selection on one slope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    /// Selected (or predicted, when dropped) absolute beat frequency.
    pub frequency: Option<f64>,
    pub confidence: f64,
    pub dropped: bool,
    pub peak: Option<Peak>,
    /// A strong candidate ahead of the gate: a possible direct path hidden
    /// behind a track that locked onto a reflection.
    pub earlier: Option<Peak>,
}

/// Confidence of an accepted peak from its prominence.
pub fn prominence_confidence(snr_db: f64) -> f64 {
    (snr_db / 20.0).clamp(0.0, 1.0)
}

/// Picks the direct-path peak: among candidates inside the gate around the
/// predicted peak, the earliest one reaching `rho` of the strongest. Without
/// a usable prediction every candidate is eligible.
pub fn select_direct_path(
    candidates: &[Peak],
    track: &SlopeTrack,
    t: f64,
    reference: f64,
    raw_bin_hz: f64,
    config: &RangingConfig,
) -> Selection {
    let predicted = if track.is_lost() { None } else { track.predict(t).map(|r| r + reference) };
    let gate = config.gate_bins.map(|g| g * raw_bin_hz);
    let eligible: Vec<&Peak> = candidates
        .iter()
        .filter(|p| match (predicted, gate) {
            (Some(c), Some(g)) => (p.frequency - c).abs() <= g,
            _ => true,
        })
        .collect();
    let earliest_strong = |set: &[&Peak], rho: f64| {
        let strongest = set.iter().map(|p| p.magnitude).fold(0.0, f64::max);
        set.iter()
            .filter(|p| p.magnitude > 0.0)
            .find(|p| p.magnitude >= rho * strongest)
            .copied()
            .copied()
    };
    let earlier = match (predicted, gate) {
        (Some(c), Some(g)) => {
            let all: Vec<&Peak> = candidates.iter().collect();
            earliest_strong(&all, config.reacquire_rho).filter(|p| p.frequency < c - g)
        }
        _ => None,
    };
    match earliest_strong(&eligible, config.rho) {
        Some(p) => Selection {
            frequency: Some(p.frequency),
            confidence: prominence_confidence(p.snr_db),
            dropped: false,
            peak: Some(p),
            earlier,
        },
        None => Selection { earlier, ..fallback_selection(track, predicted, config) },
    }
}

/// Selection for a frame whose peak was rejected.
pub(crate) fn fallback_selection(track: &SlopeTrack, predicted: Option<f64>, config: &RangingConfig) -> Selection {
    let frequency = if config.fallback { predicted } else { None };
    let used = (track.consecutive_fallbacks() + 1) as f64 / config.max_fallbacks.max(1) as f64;
    let confidence = if frequency.is_some() { 0.5 * (1.0 - used).max(0.0) } else { 0.0 };
    Selection { frequency, confidence, dropped: true, peak: None, earlier: None }
}

/// Sub-bin peak frequency from a parabola through the log magnitudes of the
/// peak bin and its neighbours.
pub fn refine_peak(spectrum: &Spectrum, bin: usize) -> f64 {
    let m = &spectrum.magnitudes;
    if bin == 0 || bin + 1 >= m.len() {
        return spectrum.frequency(bin as f64);
    }
    let ln = |v: f64| v.max(1e-300).ln();
    let (offset, _) = parabolic_peak(ln(m[bin - 1]), ln(m[bin]), ln(m[bin + 1]));
    spectrum.frequency(bin as f64 + offset)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn peak(f: f64, m: f64) -> Peak {
        Peak { bin: f as usize, frequency: f, magnitude: m, snr_db: 30.0 }
    }

    fn tracked_at(f: f64) -> SlopeTrack {
        let mut t = SlopeTrack::new(5);
        for k in 0..5 {
            t.accept(k as f64 * 0.04, f);
        }
        t
    }

    #[test]
    fn ols_extrapolates_a_line() {
        let pts: Vec<(f64, f64)> = (0..5).map(|k| (k as f64, 2.0 * k as f64 + 1.0)).collect();
        assert!((ols_predict(&pts, 7.0).unwrap() - 15.0).abs() < 1e-12);
        assert_eq!(ols_predict(&pts[..1], 9.0), Some(1.0));
        assert_eq!(ols_predict(&[], 0.0), None);
    }

    #[test]
    fn accepts_candidate_at_previous_peak() {
        let cfg = RangingConfig::default();
        let tr = tracked_at(800.0);
        let s = select_direct_path(&[peak(800.0, 1.0)], &tr, 0.2, 0.0, 46.875, &cfg);
        assert_eq!(s.frequency, Some(800.0));
        assert_eq!(s.confidence, 1.0);
        assert!(!s.dropped);
    }

    #[test]
    fn earliest_strong_peak_wins_over_later_echo() {
        let cfg = RangingConfig { gate_bins: None, ..RangingConfig::default() };
        let tr = SlopeTrack::new(5);
        let c = [peak(800.0, 0.7), peak(800.0 + 15.0 * 46.875, 1.0)];
        assert_eq!(select_direct_path(&c, &tr, 0.0, 0.0, 46.875, &cfg).frequency, Some(800.0));
        // A weak early spur does not qualify.
        let c = [peak(500.0, 0.2), peak(800.0, 1.0)];
        assert_eq!(select_direct_path(&c, &tr, 0.0, 0.0, 46.875, &cfg).frequency, Some(800.0));
    }

    #[test]
    fn out_of_gate_falls_back_to_prediction() {
        let cfg = RangingConfig::default();
        let mut tr = SlopeTrack::new(5);
        for k in 0..5 {
            tr.accept(k as f64, 800.0 + 10.0 * k as f64);
        }
        let s = select_direct_path(&[peak(1200.0, 1.0)], &tr, 5.0, 0.0, 46.875, &cfg);
        assert!(s.dropped);
        assert!((s.frequency.unwrap() - 850.0).abs() < 1e-9);
        let s = select_direct_path(&[], &tr, 5.0, 0.0, 46.875, &cfg);
        assert!(s.dropped && s.frequency.is_some());
    }

    #[test]
    fn strong_peak_ahead_of_gate_is_reported() {
        let cfg = RangingConfig::default();
        let tr = tracked_at(1200.0);
        let c = [peak(700.0, 0.9), peak(1200.0, 1.0)];
        let s = select_direct_path(&c, &tr, 0.2, 0.0, 46.875, &cfg);
        assert_eq!(s.frequency, Some(1200.0));
        assert_eq!(s.earlier.map(|p| p.frequency), Some(700.0));
        let c = [peak(700.0, 0.05), peak(1200.0, 1.0)];
        assert!(select_direct_path(&c, &tr, 0.2, 0.0, 46.875, &cfg).earlier.is_none());
    }

    #[test]
    fn earlier_streak_needs_a_consistent_position() {
        let mut tr = tracked_at(1200.0);
        assert_eq!(tr.note_earlier(Some(700.0), 100.0), 1);
        assert_eq!(tr.note_earlier(Some(720.0), 100.0), 2);
        assert_eq!(tr.note_earlier(Some(300.0), 100.0), 1);
        assert_eq!(tr.note_earlier(None, 100.0), 0);
    }

    #[test]
    fn lost_after_repeated_fallbacks() {
        let mut tr = tracked_at(800.0);
        for k in 0..9 {
            assert!(!tr.reject(10), "lost too early at {k}");
        }
        assert!(tr.reject(10));
        // Re-acquisition restarts the history.
        tr.accept(1.0, 1000.0);
        assert_eq!(tr.history(), vec![(1.0, 1000.0)]);
    }
}
