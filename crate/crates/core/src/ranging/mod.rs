//! FMCW ranging: from framed microphone audio to per-microphone distances.
//!
//! Each triangular period is split into its up and down slopes. Every slope
//! is mixed with the matching transmitted slope, low-passed and transformed,
//! which leaves a beat tone whose frequency grows linearly with the
//! propagation delay. Peaks are found with a cell-averaging CFAR detector,
//! the direct path is tracked frame to frame, and the two slopes are
//! averaged to cancel the Doppler shift.

mod cfar;
mod session;
mod spectrum;
mod tracker;

pub use cfar::{argmax_peak, cfar_alpha, cfar_detect, CfarParams, Peak};
pub use session::{FrameFrontEnd, FrameTiming, RangingSession};
pub use spectrum::{half_spectrum, mix_and_lowpass, noncoherent_integrate, Spectrum, SpectrumAnalyzer};
pub use tracker::{ols_predict, refine_peak, select_direct_path, Selection, SlopeTrack};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::ChirpSpec;

/// How the up- and down-slope measurements are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlopeCombination {
    /// Average the two beat frequencies.
    Frequency,
    /// Average the two distances (identical up to rounding).
    Distance,
    UpOnly,
    DownOnly,
}

impl SlopeCombination {
    pub fn uses(&self, slope: usize) -> bool {
        match self {
            SlopeCombination::UpOnly => slope == 0,
            SlopeCombination::DownOnly => slope == 1,
            _ => true,
        }
    }
}

/// Tunables of the ranging chain. Bin counts are in raw (unpadded) bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RangingConfig {
    pub zero_pad: usize,
    pub lowpass_cutoff: f64,
    pub lowpass_order: usize,
    /// Beat frequencies searched for the direct path, Hz.
    pub band: [f64; 2],
    /// Frames start this many samples before the synchronized period start,
    /// which keeps the reference beat away from DC.
    pub sync_lead: usize,
    /// Spectra averaged by non-coherent integration (1 disables it).
    pub integration: usize,
    /// Shift the previous spectrum by the predicted peak motion before
    /// integrating, so moving peaks do not smear.
    pub motion_compensation: bool,
    /// `None` replaces CFAR by a plain argmax over the band.
    pub cfar: Option<CfarParams>,
    /// Half-width of the search gate around the predicted peak, raw bins.
    /// `None` disables gating.
    pub gate_bins: Option<f64>,
    /// Earliest peak must reach this fraction of the strongest gated peak.
    pub rho: f64,
    pub history: usize,
    /// Replace rejected peaks by extrapolating the history.
    pub fallback: bool,
    /// Consecutive fallbacks after which a channel counts as lost.
    pub max_fallbacks: usize,
    /// Frames a strong peak must persist ahead of the gate before the track
    /// jumps to it (0 disables re-acquisition).
    pub reacquire_frames: usize,
    /// Magnitude, relative to the strongest peak, that a peak ahead of the
    /// gate needs to count for re-acquisition.
    pub reacquire_rho: f64,
    /// Reject a jump on one channel while the other two stay put.
    pub cross_check: bool,
    pub jump_bins: f64,
    pub stable_bins: f64,
    pub combination: SlopeCombination,
    /// Apply the calibrated clock-drift line (and re-time frames with it).
    pub drift_correction: bool,
    /// Peaks this far below the calibrated zero-distance beat are rejected, m.
    pub negative_tolerance: f64,
}

impl Default for RangingConfig {
    fn default() -> Self {
        Self {
            zero_pad: 4,
            lowpass_cutoff: 3000.0,
            lowpass_order: 4,
            band: [40.0, 3000.0],
            sync_lead: 32,
            integration: 2,
            motion_compensation: true,
            cfar: Some(CfarParams::default()),
            gate_bins: Some(4.0),
            rho: 0.5,
            history: 5,
            fallback: true,
            max_fallbacks: 10,
            reacquire_frames: 3,
            reacquire_rho: 0.1,
            cross_check: true,
            jump_bins: 1.5,
            stable_bins: 1.0,
            combination: SlopeCombination::Frequency,
            drift_correction: true,
            negative_tolerance: 0.05,
        }
    }
}

impl RangingConfig {
    /// Plain FMCW ranging without any of the robustness measures: global
    /// argmax, single frame, no tracking, up slope only.
    pub fn baseline() -> Self {
        Self {
            integration: 1,
            motion_compensation: false,
            cfar: None,
            gate_bins: None,
            fallback: false,
            reacquire_frames: 0,
            cross_check: false,
            combination: SlopeCombination::UpOnly,
            ..Self::default()
        }
    }

    pub fn validate(&self, spec: &ChirpSpec) -> Result<()> {
        let nyq = spec.sample_rate / 2.0;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.zero_pad == 0 {
            return bad("zero_pad must be at least 1");
        }
        if !(self.lowpass_cutoff > 0.0 && self.lowpass_cutoff < nyq) {
            return bad("lowpass_cutoff must lie in (0, fs/2)");
        }
        if self.lowpass_order < 2 || !self.lowpass_order.is_multiple_of(2) {
            return bad("lowpass_order must be even and >= 2");
        }
        if !(self.band[0] >= 0.0 && self.band[1] > self.band[0] && self.band[1] <= nyq) {
            return bad("band must be an increasing pair within [0, fs/2]");
        }
        if self.sync_lead >= spec.slope_len {
            return bad("sync_lead must be shorter than a slope");
        }
        if self.integration == 0 || self.history == 0 {
            return bad("integration and history must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.rho) || !(0.0..=1.0).contains(&self.reacquire_rho) {
            return bad("rho and reacquire_rho must lie in [0, 1]");
        }
        if let Some(c) = &self.cfar {
            c.validate()?;
        }
        Ok(())
    }
}

/// Per-frame ranging output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeEstimate {
    /// Receiver time of the frame center, seconds.
    pub t: f64,
    /// Left, right, speech mic distances, meters.
    pub distance: [f64; 3],
    pub dropped: [bool; 3],
    /// Selected (combined) beat frequency, Hz.
    pub peak_hz: [f64; 3],
    pub confidence: [f64; 3],
    /// Received level of the raw frame, dB re full scale.
    pub level_db: [f64; 3],
}

/// Averages up- and down-slope beat frequencies, cancelling the first-order
/// Doppler shift that enters the two slopes with opposite signs.
pub fn doppler_average(f_up: f64, f_down: f64) -> f64 {
    0.5 * (f_up + f_down)
}

/// Combines optional slope measurements. A single surviving slope passes
/// through with its confidence halved.
pub fn combine_slopes(up: Option<(f64, f64)>, down: Option<(f64, f64)>) -> Option<(f64, f64)> {
    match (up, down) {
        (Some((fu, cu)), Some((fd, cd))) => Some((doppler_average(fu, fd), 0.5 * (cu + cd))),
        (Some((f, c)), None) | (None, Some((f, c))) => Some((f, 0.5 * c)),
        (None, None) => None,
    }
}

/// Distance for a beat frequency given the drift-corrected zero-distance
/// reference.
pub fn beat_to_distance(f_beat: f64, reference: f64, spec: &ChirpSpec, speed_of_sound: f64, standoff: f64) -> f64 {
    speed_of_sound * (f_beat - reference) / spec.chirp_rate() + standoff
}

/// Inverse of [`beat_to_distance`].
pub fn distance_to_beat(distance: f64, reference: f64, spec: &ChirpSpec, speed_of_sound: f64, standoff: f64) -> f64 {
    reference + (distance - standoff) * spec.chirp_rate() / speed_of_sound
}
