use super::cfar::{argmax_peak, cfar_detect, Peak};
use super::spectrum::{mix_and_lowpass, noncoherent_integrate, Spectrum, SpectrumAnalyzer};
use super::tracker::{fallback_selection, prominence_confidence, refine_peak, select_direct_path, Selection, SlopeTrack};
use super::{beat_to_distance, combine_slopes, RangeEstimate, RangingConfig, SlopeCombination};
use crate::calibration::CalibrationData;
use crate::dsp::LowPass;
use crate::error::{Error, Result};
use crate::signal::{reference_slopes, ChirpSpec, SampleBuffer};
use crate::stream::SampleSource;

/// Turns one channel of a triangular period into up- and down-slope beat
/// spectra.
#[derive(Debug, Clone)]
pub struct FrameFrontEnd {
    spec: ChirpSpec,
    lowpass: LowPass,
    up: Vec<f64>,
    down: Vec<f64>,
    analyzer: SpectrumAnalyzer,
}

impl FrameFrontEnd {
    pub fn new(spec: &ChirpSpec, config: &RangingConfig) -> Result<Self> {
        spec.validate()?;
        config.validate(spec)?;
        let (up, down) = reference_slopes(spec)?;
        Ok(Self {
            spec: *spec,
            lowpass: LowPass::butterworth(config.lowpass_order, config.lowpass_cutoff, spec.sample_rate),
            up: up.into_channels().remove(0),
            down: down.into_channels().remove(0),
            analyzer: SpectrumAnalyzer::new(spec.slope_len, config.zero_pad, spec.sample_rate),
        })
    }

    pub fn spec(&self) -> &ChirpSpec {
        &self.spec
    }

    /// Beat spectra of the up and down halves of `period`.
    pub fn slope_spectra(&mut self, period: &[f64]) -> Result<[Spectrum; 2]> {
        let l = self.spec.slope_len;
        if period.len() != 2 * l {
            return Err(Error::Framing(format!("frame has {} samples, expected {}", period.len(), 2 * l)));
        }
        let up = mix_and_lowpass(&period[..l], &self.up, &self.lowpass)?;
        let down = mix_and_lowpass(&period[l..], &self.down, &self.lowpass)?;
        Ok([self.analyzer.spectrum(&up)?, self.analyzer.spectrum(&down)?])
    }
}

/// Where frame `index` sits in the receiver stream and which zero-distance
/// beat applies to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameTiming {
    pub index: u64,
    /// First receiver sample of the frame (may be negative for early frames).
    pub start: i64,
    /// Receiver time of the frame center, seconds.
    pub t: f64,
    /// Drift-corrected zero-distance beat frequency, Hz.
    pub reference: f64,
}

/// Stateful per-take ranging: consumes consecutive frames and emits one
/// [`RangeEstimate`] per transmitted period.
#[derive(Debug, Clone)]
pub struct RangingSession {
    spec: ChirpSpec,
    config: RangingConfig,
    calibration: Option<CalibrationData>,
    front: FrameFrontEnd,
    tracks: Vec<[SlopeTrack; 2]>,
    next_index: u64,
    last_distance: [f64; 3],
}

impl RangingSession {
    pub fn new(spec: &ChirpSpec, config: RangingConfig, calibration: Option<CalibrationData>) -> Result<Self> {
        let front = FrameFrontEnd::new(spec, &config)?;
        let tracks = (0..3)
            .map(|_| [SlopeTrack::new(config.history), SlopeTrack::new(config.history)])
            .collect();
        Ok(Self {
            spec: *spec,
            config,
            calibration,
            front,
            tracks,
            next_index: 0,
            last_distance: [f64::NAN; 3],
        })
    }

    pub fn config(&self) -> &RangingConfig {
        &self.config
    }

    pub fn calibration(&self) -> Option<&CalibrationData> {
        self.calibration.as_ref()
    }

    pub fn spec(&self) -> &ChirpSpec {
        &self.spec
    }

    /// Placement of frame `index` on the receiver timeline.
    pub fn timing(&self, index: u64) -> Result<FrameTiming> {
        let cal = self.calibration.as_ref().ok_or(Error::Uncalibrated)?;
        let fs = self.spec.sample_rate;
        let period = self.spec.period_len() as i64;
        let lead = self.config.sync_lead as i64;
        let center = |start: i64| (start + lead) as f64 / fs + self.spec.period_time() / 2.0;
        let nominal = cal.coarse_offset as i64 - lead + index as i64 * period;
        if !self.config.drift_correction {
            return Ok(FrameTiming { index, start: nominal, t: center(nominal), reference: cal.reference.intercept });
        }
        let k = self.spec.chirp_rate();
        let drift_hz = cal.reference.slope * (center(nominal) - cal.calibrated_at);
        // Move the frame with the receiver clock, then correct the residual
        // fraction of a sample in the reference.
        let shift = (drift_hz / k * fs).round() as i64;
        let start = nominal + shift;
        let t = center(start);
        let reference = cal.reference.at(t, cal.calibrated_at) - k * shift as f64 / fs;
        Ok(FrameTiming { index, start, t, reference })
    }

    /// Continue with the first frame centered at or after `t`.
    pub fn seek(&mut self, t: f64) -> Result<()> {
        let period = self.spec.period_time();
        let mut k = ((t / period).floor() - 2.0).max(0.0) as u64;
        while self.timing(k)?.t < t {
            k += 1;
        }
        self.next_index = k;
        Ok(())
    }

    /// Reads and processes the next frame; `None` at the end of the source.
    pub fn next_estimate(&mut self, source: &mut dyn SampleSource) -> Result<Option<RangeEstimate>> {
        let timing = self.advance()?;
        let Some(frame) = source.read(timing.start as u64, self.spec.period_len())? else {
            return Ok(None);
        };
        self.process_frame(&frame, &timing).map(Some)
    }

    /// Timing of the next frame that starts inside the recording; moves the
    /// session past it.
    pub fn advance(&mut self) -> Result<FrameTiming> {
        loop {
            let timing = self.timing(self.next_index)?;
            self.next_index += 1;
            if timing.start >= 0 {
                return Ok(timing);
            }
        }
    }

    /// Processes every remaining frame of `source`.
    pub fn run(&mut self, source: &mut dyn SampleSource) -> Result<Vec<RangeEstimate>> {
        let mut out = Vec::new();
        while let Some(e) = self.next_estimate(source)? {
            out.push(e);
        }
        Ok(out)
    }

    fn candidates(&self, spectrum: &Spectrum, min_frequency: f64) -> Vec<Peak> {
        let band = Some(self.config.band);
        let peaks = match &self.config.cfar {
            Some(p) => cfar_detect(spectrum, p, band),
            None => argmax_peak(spectrum, band).into_iter().collect(),
        };
        peaks.into_iter().filter(|p| p.frequency >= min_frequency).collect()
    }

    /// Integrates the current spectrum with the stored ones, moving each by
    /// the peak motion predicted since it was recorded.
    fn integrate(&self, track: &SlopeTrack, current: &Spectrum, timing: &FrameTiming) -> Result<Spectrum> {
        if self.config.integration <= 1 {
            return Ok(current.clone());
        }
        let now = track.predict(timing.t);
        let prior: Vec<Spectrum> = track
            .prior()
            .map(|(s, t, reference)| {
                let mut shift_hz = timing.reference - reference;
                if self.config.motion_compensation {
                    if let (Some(a), Some(b)) = (now, track.predict(*t)) {
                        shift_hz += a - b;
                    }
                }
                s.shifted(shift_hz / s.bin_hz)
            })
            .collect();
        noncoherent_integrate(current, &prior)
    }

    /// Runs the full chain on one period of three-channel audio.
    pub fn process_frame(&mut self, frame: &SampleBuffer, timing: &FrameTiming) -> Result<RangeEstimate> {
        let cal = self.calibration.clone().ok_or(Error::Uncalibrated)?;
        if frame.num_channels() < 3 {
            return Err(Error::Input(format!("need 3 channels, got {}", frame.num_channels())));
        }
        if frame.len() != self.spec.period_len() {
            return Err(Error::Framing(format!(
                "frame has {} samples, expected {}",
                frame.len(),
                self.spec.period_len()
            )));
        }
        let k = self.spec.chirp_rate();
        let raw_bin = self.spec.raw_bin_hz();
        let c = cal.speed_of_sound;
        let min_frequency = timing.reference - self.config.negative_tolerance * k / c;
        let t = timing.t;

        let mut level_db = [0.0; 3];
        let mut selections: [[Option<Selection>; 2]; 3] = [[None; 2]; 3];
        for m in 0..3 {
            let x = frame.channel(m);
            level_db[m] = 10.0 * (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64 + 1e-20).log10();
            let spectra = self.front.slope_spectra(x)?;
            for (s, current) in spectra.into_iter().enumerate() {
                if !self.config.combination.uses(s) {
                    continue;
                }
                let track = &self.tracks[m][s];
                let integrated = self.integrate(track, &current, timing)?;
                let cands = self.candidates(&integrated, min_frequency);
                let mut sel = select_direct_path(&cands, track, t, timing.reference, raw_bin, &self.config);
                if self.config.reacquire_frames > 0 {
                    let gate = self.config.gate_bins.unwrap_or(0.0) * raw_bin;
                    let rel = sel.earlier.map(|p| p.frequency - timing.reference);
                    let streak = self.tracks[m][s].note_earlier(rel, gate);
                    if streak >= self.config.reacquire_frames {
                        // The direct path arrives first: switch to it.
                        let p = sel.earlier.expect("streak implies a peak");
                        self.tracks[m][s].restart();
                        sel = Selection {
                            frequency: Some(p.frequency),
                            confidence: prominence_confidence(p.snr_db),
                            dropped: false,
                            peak: Some(p),
                            earlier: None,
                        };
                    }
                }
                if let Some(p) = sel.peak {
                    sel.frequency = Some(refine_peak(&integrated, p.bin));
                }
                selections[m][s] = Some(sel);
                let keep = self.config.integration - 1;
                self.tracks[m][s].push_spectrum(current, t, timing.reference, keep);
            }
        }

        if self.config.cross_check {
            self.cross_check(&mut selections, timing, raw_bin);
        }

        let mut out = RangeEstimate {
            t,
            distance: [f64::NAN; 3],
            dropped: [true; 3],
            peak_hz: [f64::NAN; 3],
            confidence: [0.0; 3],
            level_db,
        };
        for m in 0..3 {
            let mut accepted = [None, None];
            let mut fallback = [None, None];
            for s in 0..2 {
                let Some(sel) = selections[m][s] else { continue };
                let track = &mut self.tracks[m][s];
                match (sel.dropped, sel.frequency) {
                    (false, Some(f)) => {
                        track.accept(t, f - timing.reference);
                        accepted[s] = Some((f, sel.confidence));
                    }
                    _ => {
                        track.reject(self.config.max_fallbacks);
                        fallback[s] = sel.frequency.map(|f| (f, sel.confidence));
                    }
                }
            }
            let lost = (0..2).any(|s| selections[m][s].is_some() && self.tracks[m][s].is_lost())
                && accepted.iter().all(Option::is_none);
            let (combined, dropped) = match combine_slopes(accepted[0], accepted[1]) {
                Some(v) => (Some(v), false),
                None => {
                    // Both slopes rejected: the extrapolated beats stand in.
                    let fb = match (fallback[0], fallback[1]) {
                        (Some((a, ca)), Some((b, cb))) => Some((0.5 * (a + b), 0.5 * (ca + cb))),
                        (a, b) => a.or(b),
                    };
                    (fb, true)
                }
            };
            out.dropped[m] = dropped;
            if let Some((f, conf)) = combined {
                let d = match self.config.combination {
                    SlopeCombination::Distance => {
                        let ds: Vec<f64> = accepted
                            .iter()
                            .flatten()
                            .map(|(f, _)| beat_to_distance(*f, timing.reference, &self.spec, c, cal.standoff))
                            .collect();
                        if ds.is_empty() {
                            beat_to_distance(f, timing.reference, &self.spec, c, cal.standoff)
                        } else {
                            ds.iter().sum::<f64>() / ds.len() as f64
                        }
                    }
                    _ => beat_to_distance(f, timing.reference, &self.spec, c, cal.standoff),
                };
                out.peak_hz[m] = f;
                out.distance[m] = d;
                out.confidence[m] = if lost { 0.0 } else { conf };
                self.last_distance[m] = d;
            } else if self.config.fallback {
                out.distance[m] = self.last_distance[m];
            }
        }
        Ok(out)
    }

    /// Rejects a channel whose peak jumps while the other two stay on their
    /// predicted tracks.
    fn cross_check(&self, selections: &mut [[Option<Selection>; 2]; 3], timing: &FrameTiming, raw_bin: f64) {
        let deviation = |m: usize| -> Option<f64> {
            let mut worst: Option<f64> = None;
            for s in 0..2 {
                let Some(sel) = selections[m][s] else { continue };
                let track = &self.tracks[m][s];
                if sel.dropped || track.is_lost() {
                    return None;
                }
                let pred = track.predict(timing.t)? + timing.reference;
                let dev = (sel.frequency? - pred).abs() / raw_bin;
                worst = Some(worst.map_or(dev, |w: f64| w.max(dev)));
            }
            worst
        };
        let devs: Vec<Option<f64>> = (0..3).map(deviation).collect();
        for m in 0..3 {
            let Some(d) = devs[m] else { continue };
            let others_stable = (0..3)
                .filter(|&o| o != m)
                .all(|o| devs[o].is_some_and(|v| v < self.config.stable_bins));
            if d > self.config.jump_bins && others_stable {
                for s in 0..2 {
                    if selections[m][s].is_some() {
                        let track = &self.tracks[m][s];
                        let pred = track.predict(timing.t).map(|r| r + timing.reference);
                        selections[m][s] = Some(fallback_selection(track, pred, &self.config));
                    }
                }
            }
        }
    }
}
