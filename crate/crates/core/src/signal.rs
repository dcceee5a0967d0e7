//! Triangular FMCW chirp definition and synthesis.
//!
//! The transmitted waveform sweeps linearly from `f0` up to `f1` over
//! `slope_len` samples and back down over the next `slope_len` samples. The
//! phase is the running integral of the instantaneous frequency, so the
//! waveform is continuous at both turning points and across periods.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the transmitted triangular chirp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChirpSpec {
    /// Start (lowest) frequency in Hz.
    pub f0: f64,
    /// Turning (highest) frequency in Hz.
    pub f1: f64,
    /// Samples per slope; one period is two slopes.
    pub slope_len: usize,
    /// Sample rate in Hz.
    pub sample_rate: f64,
    /// Peak amplitude as a fraction of full scale.
    pub amplitude: f64,
}

impl Default for ChirpSpec {
    fn default() -> Self {
        Self {
            f0: 17_500.0,
            f1: 23_500.0,
            slope_len: 1024,
            sample_rate: 48_000.0,
            amplitude: 0.5,
        }
    }
}

impl ChirpSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.f0, self.f1, self.sample_rate, self.amplitude]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("chirp parameters must be finite".into()));
        }
        if !(self.f0 > 0.0 && self.f0 < self.f1 && self.f1 < self.sample_rate / 2.0) {
            return Err(Error::Config(format!(
                "chirp band must satisfy 0 < f0 < f1 < fs/2 (f0={}, f1={}, fs={})",
                self.f0, self.f1, self.sample_rate
            )));
        }
        if self.slope_len == 0 {
            return Err(Error::Config("slope_len must be positive".into()));
        }
        if !(self.amplitude > 0.0 && self.amplitude <= 1.0) {
            return Err(Error::Config(format!(
                "amplitude must lie in (0, 1], got {}",
                self.amplitude
            )));
        }
        Ok(())
    }

    /// Samples in one up + down period.
    pub fn period_len(&self) -> usize {
        2 * self.slope_len
    }

    /// Duration of one slope in seconds (the sweep time `T`).
    pub fn sweep_time(&self) -> f64 {
        self.slope_len as f64 / self.sample_rate
    }

    pub fn period_time(&self) -> f64 {
        2.0 * self.sweep_time()
    }

    /// Swept bandwidth `B` in Hz.
    pub fn bandwidth(&self) -> f64 {
        self.f1 - self.f0
    }

    /// Sweep rate `B / T` in Hz per second.
    pub fn chirp_rate(&self) -> f64 {
        self.bandwidth() / self.sweep_time()
    }

    pub fn center_frequency(&self) -> f64 {
        0.5 * (self.f0 + self.f1)
    }

    /// Output frames per second (one frame per period).
    pub fn frame_rate(&self) -> f64 {
        self.sample_rate / self.period_len() as f64
    }

    /// FFT bin spacing of an unpadded slope, in Hz.
    pub fn raw_bin_hz(&self) -> f64 {
        self.sample_rate / self.slope_len as f64
    }

    /// Phase in cycles accumulated over the up slope.
    fn up_cycles(&self) -> f64 {
        let t = self.sweep_time();
        self.f0 * t + 0.5 * self.chirp_rate() * t * t
    }

    /// Fractional phase (in cycles) of the continuous waveform at time `t`
    /// seconds after the start of period zero. Defined for all real `t`.
    pub fn phase_cycles(&self, t: f64) -> f64 {
        let period = self.period_time();
        let p = (t / period).floor();
        let local = t - p * period;
        (p * self.period_cycles_frac() + self.local_phase(local)).rem_euclid(1.0)
    }

    /// Fractional phase at an integer sample index.
    pub fn phase_cycles_at_sample(&self, n: i64) -> f64 {
        let period = self.period_len() as i64;
        let p = n.div_euclid(period);
        let local = n.rem_euclid(period) as f64 / self.sample_rate;
        (p as f64 * self.period_cycles_frac() + self.local_phase(local)).rem_euclid(1.0)
    }

    fn period_cycles_frac(&self) -> f64 {
        (2.0 * self.up_cycles()).rem_euclid(1.0)
    }

    fn local_phase(&self, local: f64) -> f64 {
        let t = self.sweep_time();
        let k = self.chirp_rate();
        if local < t {
            self.f0 * local + 0.5 * k * local * local
        } else {
            let d = local - t;
            self.up_cycles() + self.f1 * d - 0.5 * k * d * d
        }
    }

    /// Instantaneous frequency at time `t`.
    pub fn instantaneous_frequency(&self, t: f64) -> f64 {
        let local = t.rem_euclid(self.period_time());
        let ts = self.sweep_time();
        if local < ts {
            self.f0 + self.chirp_rate() * local
        } else {
            self.f1 - self.chirp_rate() * (local - ts)
        }
    }

    /// Transmitted sample value at continuous time `t`.
    pub fn value_at(&self, t: f64) -> f64 {
        self.amplitude * (TAU * self.phase_cycles(t)).cos()
    }
}

/// Multichannel block of real samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBuffer {
    sample_rate: f64,
    channels: Vec<Vec<f64>>,
}

impl SampleBuffer {
    pub fn new(sample_rate: f64, channels: Vec<Vec<f64>>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::Input("sample buffer needs at least one channel".into()));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::Input("all channels must have equal length".into()));
        }
        if channels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Input("samples must be finite".into()));
        }
        Ok(Self {
            sample_rate,
            channels,
        })
    }

    pub fn mono(sample_rate: f64, samples: Vec<f64>) -> Result<Self> {
        Self::new(sample_rate, vec![samples])
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, index: usize) -> &[f64] {
        &self.channels[index]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    /// Copies `len` samples starting at `start` from every channel.
    pub fn slice(&self, start: usize, len: usize) -> Result<SampleBuffer> {
        if start + len > self.len() {
            return Err(Error::Framing(format!(
                "slice {}..{} exceeds buffer of {} samples",
                start,
                start + len,
                self.len()
            )));
        }
        Ok(SampleBuffer {
            sample_rate: self.sample_rate,
            channels: self
                .channels
                .iter()
                .map(|c| c[start..start + len].to_vec())
                .collect(),
        })
    }
}

/// Synthesizes `periods` back-to-back triangular periods starting at phase zero.
pub fn synthesize_triangular(spec: &ChirpSpec, periods: usize) -> Result<SampleBuffer> {
    spec.validate()?;
    if periods == 0 {
        return Err(Error::Config("at least one period is required".into()));
    }
    let n = periods * spec.period_len();
    let samples = (0..n as i64)
        .map(|i| spec.amplitude * (TAU * spec.phase_cycles_at_sample(i)).cos())
        .collect();
    SampleBuffer::mono(spec.sample_rate, samples)
}

/// Up and down halves of one synthesized period, used as mixing references.
pub fn reference_slopes(spec: &ChirpSpec) -> Result<(SampleBuffer, SampleBuffer)> {
    let period = synthesize_triangular(spec, 1)?;
    let up = period.slice(0, spec.slope_len)?;
    let down = period.slice(spec.slope_len, spec.slope_len)?;
    Ok((up, down))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_crossing_freq(x: &[f64], center: usize, half: usize, fs: f64) -> f64 {
        // Frequency from the phase slope of successive samples is unreliable near
        // Nyquist; count zero crossings over a short window instead.
        let lo = center.saturating_sub(half);
        let hi = (center + half).min(x.len() - 1);
        let crossings: Vec<f64> = (lo..hi)
            .filter(|&i| x[i] == 0.0 || x[i].signum() != x[i + 1].signum())
            .map(|i| i as f64 + x[i] / (x[i] - x[i + 1]))
            .collect();
        let span = crossings.last().unwrap() - crossings.first().unwrap();
        (crossings.len() - 1) as f64 / (2.0 * span / fs)
    }

    #[test]
    fn default_period_shape() {
        let spec = ChirpSpec::default();
        let buf = synthesize_triangular(&spec, 1).unwrap();
        assert_eq!(buf.len(), 2048);
        assert!((spec.instantaneous_frequency(0.0) - 17_500.0).abs() < 1e-9);
        let f1023 = spec.instantaneous_frequency(1023.0 / 48_000.0);
        assert!((f1023 - 23_494.14).abs() < 0.01, "{f1023}");
        // The waveform itself agrees with the analytic sweep.
        let x = buf.channel(0);
        let early = zero_crossing_freq(x, 40, 40, 48_000.0);
        assert!((early - (17_500.0 + spec.chirp_rate() * 40.0 / 48_000.0)).abs() < 60.0);
    }

    #[test]
    fn rejects_degenerate_band() {
        let spec = ChirpSpec {
            f1: 17_500.0,
            ..ChirpSpec::default()
        };
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
        assert!(synthesize_triangular(&spec, 1).is_err());
        assert!(synthesize_triangular(&ChirpSpec::default(), 0).is_err());
    }

    #[test]
    fn references_tile_one_period() {
        let spec = ChirpSpec::default();
        let (up, down) = reference_slopes(&spec).unwrap();
        let period = synthesize_triangular(&spec, 1).unwrap();
        let joined: Vec<f64> = up.channel(0).iter().chain(down.channel(0)).copied().collect();
        assert_eq!(joined, period.channel(0));
    }

    #[test]
    fn phase_continuous_at_turning_points() {
        let spec = ChirpSpec::default();
        let buf = synthesize_triangular(&spec, 3).unwrap();
        let x = buf.channel(0);
        // Largest sample-to-sample step anywhere stays bounded by the top-of-band
        // increment, so there is no discontinuity at the slope joins.
        let max_step = x.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
        let bound = 2.0 * spec.amplitude * (std::f64::consts::PI * spec.f1 / spec.sample_rate).sin();
        assert!(max_step <= bound + 1e-9);
    }

    #[test]
    fn deterministic_output() {
        let spec = ChirpSpec::default();
        let a = synthesize_triangular(&spec, 2).unwrap();
        let b = synthesize_triangular(&spec, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn continuous_and_sampled_phase_agree() {
        let spec = ChirpSpec::default();
        for n in [0i64, 17, 1023, 1024, 2047, 2048, 99_999, -5] {
            let a = spec.phase_cycles_at_sample(n);
            let b = spec.phase_cycles(n as f64 / spec.sample_rate);
            let d = (a - b).rem_euclid(1.0);
            assert!(d.min(1.0 - d) < 1e-7, "n={n} {a} {b}");
        }
    }
}
