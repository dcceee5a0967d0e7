//! Reference beat, coarse synchronization and clock-drift calibration.
//!
//! During calibration the left ANC microphone is held against the speaker,
//! so its beat frequency marks (almost) zero distance. Fitting that beat over
//! a few seconds gives both the zero-distance reference and the linear drift
//! between the transmitter and receiver clocks.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::{fft_forward, fft_inverse};
use crate::error::{Error, Result};
use crate::ranging::{cfar_detect, refine_peak, FrameFrontEnd, RangingConfig};
use crate::signal::ChirpSpec;
use crate::simulator::{HeadGeometry, LEFT};
use crate::stream::SampleSource;

/// Normalized correlation below which no chirp is considered present.
pub const SYNC_FLOOR: f64 = 0.2;

/// Beat frequency as a linear function of receiver time.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReferenceLine {
    /// Beat at the calibration instant, Hz.
    pub intercept: f64,
    /// Drift, Hz per second.
    pub slope: f64,
}

impl ReferenceLine {
    pub fn at(&self, t: f64, t0: f64) -> f64 {
        self.intercept + self.slope * (t - t0)
    }
}

/// Everything a tracking run needs from calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationData {
    /// Receiver sample (modulo one period) at which a transmitted period
    /// starts.
    pub coarse_offset: usize,
    /// Zero-distance beat line, shared by all microphones since they run
    /// on one receiver clock.
    pub reference: ReferenceLine,
    /// Raw per-microphone fits, kept for diagnostics.
    pub mic_lines: [ReferenceLine; 3],
    /// Receiver time the reference line is anchored at, seconds.
    pub calibrated_at: f64,
    /// Gap between the left mic and the speaker during calibration, meters.
    pub standoff: f64,
    pub geometry: HeadGeometry,
    /// Extra pitch zero offset captured from a neutral pose, degrees.
    #[serde(default)]
    pub pitch_offset: f64,
    pub speed_of_sound: f64,
}

impl CalibrationData {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: CalibrationData = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        c.geometry.validate()?;
        Ok(c)
    }
}

/// Zero-distance reference beat for microphone `mic` at receiver time `t`.
pub fn drift_correct(cal: &CalibrationData, t: f64, _mic: usize) -> f64 {
    cal.reference.at(t, cal.calibrated_at)
}

/// Sample offset (modulo one period) at which transmitted periods start in
/// `received`.
///
/// Each whole period of the input is correlated against a phase-continuous
/// two-period stretch of the transmitted chirp using complex envelopes, and
/// the envelopes are summed so long inputs average noise away.
pub fn coarse_sync(received: &[f64], spec: &ChirpSpec) -> Result<usize> {
    spec.validate()?;
    let p = spec.period_len();
    if received.len() < 2 * p {
        return Err(Error::Input(format!(
            "coarse sync needs at least two periods ({} samples), got {}",
            2 * p,
            received.len()
        )));
    }
    let n = 4 * p;
    let mut reference = vec![Complex64::default(); n];
    for (m, z) in reference.iter_mut().take(2 * p).enumerate() {
        *z = Complex64::from_polar(1.0, std::f64::consts::TAU * spec.phase_cycles_at_sample(m as i64));
    }
    fft_forward(&mut reference);

    let mut envelope = vec![0.0; p];
    let mut chunks = 0usize;
    for chunk in received.chunks_exact(p) {
        chunks += 1;
        let energy = chunk.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(energy > 0.0) {
            continue;
        }
        let mut x = vec![Complex64::default(); n];
        for (a, &v) in x.iter_mut().zip(chunk) {
            a.re = v;
        }
        fft_forward(&mut x);
        for (a, b) in x.iter_mut().zip(&reference) {
            *a *= b.conj();
        }
        fft_inverse(&mut x);
        // r[l] = sum_k x[k] conj(z[k + l]) sits at index n - l; a chunk
        // delayed by d lines up with l = p - d. The real chunk correlates with
        // half of the unit analytic reference, hence the factor of 2.
        let scale = 2.0 / (n as f64 * energy * (p as f64 / 2.0).sqrt());
        for (d, e) in envelope.iter_mut().enumerate() {
            *e += x[(n - (p - d)) % n].norm() * scale;
        }
    }
    let (lag, peak) = envelope
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, v)| (i, v / chunks as f64))
        .expect("non-empty");
    if !(peak >= SYNC_FLOOR) {
        return Err(Error::NoSignal(format!("chirp correlation {peak:.3} below floor {SYNC_FLOOR}")));
    }
    Ok(lag)
}

/// Settings of the calibration fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationParams {
    /// Start of the still window, receiver seconds.
    pub start: f64,
    /// Window length, seconds.
    pub window: f64,
    pub standoff: f64,
    pub geometry: HeadGeometry,
    pub speed_of_sound: f64,
    /// Allowed relative disagreement of per-mic drift slopes.
    pub slope_tolerance: f64,
    /// Absolute slack on the drift agreement, Hz/s.
    pub slope_floor: f64,
    /// Largest residual spread of the beat about its line, raw bins.
    pub max_residual_bins: f64,
}

impl Default for CalibrationParams {
    fn default() -> Self {
        Self {
            start: 0.0,
            window: 4.0,
            standoff: 0.002,
            geometry: HeadGeometry::default(),
            speed_of_sound: 343.0,
            slope_tolerance: 0.1,
            slope_floor: 0.5,
            max_residual_bins: 1.0,
        }
    }
}

fn fit_line(points: &[(f64, f64)], t0: f64) -> (ReferenceLine, f64) {
    let n = points.len() as f64;
    let mt = points.iter().map(|p| p.0 - t0).sum::<f64>() / n;
    let mv = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(t, v) in points {
        sxy += (t - t0 - mt) * (v - mv);
        sxx += (t - t0 - mt) * (t - t0 - mt);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = mv - slope * mt;
    let rss: f64 = points
        .iter()
        .map(|&(t, v)| (v - intercept - slope * (t - t0)).powi(2))
        .sum();
    (ReferenceLine { intercept, slope }, (rss / n).sqrt())
}

/// Fits the zero-distance reference and clock drift over a still window.
pub fn calibrate_reference(
    source: &mut dyn SampleSource,
    spec: &ChirpSpec,
    config: &RangingConfig,
    params: &CalibrationParams,
) -> Result<CalibrationData> {
    params.geometry.validate()?;
    let fs = spec.sample_rate;
    let p = spec.period_len();
    if !(params.window > 0.0 && params.start >= 0.0) {
        return Err(Error::Config("calibration window must be positive".into()));
    }
    let w0 = (params.start * fs).round() as u64;
    let wlen = (params.window * fs).round() as usize;
    if wlen < 8 * p {
        return Err(Error::Config(format!("calibration window of {} s is too short", params.window)));
    }
    let buf = source
        .read(w0, wlen)?
        .ok_or_else(|| Error::Input("calibration window extends past the end of the recording".into()))?;
    if buf.num_channels() < 3 {
        return Err(Error::Input(format!("need 3 channels, got {}", buf.num_channels())));
    }
    let offset = coarse_sync(buf.channel(LEFT), spec)?;
    let coarse_offset = ((w0 + offset as u64) % p as u64) as usize;

    let mut front = FrameFrontEnd::new(spec, config)?;
    let cfar = config.cfar.unwrap_or_default();
    let lead = config.sync_lead;
    // First frame inside the window, on the synchronized grid.
    let mut start = (offset + p - lead % p) % p;
    let mut points: [Vec<(f64, f64)>; 3] = Default::default();
    while start + p <= wlen {
        let t = (w0 as usize + start + lead) as f64 / fs + spec.period_time() / 2.0;
        for (m, pts) in points.iter_mut().enumerate() {
            let spectra = front.slope_spectra(&buf.channel(m)[start..start + p])?;
            let mut beats = Vec::with_capacity(2);
            for s in &spectra {
                let peaks = cfar_detect(s, &cfar, Some(config.band));
                let strongest = peaks.iter().map(|q| q.magnitude).fold(0.0, f64::max);
                if let Some(q) = peaks.iter().find(|q| q.magnitude >= config.rho * strongest) {
                    beats.push(refine_peak(s, q.bin));
                }
            }
            if beats.len() == 2 {
                pts.push((t, 0.5 * (beats[0] + beats[1])));
            }
        }
        start += p;
    }
    let t_c = (w0 as f64 + wlen as f64 / 2.0) / fs;
    let min_points = 8.min((wlen / p).saturating_sub(1));
    let mut lines = [ReferenceLine::default(); 3];
    for (m, pts) in points.iter().enumerate() {
        if pts.len() < min_points {
            return Err(Error::NoSignal(format!("mic {m}: only {} usable frames in the calibration window", pts.len())));
        }
        let (line, resid) = fit_line(pts, t_c);
        if resid > params.max_residual_bins * spec.raw_bin_hz() {
            return Err(Error::Calibration(format!(
                "mic {m}: beat wanders {resid:.1} Hz about its trend; the head moved during calibration"
            )));
        }
        lines[m] = line;
    }
    let max_drift = 1.5 * 200e-6 * spec.chirp_rate();
    let left = lines[LEFT].slope;
    if left.abs() > max_drift {
        return Err(Error::Calibration(format!("implausible clock drift of {left:.2} Hz/s")));
    }
    for (m, l) in lines.iter().enumerate() {
        if (l.slope - left).abs() > params.slope_tolerance * left.abs() + params.slope_floor {
            return Err(Error::Calibration(format!(
                "mic {m} drifts at {:.2} Hz/s but the left mic at {left:.2} Hz/s; the head moved during calibration",
                l.slope
            )));
        }
    }
    Ok(CalibrationData {
        coarse_offset,
        reference: lines[LEFT],
        mic_lines: lines,
        calibrated_at: t_c,
        standoff: params.standoff,
        geometry: params.geometry,
        pitch_offset: 0.0,
        speed_of_sound: params.speed_of_sound,
    })
}
