//! Small DSP building blocks: windows, IIR low-pass, FFT helpers.

use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Symmetric Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.5 - 0.5 * (TAU * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// One second-order section in transposed direct form II.
#[derive(Debug, Clone, Copy)]
pub struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn lowpass(cutoff: f64, sample_rate: f64, q: f64) -> Self {
        let w0 = TAU * cutoff / sample_rate;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        let a0 = 1.0 + alpha;
        let b0 = (1.0 - cos) / 2.0 / a0;
        Biquad {
            b: [b0, (1.0 - cos) / a0, b0],
            a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
        }
    }

    /// Runs the section in place, starting from the steady state for a
    /// constant input equal to the first sample.
    fn run(&self, x: &mut [f64]) {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let Some(&first) = x.first() else { return };
        let dc = (b0 + b1 + b2) / (1.0 + a1 + a2);
        let y0 = dc * first;
        let mut z2 = b2 * first - a2 * y0;
        let mut z1 = b1 * first - a1 * y0 + z2;
        for v in x.iter_mut() {
            let input = *v;
            let out = b0 * input + z1;
            z1 = b1 * input - a1 * out + z2;
            z2 = b2 * input - a2 * out;
            *v = out;
        }
    }
}

/// Butterworth low-pass as a cascade of second-order sections.
#[derive(Debug, Clone)]
pub struct LowPass {
    sections: Vec<Biquad>,
}

impl LowPass {
    /// `order` must be even.
    pub fn butterworth(order: usize, cutoff: f64, sample_rate: f64) -> Self {
        assert!(order >= 2 && order.is_multiple_of(2), "order must be even and >= 2");
        let sections = (0..order / 2)
            .map(|k| {
                let theta = PI * (2 * k + 1) as f64 / (2 * order) as f64;
                Biquad::lowpass(cutoff, sample_rate, 1.0 / (2.0 * theta.cos()))
            })
            .collect();
        LowPass { sections }
    }

    pub fn filter_in_place(&self, x: &mut [f64]) {
        for s in &self.sections {
            s.run(x);
        }
    }

    /// Zero-phase forward-backward filtering with odd-reflection padding.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = (6 * self.sections.len() * 2).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
        self.filter_in_place(&mut ext);
        ext.reverse();
        self.filter_in_place(&mut ext);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

/// Windowed, zero-padded magnitude spectrum computation with a cached plan.
pub struct MagnitudeAnalyzer {
    input_len: usize,
    fft_len: usize,
    window: Vec<f64>,
    scale: f64,
    fft: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
}

impl std::fmt::Debug for MagnitudeAnalyzer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MagnitudeAnalyzer")
            .field("input_len", &self.input_len)
            .field("fft_len", &self.fft_len)
            .finish()
    }
}

impl Clone for MagnitudeAnalyzer {
    fn clone(&self) -> Self {
        MagnitudeAnalyzer::new(self.input_len, self.fft_len / self.input_len)
    }
}

impl MagnitudeAnalyzer {
    pub fn new(input_len: usize, zero_pad: usize) -> Self {
        let fft_len = input_len * zero_pad.max(1);
        let window = hann(input_len);
        // A unit-amplitude tone on a bin centre reads as magnitude 1.
        let scale = 2.0 / window.iter().sum::<f64>();
        let fft = FftPlanner::new().plan_fft_forward(fft_len);
        let scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        MagnitudeAnalyzer {
            input_len,
            fft_len,
            window,
            scale,
            fft,
            scratch,
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn fft_len(&self) -> usize {
        self.fft_len
    }

    /// Magnitudes of bins `0..=fft_len/2`.
    pub fn magnitudes(&mut self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.input_len);
        let mut buf = vec![Complex64::default(); self.fft_len];
        for ((b, &v), &w) in buf.iter_mut().zip(x).zip(&self.window) {
            b.re = v * w;
        }
        self.fft.process_with_scratch(&mut buf, &mut self.scratch);
        buf[..=self.fft_len / 2]
            .iter()
            .map(|c| c.norm() * self.scale)
            .collect()
    }
}

/// Vertex of the parabola through three equally spaced samples. Returns the
/// offset from the middle sample in `[-0.5, 0.5]` and the interpolated height.
pub fn parabolic_peak(left: f64, mid: f64, right: f64) -> (f64, f64) {
    let denom = left - 2.0 * mid + right;
    if denom >= 0.0 || !denom.is_finite() {
        return (0.0, mid);
    }
    let offset = (0.5 * (left - right) / denom).clamp(-0.5, 0.5);
    (offset, mid - 0.25 * (left - right) * offset)
}

/// In-place forward FFT of a complex buffer.
pub fn fft_forward(buf: &mut [Complex64]) {
    FftPlanner::new().plan_fft_forward(buf.len()).process(buf);
}

pub fn fft_inverse(buf: &mut [Complex64]) {
    FftPlanner::new().plan_fft_inverse(buf.len()).process(buf);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lowpass_passes_dc_and_rejects_high_band() {
        let lp = LowPass::butterworth(4, 3_000.0, 48_000.0);
        let dc = lp.filtfilt(&vec![1.0; 512]);
        assert!(dc.iter().all(|v| (v - 1.0).abs() < 1e-9));

        let tone = |f: f64| -> Vec<f64> {
            (0..4096).map(|i| (TAU * f * i as f64 / 48_000.0).sin()).collect()
        };
        let rms = |x: &[f64]| (x[1024..3072].iter().map(|v| v * v).sum::<f64>() / 2048.0).sqrt();
        let pass = lp.filtfilt(&tone(800.0));
        let stop = lp.filtfilt(&tone(12_000.0));
        assert!((rms(&pass) / std::f64::consts::FRAC_1_SQRT_2 - 1.0).abs() < 0.01);
        assert!(rms(&stop) < 1e-4);
        // Butterworth: -3 dB per pass at the cutoff, so -6 dB after filtfilt.
        let edge = lp.filtfilt(&tone(3_000.0));
        let gain_db = 20.0 * (rms(&edge) / std::f64::consts::FRAC_1_SQRT_2).log10();
        assert!((gain_db + 6.02).abs() < 0.2, "{gain_db}");
    }

    #[test]
    fn analyzer_tone_amplitude() {
        let mut a = MagnitudeAnalyzer::new(1024, 4);
        let f = 48_000.0 / 1024.0 * 10.0;
        let x: Vec<f64> = (0..1024).map(|i| 0.3 * (TAU * f * i as f64 / 48_000.0).cos()).collect();
        let m = a.magnitudes(&x);
        assert_eq!(m.len(), 2049);
        assert!((m[40] - 0.3).abs() < 1e-3, "{}", m[40]);
    }

    #[test]
    fn parabola_vertex() {
        // y = -(x - 0.3)^2 sampled at -1, 0, 1
        let f = |x: f64| 2.0 - (x - 0.3) * (x - 0.3);
        let (off, h) = parabolic_peak(f(-1.0), f(0.0), f(1.0));
        assert!((off - 0.3).abs() < 1e-12);
        assert!((h - 2.0).abs() < 1e-12);
        assert_eq!(parabolic_peak(1.0, 1.0, 1.0), (0.0, 1.0));
    }
}
