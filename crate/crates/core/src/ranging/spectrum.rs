use crate::dsp::{LowPass, MagnitudeAnalyzer};
use crate::error::{Error, Result};

/// Positive-frequency magnitude spectrum on a uniform bin grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Bin spacing in Hz (sample_rate / (input length × zero_pad)).
    pub bin_hz: f64,
    pub zero_pad: usize,
    pub magnitudes: Vec<f64>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.magnitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.magnitudes.is_empty()
    }

    pub fn frequency(&self, bin: f64) -> f64 {
        bin * self.bin_hz
    }

    pub fn bin_of(&self, frequency: f64) -> f64 {
        frequency / self.bin_hz
    }

    /// Spacing of the unpadded transform.
    pub fn raw_bin_hz(&self) -> f64 {
        self.bin_hz * self.zero_pad as f64
    }

    fn same_grid(&self, other: &Spectrum) -> bool {
        self.len() == other.len() && (self.bin_hz - other.bin_hz).abs() <= 1e-12 * self.bin_hz
    }

    /// Spectrum moved up in frequency by `bins` (fractional, linear
    /// interpolation); edges are held.
    pub fn shifted(&self, bins: f64) -> Spectrum {
        let n = self.len();
        if bins == 0.0 || n == 0 {
            return self.clone();
        }
        let magnitudes = (0..n)
            .map(|i| {
                let x = (i as f64 - bins).clamp(0.0, (n - 1) as f64);
                let j = (x.floor() as usize).min(n - 1);
                let u = x - j as f64;
                let next = self.magnitudes[(j + 1).min(n - 1)];
                self.magnitudes[j] * (1.0 - u) + next * u
            })
            .collect();
        Spectrum { magnitudes, ..*self }
    }
}

/// Multiplies a received slope by its transmitted reference and low-passes
/// the product, leaving the beat tone.
pub fn mix_and_lowpass(frame_half: &[f64], reference_half: &[f64], lowpass: &LowPass) -> Result<Vec<f64>> {
    if frame_half.len() != reference_half.len() {
        return Err(Error::Framing(format!(
            "slope has {} samples but the reference has {}",
            frame_half.len(),
            reference_half.len()
        )));
    }
    let mixed: Vec<f64> = frame_half.iter().zip(reference_half).map(|(a, b)| a * b).collect();
    Ok(lowpass.filtfilt(&mixed))
}

/// Hann-windowed, zero-padded transform with a cached plan.
#[derive(Debug, Clone)]
pub struct SpectrumAnalyzer {
    inner: MagnitudeAnalyzer,
    zero_pad: usize,
    sample_rate: f64,
}

impl SpectrumAnalyzer {
    pub fn new(input_len: usize, zero_pad: usize, sample_rate: f64) -> Self {
        Self { inner: MagnitudeAnalyzer::new(input_len, zero_pad), zero_pad: zero_pad.max(1), sample_rate }
    }

    pub fn input_len(&self) -> usize {
        self.inner.input_len()
    }

    pub fn spectrum(&mut self, baseband: &[f64]) -> Result<Spectrum> {
        if baseband.len() != self.inner.input_len() {
            return Err(Error::Framing(format!(
                "expected {} samples, got {}",
                self.inner.input_len(),
                baseband.len()
            )));
        }
        Ok(Spectrum {
            bin_hz: self.sample_rate / self.inner.fft_len() as f64,
            zero_pad: self.zero_pad,
            magnitudes: self.inner.magnitudes(baseband),
        })
    }
}

/// One-shot [`SpectrumAnalyzer`].
pub fn half_spectrum(baseband: &[f64], zero_pad: usize, sample_rate: f64) -> Result<Spectrum> {
    if zero_pad == 0 || baseband.is_empty() {
        return Err(Error::Config("half_spectrum needs input and zero_pad >= 1".into()));
    }
    SpectrumAnalyzer::new(baseband.len(), zero_pad, sample_rate).spectrum(baseband)
}

/// Bin-wise magnitude average of `current` and the given prior spectra.
pub fn noncoherent_integrate(current: &Spectrum, prior: &[Spectrum]) -> Result<Spectrum> {
    if prior.is_empty() {
        return Ok(current.clone());
    }
    if let Some(p) = prior.iter().find(|p| !p.same_grid(current)) {
        return Err(Error::Framing(format!(
            "cannot integrate spectra on different grids ({} bins @ {} Hz vs {} @ {} Hz)",
            current.len(),
            current.bin_hz,
            p.len(),
            p.bin_hz
        )));
    }
    let n = (prior.len() + 1) as f64;
    let mut out = current.magnitudes.clone();
    for p in prior {
        for (o, v) in out.iter_mut().zip(&p.magnitudes) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= n);
    Ok(Spectrum { magnitudes: out, ..*current })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{reference_slopes, ChirpSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::TAU;

    fn peak_hz(s: &Spectrum) -> f64 {
        let (i, _) = s
            .magnitudes
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        s.frequency(i as f64)
    }

    #[test]
    fn zero_delay_mixes_to_dc() {
        let spec = ChirpSpec::default();
        let (up, _) = reference_slopes(&spec).unwrap();
        let lp = LowPass::butterworth(4, 3000.0, spec.sample_rate);
        let bb = mix_and_lowpass(up.channel(0), up.channel(0), &lp).unwrap();
        let s = half_spectrum(&bb, 4, spec.sample_rate).unwrap();
        assert!(peak_hz(&s) < 20.0);
    }

    fn delayed_beat(spec: &ChirpSpec, delay: f64) -> f64 {
        let (up, _) = reference_slopes(spec).unwrap();
        let fs = spec.sample_rate;
        let rx: Vec<f64> = (0..spec.slope_len).map(|n| spec.value_at((n as f64 - delay) / fs)).collect();
        let lp = LowPass::butterworth(4, 3000.0, fs);
        let bb = mix_and_lowpass(&rx, up.channel(0), &lp).unwrap();
        peak_hz(&half_spectrum(&bb, 4, fs).unwrap())
    }

    #[test]
    fn delay_maps_to_beat() {
        let spec = ChirpSpec::default();
        let f = delayed_beat(&spec, 140.0);
        assert!((f - 820.3).abs() <= 46.875 / 4.0, "{f}");
        let bin = 46.875 * 48000.0 / 281250.0; // one raw bin of delay, in samples
        let a = delayed_beat(&spec, 200.0);
        let b = delayed_beat(&spec, 200.0 + bin);
        assert!((b - a - 46.875).abs() <= 46.875 / 4.0 + 1e-9, "{a} {b}");
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let lp = LowPass::butterworth(4, 3000.0, 48000.0);
        assert!(matches!(mix_and_lowpass(&[0.0; 4], &[0.0; 5], &lp), Err(Error::Framing(_))));
    }

    #[test]
    fn tone_lands_on_its_bin() {
        let fs = 48000.0;
        let x: Vec<f64> = (0..1024).map(|n| (TAU * 820.3 * n as f64 / fs).cos()).collect();
        let s = half_spectrum(&x, 4, fs).unwrap();
        assert!((peak_hz(&s) - 820.3).abs() <= 46.875 / 4.0);
        let z = half_spectrum(&[0.0; 1024], 4, fs).unwrap();
        assert!(z.magnitudes.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn parseval_holds_for_windowed_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = crate::dsp::hann(1024);
        for pad in [1, 4] {
            let x: Vec<f64> = (0..1024).map(|_| rng.random_range(-1.0..1.0)).collect();
            let s = half_spectrum(&x, pad, 48000.0).unwrap();
            // Undo the amplitude scaling and fold the two-sided sum.
            let scale = 2.0 / w.iter().sum::<f64>();
            let n = s.len() - 1;
            let spec_energy: f64 = s
                .magnitudes
                .iter()
                .enumerate()
                .map(|(i, m)| {
                    let p = (m / scale).powi(2);
                    if i == 0 || i == n { p } else { 2.0 * p }
                })
                .sum();
            let time_energy: f64 = x.iter().zip(&w).map(|(a, b)| (a * b).powi(2)).sum();
            let fft_len = (1024 * pad) as f64;
            assert!((spec_energy / (fft_len * time_energy) - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn integration_examples() {
        let a = Spectrum { bin_hz: 1.0, zero_pad: 1, magnitudes: vec![1.0, 2.0, 3.0] };
        assert_eq!(noncoherent_integrate(&a, &[]).unwrap(), a);
        assert_eq!(noncoherent_integrate(&a, std::slice::from_ref(&a)).unwrap(), a);
        let b = Spectrum { bin_hz: 2.0, ..a.clone() };
        assert!(noncoherent_integrate(&a, &[b]).is_err());
        let s = a.shifted(1.0);
        assert_eq!(s.magnitudes, vec![1.0, 1.0, 2.0]);
    }

    #[test]
    fn integration_raises_peak_to_floor_ratio() {
        // Tone at 0 dB per-sample SNR. Averaging does not move the mean
        // noise magnitude, it narrows its spread, so the floor is read as the
        // strongest noise bin: the level a detector has to clear.
        let fs = 48000.0;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let normal = rand_distr::Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).unwrap();
        let mut an = SpectrumAnalyzer::new(1024, 4, fs);
        let tone_bin = (820.3 / (fs / 4096.0)).round() as usize;
        let ratio = |s: &Spectrum| {
            let floor = s.magnitudes[200..900].iter().cloned().fold(0.0, f64::max);
            s.magnitudes[tone_bin - 2..=tone_bin + 2].iter().cloned().fold(0.0, f64::max) / floor
        };
        let (mut single, mut double) = (0.0, 0.0);
        for _ in 0..100 {
            let mut frame = || {
                let x: Vec<f64> = (0..1024)
                    .map(|n| 0.05 * (TAU * 820.3 * n as f64 / fs).cos() + 0.05 * rng.sample(normal))
                    .collect();
                an.spectrum(&x).unwrap()
            };
            let a = frame();
            let b = frame();
            single += ratio(&b);
            double += ratio(&noncoherent_integrate(&b, &[a]).unwrap());
        }
        assert!(double > single, "{double} vs {single}");
    }
}
