use serde::{Deserialize, Serialize};

use super::spectrum::Spectrum;
use crate::error::{Error, Result};

/// Cell-averaging CFAR parameters. Cell counts are in raw bins per side and
/// scale with the spectrum's zero-padding factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CfarParams {
    pub training: usize,
    pub guard: usize,
    pub pfa: f64,
    /// Run a second pass whose training cells exclude first-pass detections,
    /// so two nearby paths do not mask each other.
    pub censor: bool,
}

impl Default for CfarParams {
    fn default() -> Self {
        Self { training: 8, guard: 2, pfa: 1e-3, censor: true }
    }
}

impl CfarParams {
    pub fn validate(&self) -> Result<()> {
        if self.training == 0 || !(self.pfa > 0.0 && self.pfa < 1.0) {
            return Err(Error::Config("CFAR needs training cells and 0 < pfa < 1".into()));
        }
        Ok(())
    }
}

/// Threshold multiplier for `n` averaged exponential (square-law) cells.
pub fn cfar_alpha(n: f64, pfa: f64) -> f64 {
    n * (pfa.powf(-1.0 / n) - 1.0)
}

/// A spectral peak.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub bin: usize,
    pub frequency: f64,
    pub magnitude: f64,
    /// Peak power over the local noise estimate, dB.
    pub snr_db: f64,
}

fn band_bins(spectrum: &Spectrum, band: Option<[f64; 2]>) -> (usize, usize) {
    let n = spectrum.len();
    match band {
        Some([lo, hi]) => {
            let a = spectrum.bin_of(lo).ceil().max(0.0) as usize;
            let b = (spectrum.bin_of(hi).floor() as usize + 1).min(n);
            (a.min(n), b)
        }
        None => (0, n),
    }
}

/// One cell-averaging pass over `[lo, hi)`; cells with `keep == false` are
/// left out of the training averages.
#[allow(clippy::too_many_arguments)]
fn ca_pass(
    power: &[f64],
    keep: &[bool],
    lo: usize,
    hi: usize,
    train: usize,
    guard: usize,
    pad: usize,
    pfa: f64,
) -> (Vec<f64>, Vec<bool>) {
    let n = power.len();
    let mut psum = vec![0.0; n + 1];
    let mut pcount = vec![0usize; n + 1];
    for i in 0..n {
        let k = keep[i] as usize;
        psum[i + 1] = psum[i] + power[i] * k as f64;
        pcount[i + 1] = pcount[i] + k;
    }
    let mut noise = vec![f64::NAN; n];
    let mut detect = vec![false; n];
    for i in lo..hi {
        let mut cells = 0usize;
        let mut total = 0.0;
        if i > guard {
            let b = i - guard;
            let a = b.saturating_sub(train);
            cells += pcount[b] - pcount[a];
            total += psum[b] - psum[a];
        }
        if i + guard + 1 < n {
            let a = i + guard + 1;
            let b = (a + train).min(n);
            cells += pcount[b] - pcount[a];
            total += psum[b] - psum[a];
        }
        if cells == 0 {
            continue;
        }
        let mean = total / cells as f64;
        let n_eff = (cells as f64 / pad as f64).max(1.0);
        noise[i] = mean;
        detect[i] = power[i] > cfar_alpha(n_eff, pfa) * mean;
    }
    (noise, detect)
}

/// Cell-averaging CFAR over the power spectrum. Returns the local maxima
/// among detections in ascending frequency.
pub fn cfar_detect(spectrum: &Spectrum, params: &CfarParams, band: Option<[f64; 2]>) -> Vec<Peak> {
    let n = spectrum.len();
    let pad = spectrum.zero_pad.max(1);
    let (train, guard) = (params.training * pad, params.guard * pad);
    if n <= 2 * (train + guard) {
        return Vec::new();
    }
    let power: Vec<f64> = spectrum.magnitudes.iter().map(|m| m * m).collect();
    let (lo, hi) = band_bins(spectrum, band);
    let mut keep = vec![true; n];
    let (mut noise, mut detect) = ca_pass(&power, &keep, lo, hi, train, guard, pad, params.pfa);
    if params.censor && detect.iter().any(|&d| d) {
        for i in (0..n).filter(|&i| detect[i]) {
            for k in i.saturating_sub(guard)..(i + guard + 1).min(n) {
                keep[k] = false;
            }
        }
        (noise, detect) = ca_pass(&power, &keep, lo, hi, train, guard, pad, params.pfa);
    }

    (lo..hi)
        .filter(|&i| {
            detect[i]
                && (i == 0 || power[i] >= power[i - 1])
                && (i + 1 == n || power[i] > power[i + 1])
        })
        .map(|i| Peak {
            bin: i,
            frequency: spectrum.frequency(i as f64),
            magnitude: spectrum.magnitudes[i],
            snr_db: 10.0 * (power[i] / noise[i]).log10(),
        })
        .collect()
}

/// Strongest bin in the band, with its level over the band's median power.
/// Used when CFAR is disabled.
pub fn argmax_peak(spectrum: &Spectrum, band: Option<[f64; 2]>) -> Option<Peak> {
    let (lo, hi) = band_bins(spectrum, band);
    let slice = spectrum.magnitudes.get(lo..hi)?;
    let (k, &m) = slice.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
    if m <= 0.0 {
        return None;
    }
    let mut p: Vec<f64> = slice.iter().map(|v| v * v).collect();
    p.sort_by(f64::total_cmp);
    let median = p[p.len() / 2].max(f64::MIN_POSITIVE);
    Some(Peak {
        bin: lo + k,
        frequency: spectrum.frequency((lo + k) as f64),
        magnitude: m,
        snr_db: 10.0 * (m * m / median).log10(),
    })
}
