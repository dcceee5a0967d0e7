//! Calibration-free attention detection: per-frame level and time differences
//! between the three microphones, classified by a kernel machine.

pub mod activity;
pub mod svm;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::coarse_sync;
use crate::dsp::MagnitudeAnalyzer;
use crate::error::{Error, Result};
use crate::ranging::{argmax_peak, cfar_detect, FrameFrontEnd, RangingConfig};
use crate::signal::{ChirpSpec, SampleBuffer};
use crate::simulator::{
    geometry::{dot, normalize, sub},
    Fixation, HeadPose, Scenario, SceneRenderer, TrajectorySpec, Vec3,
};
use crate::stream::SampleSource;

pub use activity::{
    classify_activity, extract_activity_features, train_activity, Activity, ActivityFeatures, ActivityModel,
};
pub use svm::{train_classifier, ClassifierModel, Kernel, KernelKind, MultiClassModel, Standardizer, SvmParams};

pub const BANDS: usize = 20;
pub const PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];
pub const FEATURE_DIM: usize = BANDS * PAIRS.len() + PAIRS.len();
/// Level differences are clamped to this magnitude, dB.
pub const LD_LIMIT: f64 = 60.0;

/// Pair-major layout: `LD[pair][band]` for the three pairs (L/R, L/S, R/S),
/// followed by the three beat-peak gaps in the same pair order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionFeatures(pub Vec<f64>);

impl AttentionFeatures {
    pub fn level_differences(&self) -> &[f64] {
        &self.0[..BANDS * PAIRS.len()]
    }

    pub fn time_differences(&self) -> &[f64] {
        &self.0[BANDS * PAIRS.len()..]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// `10 log10(a / b)` clamped to +-60 dB, with silent bands treated as equal.
/// Taken as a difference of logs so that swapping the inputs negates the
/// result exactly.
pub fn level_difference(a: f64, b: f64) -> f64 {
    match (a > 0.0, b > 0.0) {
        (false, false) => 0.0,
        (true, false) => LD_LIMIT,
        (false, true) => -LD_LIMIT,
        (true, true) => (10.0 * (a.log10() - b.log10())).clamp(-LD_LIMIT, LD_LIMIT),
    }
}

/// Level differences for every pair and band from per-mic band energies.
pub fn band_level_differences(energies: &[[f64; BANDS]; 3]) -> Vec<f64> {
    PAIRS
        .iter()
        .flat_map(|&(i, j)| (0..BANDS).map(move |b| level_difference(energies[i][b], energies[j][b])))
        .collect()
}

/// Computes attention features from one chirp period of all three channels.
#[derive(Debug, Clone)]
pub struct AttentionFrontEnd {
    spec: ChirpSpec,
    config: RangingConfig,
    front: FrameFrontEnd,
    analyzer: MagnitudeAnalyzer,
    bands: Vec<(usize, usize)>,
}

impl AttentionFrontEnd {
    pub fn new(spec: &ChirpSpec, config: &RangingConfig) -> Result<Self> {
        let front = FrameFrontEnd::new(spec, config)?;
        let n = spec.period_len();
        let bin = spec.sample_rate / n as f64;
        let width = spec.bandwidth() / BANDS as f64;
        let bands = (0..BANDS)
            .map(|b| {
                let lo = spec.f0.min(spec.f1) + b as f64 * width;
                ((lo / bin).ceil() as usize, ((lo + width) / bin).ceil() as usize)
            })
            .collect();
        Ok(Self { spec: *spec, config: config.clone(), front, analyzer: MagnitudeAnalyzer::new(n, 1), bands })
    }

    /// Energy in each of the 20 chirp sub-bands.
    pub fn band_energies(&mut self, channel: &[f64]) -> [f64; BANDS] {
        let mags = self.analyzer.magnitudes(channel);
        let mut out = [0.0; BANDS];
        for (e, &(lo, hi)) in out.iter_mut().zip(&self.bands) {
            *e = mags[lo.min(mags.len())..hi.min(mags.len())].iter().map(|m| m * m).sum();
        }
        out
    }

    /// Strongest detected up-slope beat peak, Hz.
    pub fn beat_peak(&mut self, channel: &[f64]) -> Result<f64> {
        let [up, _] = self.front.slope_spectra(channel)?;
        let band = Some(self.config.band);
        let strongest = self
            .config
            .cfar
            .as_ref()
            .and_then(|c| cfar_detect(&up, c, band).into_iter().max_by(|a, b| a.magnitude.total_cmp(&b.magnitude)))
            .or_else(|| argmax_peak(&up, band));
        Ok(strongest.map(|p| p.frequency).unwrap_or(0.0))
    }

    pub fn features(&mut self, frame: &SampleBuffer) -> Result<AttentionFeatures> {
        let n = self.spec.period_len();
        if frame.num_channels() < 3 || frame.len() != n {
            return Err(Error::Input(format!(
                "attention frames need 3 channels of {n} samples, got {} of {}",
                frame.num_channels(),
                frame.len()
            )));
        }
        let mut energies = [[0.0; BANDS]; 3];
        let mut peaks = [0.0; 3];
        for m in 0..3 {
            energies[m] = self.band_energies(frame.channel(m));
            peaks[m] = self.beat_peak(frame.channel(m))?;
        }
        let mut f = band_level_differences(&energies);
        f.extend(PAIRS.iter().map(|&(i, j)| peaks[i] - peaks[j]));
        Ok(AttentionFeatures(f))
    }
}

/// One-shot feature extraction with the default front end.
pub fn extract_attention_features(frame: &SampleBuffer, spec: &ChirpSpec) -> Result<AttentionFeatures> {
    AttentionFrontEnd::new(spec, &RangingConfig::default())?.features(frame)
}

/// Feature vectors for consecutive periods of `source` between receiver times
/// `from` and `to`, each stamped with its center time.
///
/// Frames are aligned to the transmitted periods by correlating against the
/// chirp itself, which needs no calibration pose.
pub fn attention_frames(
    source: &mut dyn SampleSource,
    spec: &ChirpSpec,
    config: &RangingConfig,
    from: f64,
    to: f64,
) -> Result<Vec<(f64, AttentionFeatures)>> {
    let fs = spec.sample_rate;
    let p = spec.period_len();
    let start = (from.max(0.0) * fs).ceil() as u64;
    let end = (to * fs).floor() as u64;
    if end < start + 2 * p as u64 {
        return Ok(Vec::new());
    }
    let probe = ((end - start) as usize).min(24 * p) / p * p;
    let Some(head) = source.read(start, probe)? else {
        return Ok(Vec::new());
    };
    let offset = coarse_sync(head.channel(0), spec)?;
    let first = start + ((offset + p - config.sync_lead % p) % p) as u64;
    let mut fe = AttentionFrontEnd::new(spec, config)?;
    let mut out = Vec::new();
    let mut s = first;
    while s + p as u64 <= end {
        let Some(frame) = source.read(s, p)? else { break };
        out.push(((s as f64 + p as f64 / 2.0) / fs, fe.features(&frame)?));
        s += p as u64;
    }
    Ok(out)
}

/// Trains the look / not-look classifier.
pub fn train_attention(features: &[AttentionFeatures], looking: &[bool], params: &SvmParams) -> Result<ClassifierModel> {
    let x: Vec<Vec<f64>> = features.iter().map(|f| f.0.clone()).collect();
    train_classifier(&x, looking, params)
}

/// Whether the user faces the device, and the signed margin.
pub fn predict_attention(model: &ClassifierModel, f: &AttentionFeatures) -> Result<(bool, f64)> {
    let s = model.decision(&f.0)?;
    Ok((s > 0.0, s))
}

/// Screen-sized rectangle around a device speaker; the user "looks at" the
/// device when the head's facing ray passes through it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceRect {
    pub center: Vec3,
    /// Unit normal pointing toward the user side.
    pub normal: Vec3,
    pub width: f64,
    pub height: f64,
}

impl DeviceRect {
    /// A 0.33 m x 0.21 m laptop screen at `center`, turned horizontally to
    /// face `viewer`.
    pub fn facing(center: Vec3, viewer: Vec3) -> Self {
        let d = sub(viewer, center);
        let normal = normalize([d[0], d[1], 0.0]);
        Self { center, normal, width: 0.33, height: 0.21 }
    }

    fn axes(&self) -> (Vec3, Vec3) {
        let n = self.normal;
        let u = normalize([n[1], -n[0], 0.0]);
        (u, [0.0, 0.0, 1.0])
    }

    /// Whether the ray `origin + s * dir` (s > 0) crosses the rectangle.
    pub fn hit(&self, origin: Vec3, dir: Vec3) -> bool {
        let denom = dot(dir, self.normal);
        if denom >= -1e-12 {
            return false;
        }
        let s = dot(sub(self.center, origin), self.normal) / denom;
        if s <= 0.0 {
            return false;
        }
        let p = [origin[0] + s * dir[0], origin[1] + s * dir[1], origin[2] + s * dir[2]];
        let rel = sub(p, self.center);
        let (u, v) = self.axes();
        dot(rel, u).abs() <= self.width / 2.0 && dot(rel, v).abs() <= self.height / 2.0
    }

    pub fn looked_at(&self, pose: &HeadPose) -> bool {
        self.hit(pose.position, pose.face())
    }

    /// Point on the rectangle plane at in-plane offsets `(x, z)`.
    pub fn point(&self, x: f64, z: f64) -> Vec3 {
        let (u, v) = self.axes();
        let c = self.center;
        [c[0] + x * u[0] + z * v[0], c[1] + x * u[1] + z * v[1], c[2] + x * u[2] + z * v[2]]
    }
}

/// A labelled attention frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionSample {
    pub t: f64,
    pub features: AttentionFeatures,
    pub looking: bool,
}

/// Renders `scenario` and labels every frame by the device-rectangle oracle.
pub fn simulate_attention(
    scenario: &Scenario,
    spec: &ChirpSpec,
    config: &RangingConfig,
    rect: &DeviceRect,
) -> Result<Vec<AttentionSample>> {
    let mut renderer = SceneRenderer::new(scenario, spec)?;
    let from = renderer.tracking_start();
    let frames = attention_frames(&mut renderer, spec, config, from, scenario.duration)?;
    let mut out = Vec::with_capacity(frames.len());
    for (t, features) in frames {
        let pose = renderer.head_pose(scenario.clock.true_time(t));
        out.push(AttentionSample { t, features, looking: rect.looked_at(&pose) });
    }
    Ok(out)
}

/// Gaze take for attention datasets: a seated user glances on and off a
/// device at the origin. Roughly half of the fixations land on the screen.
pub fn gaze_scenario(seed: u64, duration: f64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa77e);
    let position = [rng.random_range(-0.15..0.15), rng.random_range(-0.75..-0.45), rng.random_range(-0.08..0.08)];
    let rect = DeviceRect::facing([0.0; 3], position);
    let mut fixations = Vec::new();
    let mut t = 0.0;
    let mut on = rng.random_bool(0.5);
    while t < duration {
        let target = if on {
            rect.point(
                rng.random_range(-0.4..0.4) * rect.width,
                rng.random_range(-0.4..0.4) * rect.height,
            )
        } else {
            let x: f64 = rng.random_range(0.3..0.9) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let z: f64 = rng.random_range(-0.45..0.35);
            rect.point(x, z)
        };
        fixations.push(Fixation { start: t, look_at: target });
        t += rng.random_range(1.2..2.5);
        on = !on || rng.random_bool(0.3);
    }
    let mut s = Scenario::new(duration, TrajectorySpec::Gaze { position, fixations, turn_time: 0.4 });
    s.seed = seed;
    s.name = Some(format!("gaze-{seed}"));
    s
}
