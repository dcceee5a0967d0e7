//! Exercise recognition from a wearable transmitter: per-frame distances,
//! their rates, level difference and loss-of-track flags over one manually
//! segmented repetition, resampled to a fixed length.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::svm::{MultiClassModel, SvmParams};
use crate::calibration::CalibrationParams;
use crate::error::{Error, Result};
use crate::pipeline::{track, CalibrationSource};
use crate::ranging::{RangeEstimate, RangingConfig};
use crate::signal::ChirpSpec;
use crate::simulator::{
    CalibrationPhase, HeadPose, Keyframe, Scenario, SceneRenderer, TrajectorySpec, LEFT, RIGHT,
};

pub const ACTIVITY_LEN: usize = 160;
pub const ACTIVITY_CHANNELS: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activity {
    PushUp,
    BodyTwist,
    Arm,
    BirdDog,
}

impl Activity {
    pub const ALL: [Activity; 4] = [Activity::PushUp, Activity::BodyTwist, Activity::Arm, Activity::BirdDog];

    pub fn name(&self) -> &'static str {
        match self {
            Activity::PushUp => "push-up",
            Activity::BodyTwist => "body-twist",
            Activity::Arm => "arm",
            Activity::BirdDog => "bird-dog",
        }
    }
}

impl fmt::Display for Activity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Activity::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown activity {s:?}")))
    }
}

/// `ACTIVITY_LEN` rows of `[d_l, d_r, d_l', d_r', level L-R, lost_l, lost_r]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityFeatures(pub Vec<[f64; ACTIVITY_CHANNELS]>);

impl ActivityFeatures {
    pub fn flatten(&self) -> Vec<f64> {
        self.0.iter().flatten().copied().collect()
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.0.iter().map(|r| r[c]).collect()
    }
}

/// Replaces non-finite entries by the nearest earlier finite value (or the
/// first finite one for a leading gap).
fn fill_gaps(x: &mut [f64]) {
    let first = x.iter().copied().find(|v| v.is_finite()).unwrap_or(0.0);
    let mut last = first;
    for v in x.iter_mut() {
        if v.is_finite() {
            last = *v;
        } else {
            *v = last;
        }
    }
}

fn gradient(x: &[f64], t: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| {
            let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
            let dt = t[b] - t[a];
            if dt > 0.0 {
                (x[b] - x[a]) / dt
            } else {
                0.0
            }
        })
        .collect()
}

/// Linear resampling of `x` onto `len` evenly spaced points spanning it.
pub fn resample(x: &[f64], len: usize) -> Vec<f64> {
    let n = x.len();
    if n == 1 || len == 1 {
        return vec![x[0]; len];
    }
    (0..len)
        .map(|k| {
            let pos = k as f64 * (n - 1) as f64 / (len - 1) as f64;
            let i = (pos.floor() as usize).min(n - 2);
            let u = pos - i as f64;
            x[i] * (1.0 - u) + x[i + 1] * u
        })
        .collect()
}

/// Features of one segmented repetition.
pub fn extract_activity_features(window: &[RangeEstimate]) -> Result<ActivityFeatures> {
    if window.len() < 2 {
        return Err(Error::Segmentation(format!("repetition spans {} frames, need at least 2", window.len())));
    }
    let t: Vec<f64> = window.iter().map(|r| r.t).collect();
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(ACTIVITY_CHANNELS);
    let mut dl: Vec<f64> = window.iter().map(|r| r.distance[LEFT]).collect();
    let mut dr: Vec<f64> = window.iter().map(|r| r.distance[RIGHT]).collect();
    fill_gaps(&mut dl);
    fill_gaps(&mut dr);
    let mut ld: Vec<f64> = window.iter().map(|r| r.level_db[LEFT] - r.level_db[RIGHT]).collect();
    fill_gaps(&mut ld);
    cols.push(gradient(&dl, &t));
    cols.push(gradient(&dr, &t));
    cols.insert(0, dr);
    cols.insert(0, dl);
    cols.push(ld);
    for m in [LEFT, RIGHT] {
        cols.push(window.iter().map(|r| if r.dropped[m] { 1.0 } else { 0.0 }).collect());
    }
    let cols: Vec<Vec<f64>> = cols.iter().map(|c| resample(c, ACTIVITY_LEN)).collect();
    Ok(ActivityFeatures(
        (0..ACTIVITY_LEN).map(|k| std::array::from_fn(|c| cols[c][k])).collect(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityModel(pub MultiClassModel);

impl ActivityModel {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Format(e.to_string()))
    }
}

pub fn train_activity(samples: &[(Activity, ActivityFeatures)], params: &SvmParams) -> Result<ActivityModel> {
    let x: Vec<Vec<f64>> = samples.iter().map(|(_, f)| f.flatten()).collect();
    let y: Vec<String> = samples.iter().map(|(a, _)| a.name().to_string()).collect();
    MultiClassModel::train(&x, &y, params).map(ActivityModel)
}

pub fn classify_activity(model: &ActivityModel, features: &ActivityFeatures) -> Result<Activity> {
    model.0.predict(&features.flatten())?.parse()
}

/// Simulated exercise take. The transmitter is the wearable, so each
/// exercise is expressed as the head's motion relative to it. Returns the
/// scenario and the repetition windows in receiver seconds.
pub fn activity_scenario(activity: Activity, seed: u64, reps: usize) -> Result<(Scenario, Vec<(f64, f64)>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(activity as u64 + 1));
    let base_pos = [rng.random_range(-0.05..0.05), rng.random_range(-0.6..-0.45), rng.random_range(-0.05..0.05)];
    let base = HeadPose::facing(base_pos, [0.0; 3]);
    let amp = rng.random_range(0.8..1.2);
    let key = |t: f64, dx: f64, dy: f64, dyaw: f64, dpitch: f64| Keyframe {
        t,
        position: [base_pos[0] + dx, base_pos[1] + dy, base_pos[2]],
        yaw: base.yaw + dyaw,
        pitch: base.pitch + dpitch,
    };
    let mut keys = vec![key(0.0, 0.0, 0.0, 0.0, 0.0)];
    let mut t = 0.5;
    let mut reps_t = Vec::new();
    for _ in 0..reps {
        keys.push(key(t, 0.0, 0.0, 0.0, 0.0));
        let start = t;
        match activity {
            Activity::PushUp => {
                let period = rng.random_range(1.6..2.4);
                keys.push(key(t + period / 2.0, 0.0, 0.2 * amp, 0.0, 0.0));
                t += period;
            }
            Activity::BodyTwist => {
                let period = rng.random_range(2.4..3.2);
                let a = 45.0 * amp;
                keys.push(key(t + period / 4.0, 0.03, 0.0, a, 0.0));
                keys.push(key(t + 3.0 * period / 4.0, -0.03, 0.0, -a, 0.0));
                t += period;
            }
            Activity::Arm => {
                let period = rng.random_range(1.6..2.4);
                keys.push(key(t + period / 2.0, 0.25 * amp, 0.12 * amp, -35.0 * amp, 0.0));
                t += period;
            }
            Activity::BirdDog => {
                let period = rng.random_range(2.8..3.6);
                keys.push(key(t + 0.4 * period, 0.0, -0.18 * amp, 0.0, -20.0 * amp));
                keys.push(key(t + 0.6 * period, 0.0, -0.18 * amp, 0.0, -20.0 * amp));
                t += period;
            }
        }
        reps_t.push((start, t));
        t += rng.random_range(0.2..0.5);
    }
    keys.push(key(t, 0.0, 0.0, 0.0, 0.0));
    keys.push(key(t + 0.5, 0.0, 0.0, 0.0, 0.0));

    let phase = CalibrationPhase::default();
    let offset = phase.hold + phase.transition;
    let mut s = Scenario::new(offset + t + 0.5, TrajectorySpec::Keyframes { keys });
    s.seed = seed;
    s.name = Some(format!("{}-{seed}", activity.name()));
    s.calibration = Some(phase);
    let windows = reps_t
        .into_iter()
        .map(|(a, b)| (s.clock.receiver_time(offset + a), s.clock.receiver_time(offset + b)))
        .collect();
    Ok((s, windows))
}

/// Renders a take, tracks it and cuts one feature set per repetition.
pub fn simulate_activity(
    activity: Activity,
    seed: u64,
    reps: usize,
    spec: &ChirpSpec,
    config: &RangingConfig,
) -> Result<Vec<ActivityFeatures>> {
    let (scenario, windows) = activity_scenario(activity, seed, reps)?;
    let mut renderer = SceneRenderer::new(&scenario, spec)?;
    let params = CalibrationParams { start: 0.5, window: 3.0, ..Default::default() };
    let out = track(&mut renderer, spec, config, CalibrationSource::Window(params), None)?;
    windows
        .iter()
        .map(|&(a, b)| {
            let w: Vec<RangeEstimate> = out.ranges.iter().filter(|r| r.t >= a && r.t <= b).copied().collect();
            extract_activity_features(&w)
        })
        .collect()
}
