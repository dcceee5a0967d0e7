//! Gyro integration re-anchored by short acoustic bursts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{PoseEstimate, PoseSource};
use crate::error::{Error, Result};

/// One gyro reading: angular rates about the yaw, pitch and roll axes, deg/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub t: f64,
    pub rate: [f64; 3],
}

impl ImuSample {
    pub fn validate(&self) -> Result<()> {
        if !self.t.is_finite() || self.rate.iter().any(|r| !r.is_finite() || r.abs() > 2000.0) {
            return Err(Error::Input(format!("implausible IMU sample at t={}", self.t)));
        }
        Ok(())
    }
}

/// Simulated gyro: true rates scaled, biased and disturbed by white noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GyroModel {
    pub rate_hz: f64,
    /// Constant bias per axis, deg/s.
    pub bias: [f64; 3],
    /// Per-sample white noise standard deviation, deg/s.
    pub noise: f64,
    /// Relative scale-factor error.
    pub scale_error: f64,
    pub seed: u64,
}

impl Default for GyroModel {
    fn default() -> Self {
        Self { rate_hz: 100.0, bias: [0.05, 0.05, 0.0], noise: 0.5, scale_error: 0.02, seed: 0 }
    }
}

impl GyroModel {
    pub fn ideal(rate_hz: f64) -> Self {
        Self { rate_hz, bias: [0.0; 3], noise: 0.0, scale_error: 0.0, seed: 0 }
    }

    /// Samples the gyro over `[t0, t1)` given true yaw/pitch angles (deg) as
    /// a function of time.
    pub fn sample(&self, t0: f64, t1: f64, angles: impl Fn(f64) -> (f64, f64)) -> Vec<ImuSample> {
        let dt = 1.0 / self.rate_hz;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let normal = Normal::new(0.0, self.noise.max(0.0)).expect("finite sigma");
        let n = ((t1 - t0) * self.rate_hz).floor().max(0.0) as usize;
        let h = 0.25 * dt;
        (0..n)
            .map(|i| {
                let t = t0 + i as f64 * dt;
                let (ya, pa) = angles(t - h);
                let (yb, pb) = angles(t + h);
                let truth = [(yb - ya) / (2.0 * h), (pb - pa) / (2.0 * h), 0.0];
                let mut rate = [0.0; 3];
                for k in 0..3 {
                    let noise = if self.noise > 0.0 { normal.sample(&mut rng) } else { 0.0 };
                    rate[k] = truth[k] * (1.0 + self.scale_error) + self.bias[k] + noise;
                }
                ImuSample { t, rate }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PitchSource {
    Imu,
    Acoustic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionParams {
    /// Seconds between acoustic re-anchoring bursts; infinity anchors once.
    pub t_cal: f64,
    /// Length of each acoustic burst, seconds.
    pub burst: f64,
    pub pitch_source: PitchSource,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self { t_cal: 1.0, burst: 0.5, pitch_source: PitchSource::Imu }
    }
}

#[derive(Debug, Clone, Copy)]
struct Anchor {
    /// Time from which this anchor applies.
    from: f64,
    yaw: f64,
    pitch: f64,
    d_m: f64,
    ok: bool,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Integrated yaw/pitch at every IMU sample (trapezoidal rule, starting at 0).
fn integrate(imu: &[ImuSample]) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(imu.len());
    let mut acc = [0.0; 2];
    for (i, s) in imu.iter().enumerate() {
        if i > 0 {
            let p = &imu[i - 1];
            let dt = s.t - p.t;
            for k in 0..2 {
                acc[k] += 0.5 * (p.rate[k] + s.rate[k]) * dt;
            }
        }
        out.push(acc);
    }
    out
}

fn interpolate(imu: &[ImuSample], integrated: &[[f64; 2]], t: f64) -> [f64; 2] {
    let i = imu.partition_point(|s| s.t <= t);
    if i == 0 {
        return integrated[0];
    }
    if i >= imu.len() {
        return integrated[imu.len() - 1];
    }
    let (a, b) = (&imu[i - 1], &imu[i]);
    let u = (t - a.t) / (b.t - a.t);
    [0, 1].map(|k| integrated[i - 1][k] + u * (integrated[i][k] - integrated[i - 1][k]))
}

/// Fuses a gyro stream with acoustic poses. Every `t_cal` seconds the
/// acoustic poses of a `burst`-long window re-anchor the integrated angles
/// (median offset) and the distance; in between, the gyro carries the
/// orientation alone. Output is one pose per IMU sample.
pub fn fuse_imu(imu: &[ImuSample], acoustic: &[PoseEstimate], params: &FusionParams) -> Result<Vec<PoseEstimate>> {
    if !(params.t_cal > 0.0) || !(params.burst > 0.0) {
        return Err(Error::Config("t_cal and burst must be positive".into()));
    }
    if imu.is_empty() {
        return Ok(Vec::new());
    }
    for s in imu {
        s.validate()?;
    }
    if imu.windows(2).any(|w| w[1].t <= w[0].t) {
        return Err(Error::Input("IMU timestamps must increase".into()));
    }
    let integrated = integrate(imu);
    let (t0, t_end) = (imu[0].t, imu[imu.len() - 1].t);

    let mut anchors: Vec<Anchor> = Vec::new();
    let mut j = 0u64;
    loop {
        let b = if j == 0 { t0 } else { t0 + j as f64 * params.t_cal };
        if b > t_end || (j > 0 && !params.t_cal.is_finite()) {
            break;
        }
        let window: Vec<&PoseEstimate> = acoustic
            .iter()
            .filter(|p| p.t >= b && p.t < b + params.burst)
            .collect();
        let offsets = |k: usize, valid: fn(&PoseEstimate) -> bool, value: fn(&PoseEstimate) -> f64| {
            median(
                window
                    .iter()
                    .filter(|p| valid(p) && value(p).is_finite())
                    .map(|p| value(p) - interpolate(imu, &integrated, p.t)[k])
                    .collect(),
            )
        };
        let yaw = offsets(0, |p| p.yaw_valid, |p| p.yaw);
        let pitch = offsets(1, |p| p.pitch_valid, |p| p.pitch);
        let d_m = median(window.iter().filter(|p| p.yaw_valid && p.d_m.is_finite()).map(|p| p.d_m).collect());
        let prev = anchors.last().copied();
        let anchor = match (yaw, prev) {
            (Some(y), _) => Anchor {
                from: b + params.burst,
                yaw: y,
                pitch: pitch.or(prev.map(|a| a.pitch)).unwrap_or(0.0),
                d_m: d_m.or(prev.map(|a| a.d_m)).unwrap_or(f64::NAN),
                ok: pitch.is_some(),
            },
            // Nothing usable in the burst: keep integrating from the last fix.
            (None, Some(p)) => Anchor { from: b + params.burst, ok: false, ..p },
            (None, None) => Anchor { from: b + params.burst, yaw: 0.0, pitch: 0.0, d_m: f64::NAN, ok: false },
        };
        anchors.push(anchor);
        j += 1;
    }

    let latest_acoustic_pitch = |t: f64| {
        let i = acoustic.partition_point(|p| p.t <= t);
        acoustic[..i].iter().rev().find(|p| p.pitch_valid).map(|p| p.pitch)
    };
    let mut k = 0usize;
    let out = imu
        .iter()
        .zip(&integrated)
        .map(|(s, ang)| {
            while k + 1 < anchors.len() && anchors[k + 1].from <= s.t {
                k += 1;
            }
            let a = anchors[k];
            let pitch = match params.pitch_source {
                PitchSource::Imu => ang[1] + a.pitch,
                PitchSource::Acoustic => latest_acoustic_pitch(s.t).unwrap_or(ang[1] + a.pitch),
            };
            PoseEstimate {
                t: s.t,
                d_m: a.d_m,
                yaw: ang[0] + a.yaw,
                pitch,
                valid: a.ok,
                yaw_valid: a.ok,
                pitch_valid: a.ok,
                source: PoseSource::Fused,
            }
        })
        .collect();
    Ok(out)
}
