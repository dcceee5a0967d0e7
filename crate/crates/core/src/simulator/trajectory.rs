//! Piecewise head trajectories and the study-style motion presets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{HeadPose, Vec3};
use crate::error::{Error, Result};

/// A pose pinned at time `t` (seconds from the start of the trajectory).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub t: f64,
    pub position: Vec3,
    pub yaw: f64,
    pub pitch: f64,
}

impl Keyframe {
    fn pose(&self) -> HeadPose {
        HeadPose::new(self.position, self.yaw, self.pitch)
    }
}

/// Keyframed trajectory with smoothstep easing between consecutive keys, so
/// velocity is continuous and zero at every key. Linear trajectories move at
/// constant velocity between keys instead.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    keys: Vec<Keyframe>,
    linear: bool,
}

fn smoothstep(u: f64) -> f64 {
    u * u * (3.0 - 2.0 * u)
}

fn lerp(a: f64, b: f64, s: f64) -> f64 {
    a + (b - a) * s
}

impl Trajectory {
    pub fn new(mut keys: Vec<Keyframe>) -> Result<Self> {
        if keys.is_empty() {
            return Err(Error::Scenario("trajectory needs at least one keyframe".into()));
        }
        keys.sort_by(|a, b| a.t.total_cmp(&b.t));
        if keys.iter().any(|k| {
            !k.t.is_finite()
                || !k.yaw.is_finite()
                || !k.pitch.is_finite()
                || k.position.iter().any(|v| !v.is_finite())
        }) {
            return Err(Error::Scenario("trajectory keyframes must be finite".into()));
        }
        if keys.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(Error::Scenario("keyframe times must be strictly increasing".into()));
        }
        Ok(Self { keys, linear: false })
    }

    /// Constant-velocity interpolation between the keys.
    pub fn linear(keys: Vec<Keyframe>) -> Result<Self> {
        Ok(Self { linear: true, ..Self::new(keys)? })
    }

    pub fn stationary(pose: HeadPose) -> Self {
        Self {
            keys: vec![Keyframe {
                t: 0.0,
                position: pose.position,
                yaw: pose.yaw,
                pitch: pose.pitch,
            }],
            linear: false,
        }
    }

    pub fn keys(&self) -> &[Keyframe] {
        &self.keys
    }

    pub fn duration(&self) -> f64 {
        self.keys.last().map(|k| k.t).unwrap_or(0.0)
    }

    pub fn start(&self) -> f64 {
        self.keys[0].t
    }

    /// Pose at time `t`; holds the first/last key outside the keyed span.
    pub fn pose_at(&self, t: f64) -> HeadPose {
        let keys = &self.keys;
        if t <= keys[0].t {
            return keys[0].pose();
        }
        let last = keys[keys.len() - 1];
        if t >= last.t {
            return last.pose();
        }
        let i = keys.partition_point(|k| k.t <= t) - 1;
        let (a, b) = (keys[i], keys[i + 1]);
        let u = (t - a.t) / (b.t - a.t);
        let s = if self.linear { u } else { smoothstep(u) };
        HeadPose::new(
            [
                lerp(a.position[0], b.position[0], s),
                lerp(a.position[1], b.position[1], s),
                lerp(a.position[2], b.position[2], s),
            ],
            lerp(a.yaw, b.yaw, s),
            lerp(a.pitch, b.pitch, s),
        )
    }

    /// Largest combined yaw/pitch angular speed in deg/s.
    pub fn max_angular_speed(&self) -> f64 {
        // Smoothstep peaks at 1.5x the mean rate halfway between keys.
        let peak = if self.linear { 1.0 } else { 1.5 };
        self.keys
            .windows(2)
            .map(|w| {
                let dy = w[1].yaw - w[0].yaw;
                let dp = w[1].pitch - w[0].pitch;
                peak * (dy * dy + dp * dp).sqrt() / (w[1].t - w[0].t)
            })
            .fold(0.0, f64::max)
    }

    /// Shifts every key by `offset` seconds.
    pub fn shifted(&self, offset: f64) -> Self {
        Self {
            keys: self
                .keys
                .iter()
                .map(|k| Keyframe { t: k.t + offset, ..*k })
                .collect(),
            linear: self.linear,
        }
    }
}

/// The six motion sub-tasks of the study protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionPreset {
    Neutral,
    ForwardBack,
    YawSweeps,
    PitchSweeps,
    Zigzag,
    Random,
}

impl MotionPreset {
    pub const ALL: [MotionPreset; 6] = [
        MotionPreset::Neutral,
        MotionPreset::ForwardBack,
        MotionPreset::YawSweeps,
        MotionPreset::PitchSweeps,
        MotionPreset::Zigzag,
        MotionPreset::Random,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MotionPreset::Neutral => "neutral",
            MotionPreset::ForwardBack => "forward-back",
            MotionPreset::YawSweeps => "yaw-sweeps",
            MotionPreset::PitchSweeps => "pitch-sweeps",
            MotionPreset::Zigzag => "zigzag",
            MotionPreset::Random => "random",
        }
    }
}

/// Trajectory description as written in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TrajectorySpec {
    /// Hold one pose for the whole scenario. Orientation defaults to facing
    /// the speaker.
    Static {
        position: Vec3,
        #[serde(default)]
        yaw: Option<f64>,
        #[serde(default)]
        pitch: Option<f64>,
    },
    /// One of the study motion sub-tasks, performed from `position` while
    /// otherwise facing the speaker.
    Preset {
        preset: MotionPreset,
        position: Vec3,
        /// Length of the random-motion segment in seconds (random preset only).
        #[serde(default)]
        duration: Option<f64>,
        /// Scales every sweep amplitude.
        #[serde(default = "one")]
        amplitude: f64,
    },
    Keyframes {
        keys: Vec<Keyframe>,
    },
    /// Constant-speed motion along the speaker axis while facing the
    /// speaker: holds `position` until `start`, then recedes at `speed` m/s
    /// (negative approaches) for `duration` seconds and holds again.
    Radial {
        position: Vec3,
        speed: f64,
        #[serde(default)]
        start: f64,
        duration: f64,
    },
    /// Look at a sequence of targets from a fixed position.
    Gaze {
        position: Vec3,
        fixations: Vec<Fixation>,
        #[serde(default = "default_turn")]
        turn_time: f64,
    },
}

fn one() -> f64 {
    1.0
}

fn default_turn() -> f64 {
    0.4
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fixation {
    pub start: f64,
    pub look_at: Vec3,
}

impl TrajectorySpec {
    pub fn build(&self, speaker: Vec3, seed: u64) -> Result<Trajectory> {
        match self {
            TrajectorySpec::Static {
                position,
                yaw,
                pitch,
            } => {
                let facing = HeadPose::facing(*position, speaker);
                Ok(Trajectory::stationary(HeadPose::new(
                    *position,
                    yaw.unwrap_or(facing.yaw),
                    pitch.unwrap_or(facing.pitch),
                )))
            }
            TrajectorySpec::Preset {
                preset,
                position,
                duration,
                amplitude,
            } => preset_trajectory(*preset, *position, speaker, *amplitude, *duration, seed),
            TrajectorySpec::Keyframes { keys } => Trajectory::new(keys.clone()),
            TrajectorySpec::Radial { position, speed, start, duration } => {
                radial_trajectory(*position, speaker, *speed, *start, *duration)
            }
            TrajectorySpec::Gaze {
                position,
                fixations,
                turn_time,
            } => gaze_trajectory(*position, fixations, *turn_time),
        }
    }
}

struct KeyBuilder {
    base: HeadPose,
    toward: Vec3,
    keys: Vec<Keyframe>,
    t: f64,
}

impl KeyBuilder {
    fn new(base: HeadPose, speaker: Vec3) -> Self {
        let d = super::geometry::sub(speaker, base.position);
        let n = super::geometry::norm(d).max(1e-9);
        let mut b = Self {
            base,
            toward: [d[0] / n, d[1] / n, d[2] / n],
            keys: Vec::new(),
            t: 0.0,
        };
        b.push_at(0.0, 0.0, 0.0, 0.0);
        b
    }

    fn push_at(&mut self, t: f64, advance: f64, dyaw: f64, dpitch: f64) {
        let p = self.base.position;
        self.keys.push(Keyframe {
            t,
            position: [
                p[0] + self.toward[0] * advance,
                p[1] + self.toward[1] * advance,
                p[2] + self.toward[2] * advance,
            ],
            yaw: self.base.yaw + dyaw,
            pitch: self.base.pitch + dpitch,
        });
    }

    /// Moves to the given offsets over `dt` seconds.
    fn go(&mut self, dt: f64, advance: f64, dyaw: f64, dpitch: f64) {
        self.t += dt;
        self.push_at(self.t, advance, dyaw, dpitch);
    }

    fn hold(&mut self, dt: f64) {
        let last = *self.keys.last().unwrap();
        self.t += dt;
        self.keys.push(Keyframe { t: self.t, ..last });
    }

    fn finish(mut self) -> Result<Trajectory> {
        self.go(0.5, 0.0, 0.0, 0.0);
        self.hold(0.5);
        Trajectory::new(self.keys)
    }
}

/// Builds one of the study motion sub-tasks starting from a neutral pose at
/// `position` facing `speaker`.
pub fn preset_trajectory(
    preset: MotionPreset,
    position: Vec3,
    speaker: Vec3,
    amplitude: f64,
    duration: Option<f64>,
    seed: u64,
) -> Result<Trajectory> {
    let base = HeadPose::facing(position, speaker);
    let mut b = KeyBuilder::new(base, speaker);
    let a = amplitude;
    b.hold(1.0);
    match preset {
        MotionPreset::Neutral => b.hold(4.0),
        MotionPreset::ForwardBack => {
            for _ in 0..3 {
                b.go(0.5, 0.12 * a, 0.0, 0.0);
                b.go(0.5, 0.0, 0.0, 0.0);
                b.go(0.5, -0.12 * a, 0.0, 0.0);
                b.go(0.5, 0.0, 0.0, 0.0);
            }
        }
        MotionPreset::YawSweeps => {
            for _ in 0..3 {
                b.go(0.6, 0.0, 75.0 * a, 0.0);
                b.hold(0.2);
                b.go(0.6, 0.0, 0.0, 0.0);
                b.go(0.6, 0.0, -75.0 * a, 0.0);
                b.hold(0.2);
                b.go(0.6, 0.0, 0.0, 0.0);
            }
        }
        MotionPreset::PitchSweeps => {
            for _ in 0..3 {
                b.go(0.6, 0.0, 0.0, 50.0 * a);
                b.hold(0.2);
                b.go(0.6, 0.0, 0.0, 0.0);
                b.go(0.6, 0.0, 0.0, -50.0 * a);
                b.hold(0.2);
                b.go(0.6, 0.0, 0.0, 0.0);
            }
        }
        MotionPreset::Zigzag => {
            b.go(0.6, 0.0, -40.0 * a, 30.0 * a);
            b.go(0.8, 0.0, 40.0 * a, 10.0 * a);
            b.go(0.8, 0.0, -40.0 * a, -10.0 * a);
            b.go(0.8, 0.0, 40.0 * a, -30.0 * a);
        }
        MotionPreset::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_7a4d);
            let total = duration.unwrap_or(3.0);
            let step = 0.35;
            let (mut yaw, mut pitch, mut adv) = (0.0f64, 0.0f64, 0.0f64);
            let mut t = 0.0;
            while t < total {
                yaw = (yaw + rng.random_range(-45.0..45.0)).clamp(-70.0 * a, 70.0 * a);
                pitch = (pitch + rng.random_range(-30.0..30.0)).clamp(-45.0 * a, 45.0 * a);
                adv = (adv + rng.random_range(-0.04..0.04)).clamp(-0.08, 0.08);
                b.go(step, adv, yaw, pitch);
                t += step;
            }
        }
    }
    b.finish()
}

/// See [`TrajectorySpec::Radial`].
pub fn radial_trajectory(position: Vec3, speaker: Vec3, speed: f64, start: f64, duration: f64) -> Result<Trajectory> {
    if !(duration > 0.0 && speed.is_finite() && start >= 0.0) {
        return Err(Error::Scenario("radial motion needs duration > 0, a finite speed and start >= 0".into()));
    }
    let d = super::geometry::sub(position, speaker);
    let n = super::geometry::norm(d);
    if !(n > 0.0) {
        return Err(Error::Scenario("radial motion cannot start at the speaker".into()));
    }
    let end = super::geometry::add(position, super::geometry::scale(d, speed * duration / n));
    let facing = HeadPose::facing(position, speaker);
    let key = |t: f64, position: Vec3| Keyframe { t, position, yaw: facing.yaw, pitch: facing.pitch };
    let mut keys = vec![key(0.0, position)];
    if start > 0.0 {
        keys.push(key(start, position));
    }
    keys.push(key(start + duration, end));
    Trajectory::linear(keys)
}

/// Fixed-position gaze script: at each fixation start the head turns toward
/// the fixation target over `turn_time` seconds.
pub fn gaze_trajectory(position: Vec3, fixations: &[Fixation], turn_time: f64) -> Result<Trajectory> {
    if fixations.is_empty() {
        return Err(Error::Scenario("gaze trajectory needs at least one fixation".into()));
    }
    let mut keys = Vec::new();
    let mut prev: Option<HeadPose> = None;
    for (i, f) in fixations.iter().enumerate() {
        let pose = HeadPose::facing(position, f.look_at);
        if let Some(p) = prev {
            if i > 0 && f.start <= fixations[i - 1].start + 1e-9 {
                return Err(Error::Scenario("fixation start times must increase".into()));
            }
            keys.push(Keyframe {
                t: f.start,
                position,
                yaw: p.yaw,
                pitch: p.pitch,
            });
            keys.push(Keyframe {
                t: f.start + turn_time,
                position,
                yaw: pose.yaw,
                pitch: pose.pitch,
            });
        } else {
            keys.push(Keyframe {
                t: f.start.min(0.0),
                position,
                yaw: pose.yaw,
                pitch: pose.pitch,
            });
        }
        prev = Some(pose);
    }
    Trajectory::new(keys)
}
