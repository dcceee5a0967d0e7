//! Deterministic acoustic scene simulator.
//!
//! Renders what the three earphone microphones record while a head moves in
//! front of one (or several, time-multiplexed) ultrasonic transmitters, and the
//! matching per-frame ground truth. The direct path is rendered with its exact
//! time-varying delay, so Doppler shift and range migration fall out of the
//! geometry rather than being modelled separately.

pub(crate) mod geometry;
mod render;
mod trajectory;

pub use geometry::{
    distance, mic_world_positions, norm, occlusion_angle, occlusion_gain, relative_angles,
    HeadGeometry, HeadPose, OcclusionModel, Vec3, LEFT, RIGHT, SPEECH,
};
pub use render::{simulate_scene, SceneRenderer};
pub use trajectory::{
    gaze_trajectory, preset_trajectory, radial_trajectory, Fixation, Keyframe, MotionPreset, Trajectory,
    TrajectorySpec,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fastest head rotation a scenario may contain, deg/s.
pub const MAX_ANGULAR_SPEED: f64 = 260.0;

/// Receiver clock relative to the transmitter.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ClockModel {
    /// True time (s) at which the receiver takes its first sample.
    pub offset: f64,
    /// Receiver sample-clock rate error in parts per million.
    pub drift_ppm: f64,
}

impl ClockModel {
    pub fn validate(&self) -> Result<()> {
        if !self.offset.is_finite() || !self.drift_ppm.is_finite() || self.drift_ppm.abs() > 200.0 {
            return Err(Error::Scenario(format!(
                "clock drift must be within +-200 ppm (got {})",
                self.drift_ppm
            )));
        }
        Ok(())
    }

    fn rate(&self) -> f64 {
        1.0 + self.drift_ppm * 1e-6
    }

    /// True time at receiver timestamp `t_rx`.
    pub fn true_time(&self, t_rx: f64) -> f64 {
        self.offset + t_rx / self.rate()
    }

    /// Receiver timestamp of true time `t`.
    pub fn receiver_time(&self, t: f64) -> f64 {
        (t - self.offset) * self.rate()
    }
}

/// Held calibration pose (left ANC mic against the speaker) followed by a
/// smooth move to the start of the tracked trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationPhase {
    pub hold: f64,
    pub transition: f64,
    /// Gap between the left mic and the speaker, meters.
    pub standoff: f64,
}

impl Default for CalibrationPhase {
    fn default() -> Self {
        Self {
            hold: 4.0,
            transition: 2.0,
            standoff: 0.002,
        }
    }
}

/// Single specular wall reflection rendered with an image source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WallEcho {
    pub point: Vec3,
    pub normal: Vec3,
    /// Reflection loss in dB (positive).
    pub attenuation_db: f64,
}

impl WallEcho {
    pub fn image_of(&self, source: Vec3) -> Vec3 {
        let n = geometry::normalize(self.normal);
        let d = geometry::dot(geometry::sub(source, self.point), n);
        geometry::sub(source, geometry::scale(n, 2.0 * d))
    }
}

/// Forced attenuation of one microphone over a receiver-time window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dropout {
    pub mic: usize,
    pub start: f64,
    pub duration: f64,
    #[serde(default = "default_dropout_db")]
    pub attenuation_db: f64,
}

fn default_dropout_db() -> f64 {
    80.0
}

/// Transmitter taking part in a time-multiplexed scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceConfig {
    pub id: String,
    pub position: Vec3,
    /// Start time of this device's chirp train relative to true time zero.
    #[serde(default)]
    pub time_offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiDeviceConfig {
    pub devices: Vec<DeviceConfig>,
    #[serde(default = "default_slot")]
    pub slot: f64,
    #[serde(default = "default_skip")]
    pub skip: f64,
}

fn default_slot() -> f64 {
    0.5
}

fn default_skip() -> f64 {
    2.0
}

fn default_snr() -> f64 {
    30.0
}

fn default_c() -> f64 {
    343.0
}

/// A complete simulated recording session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: Option<String>,
    /// Recorded length in seconds (receiver time).
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub speaker_position: Vec3,
    #[serde(default)]
    pub geometry: HeadGeometry,
    pub trajectory: TrajectorySpec,
    /// Noise level relative to the direct-path signal power at 1 m, dB.
    /// `inf` renders a noiseless scene.
    #[serde(default = "default_snr")]
    pub noise_snr_db: f64,
    #[serde(default)]
    pub occlusion: OcclusionModel,
    #[serde(default)]
    pub clock: ClockModel,
    #[serde(default = "default_c")]
    pub speed_of_sound: f64,
    #[serde(default)]
    pub calibration: Option<CalibrationPhase>,
    #[serde(default)]
    pub echo: Option<WallEcho>,
    #[serde(default)]
    pub dropouts: Vec<Dropout>,
    #[serde(default)]
    pub multidevice: Option<MultiDeviceConfig>,
}

impl Scenario {
    /// Minimal scenario: a static head, no occlusion, no clock error.
    pub fn new(duration: f64, trajectory: TrajectorySpec) -> Self {
        Self {
            name: None,
            duration,
            seed: 0,
            speaker_position: [0.0; 3],
            geometry: HeadGeometry::default(),
            trajectory,
            noise_snr_db: default_snr(),
            occlusion: OcclusionModel::default(),
            clock: ClockModel::default(),
            speed_of_sound: default_c(),
            calibration: None,
            echo: None,
            dropouts: Vec::new(),
            multidevice: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        s.validate()?;
        Ok(s)
    }

    /// Position of the transmitter the ground truth refers to.
    pub fn primary_speaker(&self) -> Vec3 {
        match &self.multidevice {
            Some(m) if !m.devices.is_empty() => m.devices[0].position,
            _ => self.speaker_position,
        }
    }

    /// Seconds of true time that precede the tracked trajectory.
    pub fn tracking_offset(&self) -> f64 {
        self.calibration.map(|c| c.hold + c.transition).unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::Scenario(format!("duration must be positive, got {}", self.duration)));
        }
        if !(self.speed_of_sound.is_finite() && self.speed_of_sound > 0.0) {
            return Err(Error::Scenario("speed_of_sound must be positive".into()));
        }
        if self.noise_snr_db.is_nan() {
            return Err(Error::Scenario("noise_snr_db must be a number".into()));
        }
        self.geometry.validate()?;
        self.clock.validate()?;
        if let Some(c) = &self.calibration {
            if !(c.hold > 0.0 && c.transition >= 0.0 && c.standoff >= 0.0) {
                return Err(Error::Scenario("calibration phase needs hold > 0 and non-negative transition/standoff".into()));
            }
        }
        for d in &self.dropouts {
            if d.mic > 2 || d.duration < 0.0 {
                return Err(Error::Scenario(format!("invalid dropout for mic {}", d.mic)));
            }
        }
        if let Some(m) = &self.multidevice {
            if m.devices.is_empty() || !(m.slot > 0.0) || m.skip < 0.0 {
                return Err(Error::Scenario("multidevice needs devices, slot > 0 and skip >= 0".into()));
            }
        }
        let trajectory = self.trajectory.build(self.primary_speaker(), self.seed)?;
        let speed = trajectory.max_angular_speed();
        if speed > MAX_ANGULAR_SPEED {
            return Err(Error::Scenario(format!(
                "trajectory rotates at {speed:.1} deg/s, above the {MAX_ANGULAR_SPEED} deg/s limit"
            )));
        }
        if let Some(k) = trajectory
            .keys()
            .iter()
            .find(|k| k.yaw.abs() > 90.0 || k.pitch.abs() > 90.0)
        {
            return Err(Error::Scenario(format!(
                "pose at t={} leaves the +-90 degree range (yaw {}, pitch {})",
                k.t, k.yaw, k.pitch
            )));
        }
        Ok(())
    }
}

/// Ground truth for one output frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthFrame {
    /// Receiver timestamp of the frame center, seconds.
    pub t: f64,
    /// True distances to the left, right and speech microphones, meters.
    pub d: [f64; 3],
    pub yaw: f64,
    pub pitch: f64,
    /// Head-center to speaker distance, meters.
    pub d_m: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruthTrace {
    pub frames: Vec<TruthFrame>,
    /// Receiver time at which the tracked trajectory begins.
    pub tracking_start: f64,
}

impl GroundTruthTrace {
    /// Frame nearest to receiver time `t`.
    pub fn nearest(&self, t: f64) -> Option<&TruthFrame> {
        let i = self.frames.partition_point(|f| f.t < t);
        let cands = [i.checked_sub(1), Some(i)];
        cands
            .iter()
            .flatten()
            .filter_map(|&j| self.frames.get(j))
            .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
    }
}
