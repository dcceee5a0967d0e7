//! Rigid head model: microphone placement, relative angles, head shadow.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn distance(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}

pub(crate) fn normalize(a: Vec3) -> Vec3 {
    let n = norm(a);
    if n == 0.0 {
        a
    } else {
        scale(a, 1.0 / n)
    }
}

/// Fixed microphone layout on the earphone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadGeometry {
    /// Distance between the left and right ANC microphones, meters.
    pub d_e: f64,
    /// Distance from the right ANC microphone to the speech microphone, meters.
    pub d_b: f64,
    /// Tilt of the ANC-to-speech-mic baseline away from straight down, toward
    /// the face, in degrees. This is also the sagittal angle read at a neutral,
    /// far-field pose.
    pub theta0: f64,
}

impl Default for HeadGeometry {
    fn default() -> Self {
        Self {
            d_e: 0.235,
            d_b: 0.06,
            theta0: 10.0,
        }
    }
}

impl HeadGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_e > 0.0 && self.d_b > 0.0 && self.d_e.is_finite() && self.d_b.is_finite()) {
            return Err(Error::Config(format!(
                "head geometry needs positive d_e and d_b (got {}, {})",
                self.d_e, self.d_b
            )));
        }
        if !(self.theta0.is_finite() && self.theta0.abs() < 90.0) {
            return Err(Error::Config(format!("theta0 out of range: {}", self.theta0)));
        }
        Ok(())
    }
}

/// Head center position and orientation in the world frame.
///
/// At `yaw = pitch = 0` the face points along +y with +z up, so the right ear
/// is on +x. Positive yaw turns the face toward +x (clockwise seen from
/// above); positive pitch raises the nose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadPose {
    pub position: Vec3,
    pub yaw: f64,
    pub pitch: f64,
}

impl HeadPose {
    pub fn new(position: Vec3, yaw: f64, pitch: f64) -> Self {
        Self {
            position,
            yaw,
            pitch,
        }
    }

    pub fn face(&self) -> Vec3 {
        let (sy, cy) = self.yaw.to_radians().sin_cos();
        let (sp, cp) = self.pitch.to_radians().sin_cos();
        [sy * cp, cy * cp, sp]
    }

    pub fn right(&self) -> Vec3 {
        let (sy, cy) = self.yaw.to_radians().sin_cos();
        [cy, -sy, 0.0]
    }

    pub fn up(&self) -> Vec3 {
        cross(self.right(), self.face())
    }

    /// Pose at `position` facing `target`.
    pub fn facing(position: Vec3, target: Vec3) -> Self {
        let d = sub(target, position);
        let yaw = d[0].atan2(d[1]).to_degrees();
        let pitch = d[2].atan2((d[0] * d[0] + d[1] * d[1]).sqrt()).to_degrees();
        Self::new(position, yaw, pitch)
    }
}

/// Mic indices used throughout the pipeline.
pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;
pub const SPEECH: usize = 2;

/// World positions of the left ANC, right ANC and speech microphones.
pub fn mic_world_positions(geometry: &HeadGeometry, pose: &HeadPose) -> [Vec3; 3] {
    let right = pose.right();
    let half = scale(right, geometry.d_e / 2.0);
    let left_mic = sub(pose.position, half);
    let right_mic = add(pose.position, half);
    let (s, c) = geometry.theta0.to_radians().sin_cos();
    let down_forward = add(scale(pose.up(), -c), scale(pose.face(), s));
    let speech_mic = add(right_mic, scale(down_forward, geometry.d_b));
    [left_mic, right_mic, speech_mic]
}

/// Yaw and pitch of the speaker as seen from the head, in degrees.
///
/// Yaw is the angle between the head-to-speaker ray and the plane normal to
/// the ear axis (positive when the face is turned to the right of the
/// speaker); pitch is the angle to the plane normal to the head's up axis
/// (positive when the nose is raised above the speaker).
pub fn relative_angles(pose: &HeadPose, speaker: Vec3) -> (f64, f64) {
    let s = normalize(sub(speaker, pose.position));
    let yaw = (-dot(s, pose.right())).clamp(-1.0, 1.0).asin().to_degrees();
    let pitch = (-dot(s, pose.up())).clamp(-1.0, 1.0).asin().to_degrees();
    (yaw, pitch)
}

/// Head-shadow attenuation model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcclusionModel {
    pub enabled: bool,
    /// Occlusion angle at which attenuation starts, degrees.
    pub onset_deg: f64,
    /// Width of the cosine ramp from 0 dB to full shadow, degrees.
    pub ramp_deg: f64,
    /// Full shadow attenuation, dB (positive number).
    pub shadow_db: f64,
}

impl Default for OcclusionModel {
    fn default() -> Self {
        Self {
            enabled: true,
            onset_deg: 40.0,
            ramp_deg: 15.0,
            shadow_db: 15.0,
        }
    }
}

impl OcclusionModel {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    /// Attenuation in dB (<= 0) for a given occlusion angle.
    pub fn gain_db_for_angle(&self, angle_deg: f64) -> f64 {
        if !self.enabled {
            return 0.0;
        }
        let x = if self.ramp_deg > 0.0 {
            ((angle_deg - self.onset_deg) / self.ramp_deg).clamp(0.0, 1.0)
        } else if angle_deg > self.onset_deg {
            1.0
        } else {
            0.0
        };
        -self.shadow_db * 0.5 * (1.0 - (std::f64::consts::PI * x).cos())
    }
}

/// Angle (degrees) by which the mic-to-source ray dips into the head, measured
/// from the plane tangent to the head at the microphone. Negative means the
/// microphone sees the source directly.
pub fn occlusion_angle(pose: &HeadPose, geometry: &HeadGeometry, source: Vec3, mic: usize) -> f64 {
    let mics = mic_world_positions(geometry, pose);
    let normal = match mic {
        LEFT => scale(pose.right(), -1.0),
        _ => pose.right(),
    };
    let dir = normalize(sub(source, mics[mic]));
    (-dot(normal, dir)).clamp(-1.0, 1.0).asin().to_degrees()
}

/// Gain in dB (<= 0) applied to the path from `speaker` to microphone `mic`.
pub fn occlusion_gain(
    pose: &HeadPose,
    geometry: &HeadGeometry,
    speaker: Vec3,
    mic: usize,
    model: &OcclusionModel,
) -> f64 {
    model.gain_db_for_angle(occlusion_angle(pose, geometry, speaker, mic))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn neutral_pose_mics_on_x_axis() {
        let g = HeadGeometry::default();
        let m = mic_world_positions(&g, &HeadPose::new([0.0; 3], 0.0, 0.0));
        assert!(close(m[LEFT][0], -0.1175, 1e-12) && close(m[LEFT][1], 0.0, 1e-12));
        assert!(close(m[RIGHT][0], 0.1175, 1e-12) && close(m[RIGHT][2], 0.0, 1e-12));
        assert!(m[SPEECH][2] < 0.0, "speech mic sits lower");
    }

    #[test]
    fn yawed_head_distances() {
        let g = HeadGeometry::default();
        let m = mic_world_positions(&g, &HeadPose::new([0.0, 1.0, 0.0], 30.0, 0.0));
        let s = [0.0; 3];
        assert!(close(distance(s, m[LEFT]), 1.063629, 1e-6));
        assert!(close(distance(s, m[RIGHT]), 0.946735, 1e-6));
    }

    #[test]
    fn ear_spacing_is_rigid() {
        let g = HeadGeometry::default();
        for (yaw, pitch) in [(0.0, 0.0), (33.0, -12.0), (-80.0, 45.0), (12.5, 89.0)] {
            let m = mic_world_positions(&g, &HeadPose::new([0.3, -0.2, 0.1], yaw, pitch));
            assert!(close(distance(m[LEFT], m[RIGHT]), g.d_e, 1e-12));
            assert!(close(distance(m[RIGHT], m[SPEECH]), g.d_b, 1e-12));
        }
    }

    #[test]
    fn occlusion_examples() {
        let g = HeadGeometry::default();
        let speaker = [0.0, 0.0, 0.0];
        let model = OcclusionModel {
            enabled: true,
            onset_deg: 60.0,
            ramp_deg: 15.0,
            shadow_db: 25.0,
        };
        let neutral = HeadPose::facing([0.0, -0.8, 0.0], speaker);
        for mic in [LEFT, RIGHT] {
            assert_eq!(occlusion_gain(&neutral, &g, speaker, mic, &model), 0.0);
        }
        let turned = HeadPose::new([0.0, -0.8, 0.0], 80.0, 0.0);
        // Turning right swings the right ear away from the speaker.
        let far = occlusion_gain(&turned, &g, speaker, RIGHT, &model);
        assert!(close(far, -25.0, 1e-9), "{far}");
        assert_eq!(occlusion_gain(&turned, &g, speaker, LEFT, &model), 0.0);
    }

    #[test]
    fn occlusion_monotone_in_angle() {
        let model = OcclusionModel::default();
        let mut last = 0.0;
        for i in -90..=90 {
            let g = model.gain_db_for_angle(i as f64);
            assert!(g <= last + 1e-12 && g <= 0.0);
            last = g;
        }
        assert_eq!(last, -model.shadow_db);
    }

    #[test]
    fn relative_angles_match_pose_for_speaker_ahead() {
        let speaker = [0.0, 0.0, 0.0];
        let pose = HeadPose::new([0.0, -1.0, 0.0], 25.0, 0.0);
        let (yaw, pitch) = relative_angles(&pose, speaker);
        assert!(close(yaw, 25.0, 1e-9) && close(pitch, 0.0, 1e-9));
        let pose = HeadPose::new([0.0, -1.0, 0.0], 0.0, 20.0);
        let (yaw, pitch) = relative_angles(&pose, speaker);
        assert!(close(yaw, 0.0, 1e-9) && close(pitch, 20.0, 1e-9));
    }
}
