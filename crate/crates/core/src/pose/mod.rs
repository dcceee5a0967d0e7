//! Head distance, yaw and pitch from the three microphone distances.
//!
//! The left and right ANC microphones and the speaker form a triangle whose
//! median from the head center gives the head-to-speaker distance; the angle
//! between that median and the ear axis gives yaw. The right ANC and speech
//! microphones span a second, roughly vertical baseline that gives pitch.

pub mod fusion;

pub use fusion::{fuse_imu, FusionParams, GyroModel, ImuSample, PitchSource};

use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationData;
use crate::error::{Error, Result};
use crate::ranging::RangeEstimate;
use crate::simulator::{HeadGeometry, LEFT, RIGHT, SPEECH};

/// Slack on cosine arguments that are clamped rather than rejected.
pub const COS_EPS: f64 = 1e-6;

/// Length of the median from the midpoint of the `d_e` side.
pub fn median_length(d_l: f64, d_r: f64, d_e: f64) -> Result<f64> {
    let radicand = 2.0 * d_l * d_l + 2.0 * d_r * d_r - d_e * d_e;
    if !(radicand >= 0.0) || !(d_l >= 0.0 && d_r >= 0.0 && d_e >= 0.0) {
        return Err(Error::InvalidTriangle(format!("no median for sides {d_l}, {d_r}, {d_e}")));
    }
    Ok(radicand.sqrt() / 2.0)
}

fn clamped_acos(x: f64) -> Result<f64> {
    if !(x.abs() <= 1.0 + COS_EPS) {
        return Err(Error::InvalidTriangle(format!("cosine {x} out of range")));
    }
    Ok(x.clamp(-1.0, 1.0).acos().to_degrees())
}

/// Angle at the midpoint of the `base` side between the median and the end
/// at distance `d_b_end`, in degrees.
fn median_angle(d_a: f64, d_b_end: f64, base: f64) -> Result<f64> {
    let m = median_length(d_a, d_b_end, base)?;
    if m <= 0.0 || base <= 0.0 {
        return Err(Error::InvalidTriangle("degenerate triangle".into()));
    }
    clamped_acos((m * m + base * base / 4.0 - d_b_end * d_b_end) / (m * base))
}

/// Yaw in degrees; negative when the right microphone is nearer.
///
/// Equal to the median angle at the ear-axis midpoint minus 90 degrees,
/// written as `asin((d_r^2 - d_l^2) / (2 m d_e))` so that swapping the ears
/// negates the result exactly.
pub fn yaw_from_distances(d_l: f64, d_r: f64, d_e: f64) -> Result<f64> {
    let m = median_length(d_l, d_r, d_e)?;
    if m <= 0.0 || d_e <= 0.0 {
        return Err(Error::InvalidTriangle("degenerate triangle".into()));
    }
    let s = (d_r * d_r - d_l * d_l) / (2.0 * m * d_e);
    if !(s.abs() <= 1.0 + COS_EPS) {
        return Err(Error::InvalidTriangle(format!("sine {s} out of range")));
    }
    Ok(s.clamp(-1.0, 1.0).asin().to_degrees())
}

/// Planar pitch estimate from the right-ANC/speech-mic triangle: the
/// elevation of the median above the baseline's normal, minus the
/// baseline tilt `theta0`.
pub fn pitch_from_distances(d_r: f64, d_s: f64, d_b: f64, theta0: f64) -> Result<f64> {
    Ok(90.0 - median_angle(d_r, d_s, d_b)? - theta0)
}

/// Speaker position in the head frame (x to the right ear, y along the face,
/// z up) from the three distances. Picks the solution in front of the face.
pub fn speaker_in_head_frame(d: [f64; 3], geometry: &HeadGeometry) -> Result<[f64; 3]> {
    let e = geometry.d_e / 2.0;
    let x = (d[LEFT] * d[LEFT] - d[RIGHT] * d[RIGHT]) / (4.0 * e);
    let rho2 = d[RIGHT] * d[RIGHT] - (x - e) * (x - e);
    if !(rho2 >= -COS_EPS) {
        return Err(Error::InvalidTriangle("ear distances inconsistent with d_e".into()));
    }
    let rho2 = rho2.max(0.0);
    let (s0, c0) = geometry.theta0.to_radians().sin_cos();
    let db = geometry.d_b;
    // The speech mic sits at R + d_b (0, sin θ0, −cos θ0); its sphere cuts
    // the circle of radius rho about the ear axis along a line.
    let h = (d[RIGHT] * d[RIGHT] + db * db - d[SPEECH] * d[SPEECH]) / (2.0 * db);
    let mut disc = rho2 - h * h;
    if disc < 0.0 {
        if disc < -1e-3 * rho2 {
            return Err(Error::InvalidTriangle("speech-mic distance inconsistent with the ear triangle".into()));
        }
        disc = 0.0;
    }
    let root = disc.sqrt();
    let y = h * s0 + c0 * root;
    let z = -h * c0 + s0 * root;
    Ok([x, y, z])
}

/// Where a pose came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoseSource {
    Acoustic,
    Fused,
}

/// Head distance and orientation relative to the speaker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub t: f64,
    /// Head center to speaker, meters.
    pub d_m: f64,
    pub yaw: f64,
    pub pitch: f64,
    /// All three channels tracked and both triangles consistent.
    pub valid: bool,
    pub yaw_valid: bool,
    pub pitch_valid: bool,
    pub source: PoseSource,
}

/// Pose from one ranging frame, without any hold logic. Angles that cannot
/// be formed are NaN and flagged invalid.
pub fn estimate_pose(range: &RangeEstimate, cal: &CalibrationData) -> PoseEstimate {
    let g = &cal.geometry;
    let d = range.distance;
    let finite = |m: usize| d[m].is_finite() && d[m] > 0.0;
    let mut out = PoseEstimate {
        t: range.t,
        d_m: f64::NAN,
        yaw: f64::NAN,
        pitch: f64::NAN,
        valid: false,
        yaw_valid: false,
        pitch_valid: false,
        source: PoseSource::Acoustic,
    };
    let dropped = range.dropped.iter().filter(|&&x| x).count();
    if dropped >= 2 || !(finite(LEFT) && finite(RIGHT)) {
        return out;
    }
    let Ok(d_m) = median_length(d[LEFT], d[RIGHT], g.d_e) else { return out };
    let Ok(yaw) = yaw_from_distances(d[LEFT], d[RIGHT], g.d_e) else { return out };
    out.d_m = d_m;
    out.yaw = yaw;
    out.yaw_valid = !range.dropped[LEFT] && !range.dropped[RIGHT];
    if finite(SPEECH) {
        if let Ok(p) = speaker_in_head_frame(d, g) {
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            if r > 0.0 {
                out.pitch = (-p[2] / r).clamp(-1.0, 1.0).asin().to_degrees() - cal.pitch_offset;
                out.pitch_valid = !range.dropped[RIGHT] && !range.dropped[SPEECH];
            }
        }
    }
    out.valid = dropped == 0 && out.yaw_valid && out.pitch_valid;
    out
}

/// Sequential pose stage: frames whose angles cannot be formed repeat the
/// last good value, flagged invalid.
#[derive(Debug, Clone)]
pub struct PoseTracker {
    cal: CalibrationData,
    last: Option<PoseEstimate>,
}

impl PoseTracker {
    pub fn new(cal: CalibrationData) -> Self {
        Self { cal, last: None }
    }

    pub fn calibration(&self) -> &CalibrationData {
        &self.cal
    }

    pub fn update(&mut self, range: &RangeEstimate) -> PoseEstimate {
        let mut p = estimate_pose(range, &self.cal);
        if let Some(last) = self.last {
            if !p.d_m.is_finite() {
                p.d_m = last.d_m;
            }
            if !p.yaw.is_finite() {
                p.yaw = last.yaw;
            }
            if !p.pitch.is_finite() {
                p.pitch = last.pitch;
            }
        }
        if p.d_m.is_finite() && p.yaw.is_finite() && p.pitch.is_finite() {
            self.last = Some(p);
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{distance, mic_world_positions, relative_angles, HeadPose};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn median_examples() {
        assert!(close(median_length(1.0, 1.0, 0.235).unwrap(), 0.993073, 1e-6));
        assert!(close(median_length(1.063629, 0.946735, 0.235).unwrap(), 1.0, 1e-6));
        assert_eq!(median_length(0.7, 0.7, 0.0).unwrap(), 0.7);
        assert!(median_length(0.01, 0.01, 0.235).is_err());
    }

    #[test]
    fn yaw_examples() {
        assert!(yaw_from_distances(0.8, 0.8, 0.235).unwrap().abs() < 1e-9);
        assert!(close(yaw_from_distances(1.063629, 0.946735, 0.235).unwrap(), -30.0, 1e-3));
        let a = yaw_from_distances(0.93, 1.01, 0.235).unwrap();
        let b = yaw_from_distances(1.01, 0.93, 0.235).unwrap();
        assert_eq!(a, -b);
        assert!(yaw_from_distances(1.0, 2.0, 0.235).is_err());
    }

    #[test]
    fn planar_sagittal_pitch() {
        // Far speaker in the sagittal plane of the right ear.
        let g = HeadGeometry::default();
        let pose = HeadPose::new([0.0; 3], 0.0, 20.0);
        let r = mic_world_positions(&g, &pose)[RIGHT];
        let speaker = [r[0], 200.0, 0.0];
        let m = mic_world_positions(&g, &pose);
        let p = pitch_from_distances(distance(m[RIGHT], speaker), distance(m[SPEECH], speaker), g.d_b, g.theta0);
        assert!(close(p.unwrap(), 20.0, 0.5));
    }

    #[test]
    fn head_frame_solution_is_exact_in_3d() {
        let g = HeadGeometry::default();
        let speaker = [0.0; 3];
        for &(yaw, pitch, x, y, z) in &[
            (0.0, 0.0, 0.0, -0.5, 0.0),
            (60.0, 25.0, 0.2, -0.7, 0.1),
            (-80.0, -40.0, -0.3, -1.2, 0.3),
        ] {
            let pose = HeadPose::new([x, y, z], yaw, pitch);
            let m = mic_world_positions(&g, &pose);
            let d = [distance(m[0], speaker), distance(m[1], speaker), distance(m[2], speaker)];
            let cal = test_cal();
            let range = RangeEstimate {
                t: 0.0,
                distance: d,
                dropped: [false; 3],
                peak_hz: [0.0; 3],
                confidence: [1.0; 3],
                level_db: [0.0; 3],
            };
            let est = estimate_pose(&range, &cal);
            let (ty, tp) = relative_angles(&pose, speaker);
            assert!(close(est.yaw, ty, 1e-6), "{yaw} {pitch}: {} vs {ty}", est.yaw);
            assert!(close(est.pitch, tp, 1e-6), "{yaw} {pitch}: {} vs {tp}", est.pitch);
            assert!(close(est.d_m, distance(pose.position, speaker), 1e-9));
            assert!(est.valid);
        }
    }

    pub(crate) fn test_cal() -> CalibrationData {
        CalibrationData {
            coarse_offset: 0,
            reference: Default::default(),
            mic_lines: Default::default(),
            calibrated_at: 0.0,
            standoff: 0.002,
            geometry: HeadGeometry::default(),
            pitch_offset: 0.0,
            speed_of_sound: 343.0,
        }
    }

    #[test]
    fn dropped_channels_limit_validity() {
        let cal = test_cal();
        let mut r = RangeEstimate {
            t: 0.0,
            distance: [0.51, 0.5, 0.49],
            dropped: [false, false, true],
            peak_hz: [0.0; 3],
            confidence: [1.0; 3],
            level_db: [0.0; 3],
        };
        let p = estimate_pose(&r, &cal);
        assert!(p.yaw_valid && !p.pitch_valid && !p.valid);
        r.dropped = [true; 3];
        assert!(!estimate_pose(&r, &cal).valid);
        let mut tracker = PoseTracker::new(cal);
        r.dropped = [false; 3];
        let good = tracker.update(&r);
        r.distance = [f64::NAN; 3];
        let held = tracker.update(&r);
        assert!(!held.valid && held.yaw == good.yaw && held.d_m == good.d_m);
    }
}
