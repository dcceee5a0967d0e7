//! End-to-end tracking: calibrate, range, solve pose.

use std::time::{Duration, Instant};

use crate::calibration::{calibrate_reference, CalibrationData, CalibrationParams};
use crate::error::Result;
use crate::io::TrackRow;
use crate::pose::{PoseEstimate, PoseTracker};
use crate::ranging::{RangeEstimate, RangingConfig, RangingSession};
use crate::signal::ChirpSpec;
use crate::simulator::GroundTruthTrace;
use crate::stream::SampleSource;

/// Where the zero-distance reference comes from.
#[derive(Debug, Clone)]
pub enum CalibrationSource {
    /// A previously stored calibration.
    Stored(CalibrationData),
    /// Fit on a still window of the same recording.
    Window(CalibrationParams),
}

#[derive(Debug, Clone)]
pub struct TrackOutput {
    pub calibration: CalibrationData,
    pub ranges: Vec<RangeEstimate>,
    pub poses: Vec<PoseEstimate>,
    /// Time spent in ranging and pose solving, excluding reads.
    pub processing: Duration,
}

impl TrackOutput {
    pub fn rows(&self) -> Vec<TrackRow> {
        self.ranges.iter().zip(&self.poses).map(|(r, p)| TrackRow::from_estimates(r, p)).collect()
    }

    /// Mean processing cost per frame.
    pub fn frame_cost(&self) -> Duration {
        self.processing.checked_div(self.ranges.len().max(1) as u32).unwrap_or_default()
    }
}

/// Runs the whole pipeline over `source`, beginning with the first frame
/// centered at or after `start` (default: the end of the calibration window,
/// or the beginning of the recording for stored calibrations).
pub fn track(
    source: &mut dyn SampleSource,
    spec: &ChirpSpec,
    config: &RangingConfig,
    calibration: CalibrationSource,
    start: Option<f64>,
) -> Result<TrackOutput> {
    let (cal, default_start) = match calibration {
        CalibrationSource::Stored(c) => (c, 0.0),
        CalibrationSource::Window(p) => (calibrate_reference(source, spec, config, &p)?, p.start + p.window),
    };
    let mut session = RangingSession::new(spec, config.clone(), Some(cal.clone()))?;
    session.seek(start.unwrap_or(default_start))?;
    let mut poses = PoseTracker::new(cal.clone());
    let mut out = TrackOutput { calibration: cal, ranges: Vec::new(), poses: Vec::new(), processing: Duration::ZERO };
    loop {
        let timing = session.advance()?;
        let Some(frame) = source.read(timing.start as u64, spec.period_len())? else { break };
        let clock = Instant::now();
        let range = session.process_frame(&frame, &timing)?;
        let pose = poses.update(&range);
        out.processing += clock.elapsed();
        out.ranges.push(range);
        out.poses.push(pose);
    }
    Ok(out)
}

/// Ground-truth rows of a simulated take, from `from` seconds on.
pub fn truth_rows(trace: &GroundTruthTrace, from: f64) -> Vec<TrackRow> {
    trace.frames.iter().filter(|f| f.t >= from).map(TrackRow::from).collect()
}
