//! Shared fixtures for the pipeline benchmarks.

use earpose_core::calibration::{calibrate_reference, CalibrationData, CalibrationParams};
use earpose_core::ranging::{FrameTiming, RangingConfig, RangingSession};
use earpose_core::simulator::{simulate_scene, CalibrationPhase, MotionPreset, Scenario, TrajectorySpec};
use earpose_core::stream::SampleSource;
use earpose_core::{ChirpSpec, SampleBuffer};

/// A calibrated take cut into consecutive frames ahead of time, so a
/// benchmark times only per-frame work.
pub struct Take {
    pub spec: ChirpSpec,
    pub config: RangingConfig,
    pub calibration: CalibrationData,
    pub frames: Vec<(FrameTiming, SampleBuffer)>,
}

impl Take {
    /// Random head motion at 0.5 m, `tracked` seconds after the still prefix.
    pub fn random(tracked: f64, seed: u64) -> Self {
        let spec = ChirpSpec::default();
        let config = RangingConfig::default();
        let phase = CalibrationPhase::default();
        let traj = TrajectorySpec::Preset {
            preset: MotionPreset::Random,
            position: [0.0, -0.5, 0.0],
            duration: Some(tracked),
            amplitude: 1.0,
        };
        let mut scenario = Scenario::new(phase.hold + phase.transition + tracked, traj);
        scenario.calibration = Some(phase);
        scenario.seed = seed;
        let (mut audio, _) = simulate_scene(&scenario, &spec).expect("render");
        let calibration =
            calibrate_reference(&mut audio, &spec, &config, &CalibrationParams::default()).expect("calibrate");
        let mut session = RangingSession::new(&spec, config.clone(), Some(calibration.clone())).expect("session");
        session.seek(phase.hold + phase.transition).expect("seek");
        let mut frames = Vec::new();
        loop {
            let timing = session.advance().expect("timing");
            match audio.read(timing.start as u64, spec.period_len()).expect("read") {
                Some(f) => frames.push((timing, f)),
                None => break,
            }
        }
        Self { spec, config, calibration, frames }
    }

    pub fn session(&self) -> RangingSession {
        RangingSession::new(&self.spec, self.config.clone(), Some(self.calibration.clone())).expect("session")
    }
}
