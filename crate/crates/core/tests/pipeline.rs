//! End-to-end behavior over simulated takes.

use earpose_core::attention::{attention_frames, gaze_scenario, simulate_attention, train_attention, DeviceRect, SvmParams};
use earpose_core::calibration::{calibrate_reference, CalibrationParams};
use earpose_core::multidevice::{run_multidevice, scenario_schedule, MultiDeviceParams};
use earpose_core::pipeline::{track, CalibrationSource};
use earpose_core::pose::median_length;
use earpose_core::ranging::RangingConfig;
use earpose_core::signal::synthesize_triangular;
use earpose_core::simulator::{
    simulate_scene, CalibrationPhase, DeviceConfig, Fixation, MultiDeviceConfig, OcclusionModel, Scenario,
    SceneRenderer, TrajectorySpec,
};
use earpose_core::ChirpSpec;
use rustfft::num_complex::Complex64;

fn still(distance: f64, tracked: f64, seed: u64) -> Scenario {
    let phase = CalibrationPhase::default();
    let traj = TrajectorySpec::Static { position: [0.0, -distance, 0.0], yaw: None, pitch: None };
    let mut s = Scenario::new(phase.hold + phase.transition + tracked, traj);
    s.calibration = Some(phase);
    s.seed = seed;
    s.occlusion = OcclusionModel::disabled();
    s.noise_snr_db = 30.0;
    s
}

#[test]
fn chirp_energy_stays_in_band() {
    let spec = ChirpSpec::default();
    let x = synthesize_triangular(&spec, 16).unwrap();
    let n = x.len();
    let w = earpose_core::dsp::hann(n);
    let mut buf: Vec<Complex64> = x.channel(0).iter().zip(&w).map(|(v, w)| Complex64::new(v * w, 0.0)).collect();
    earpose_core::dsp::fft_forward(&mut buf);
    let hz = spec.sample_rate / n as f64;
    let (mut inside, mut total) = (0.0, 0.0);
    for (k, c) in buf[..n / 2].iter().enumerate() {
        let e = c.norm_sqr();
        total += e;
        if (spec.f0 - 200.0..=spec.f1 + 200.0).contains(&(k as f64 * hz)) {
            inside += e;
        }
    }
    assert!(inside / total >= 0.99, "{:.4} of the energy in band", inside / total);
}

#[test]
fn simulated_truth_obeys_the_median_relation() {
    let spec = ChirpSpec::default();
    let s = still(0.7, 1.0, 3);
    let (_, trace) = simulate_scene(&s, &spec).unwrap();
    let d_e = s.geometry.d_e;
    for f in &trace.frames {
        assert!((median_length(f.d[0], f.d[1], d_e).unwrap() - f.d_m).abs() < 1e-9);
    }
}

#[test]
fn estimated_distance_increases_with_delay() {
    let spec = ChirpSpec::default();
    let mut medians = Vec::new();
    for k in 0..6 {
        let d = 0.4 + 0.05 * k as f64;
        let s = still(d, 2.0, 20 + k);
        let mut r = SceneRenderer::new(&s, &spec).unwrap();
        let t0 = r.tracking_start();
        let out =
            track(&mut r, &spec, &RangingConfig::default(), CalibrationSource::Window(CalibrationParams::default()), Some(t0))
                .unwrap();
        let mut v: Vec<f64> = out.ranges.iter().map(|e| e.distance[0]).collect();
        v.sort_by(f64::total_cmp);
        medians.push(v[v.len() / 2]);
    }
    assert!(medians.windows(2).all(|w| w[1] > w[0]), "{medians:?}");
}

#[test]
fn recalibrating_reproduces_the_reference() {
    let spec = ChirpSpec::default();
    let config = RangingConfig::default();
    let mut s = still(0.5, 1.0, 4);
    s.clock.drift_ppm = 20.0;
    let (mut audio, _) = simulate_scene(&s, &spec).unwrap();
    let a = calibrate_reference(&mut audio, &spec, &config, &CalibrationParams::default()).unwrap();
    let again = calibrate_reference(&mut audio, &spec, &config, &CalibrationParams::default()).unwrap();
    assert_eq!(a, again);
    let shifted = CalibrationParams { start: 0.5, window: 3.0, ..Default::default() };
    let b = calibrate_reference(&mut audio, &spec, &config, &shifted).unwrap();
    assert_eq!(a.coarse_offset, b.coarse_offset);
    // Within a tenth of a raw bin across the still window.
    let bin = spec.sample_rate / spec.slope_len as f64;
    for t in [1.0, 2.5, 4.0] {
        let (fa, fb) = (a.reference.at(t, a.calibrated_at), b.reference.at(t, b.calibrated_at));
        assert!((fa - fb).abs() < 0.1 * bin, "{fa} vs {fb} Hz at {t} s");
    }
}

#[test]
fn attention_runs_without_calibration() {
    let spec = ChirpSpec::default();
    let mut s = gaze_scenario(3, 4.0);
    s.calibration = None;
    let mut r = SceneRenderer::new(&s, &spec).unwrap();
    let frames = attention_frames(&mut r, &spec, &RangingConfig::default(), 0.5, 3.5).unwrap();
    assert!(frames.len() > 60);
    assert!(frames.iter().all(|(_, f)| f.as_slice().iter().all(|v| v.is_finite())));
}

/// Five-second fixations: the arbiter follows each switch within a bounded
/// number of slots and holds steady in between.
#[test]
fn arbitration_follows_gaze_switches() {
    let spec = ChirpSpec::default();
    let config = RangingConfig::default();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for seed in 0..4 {
        let g = gaze_scenario(seed, 20.0);
        let TrajectorySpec::Gaze { position, .. } = g.trajectory else { unreachable!() };
        let rect = DeviceRect::facing(g.speaker_position, position);
        for sample in simulate_attention(&g, &spec, &config, &rect).unwrap() {
            x.push(sample.features);
            y.push(sample.looking);
        }
    }
    let model = train_attention(&x, &y, &SvmParams::default()).unwrap();

    let devices = [[-0.4, 0.0, 0.0], [0.4, 0.0, 0.0]];
    let fixations: Vec<Fixation> = (0..6).map(|i| Fixation { start: 5.0 * i as f64, look_at: devices[i % 2] }).collect();
    let mut s = Scenario::new(
        30.0,
        TrajectorySpec::Gaze { position: [0.0, -0.6, 0.0], fixations: fixations.clone(), turn_time: 0.5 },
    );
    s.seed = 5;
    s.multidevice = Some(MultiDeviceConfig {
        devices: vec![
            DeviceConfig { id: "left".into(), position: devices[0], time_offset: 0.0 },
            DeviceConfig { id: "right".into(), position: devices[1], time_offset: 0.0 },
        ],
        slot: 0.5,
        skip: 2.0,
    });
    let schedule = scenario_schedule(&s).unwrap();
    let mut r = SceneRenderer::new(&s, &spec).unwrap();
    let log = run_multidevice(&mut r, &spec, &config, &schedule, &model, &MultiDeviceParams::default()).unwrap();

    let target = |t: f64| fixations.iter().rev().find(|f| f.start < t).map(|f| usize::from(f.look_at[0] > 0.0));
    // A switch costs the turn, one slot for each device to be rescored, and
    // the persistence requirement.
    let lag = 0.5 + 4.0 * schedule.slot;
    let mut wrong = Vec::new();
    for e in log.iter().filter(|e| e.active.is_some()) {
        let since = fixations.iter().rev().find(|f| f.start < e.t).map_or(f64::INFINITY, |f| e.t - f.start);
        let settled = since > lag || e.t < fixations[1].start;
        if settled && e.chosen != target(e.t) {
            wrong.push(e.t);
        }
    }
    assert!(wrong.is_empty(), "wrong choice after settling at {wrong:?}");
    let changes = log.windows(2).filter(|w| w[0].chosen.is_some() && w[1].chosen != w[0].chosen).count();
    assert!(changes < fixations.len(), "{changes} changes for {} switches", fixations.len() - 1);
}
