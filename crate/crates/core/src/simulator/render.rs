//! Sample-accurate rendering of a [`Scenario`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::geometry::{self, mic_world_positions, occlusion_gain, relative_angles, HeadPose, Vec3};
use super::trajectory::Trajectory;
use super::{GroundTruthTrace, Scenario, TruthFrame};
use crate::error::{Error, Result};
use crate::multidevice::SlotSchedule;
use crate::signal::{ChirpSpec, SampleBuffer};
use crate::stream::SampleSource;

/// Geometry is evaluated on this sample grid and interpolated in between.
const KNOT: u64 = 16;
/// Noise is drawn in independent blocks so any range renders identically.
const NOISE_BLOCK: u64 = 2048;
/// Distance below which the spreading loss stops growing.
const NEAR_FIELD: f64 = 0.1;

#[derive(Debug, Clone)]
struct Path {
    source: Vec3,
    device: usize,
    gain: f64,
    time_offset: f64,
}

/// Renders any sample range of a scenario on demand.
///
/// The output is a pure function of (scenario, spec, range), so long takes can
/// be streamed block by block with bounded memory.
#[derive(Debug, Clone)]
pub struct SceneRenderer {
    scenario: Scenario,
    spec: ChirpSpec,
    trajectory: Trajectory,
    calibration_pose: Option<HeadPose>,
    paths: Vec<Path>,
    schedule: Option<SlotSchedule>,
    noise_sigma: f64,
    total: u64,
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

fn mix_seed(seed: u64, channel: u64, block: u64) -> u64 {
    // SplitMix64 finalizer over a simple combination of the inputs.
    let mut z = seed
        .wrapping_add(channel.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(block.wrapping_mul(0xd1b5_4a32_d192_ed03));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SceneRenderer {
    pub fn new(scenario: &Scenario, spec: &ChirpSpec) -> Result<Self> {
        spec.validate()?;
        scenario.validate()?;
        let speaker = scenario.primary_speaker();
        let offset = scenario.tracking_offset();
        let trajectory = scenario.trajectory.build(speaker, scenario.seed)?.shifted(offset);
        let calibration_pose = scenario.calibration.map(|c| {
            let center = geometry::add(speaker, [c.standoff + scenario.geometry.d_e / 2.0, 0.0, 0.0]);
            HeadPose::new(center, 0.0, 0.0)
        });

        let mut paths = Vec::new();
        let mut schedule = None;
        match &scenario.multidevice {
            Some(m) => {
                for (i, d) in m.devices.iter().enumerate() {
                    paths.push(Path { source: d.position, device: i, gain: 1.0, time_offset: d.time_offset });
                }
                schedule = Some(SlotSchedule::new(
                    m.devices.iter().map(|d| d.id.clone()).collect(),
                    m.slot,
                    m.skip,
                    0.0,
                )?);
            }
            None => paths.push(Path { source: scenario.speaker_position, device: 0, gain: 1.0, time_offset: 0.0 }),
        }
        if let Some(echo) = &scenario.echo {
            let direct: Vec<Path> = paths.clone();
            for p in direct {
                paths.push(Path {
                    source: echo.image_of(p.source),
                    gain: 10f64.powf(-echo.attenuation_db / 20.0),
                    ..p
                });
            }
        }

        let reference_amp = spec.amplitude * NEAR_FIELD;
        let noise_sigma = if scenario.noise_snr_db.is_infinite() && scenario.noise_snr_db > 0.0 {
            0.0
        } else {
            (reference_amp * reference_amp / 2.0 / 10f64.powf(scenario.noise_snr_db / 10.0)).sqrt()
        };
        let total = (scenario.duration * spec.sample_rate).round() as u64;
        Ok(Self {
            scenario: scenario.clone(),
            spec: *spec,
            trajectory,
            calibration_pose,
            paths,
            schedule,
            noise_sigma,
            total,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn spec(&self) -> &ChirpSpec {
        &self.spec
    }

    pub fn len(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Standard deviation of the additive noise per sample.
    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    /// Receiver time at which the tracked trajectory starts.
    pub fn tracking_start(&self) -> f64 {
        self.scenario.clock.receiver_time(self.scenario.tracking_offset()).max(0.0)
    }

    /// Head pose at true time `t`.
    pub fn head_pose(&self, t: f64) -> HeadPose {
        let Some(cal) = self.calibration_pose else {
            return self.trajectory.pose_at(t);
        };
        let phase = self.scenario.calibration.expect("calibration pose implies a phase");
        if t < phase.hold {
            return cal;
        }
        let end = phase.hold + phase.transition;
        if t >= end || phase.transition <= 0.0 {
            return self.trajectory.pose_at(t);
        }
        let target = self.trajectory.pose_at(end);
        let s = smoothstep((t - phase.hold) / phase.transition);
        let lerp = |a: f64, b: f64| a + (b - a) * s;
        HeadPose::new(
            [
                lerp(cal.position[0], target.position[0]),
                lerp(cal.position[1], target.position[1]),
                lerp(cal.position[2], target.position[2]),
            ],
            lerp(cal.yaw, target.yaw),
            lerp(cal.pitch, target.pitch),
        )
    }

    /// Device whose chirp is on air at true time `t`.
    pub fn emitting_device(&self, t: f64) -> usize {
        self.schedule
            .as_ref()
            .and_then(|s| s.active_device(t))
            .unwrap_or(0)
    }

    /// Ground truth for the frame whose transmit period is centered at
    /// receiver time `t_rx`. Distances are taken when that period's center
    /// reaches the head.
    pub fn truth_at(&self, t_rx: f64) -> TruthFrame {
        let c = self.scenario.speed_of_sound;
        let speaker = self.scenario.primary_speaker();
        let t_emit = self.scenario.clock.true_time(t_rx);
        let approx = self.head_pose(t_emit);
        let t_arrive = t_emit + geometry::distance(approx.position, speaker) / c;
        let pose = self.head_pose(t_arrive);
        let mics = mic_world_positions(&self.scenario.geometry, &pose);
        let (yaw, pitch) = relative_angles(&pose, speaker);
        TruthFrame {
            t: t_rx,
            d: [
                geometry::distance(mics[0], speaker),
                geometry::distance(mics[1], speaker),
                geometry::distance(mics[2], speaker),
            ],
            yaw,
            pitch,
            d_m: geometry::distance(pose.position, speaker),
        }
    }

    /// Per-frame ground truth over the whole recording. Frames are stamped at
    /// the receiver time of each transmitted period's center.
    pub fn trace(&self) -> GroundTruthTrace {
        let period = self.spec.period_time();
        let mut frames = Vec::new();
        let mut k = 0u64;
        loop {
            let t_rx = self.scenario.clock.receiver_time((k as f64 + 0.5) * period);
            if t_rx >= self.scenario.duration {
                break;
            }
            if t_rx >= 0.0 {
                frames.push(self.truth_at(t_rx));
            }
            k += 1;
        }
        GroundTruthTrace { frames, tracking_start: self.tracking_start() }
    }

    fn dropout_gain(&self, mic: usize, t_rx: f64) -> f64 {
        self.scenario
            .dropouts
            .iter()
            .filter(|d| d.mic == mic && t_rx >= d.start && t_rx < d.start + d.duration)
            .map(|d| 10f64.powf(-d.attenuation_db / 20.0))
            .product()
    }

    /// Delay and linear gain of every (mic, path) pair at receiver sample `n`.
    fn knot(&self, n: u64) -> Vec<(f64, f64)> {
        let fs = self.spec.sample_rate;
        let t_rx = n as f64 / fs;
        let t = self.scenario.clock.true_time(t_rx);
        let pose = self.head_pose(t);
        let g = &self.scenario.geometry;
        let mics = mic_world_positions(g, &pose);
        let mut out = Vec::with_capacity(3 * self.paths.len());
        for (m, mic) in mics.iter().enumerate() {
            let drop = self.dropout_gain(m, t_rx);
            for p in &self.paths {
                let d = geometry::distance(*mic, p.source);
                let occ = occlusion_gain(&pose, g, p.source, m, &self.scenario.occlusion);
                let gain = p.gain * drop * NEAR_FIELD / d.max(NEAR_FIELD) * 10f64.powf(occ / 20.0);
                out.push((d / self.scenario.speed_of_sound, gain));
            }
        }
        out
    }

    /// Renders receiver samples `start..start + len` of all three channels.
    /// Samples past the end of the scenario are not clipped; callers decide.
    pub fn render(&self, start: u64, len: usize) -> SampleBuffer {
        let fs = self.spec.sample_rate;
        let np = self.paths.len();
        let mut channels = vec![vec![0.0; len]; 3];
        if len == 0 {
            return SampleBuffer::new(fs, channels).expect("valid shape");
        }
        let end = start + len as u64;
        let first_knot = start / KNOT;
        let last_knot = (end - 1) / KNOT + 1;
        let knots: Vec<Vec<(f64, f64)>> = (first_knot..=last_knot).map(|k| self.knot(k * KNOT)).collect();

        for i in 0..len {
            let n = start + i as u64;
            let t = self.scenario.clock.true_time(n as f64 / fs);
            let ki = (n / KNOT - first_knot) as usize;
            let u = (n % KNOT) as f64 / KNOT as f64;
            let (a, b) = (&knots[ki], &knots[ki + 1]);
            for (m, ch) in channels.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (j, p) in self.paths.iter().enumerate() {
                    let (ta, ga) = a[m * np + j];
                    let (tb, gb) = b[m * np + j];
                    let gain = ga + (gb - ga) * u;
                    if gain == 0.0 {
                        continue;
                    }
                    let t_emit = t - (ta + (tb - ta) * u);
                    if self.schedule.is_some() && self.emitting_device(t_emit) != p.device {
                        continue;
                    }
                    acc += gain * self.spec.value_at(t_emit - p.time_offset);
                }
                ch[i] = acc;
            }
        }

        if self.noise_sigma > 0.0 {
            for (c, ch) in channels.iter_mut().enumerate() {
                let mut block = start / NOISE_BLOCK;
                while block * NOISE_BLOCK < end {
                    let b0 = block * NOISE_BLOCK;
                    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.scenario.seed, c as u64, block));
                    for k in 0..NOISE_BLOCK {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        let n = b0 + k;
                        if n >= start && n < end {
                            ch[(n - start) as usize] += self.noise_sigma * z;
                        }
                    }
                    block += 1;
                }
            }
        }
        SampleBuffer::new(fs, channels).expect("rendered samples are finite")
    }
}

impl SampleSource for SceneRenderer {
    fn sample_rate(&self) -> f64 {
        self.spec.sample_rate
    }

    fn num_channels(&self) -> usize {
        3
    }

    fn total_samples(&self) -> Option<u64> {
        Some(self.total)
    }

    fn read(&mut self, start: u64, len: usize) -> Result<Option<SampleBuffer>> {
        if start + len as u64 > self.total {
            return Ok(None);
        }
        Ok(Some(self.render(start, len)))
    }
}

/// Renders the whole scenario into memory together with its ground truth.
pub fn simulate_scene(scenario: &Scenario, spec: &ChirpSpec) -> Result<(SampleBuffer, GroundTruthTrace)> {
    let r = SceneRenderer::new(scenario, spec)?;
    let n = usize::try_from(r.len()).map_err(|_| Error::Scenario("scenario too long to hold in memory".into()))?;
    Ok((r.render(0, n), r.trace()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{OcclusionModel, TrajectorySpec};

    fn static_scene(y: f64) -> Scenario {
        let mut s = Scenario::new(
            0.5,
            TrajectorySpec::Static { position: [0.0, -y, 0.0], yaw: None, pitch: None },
        );
        s.noise_snr_db = f64::INFINITY;
        s.occlusion = OcclusionModel::disabled();
        s
    }

    #[test]
    fn ranges_render_identically() {
        let mut s = static_scene(1.0);
        s.noise_snr_db = 20.0;
        let r = SceneRenderer::new(&s, &ChirpSpec::default()).unwrap();
        let whole = r.render(0, 6000);
        let part = r.render(2500, 1000);
        for c in 0..3 {
            assert_eq!(&whole.channel(c)[2500..3500], part.channel(c));
        }
    }

    #[test]
    fn static_delay_matches_distance() {
        let s = static_scene(1.0);
        let spec = ChirpSpec::default();
        let r = SceneRenderer::new(&s, &spec).unwrap();
        let buf = r.render(0, 8192);
        let truth = r.truth_at(0.05);
        let fs = spec.sample_rate;
        // Brute-force delay search against the transmitted waveform.
        for m in 0..3 {
            let x = buf.channel(m);
            let best = (0..400)
                .map(|lag| {
                    // Quadrature correlation so the carrier does not alias the peak.
                    let (mut i, mut q) = (0.0, 0.0);
                    for n in 3000..7000 {
                        let ph = std::f64::consts::TAU * spec.phase_cycles((n - lag) as f64 / fs);
                        i += x[n] * ph.cos();
                        q += x[n] * ph.sin();
                    }
                    (lag, i.hypot(q))
                })
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap()
                .0;
            let expect = truth.d[m] / 343.0 * fs;
            assert!((best as f64 - expect).abs() <= 0.5 + 1e-9, "mic {m}: {best} vs {expect}");
        }
    }

    #[test]
    fn rms_falls_as_inverse_distance() {
        let spec = ChirpSpec::default();
        let rms = |y: f64| {
            let r = SceneRenderer::new(&static_scene(y), &spec).unwrap();
            let b = r.render(4096, 8192);
            (b.channel(0).iter().map(|v| v * v).sum::<f64>() / 8192.0).sqrt() * r.truth_at(0.1).d[0]
        };
        let (a, b) = (rms(0.5), rms(1.5));
        assert!((a / b - 1.0).abs() < 0.01, "{a} {b}");
    }

    #[test]
    fn trace_has_one_row_per_period() {
        let mut s = static_scene(0.5);
        s.duration = 3.0;
        let r = SceneRenderer::new(&s, &ChirpSpec::default()).unwrap();
        let tr = r.trace();
        assert!((tr.frames.len() as f64 - 3.0 * 23.4375).abs() <= 1.0);
    }

    #[test]
    fn deterministic() {
        let mut s = static_scene(0.7);
        s.noise_snr_db = 10.0;
        let spec = ChirpSpec::default();
        let (a, ta) = simulate_scene(&s, &spec).unwrap();
        let (b, tb) = simulate_scene(&s, &spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
    }
}
