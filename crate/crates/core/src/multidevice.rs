//! Time-multiplexed transmitters and attention arbitration between them.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::attention::{attention_frames, ClassifierModel};
use crate::error::{Error, Result};
use crate::ranging::RangingConfig;
use crate::signal::ChirpSpec;
use crate::simulator::Scenario;
use crate::stream::SampleSource;

/// Round-robin emission schedule shared by all devices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotSchedule {
    pub devices: Vec<String>,
    /// Slot length in seconds.
    pub slot: f64,
    /// Warm-up time after `start` during which no device is tracked.
    pub skip: f64,
    pub start: f64,
}

impl SlotSchedule {
    pub fn new(devices: Vec<String>, slot: f64, skip: f64, start: f64) -> Result<Self> {
        if devices.is_empty() {
            return Err(Error::Config("slot schedule needs at least one device".into()));
        }
        if !(slot.is_finite() && slot > 0.0 && skip.is_finite() && skip >= 0.0 && start.is_finite()) {
            return Err(Error::Config(format!("invalid slot timing: slot {slot}, skip {skip}")));
        }
        Ok(Self { devices, slot, skip, start })
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    /// Duration of one full round over all devices.
    pub fn round(&self) -> f64 {
        self.slot * self.devices.len() as f64
    }

    /// Index of the device on air at `t`; `None` while warming up.
    pub fn active_device(&self, t: f64) -> Option<usize> {
        let since = t - self.start - self.skip;
        if since < 0.0 {
            return None;
        }
        Some(((since / self.slot).floor() as u64 % self.devices.len() as u64) as usize)
    }

    /// Global index of the slot containing `t` (0 is the first post-warm-up
    /// slot); `None` while warming up.
    pub fn slot_index(&self, t: f64) -> Option<u64> {
        let since = t - self.start - self.skip;
        (since >= 0.0).then(|| (since / self.slot).floor() as u64)
    }

    /// `[begin, end)` of slot `index`.
    pub fn slot_bounds(&self, index: u64) -> (f64, f64) {
        let b = self.start + self.skip + index as f64 * self.slot;
        (b, b + self.slot)
    }

    /// Device scheduled in slot `index`.
    pub fn slot_device(&self, index: u64) -> usize {
        (index % self.devices.len() as u64) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArbiterParams {
    /// Lead a challenger needs over the incumbent, in score units.
    pub margin: f64,
    /// Consecutive decisions the lead must persist for.
    pub persistence: usize,
}

impl Default for ArbiterParams {
    fn default() -> Self {
        Self { margin: 0.2, persistence: 2 }
    }
}

/// Picks the device the user attends to from per-slot attention scores.
#[derive(Debug, Clone)]
pub struct Arbiter {
    params: ArbiterParams,
    /// Latest score per device with the end time of the slot it came from.
    scores: Vec<Option<(f64, f64)>>,
    incumbent: Option<usize>,
    challenger: Option<(usize, usize)>,
}

impl Arbiter {
    pub fn new(devices: usize, params: ArbiterParams) -> Self {
        Self { params, scores: vec![None; devices], incumbent: None, challenger: None }
    }

    pub fn current(&self) -> Option<usize> {
        self.incumbent
    }

    /// Records the score a device earned during a slot ending at `t`.
    pub fn report(&mut self, device: usize, score: f64, t: f64) {
        if let Some(s) = self.scores.get_mut(device) {
            *s = Some((score, t));
        }
    }

    /// Scores still considered current at time `t`: anything from within
    /// the last full round.
    pub fn fresh_scores(&self, schedule: &SlotSchedule, t: f64) -> Vec<Option<f64>> {
        let horizon = schedule.round() + 1e-9;
        self.scores
            .iter()
            .map(|s| s.and_then(|(v, at)| (t - at <= horizon).then_some(v)))
            .collect()
    }

    /// Updates and returns the attended device at time `t`.
    pub fn decide(&mut self, schedule: &SlotSchedule, t: f64) -> Option<usize> {
        if schedule.active_device(t).is_none() {
            self.incumbent = None;
            self.challenger = None;
            return None;
        }
        let fresh = self.fresh_scores(schedule, t);
        self.incumbent = arbitrate(&fresh, self.incumbent, &mut self.challenger, &self.params);
        self.incumbent
    }
}

/// One arbitration step over per-device scores (`None` = stale/unknown).
///
/// The highest positive score wins outright when there is no incumbent or the
/// incumbent's own score is no longer positive. Otherwise a challenger must
/// beat the incumbent by `margin` on `persistence` consecutive calls.
pub fn arbitrate(
    scores: &[Option<f64>],
    incumbent: Option<usize>,
    challenger: &mut Option<(usize, usize)>,
    params: &ArbiterParams,
) -> Option<usize> {
    let best = scores
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.filter(|v| *v > 0.0).map(|v| (i, v)))
        .max_by(|a, b| a.1.total_cmp(&b.1));
    let Some((best, best_score)) = best else {
        *challenger = None;
        return None;
    };
    let Some(inc) = incumbent else {
        *challenger = None;
        return Some(best);
    };
    let inc_score = scores.get(inc).copied().flatten().filter(|v| *v > 0.0);
    let Some(inc_score) = inc_score else {
        *challenger = None;
        return Some(best);
    };
    if best == inc || best_score <= inc_score + params.margin {
        *challenger = None;
        return Some(inc);
    }
    let count = match *challenger {
        Some((c, n)) if c == best => n + 1,
        _ => 1,
    };
    if count >= params.persistence {
        *challenger = None;
        Some(best)
    } else {
        *challenger = Some((best, count));
        Some(inc)
    }
}

/// One arbitration decision, taken at the end of a slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArbitrationEntry {
    /// Receiver time of the decision (slot end), seconds.
    pub t: f64,
    /// Device that transmitted during the slot; `None` while warming up.
    pub active: Option<usize>,
    /// Mean attention margin over the slot's own frames.
    pub score: Option<f64>,
    pub chosen: Option<usize>,
}

/// Settings of the multi-device loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MultiDeviceParams {
    pub arbiter: ArbiterParams,
    /// Time after each slot start ignored for propagation and ring-down, s.
    pub guard: f64,
}

impl Default for MultiDeviceParams {
    fn default() -> Self {
        Self { arbiter: ArbiterParams::default(), guard: 0.01 }
    }
}

/// Schedule of a simulated multi-device scene on the receiver clock.
pub fn scenario_schedule(scenario: &Scenario) -> Result<SlotSchedule> {
    let m = scenario
        .multidevice
        .as_ref()
        .ok_or_else(|| Error::Config("scenario has no multidevice section".into()))?;
    SlotSchedule::new(
        m.devices.iter().map(|d| d.id.clone()).collect(),
        m.slot,
        m.skip,
        scenario.clock.receiver_time(0.0),
    )
}

/// Scores each slot with the attention classifier using only frames that
/// lie wholly inside the slot (frames straddling a boundary would mix two
/// transmitters), then arbitrates. One entry per slot, warm-up included.
pub fn run_multidevice(
    source: &mut dyn SampleSource,
    spec: &ChirpSpec,
    config: &RangingConfig,
    schedule: &SlotSchedule,
    model: &ClassifierModel,
    params: &MultiDeviceParams,
) -> Result<Vec<ArbitrationEntry>> {
    let total = source
        .total_samples()
        .ok_or_else(|| Error::Input("multi-device runs need a source of known length".into()))?;
    let duration = total as f64 / spec.sample_rate;
    let mut arbiter = Arbiter::new(schedule.len(), params.arbiter);
    let mut log = Vec::new();

    let mut t = schedule.start + schedule.slot;
    while t <= (schedule.start + schedule.skip).min(duration) + 1e-9 {
        log.push(ArbitrationEntry { t, active: None, score: None, chosen: arbiter.decide(schedule, t - 1e-9) });
        t += schedule.slot;
    }
    let mut k = 0u64;
    loop {
        let (begin, end) = schedule.slot_bounds(k);
        if end > duration {
            break;
        }
        let device = schedule.slot_device(k);
        let score = match attention_frames(source, spec, config, begin + params.guard, end) {
            Ok(frames) if !frames.is_empty() => {
                let mut sum = 0.0;
                for (_, f) in &frames {
                    sum += model.decision(f.as_slice())?;
                }
                Some(sum / frames.len() as f64)
            }
            Ok(_) | Err(Error::NoSignal(_)) => None,
            Err(e) => return Err(e),
        };
        if let Some(s) = score {
            arbiter.report(device, s, end);
        }
        let chosen = arbiter.decide(schedule, end);
        log.push(ArbitrationEntry { t: end, active: Some(device), score, chosen });
        k += 1;
    }
    Ok(log)
}

/// Writes the arbitration log as CSV (`t, active, chosen`, device ids,
/// empty for none).
pub fn write_arbitration_csv(out: &mut dyn Write, schedule: &SlotSchedule, log: &[ArbitrationEntry]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "active", "score", "chosen"])?;
    let id = |d: Option<usize>| d.map(|i| schedule.devices[i].clone()).unwrap_or_default();
    for e in log {
        w.write_record([
            format!("{:.4}", e.t),
            id(e.active),
            e.score.map(|s| format!("{s:.4}")).unwrap_or_default(),
            id(e.chosen),
        ])?;
    }
    w.flush()?;
    Ok(())
}
