//! `earpose`: simulate scenes, track recordings, score traces and train the
//! attention and activity classifiers.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use earpose_core::attention::activity::{simulate_activity, ACTIVITY_CHANNELS, ACTIVITY_LEN};
use earpose_core::attention::{
    classify_activity, gaze_scenario, predict_attention, simulate_attention, train_activity, train_attention,
    Activity, ActivityFeatures, AttentionFeatures, ClassifierModel, DeviceRect, SvmParams, FEATURE_DIM,
};
use earpose_core::calibration::{CalibrationData, CalibrationParams};
use earpose_core::io::{read_csv, write_atomic, write_csv, write_jsonl, write_wav_from, TrackRow, WavSource};
use earpose_core::metrics::evaluate;
use earpose_core::multidevice::{run_multidevice, scenario_schedule, write_arbitration_csv, MultiDeviceParams};
use earpose_core::pipeline::{track, truth_rows, CalibrationSource};
use earpose_core::ranging::{RangeEstimate, RangingConfig};
use earpose_core::simulator::{Scenario, SceneRenderer, TrajectorySpec};
use earpose_core::{ChirpSpec, Error, Result};

const BUNDLED: &[(&str, &str)] = &[
    ("grid-0-50-static", include_str!("../configs/grid-0-50-static.toml")),
    ("grid-0-50-random", include_str!("../configs/grid-0-50-random.toml")),
    ("occlusion-random", include_str!("../configs/occlusion-random.toml")),
    ("radial-walk", include_str!("../configs/radial-walk.toml")),
    ("two-laptops", include_str!("../configs/two-laptops.toml")),
];

#[derive(Parser)]
#[command(name = "earpose", version, about = "Earphone head tracking from an ultrasonic chirp")]
struct Cli {
    /// Directory for all outputs.
    #[arg(long, global = true, env = "EARPOSE_OUT", default_value = "earpose-out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scenario to a 3-channel WAV plus its ground-truth trace.
    Simulate {
        /// Scenario TOML file, or the name of a bundled scenario.
        #[arg(long)]
        config: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write a JSON-lines copy of the trace.
        #[arg(long)]
        jsonl: bool,
    },
    /// Track a 48 kHz, 16-bit recording with at least 3 channels.
    Track {
        wav: PathBuf,
        /// Stored calibration (TOML) from an earlier session.
        #[arg(long, conflicts_with = "calibrate", required_unless_present = "calibrate")]
        calibration: Option<PathBuf>,
        /// Calibrate on this many seconds of still hold.
        #[arg(long)]
        calibrate: Option<f64>,
        /// Where the still hold begins, seconds.
        #[arg(long, default_value_t = 0.0, requires = "calibrate")]
        calibrate_start: f64,
        /// Ranging settings (TOML); defaults to the full optimized chain.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Plain FMCW ranging without the robustness measures.
        #[arg(long, conflicts_with = "config")]
        baseline: bool,
        #[arg(long)]
        jsonl: bool,
    },
    /// Score a predicted trace against ground truth.
    Eval {
        pred: PathBuf,
        truth: PathBuf,
        /// Label for the grid cell the take was recorded at.
        #[arg(long)]
        grid: Option<String>,
    },
    /// Train and cross-validate the look / not-look classifier.
    TrainAttention {
        /// Feature CSV (group, t, label, f0..f62); simulated when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Classifier settings (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Simulated gaze takes, one cross-validation fold each.
        #[arg(long, default_value_t = 8)]
        trajectories: u64,
        #[arg(long, default_value_t = 20.0)]
        duration: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train and cross-validate the exercise recognizer.
    TrainActivity {
        /// Feature CSV (group, label, then 160 x 7 values); simulated when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Simulated participants, one cross-validation fold each.
        #[arg(long, default_value_t = 4)]
        subjects: u64,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Arbitrate attention between time-multiplexed devices.
    Multidevice {
        /// Scenario with a multidevice section (file or bundled name).
        #[arg(long)]
        config: String,
        /// Attention model JSON; trained on simulated gaze takes when absent.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Scenario(_) => 2,
        Error::Format(_) | Error::Input(_) => 3,
        _ => 4,
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

fn load_scenario(config: &str, seed: Option<u64>) -> Result<Scenario> {
    let path = Path::new(config);
    let text = if path.exists() {
        read_text(path)?
    } else if let Some((_, t)) = BUNDLED.iter().find(|(n, _)| *n == config) {
        t.to_string()
    } else {
        let names: Vec<&str> = BUNDLED.iter().map(|(n, _)| *n).collect();
        return Err(Error::Config(format!("no file or bundled scenario named {config:?} (bundled: {})", names.join(", "))));
    };
    let mut s = Scenario::from_toml(&text)?;
    if let Some(seed) = seed {
        s.seed = seed;
        s.validate()?;
    }
    Ok(s)
}

fn load_toml<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => toml::from_str(&read_text(p)?).map_err(|e| Error::Config(format!("{}: {}", p.display(), e.message()))),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, |w| Ok(w.write_all(text.as_bytes())?))
}

fn simulate(out: &Path, config: &str, seed: Option<u64>, jsonl: bool) -> Result<()> {
    let spec = ChirpSpec::default();
    let scenario = load_scenario(config, seed)?;
    let mut renderer = SceneRenderer::new(&scenario, &spec)?;
    write_wav_from(&out.join("mics.wav"), &mut renderer, 1 << 16)?;
    let rows = truth_rows(&renderer.trace(), f64::NEG_INFINITY);
    write_csv(&out.join("truth.csv"), &rows)?;
    if jsonl {
        write_jsonl(&out.join("truth.jsonl"), &rows)?;
    }
    write_text(&out.join("scenario.toml"), &toml::to_string(&scenario).map_err(|e| Error::Format(e.to_string()))?)?;
    println!("{} frames, tracking from {:.2} s -> {}", rows.len(), renderer.tracking_start(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct RangeRow {
    t: f64,
    d_l: f64,
    d_r: f64,
    d_s: f64,
    peak_l: f64,
    peak_r: f64,
    peak_s: f64,
    confidence_l: f64,
    confidence_r: f64,
    confidence_s: f64,
    level_l: f64,
    level_r: f64,
    level_s: f64,
    dropped_l: bool,
    dropped_r: bool,
    dropped_s: bool,
}

impl From<&RangeEstimate> for RangeRow {
    fn from(e: &RangeEstimate) -> Self {
        Self {
            t: e.t,
            d_l: e.distance[0],
            d_r: e.distance[1],
            d_s: e.distance[2],
            peak_l: e.peak_hz[0],
            peak_r: e.peak_hz[1],
            peak_s: e.peak_hz[2],
            confidence_l: e.confidence[0],
            confidence_r: e.confidence[1],
            confidence_s: e.confidence[2],
            level_l: e.level_db[0],
            level_r: e.level_db[1],
            level_s: e.level_db[2],
            dropped_l: e.dropped[0],
            dropped_r: e.dropped[1],
            dropped_s: e.dropped[2],
        }
    }
}

struct TrackArgs {
    wav: PathBuf,
    calibration: Option<PathBuf>,
    calibrate: Option<f64>,
    calibrate_start: f64,
    config: Option<PathBuf>,
    baseline: bool,
    jsonl: bool,
}

fn run_track(out: &Path, a: TrackArgs) -> Result<()> {
    let spec = ChirpSpec::default();
    let config = if a.baseline { RangingConfig::baseline() } else { load_toml(a.config.as_deref())? };
    config.validate(&spec)?;
    let mut source = WavSource::open(&a.wav, spec.sample_rate, 3)?;
    let calibration = match (a.calibration, a.calibrate) {
        (Some(p), _) => CalibrationSource::Stored(CalibrationData::from_toml(&read_text(&p)?)?),
        (None, Some(window)) => {
            CalibrationSource::Window(CalibrationParams { start: a.calibrate_start, window, ..Default::default() })
        }
        (None, None) => return Err(Error::Config("either --calibration or --calibrate is required".into())),
    };
    let result = track(&mut source, &spec, &config, calibration, None)?;
    let rows = result.rows();
    write_csv(&out.join("poses.csv"), &rows)?;
    let ranges: Vec<RangeRow> = result.ranges.iter().map(RangeRow::from).collect();
    write_csv(&out.join("ranges.csv"), &ranges)?;
    if a.jsonl {
        write_jsonl(&out.join("poses.jsonl"), &rows)?;
    }
    write_text(&out.join("calibration.toml"), &result.calibration.to_toml()?)?;
    println!(
        "{} frames, {:.3} ms per frame -> {}",
        rows.len(),
        result.frame_cost().as_secs_f64() * 1e3,
        out.display()
    );
    Ok(())
}

fn run_eval(out: &Path, pred: &Path, truth: &Path, grid: Option<String>) -> Result<()> {
    let spec = ChirpSpec::default();
    let p: Vec<TrackRow> = read_csv(pred)?;
    let t: Vec<TrackRow> = read_csv(truth)?;
    for (rows, path) in [(&p, pred), (&t, truth)] {
        if rows.is_empty() {
            return Err(Error::Format(format!("{} holds no trace rows", path.display())));
        }
    }
    let mut report = evaluate(&p, &t, spec.period_time())?;
    report.grid = grid;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Format(e.to_string()))?;
    write_text(&out.join("metrics.json"), &json)?;
    println!("{json}");
    Ok(())
}

struct AttentionRow {
    group: u64,
    t: f64,
    looking: bool,
    features: AttentionFeatures,
}

fn read_attention_csv(path: &Path) -> Result<Vec<AttentionRow>> {
    let mut rd = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Format(format!("{} row {}: {what}", path.display(), i + 1));
        if rec.len() != 3 + FEATURE_DIM {
            return Err(bad(&format!("expected {} columns, got {}", 3 + FEATURE_DIM, rec.len())));
        }
        let num = |k: usize| rec[k].trim().parse::<f64>().map_err(|_| bad(&format!("column {k} is not a number")));
        let features = (3..rec.len()).map(num).collect::<Result<Vec<_>>>()?;
        out.push(AttentionRow {
            group: rec[0].trim().parse().map_err(|_| bad("group must be an integer"))?,
            t: num(1)?,
            looking: matches!(rec[2].trim(), "1" | "true"),
            features: AttentionFeatures(features),
        });
    }
    Ok(out)
}

fn write_attention_csv(path: &Path, rows: &[AttentionRow]) -> Result<()> {
    write_atomic(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        let mut header = vec!["group".to_string(), "t".into(), "label".into()];
        header.extend((0..FEATURE_DIM).map(|k| format!("f{k}")));
        csv.write_record(&header)?;
        for r in rows {
            let mut rec = vec![r.group.to_string(), format!("{:.6}", r.t), u8::from(r.looking).to_string()];
            rec.extend(r.features.0.iter().map(|v| v.to_string()));
            csv.write_record(&rec)?;
        }
        csv.flush()?;
        Ok(())
    })
}

fn simulated_attention(trajectories: u64, duration: f64, seed: u64) -> Result<Vec<AttentionRow>> {
    let spec = ChirpSpec::default();
    let mut rows = Vec::new();
    for g in 0..trajectories {
        let s = gaze_scenario(seed + g, duration);
        let TrajectorySpec::Gaze { position, .. } = s.trajectory else { unreachable!("gaze scenario") };
        let rect = DeviceRect::facing(s.speaker_position, position);
        for x in simulate_attention(&s, &spec, &RangingConfig::default(), &rect)? {
            rows.push(AttentionRow { group: g, t: x.t, looking: x.looking, features: x.features });
        }
    }
    Ok(rows)
}

fn fit_attention(rows: &[&AttentionRow], params: &SvmParams) -> Result<ClassifierModel> {
    let x: Vec<AttentionFeatures> = rows.iter().map(|r| r.features.clone()).collect();
    let y: Vec<bool> = rows.iter().map(|r| r.looking).collect();
    train_attention(&x, &y, params)
}

fn groups<T>(rows: &[T], key: impl Fn(&T) -> u64) -> Vec<u64> {
    let mut g: Vec<u64> = rows.iter().map(key).collect();
    g.sort_unstable();
    g.dedup();
    g
}

fn run_train_attention(out: &Path, data: Option<PathBuf>, config: Option<PathBuf>, trajectories: u64, duration: f64, seed: u64) -> Result<()> {
    let params: SvmParams = load_toml(config.as_deref())?;
    let rows = match &data {
        Some(p) => read_attention_csv(p)?,
        None => {
            let rows = simulated_attention(trajectories, duration, seed)?;
            write_attention_csv(&out.join("attention_dataset.csv"), &rows)?;
            rows
        }
    };
    let folds = groups(&rows, |r| r.group);
    let (mut right, mut total) = (0usize, 0usize);
    if folds.len() > 1 {
        for &g in &folds {
            let train: Vec<&AttentionRow> = rows.iter().filter(|r| r.group != g).collect();
            let model = fit_attention(&train, &params)?;
            let test: Vec<&AttentionRow> = rows.iter().filter(|r| r.group == g).collect();
            let mut ok = 0;
            for r in &test {
                ok += usize::from(predict_attention(&model, &r.features)?.0 == r.looking);
            }
            println!("fold {g}: {:.1}% of {} frames", 100.0 * ok as f64 / test.len() as f64, test.len());
            right += ok;
            total += test.len();
        }
        println!("leave-one-trajectory-out accuracy {:.1}%", 100.0 * right as f64 / total as f64);
    }
    let all: Vec<&AttentionRow> = rows.iter().collect();
    let model = fit_attention(&all, &params)?;
    write_text(&out.join("attention_model.json"), &model.to_json()?)?;
    println!("{} support vectors -> {}", model.support.len(), out.join("attention_model.json").display());
    Ok(())
}

fn read_activity_csv(path: &Path) -> Result<Vec<(u64, Activity, ActivityFeatures)>> {
    let mut rd = csv::Reader::from_path(path)?;
    let width = ACTIVITY_LEN * ACTIVITY_CHANNELS;
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Format(format!("{} row {}: {what}", path.display(), i + 1));
        if rec.len() != 2 + width {
            return Err(bad(&format!("expected {} columns, got {}", 2 + width, rec.len())));
        }
        let vals = (2..rec.len())
            .map(|k| rec[k].trim().parse::<f64>().map_err(|_| bad(&format!("column {k} is not a number"))))
            .collect::<Result<Vec<_>>>()?;
        let rows = vals.chunks_exact(ACTIVITY_CHANNELS).map(|c| std::array::from_fn(|k| c[k])).collect();
        let label: Activity = rec[1].trim().parse().map_err(|e: Error| bad(&e.to_string()))?;
        out.push((rec[0].trim().parse().map_err(|_| bad("group must be an integer"))?, label, ActivityFeatures(rows)));
    }
    Ok(out)
}

fn write_activity_csv(path: &Path, rows: &[(u64, Activity, ActivityFeatures)]) -> Result<()> {
    write_atomic(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        let mut header = vec!["group".to_string(), "label".into()];
        for k in 0..ACTIVITY_LEN {
            for c in ["d_l", "d_r", "dd_l", "dd_r", "ld", "lost_l", "lost_r"] {
                header.push(format!("{c}_{k}"));
            }
        }
        csv.write_record(&header)?;
        for (g, a, f) in rows {
            let mut rec = vec![g.to_string(), a.name().to_string()];
            rec.extend(f.flatten().iter().map(|v| v.to_string()));
            csv.write_record(&rec)?;
        }
        csv.flush()?;
        Ok(())
    })
}

fn run_train_activity(out: &Path, data: Option<PathBuf>, config: Option<PathBuf>, subjects: u64, reps: usize, seed: u64) -> Result<()> {
    let params: SvmParams = load_toml(config.as_deref())?;
    let rows = match &data {
        Some(p) => read_activity_csv(p)?,
        None => {
            let spec = ChirpSpec::default();
            let mut rows = Vec::new();
            for g in 0..subjects {
                for a in Activity::ALL {
                    for f in simulate_activity(a, seed + g, reps, &spec, &RangingConfig::default())? {
                        rows.push((g, a, f));
                    }
                }
            }
            write_activity_csv(&out.join("activity_dataset.csv"), &rows)?;
            rows
        }
    };
    let folds = groups(&rows, |r| r.0);
    let (mut right, mut total) = (0usize, 0usize);
    if folds.len() > 1 {
        for &g in &folds {
            let train: Vec<(Activity, ActivityFeatures)> =
                rows.iter().filter(|r| r.0 != g).map(|r| (r.1, r.2.clone())).collect();
            let model = train_activity(&train, &params)?;
            let mut ok = 0;
            let mut n = 0;
            for r in rows.iter().filter(|r| r.0 == g) {
                n += 1;
                ok += usize::from(classify_activity(&model, &r.2)? == r.1);
            }
            println!("subject {g}: {ok}/{n}");
            right += ok;
            total += n;
        }
        println!("leave-one-subject-out accuracy {:.1}%", 100.0 * right as f64 / total as f64);
    }
    let all: Vec<(Activity, ActivityFeatures)> = rows.iter().map(|r| (r.1, r.2.clone())).collect();
    let model = train_activity(&all, &params)?;
    write_text(&out.join("activity_model.json"), &model.to_json()?)?;
    println!("-> {}", out.join("activity_model.json").display());
    Ok(())
}

fn run_multidevice_cmd(out: &Path, config: &str, model: Option<PathBuf>, seed: Option<u64>) -> Result<()> {
    let spec = ChirpSpec::default();
    let scenario = load_scenario(config, seed)?;
    let schedule = scenario_schedule(&scenario)?;
    let model = match model {
        Some(p) => ClassifierModel::from_json(&read_text(&p)?)?,
        None => {
            let rows = simulated_attention(8, 20.0, 0)?;
            let all: Vec<&AttentionRow> = rows.iter().collect();
            fit_attention(&all, &SvmParams::default())?
        }
    };
    let mut renderer = SceneRenderer::new(&scenario, &spec)?;
    let log = run_multidevice(&mut renderer, &spec, &RangingConfig::default(), &schedule, &model, &MultiDeviceParams::default())?;
    write_atomic(&out.join("arbitration.csv"), |w| write_arbitration_csv(w, &schedule, &log))?;

    // With a scripted gaze, report how often the choice matched the target.
    if let (TrajectorySpec::Gaze { fixations, .. }, Some(m)) = (&scenario.trajectory, &scenario.multidevice) {
        let nearest = |p: [f64; 3]| {
            (0..m.devices.len())
                .min_by(|&a, &b| {
                    let d = |i: usize| earpose_core::simulator::distance(m.devices[i].position, p);
                    d(a).total_cmp(&d(b))
                })
                .expect("devices")
        };
        let post: Vec<_> = log.iter().filter(|e| e.active.is_some()).collect();
        let right = post
            .iter()
            .filter(|e| {
                let t = scenario.clock.true_time(e.t);
                fixations.iter().rev().find(|f| f.start < t).map(|f| nearest(f.look_at)) == e.chosen
            })
            .count();
        println!("chosen device matched the gaze target in {right}/{} slots", post.len());
    }
    println!("{} slots -> {}", log.len(), out.join("arbitration.csv").display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let out = cli.out_dir;
    match cli.command {
        Command::Simulate { config, seed, jsonl } => simulate(&out, &config, seed, jsonl),
        Command::Track { wav, calibration, calibrate, calibrate_start, config, baseline, jsonl } => {
            run_track(&out, TrackArgs { wav, calibration, calibrate, calibrate_start, config, baseline, jsonl })
        }
        Command::Eval { pred, truth, grid } => run_eval(&out, &pred, &truth, grid),
        Command::TrainAttention { data, config, trajectories, duration, seed } => {
            run_train_attention(&out, data, config, trajectories, duration, seed)
        }
        Command::TrainActivity { data, config, subjects, reps, seed } => {
            run_train_activity(&out, data, config, subjects, reps, seed)
        }
        Command::Multidevice { config, model, seed } => run_multidevice_cmd(&out, &config, model, seed),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("earpose: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
