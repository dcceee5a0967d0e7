//! Files: 16-bit WAV in and out, fixed-column CSV traces, atomic writes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::PoseEstimate;
use crate::ranging::RangeEstimate;
use crate::signal::{ChirpSpec, SampleBuffer};
use crate::simulator::TruthFrame;
use crate::stream::SampleSource;

/// Writes through a temporary file in the destination directory and renames
/// it into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        fill(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// One row of a tracking trace. Predictions and ground truth share it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackRow {
    pub t: f64,
    pub d_l: f64,
    pub d_r: f64,
    pub d_s: f64,
    pub d_m: f64,
    pub yaw: f64,
    pub pitch: f64,
    pub dropped_l: bool,
    pub dropped_r: bool,
    pub dropped_s: bool,
    pub valid: bool,
}

impl TrackRow {
    pub fn from_estimates(range: &RangeEstimate, pose: &PoseEstimate) -> Self {
        Self {
            t: range.t,
            d_l: range.distance[0],
            d_r: range.distance[1],
            d_s: range.distance[2],
            d_m: pose.d_m,
            yaw: pose.yaw,
            pitch: pose.pitch,
            dropped_l: range.dropped[0],
            dropped_r: range.dropped[1],
            dropped_s: range.dropped[2],
            valid: pose.valid,
        }
    }

    pub fn distances(&self) -> [f64; 3] {
        [self.d_l, self.d_r, self.d_s]
    }
}

impl From<&TruthFrame> for TrackRow {
    fn from(f: &TruthFrame) -> Self {
        Self {
            t: f.t,
            d_l: f.d[0],
            d_r: f.d[1],
            d_s: f.d[2],
            d_m: f.d_m,
            yaw: f.yaw,
            pitch: f.pitch,
            dropped_l: false,
            dropped_r: false,
            dropped_s: false,
            valid: true,
        }
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_atomic(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        for r in rows {
            csv.serialize(r)?;
        }
        csv.flush()?;
        Ok(())
    })
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut rd = csv::Reader::from_path(path)?;
    rd.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// JSON-lines mirror of a CSV table.
pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_atomic(path, |w| {
        for r in rows {
            serde_json::to_writer(&mut *w, r).map_err(|e| Error::Format(e.to_string()))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

fn to_i16(x: f64) -> i16 {
    (x.clamp(-1.0, 1.0) * i16::MAX as f64).round() as i16
}

fn wav_spec(sample_rate: f64, channels: usize) -> Result<hound::WavSpec> {
    let channels = u16::try_from(channels).map_err(|_| Error::Format("too many channels".into()))?;
    Ok(hound::WavSpec {
        channels,
        sample_rate: sample_rate.round() as u32,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    })
}

/// Writes an interleaved 16-bit PCM WAV.
pub fn write_wav(path: &Path, buf: &SampleBuffer) -> Result<()> {
    let spec = wav_spec(buf.sample_rate(), buf.num_channels())?;
    write_atomic(path, |w| {
        let mut seekable = std::io::Cursor::new(Vec::new());
        {
            let mut wr = hound::WavWriter::new(&mut seekable, spec)?;
            for i in 0..buf.len() {
                for ch in buf.channels() {
                    wr.write_sample(to_i16(ch[i]))?;
                }
            }
            wr.finalize()?;
        }
        w.write_all(seekable.get_ref())?;
        Ok(())
    })
}

/// Exports `duration` seconds of the transmit waveform as a mono WAV,
/// streamed sample by sample.
pub fn write_transmit_wav(path: &Path, spec: &ChirpSpec, duration: f64) -> Result<()> {
    spec.validate()?;
    if !(duration > 0.0) {
        return Err(Error::Config("duration must be positive".into()));
    }
    let total = (duration * spec.sample_rate).round() as i64;
    let ws = wav_spec(spec.sample_rate, 1)?;
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut wr = hound::WavWriter::new(BufWriter::new(tmp.as_file()), ws)?;
        for i in 0..total {
            let phase = spec.phase_cycles_at_sample(i);
            wr.write_sample(to_i16(spec.amplitude * (std::f64::consts::TAU * phase).cos()))?;
        }
        wr.finalize()?;
    }
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Streams every sample of `source` into a 16-bit WAV, `block` samples at a
/// time, so arbitrarily long takes never sit in memory whole.
pub fn write_wav_from(path: &Path, source: &mut dyn SampleSource, block: usize) -> Result<()> {
    let total = source
        .total_samples()
        .ok_or_else(|| Error::Input("streaming WAV export needs a source of known length".into()))?;
    let spec = wav_spec(source.sample_rate(), source.num_channels())?;
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut wr = hound::WavWriter::new(BufWriter::new(tmp.as_file()), spec)?;
        let mut start = 0u64;
        while start < total {
            let len = (total - start).min(block.max(1) as u64) as usize;
            let buf = source
                .read(start, len)?
                .ok_or_else(|| Error::Input(format!("source ended early at sample {start}")))?;
            for i in 0..len {
                for c in buf.channels() {
                    wr.write_sample(to_i16(c[i]))?;
                }
            }
            start += len as u64;
        }
        wr.finalize()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Streaming multichannel WAV reader. Only the requested block is decoded.
pub struct WavSource {
    reader: hound::WavReader<BufReader<File>>,
    sample_rate: f64,
    channels: usize,
    frames: u64,
    scale: f64,
}

impl WavSource {
    /// Opens `path`, insisting on the given sample rate, at least
    /// `min_channels` channels and 16-bit integer samples.
    pub fn open(path: &Path, sample_rate: f64, min_channels: usize) -> Result<Self> {
        let reader = hound::WavReader::open(path)?;
        let s = reader.spec();
        if s.sample_format != hound::SampleFormat::Int || s.bits_per_sample != 16 {
            return Err(Error::Format(format!(
                "expected 16-bit PCM, got {} bit {:?}",
                s.bits_per_sample, s.sample_format
            )));
        }
        if (s.sample_rate as f64 - sample_rate).abs() > 0.5 {
            return Err(Error::Format(format!("expected {sample_rate} Hz, got {} Hz", s.sample_rate)));
        }
        if (s.channels as usize) < min_channels {
            return Err(Error::Format(format!("expected at least {min_channels} channels, got {}", s.channels)));
        }
        Ok(Self {
            frames: reader.duration() as u64,
            reader,
            sample_rate: s.sample_rate as f64,
            channels: s.channels as usize,
            scale: 1.0 / i16::MAX as f64,
        })
    }
}

impl SampleSource for WavSource {
    fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    fn num_channels(&self) -> usize {
        self.channels
    }

    fn total_samples(&self) -> Option<u64> {
        Some(self.frames)
    }

    fn read(&mut self, start: u64, len: usize) -> Result<Option<SampleBuffer>> {
        if start + len as u64 > self.frames {
            return Ok(None);
        }
        let pos = u32::try_from(start).map_err(|_| Error::Format("WAV offset out of range".into()))?;
        self.reader.seek(pos)?;
        let mut channels = vec![Vec::with_capacity(len); self.channels];
        let mut samples = self.reader.samples::<i16>();
        for _ in 0..len {
            for ch in channels.iter_mut() {
                let v = samples.next().ok_or_else(|| Error::Format("truncated WAV data".into()))??;
                ch.push(v as f64 * self.scale);
            }
        }
        SampleBuffer::new(self.sample_rate, channels).map(Some)
    }
}

/// Reads a whole WAV into memory.
pub fn read_wav(path: &Path) -> Result<SampleBuffer> {
    let reader = hound::WavReader::open(path)?;
    let s = reader.spec();
    let mut src = WavSource::open(path, s.sample_rate as f64, 1)?;
    let n = src.frames as usize;
    src.read(0, n)?.ok_or_else(|| Error::Format("empty WAV".into()))
}
