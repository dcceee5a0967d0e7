//! Random-access sample sources for streaming pipelines.

use crate::error::Result;
use crate::signal::SampleBuffer;

/// A multichannel recording that can be read in blocks.
///
/// Readers are expected to move forward; implementations may discard data
/// before the most recent read position.
pub trait SampleSource {
    fn sample_rate(&self) -> f64;
    fn num_channels(&self) -> usize;
    /// Length in samples when known up front.
    fn total_samples(&self) -> Option<u64>;
    /// Reads `len` samples at `start`; `None` once the range runs past the end.
    fn read(&mut self, start: u64, len: usize) -> Result<Option<SampleBuffer>>;
}

impl SampleSource for SampleBuffer {
    fn sample_rate(&self) -> f64 {
        SampleBuffer::sample_rate(self)
    }

    fn num_channels(&self) -> usize {
        SampleBuffer::num_channels(self)
    }

    fn total_samples(&self) -> Option<u64> {
        Some(self.len() as u64)
    }

    fn read(&mut self, start: u64, len: usize) -> Result<Option<SampleBuffer>> {
        let Ok(start) = usize::try_from(start) else {
            return Ok(None);
        };
        if start + len > self.len() {
            return Ok(None);
        }
        self.slice(start, len).map(Some)
    }
}

/// Reads `len` samples at `start`, padding with zeros past the end. Used by
/// one-shot analyses over short in-memory takes.
pub fn read_padded(src: &mut dyn SampleSource, start: u64, len: usize) -> Result<SampleBuffer> {
    if let Some(b) = src.read(start, len)? {
        return Ok(b);
    }
    let total = src.total_samples().unwrap_or(start);
    let avail = total.saturating_sub(start).min(len as u64) as usize;
    let mut channels = vec![vec![0.0; len]; src.num_channels()];
    if avail > 0 {
        if let Some(b) = src.read(start, avail)? {
            for (dst, s) in channels.iter_mut().zip(b.channels()) {
                dst[..avail].copy_from_slice(s);
            }
        }
    }
    SampleBuffer::new(src.sample_rate(), channels)
}
