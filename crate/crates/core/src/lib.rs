//! Head tracking from an ultrasonic chirp recorded by earphone microphones.
// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod calibration;
pub mod dsp;
pub mod error;
pub mod io;
pub mod metrics;
pub mod multidevice;
pub mod pipeline;
pub mod pose;
pub mod ranging;
pub mod signal;
pub mod simulator;
pub mod stream;

pub use error::{Error, Result};
pub use signal::{ChirpSpec, SampleBuffer};
