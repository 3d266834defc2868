//! Software modem and channel simulator for a fan-vibration covert channel.
//!
//! A transmitter encodes bits as fan-speed schedules (return-to-zero FSK or
//! ASK). The channel turns a schedule into the accelerometer trace a phone on
//! the same desk would record, and the receiver recovers the bits with a
//! sliding FFT. The harness ties the pieces together for BER and SNR
//! experiments.

// `!(x > 0.0)` style checks are intentional: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod dsp;
pub mod error;
pub mod formats;
pub mod framing;
pub mod harness;
pub mod modem;
pub mod physics;
pub mod signal;

pub use error::{Error, Result};
pub use signal::{BitStream, RpmSchedule, SampleTrace, Segment, Spectrum};
