//! Core value types shared by the modem, channel and harness.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default ceiling for commanded fan speed.
pub const DEFAULT_RPM_MAX: u32 = 3260;

/// Standard gravity placed on the z axis of synthesized traces, m/s².
pub const GRAVITY: f64 = 9.81;

/// Ordered sequence of binary symbols.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BitStream(Vec<bool>);

impl BitStream {
    pub fn new(bits: Vec<bool>) -> Self {
        BitStream(bits)
    }

    /// Builds a stream from 0/1 integers; any non-zero value is a one.
    pub fn from_u8s(bits: &[u8]) -> Self {
        BitStream(bits.iter().map(|&b| b != 0).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        self.0.iter().copied()
    }

    pub fn push(&mut self, bit: bool) {
        self.0.push(bit);
    }

    pub fn extend_from(&mut self, other: &BitStream) {
        self.0.extend_from_slice(&other.0);
    }

    pub fn concat(parts: &[&BitStream]) -> BitStream {
        BitStream(parts.iter().flat_map(|p| p.0.iter().copied()).collect())
    }

    pub fn slice(&self, start: usize, end: usize) -> BitStream {
        BitStream(self.0[start..end].to_vec())
    }

    /// Number of positions where the two streams differ, over the common prefix.
    pub fn hamming(&self, other: &BitStream) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }

    /// True when no two adjacent bits are equal.
    pub fn is_alternating(&self) -> bool {
        self.0.windows(2).all(|w| w[0] != w[1])
    }

    pub fn into_inner(self) -> Vec<bool> {
        self.0
    }
}

impl From<Vec<bool>> for BitStream {
    fn from(bits: Vec<bool>) -> Self {
        BitStream(bits)
    }
}

impl FromIterator<bool> for BitStream {
    fn from_iter<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        BitStream(iter.into_iter().collect())
    }
}

impl fmt::Display for BitStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for BitStream {
    type Err = Error;

    /// Parses a string of `0`/`1` characters. Commas, spaces and underscores are ignored.
    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .filter(|c| !matches!(c, ',' | ' ' | '_'))
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::domain(format!("invalid bit character {other:?}"))),
            })
            .collect()
    }
}

/// One constant-speed stretch of a fan command timeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    /// Seconds, strictly positive.
    pub duration: f64,
    /// Revolutions per minute.
    pub rpm: f64,
}

/// Piecewise-constant fan-speed command timeline.
///
/// This is the recorded sequence of speed commands and sleeps a transmitter
/// issues; segments are contiguous, so the total duration is the sum of the
/// segment durations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpmSchedule {
    rpm_max: u32,
    segments: Vec<Segment>,
}

impl RpmSchedule {
    pub fn new(rpm_max: u32) -> Self {
        RpmSchedule {
            rpm_max,
            segments: Vec::new(),
        }
    }

    pub fn from_segments(rpm_max: u32, segments: Vec<Segment>) -> Result<Self> {
        let mut schedule = RpmSchedule::new(rpm_max);
        for s in segments {
            schedule.push(s.duration, s.rpm)?;
        }
        Ok(schedule)
    }

    /// Appends a segment after validating it against the schedule's limits.
    pub fn push(&mut self, duration: f64, rpm: f64) -> Result<()> {
        if !(duration > 0.0) || !duration.is_finite() {
            return Err(Error::domain(format!(
                "segment duration must be positive, got {duration}"
            )));
        }
        if !(0.0..=f64::from(self.rpm_max)).contains(&rpm) {
            return Err(Error::domain(format!(
                "segment rpm {rpm} outside [0, {}]",
                self.rpm_max
            )));
        }
        self.segments.push(Segment { duration, rpm });
        Ok(())
    }

    pub fn rpm_max(&self) -> u32 {
        self.rpm_max
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    /// Commanded speed at time `t` (seconds from the start). Past the end the
    /// last segment's speed holds.
    pub fn rpm_at(&self, t: f64) -> f64 {
        let mut end = 0.0;
        for s in &self.segments {
            end += s.duration;
            if t < end {
                return s.rpm;
            }
        }
        self.segments.last().map_or(0.0, |s| s.rpm)
    }
}

/// Regularly sampled 3-axis acceleration trace, m/s².
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTrace {
    sample_rate: u32,
    samples: Vec<[f64; 3]>,
    quantization_step: Option<f64>,
}

impl SampleTrace {
    pub fn new(sample_rate: u32, samples: Vec<[f64; 3]>, quantization_step: Option<f64>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::domain("sample rate must be positive"));
        }
        if samples.is_empty() {
            return Err(Error::domain("trace must hold at least one sample"));
        }
        if let Some(step) = quantization_step {
            if !(step > 0.0) || !step.is_finite() {
                return Err(Error::domain(format!("invalid quantization step {step}")));
            }
            if let Some(v) = samples.iter().flatten().find(|&&v| !on_grid(v, step)) {
                return Err(Error::domain(format!(
                    "sample {v} is not a multiple of quantization step {step}"
                )));
            }
        }
        Ok(SampleTrace {
            sample_rate,
            samples,
            quantization_step,
        })
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn samples(&self) -> &[[f64; 3]] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn quantization_step(&self) -> Option<f64> {
        self.quantization_step
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Euclidean norm of each sample.
    pub fn magnitudes(&self) -> Vec<f64> {
        self.samples.iter().map(|s| vector_magnitude(*s)).collect()
    }

    /// The first `n` samples, or the whole trace if shorter.
    pub fn truncated(&self, n: usize) -> Result<SampleTrace> {
        let n = n.min(self.samples.len());
        SampleTrace::new(self.sample_rate, self.samples[..n].to_vec(), self.quantization_step)
    }
}

pub fn vector_magnitude([x, y, z]: [f64; 3]) -> f64 {
    (x * x + y * y + z * z).sqrt()
}

/// Rounds `v` to the nearest multiple of `step`.
pub fn quantize(v: f64, step: f64) -> f64 {
    (v / step).round() * step
}

pub(crate) fn on_grid(v: f64, step: f64) -> bool {
    let k = v / step;
    (k - k.round()).abs() <= 1e-6
}

/// Magnitude spectrum with uniform bin spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Frequency resolution: sample rate divided by transform size.
    pub bin_hz: f64,
    pub magnitudes: Vec<f64>,
}

impl Spectrum {
    pub fn frequency(&self, bin: usize) -> f64 {
        bin as f64 * self.bin_hz
    }

    /// Index of the largest magnitude, optionally restricted to a frequency band.
    pub fn peak_bin(&self, band: Option<(f64, f64)>) -> Option<usize> {
        let (lo, hi) = band.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
        self.magnitudes
            .iter()
            .enumerate()
            .filter(|(k, _)| {
                let f = self.frequency(*k);
                f >= lo && f <= hi
            })
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k)
    }
}
