//! Text file formats: accelerometer traces and fan schedules.
//!
//! Trace v1:
//!
//! ```text
//! # air-viber-trace v1 sample_rate_hz=500 quantization_step=0.0023956299
//! 0,0,9.81
//! ```
//!
//! Schedule v1:
//!
//! ```text
//! # air-viber-schedule v1 rpm_max=3260 pad_bits=0
//! 0.5,3260
//! 1.5,3030
//! ```
//!
//! Values are plain decimals, LF terminated, no trailing whitespace.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::signal::{quantize, RpmSchedule, SampleTrace};

const TRACE_MAGIC: &str = "# air-viber-trace v1";
const SCHEDULE_MAGIC: &str = "# air-viber-schedule v1";

/// Formats `v` as a plain decimal with at most 9 significant digits.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let rounded: f64 = format!("{v:.8e}").parse().expect("scientific formatting always parses");
    format!("{rounded}")
}

fn format_full(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else {
        format!("{v}")
    }
}

pub fn write_trace<W: Write>(trace: &SampleTrace, mut sink: W) -> Result<()> {
    let step = trace.quantization_step().map_or("0".to_string(), format_full);
    writeln!(
        sink,
        "{TRACE_MAGIC} sample_rate_hz={} quantization_step={step}",
        trace.sample_rate()
    )?;
    for [x, y, z] in trace.samples() {
        writeln!(sink, "{},{},{}", format_sig9(*x), format_sig9(*y), format_sig9(*z))?;
    }
    sink.flush()?;
    Ok(())
}

/// Parses a v1 trace. Values of a quantized trace are snapped back onto the
/// quantization grid, so quantized traces round-trip exactly.
pub fn read_trace<R: BufRead>(source: R) -> Result<SampleTrace> {
    let mut lines = source.lines();
    let header = lines.next().ok_or_else(|| Error::format(1, "empty trace file"))??;
    let fields = parse_header(&header, TRACE_MAGIC, 1)?;
    let sample_rate: u32 = header_value(&fields, "sample_rate_hz", 1)?;
    if sample_rate == 0 {
        return Err(Error::format(1, "sample_rate_hz must be positive"));
    }
    let step: f64 = header_value(&fields, "quantization_step", 1)?;
    if !(step >= 0.0) || !step.is_finite() {
        return Err(Error::format(1, format!("invalid quantization_step {step}")));
    }
    let step = (step > 0.0).then_some(step);

    let mut samples = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut row = [0.0; 3];
        let mut parts = line.split(',');
        for v in row.iter_mut() {
            let text = parts
                .next()
                .ok_or_else(|| Error::format(lineno, "expected 3 comma-separated values"))?;
            *v = parse_finite(text, lineno)?;
            if let Some(step) = step {
                *v = quantize(*v, step);
            }
        }
        if parts.next().is_some() {
            return Err(Error::format(lineno, "expected 3 comma-separated values"));
        }
        samples.push(row);
    }
    if samples.is_empty() {
        return Err(Error::format(2, "trace has no samples"));
    }
    SampleTrace::new(sample_rate, samples, step)
}

pub fn write_schedule<W: Write>(schedule: &RpmSchedule, pad_bits: usize, mut sink: W) -> Result<()> {
    writeln!(
        sink,
        "{SCHEDULE_MAGIC} rpm_max={} pad_bits={pad_bits}",
        schedule.rpm_max()
    )?;
    for s in schedule.segments() {
        writeln!(sink, "{},{}", format_full(s.duration), format_full(s.rpm))?;
    }
    sink.flush()?;
    Ok(())
}

/// Parses a v1 schedule, returning it with the recorded pad length.
pub fn read_schedule<R: BufRead>(source: R) -> Result<(RpmSchedule, usize)> {
    let mut lines = source.lines();
    let header = lines.next().ok_or_else(|| Error::format(1, "empty schedule file"))??;
    let fields = parse_header(&header, SCHEDULE_MAGIC, 1)?;
    let rpm_max: u32 = header_value(&fields, "rpm_max", 1)?;
    let pad_bits: usize = header_value(&fields, "pad_bits", 1)?;

    let mut schedule = RpmSchedule::new(rpm_max);
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (d, r) = line
            .split_once(',')
            .ok_or_else(|| Error::format(lineno, "expected duration_s,rpm"))?;
        let duration = parse_finite(d, lineno)?;
        let rpm = parse_finite(r, lineno)?;
        schedule
            .push(duration, rpm)
            .map_err(|e| Error::format(lineno, e.to_string()))?;
    }
    if schedule.is_empty() {
        return Err(Error::format(2, "schedule has no segments"));
    }
    Ok((schedule, pad_bits))
}

fn parse_header<'a>(header: &'a str, magic: &str, line: usize) -> Result<Vec<(&'a str, &'a str)>> {
    let rest = header
        .strip_prefix(magic)
        .ok_or_else(|| Error::format(line, format!("expected header starting with {magic:?}")))?;
    rest.split_whitespace()
        .map(|kv| {
            kv.split_once('=')
                .ok_or_else(|| Error::format(line, format!("malformed header field {kv:?}")))
        })
        .collect()
}

fn header_value<T: std::str::FromStr>(fields: &[(&str, &str)], key: &str, line: usize) -> Result<T> {
    let (_, raw) = fields
        .iter()
        .find(|(k, _)| *k == key)
        .ok_or_else(|| Error::format(line, format!("missing header field {key}")))?;
    raw.parse()
        .map_err(|_| Error::format(line, format!("invalid value {raw:?} for {key}")))
}

fn parse_finite(text: &str, line: usize) -> Result<f64> {
    let v: f64 = text
        .parse()
        .map_err(|_| Error::format(line, format!("invalid number {text:?}")))?;
    if !v.is_finite() {
        return Err(Error::format(line, format!("non-finite value {text:?}")));
    }
    Ok(v)
}
