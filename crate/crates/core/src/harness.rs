//! End-to-end pipelines and the BER experiment runner.
//!
//! A BER run transmits `trials` random packets per sweep point. Every trial
//! draws its payload, noise and jammer seeds from the master seed, so sweep
//! points share payloads and the whole run is reproducible. Only payload bits
//! are scored; a packet the receiver never locks onto is scored as an
//! all-zero payload.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::channel::{apply_jammer, transmit, ChannelParams, JammerParams};
use crate::error::{Error, Result};
use crate::framing::{deframe, frame, FramingConfig};
use crate::modem::{modulate_ask, modulate_fsk, AskParams, DemodConfig, Demodulator, FskParams};
use crate::physics::FanModel;
use crate::signal::{BitStream, RpmSchedule, SampleTrace};

const REPORT_MAGIC: &str = "# air-viber-ber v1";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modulation {
    #[default]
    Fsk,
    Ask,
}

impl std::str::FromStr for Modulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fsk" => Ok(Modulation::Fsk),
            "ask" => Ok(Modulation::Ask),
            other => Err(Error::config(format!("unknown modulation {other:?}"))),
        }
    }
}

/// Character width used when sending text.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextEncoding {
    #[default]
    Ascii7,
    Byte8,
}

impl std::str::FromStr for TextEncoding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ascii7" | "7" => Ok(TextEncoding::Ascii7),
            "byte8" | "8" => Ok(TextEncoding::Byte8),
            other => Err(Error::config(format!("unknown text encoding {other:?}"))),
        }
    }
}

impl TextEncoding {
    fn width(self) -> usize {
        match self {
            TextEncoding::Ascii7 => 7,
            TextEncoding::Byte8 => 8,
        }
    }
}

/// MSB-first bits of each character.
pub fn encode_text(text: &str, encoding: TextEncoding) -> Result<BitStream> {
    let width = encoding.width();
    let mut bits = BitStream::default();
    for b in text.bytes() {
        if width == 7 && b > 0x7F {
            return Err(Error::domain(format!("byte {b:#04x} does not fit in 7-bit ASCII")));
        }
        for i in (0..width).rev() {
            bits.push(b >> i & 1 == 1);
        }
    }
    Ok(bits)
}

/// Inverse of [`encode_text`]; trailing NUL characters from padding are dropped.
pub fn decode_text(bits: &BitStream, encoding: TextEncoding) -> String {
    let width = encoding.width();
    let bytes: Vec<u8> = bits
        .bits()
        .chunks_exact(width)
        .map(|c| c.iter().fold(0u8, |acc, &b| acc << 1 | u8::from(b)))
        .collect();
    let end = bytes.iter().rposition(|&b| b != 0).map_or(0, |i| i + 1);
    String::from_utf8_lossy(&bytes[..end]).into_owned()
}

/// Splits `data` into payloads of `payload_len` bits, zero-padding the last.
/// Returns the payloads and the number of pad bits.
pub fn packetize(data: &BitStream, payload_len: usize) -> Result<(Vec<BitStream>, usize)> {
    if data.is_empty() {
        return Err(Error::domain("nothing to send"));
    }
    if payload_len == 0 {
        return Err(Error::config("payload_len must be positive"));
    }
    let pad = (payload_len - data.len() % payload_len) % payload_len;
    let mut bits = data.bits().to_vec();
    bits.resize(data.len() + pad, false);
    let payloads = bits.chunks(payload_len).map(|c| BitStream::new(c.to_vec())).collect();
    Ok((payloads, pad))
}

/// Frames `data` into back-to-back packets and modulates them.
pub fn build_transmission(
    data: &BitStream,
    framing: &FramingConfig,
    modulation: Modulation,
    fsk: &FskParams,
    ask: &AskParams,
) -> Result<(RpmSchedule, usize)> {
    framing.validate()?;
    let (payloads, pad) = packetize(data, framing.payload_len)?;
    let mut stream = BitStream::default();
    for p in &payloads {
        stream.extend_from(&frame(p, framing)?);
    }
    let schedule = match modulation {
        Modulation::Fsk => modulate_fsk(&stream, fsk)?,
        Modulation::Ask => modulate_ask(&stream, ask)?,
    };
    Ok((schedule, pad))
}

/// Surrounds `schedule` with `seconds` of idle running at `rpm`.
pub fn pad_with_idle(schedule: &RpmSchedule, rpm: f64, seconds: f64) -> Result<RpmSchedule> {
    if seconds <= 0.0 {
        return Ok(schedule.clone());
    }
    let mut out = RpmSchedule::new(schedule.rpm_max());
    out.push(seconds, rpm)?;
    for s in schedule.segments() {
        out.push(s.duration, s.rpm)?;
    }
    out.push(seconds, rpm)?;
    Ok(out)
}

/// Receiver settings matching an FSK parameter set.
pub fn demod_for_fsk(fsk: &FskParams, sample_rate: u32) -> DemodConfig {
    DemodConfig {
        sample_rate,
        bit_time: fsk.bit_duration,
        f0: fsk.rpm0 / 60.0,
        f1: fsk.rpm1 / 60.0,
        ..DemodConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedFrame {
    pub window_offset: usize,
    pub payload: BitStream,
    pub check_ok: bool,
    /// False when the trace ended before the whole frame arrived.
    pub complete: bool,
}

/// Demodulates and deframes every frame in `trace`. An empty result means
/// no carrier was found.
pub fn receive(trace: &SampleTrace, demod: &DemodConfig, framing: &FramingConfig) -> Result<Vec<ReceivedFrame>> {
    framing.validate()?;
    if trace.sample_rate() != demod.sample_rate {
        return Err(Error::config(format!(
            "trace sampled at {} Hz but receiver configured for {} Hz",
            trace.sample_rate(),
            demod.sample_rate
        )));
    }
    let frame_len = framing.frame_len();
    let mut receiver = Demodulator::new(demod, &framing.preamble_bits)?;
    receiver.push_all(trace.samples());
    receiver
        .finish_frames(frame_len)
        .into_iter()
        .map(|f| {
            let complete = f.is_complete(frame_len);
            let mut bits = f.bits.into_inner();
            bits.resize(frame_len, false);
            let (payload, ok) = deframe(&BitStream::new(bits), framing)?;
            Ok(ReceivedFrame {
                window_offset: f.window_offset,
                payload,
                check_ok: ok && complete,
                complete,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub label: String,
    #[serde(with = "snr_value")]
    pub snr_db: f64,
}

impl SweepPoint {
    pub fn snr(snr_db: f64) -> Self {
        SweepPoint {
            label: format!("{snr_db}"),
            snr_db,
        }
    }
}

/// Everything needed to reproduce a BER run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BerConfig {
    pub fan: FanModel,
    pub fsk: FskParams,
    pub channel: ChannelParams,
    pub demod: DemodConfig,
    pub framing: FramingConfig,
    pub jammer: Option<JammerParams>,
    /// Idle running at the base speed before and after each packet, seconds.
    pub idle_s: f64,
    pub trials: usize,
    pub seed: u64,
    pub points: Vec<SweepPoint>,
}

impl Default for BerConfig {
    fn default() -> Self {
        let fsk = FskParams::default();
        let channel = ChannelParams::default();
        BerConfig {
            demod: demod_for_fsk(&fsk, channel.sample_rate),
            idle_s: fsk.bit_duration,
            fan: FanModel::default(),
            fsk,
            channel,
            framing: FramingConfig::default(),
            jammer: None,
            trials: 100,
            seed: 1,
            points: vec![SweepPoint::snr(45.0)],
        }
    }
}

impl BerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::config("trials must be at least 1"));
        }
        if self.points.is_empty() {
            return Err(Error::config("no SNR or location points to sweep"));
        }
        if !(self.idle_s >= 0.0) {
            return Err(Error::config("idle_s must be non-negative"));
        }
        self.fan.validate()?;
        self.fsk.validate()?;
        self.channel.validate()?;
        self.demod.validate()?;
        self.framing.validate()?;
        if let Some(j) = &self.jammer {
            j.validate()?;
        }
        if self.demod.sample_rate != self.channel.sample_rate {
            return Err(Error::config("demod and channel sample rates differ"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct TrialSeeds {
    payload: u64,
    noise: u64,
    jammer: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrialOutcome {
    pub bit_errors: usize,
    pub detected: bool,
    pub check_ok: bool,
}

/// Aggregated results for one sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct BerRow {
    pub point: SweepPoint,
    pub trials: usize,
    pub bits_sent: usize,
    pub bit_errors: usize,
    pub frames_detected: usize,
    pub frames_check_ok: usize,
}

impl BerRow {
    pub fn ber(&self) -> f64 {
        if self.bits_sent == 0 {
            0.0
        } else {
            self.bit_errors as f64 / self.bits_sent as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BerReport {
    pub params: BerConfig,
    pub rows: Vec<BerRow>,
}

impl BerReport {
    pub fn trials(&self) -> usize {
        self.rows.iter().map(|r| r.trials).sum()
    }

    pub fn bits_sent(&self) -> usize {
        self.rows.iter().map(|r| r.bits_sent).sum()
    }

    pub fn bit_errors(&self) -> usize {
        self.rows.iter().map(|r| r.bit_errors).sum()
    }

    pub fn ber(&self) -> f64 {
        let sent = self.bits_sent();
        if sent == 0 {
            0.0
        } else {
            self.bit_errors() as f64 / sent as f64
        }
    }

    pub fn frames_detected(&self) -> usize {
        self.rows.iter().map(|r| r.frames_detected).sum()
    }

    pub fn frames_check_ok(&self) -> usize {
        self.rows.iter().map(|r| r.frames_check_ok).sum()
    }

    /// Key=value records followed by a CSV table, one row per sweep point.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{REPORT_MAGIC}").unwrap();
        let params = serde_json::to_value(&self.params).expect("config serializes");
        for (key, value) in flatten(&params) {
            writeln!(out, "param.{key}={value}").unwrap();
        }
        writeln!(out, "total.trials={}", self.trials()).unwrap();
        writeln!(out, "total.bits_sent={}", self.bits_sent()).unwrap();
        writeln!(out, "total.bit_errors={}", self.bit_errors()).unwrap();
        writeln!(out, "total.ber={}", self.ber()).unwrap();
        writeln!(out, "total.frames_detected={}", self.frames_detected()).unwrap();
        writeln!(out, "total.frames_check_ok={}", self.frames_check_ok()).unwrap();
        writeln!(
            out,
            "point,snr_db,trials,bits_sent,bit_errors,ber,frames_detected,frames_check_ok"
        )
        .unwrap();
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.point.label,
                r.point.snr_db,
                r.trials,
                r.bits_sent,
                r.bit_errors,
                r.ber(),
                r.frames_detected,
                r.frames_check_ok
            )
            .unwrap();
        }
        out
    }
}

fn flatten(value: &Value) -> Vec<(String, String)> {
    fn walk(prefix: &str, value: &Value, out: &mut Vec<(String, String)>) {
        match value {
            Value::Object(map) => {
                for (k, v) in map {
                    let key = if prefix.is_empty() {
                        k.clone()
                    } else {
                        format!("{prefix}.{k}")
                    };
                    walk(&key, v, out);
                }
            }
            leaf => out.push((prefix.to_string(), leaf.to_string())),
        }
    }
    let mut out = Vec::new();
    walk("", value, &mut out);
    out
}

/// Recovers the configuration echoed in a BER report.
pub fn parse_report_params(report: &str) -> Result<BerConfig> {
    let mut root = Map::new();
    let mut seen = false;
    for (i, line) in report.lines().enumerate() {
        if i == 0 {
            if line != REPORT_MAGIC {
                return Err(Error::format(1, "not a BER report"));
            }
            continue;
        }
        let Some(rest) = line.strip_prefix("param.") else {
            continue;
        };
        seen = true;
        let (key, raw) = rest
            .split_once('=')
            .ok_or_else(|| Error::format(i + 1, "expected key=value"))?;
        let value: Value =
            serde_json::from_str(raw).map_err(|e| Error::format(i + 1, format!("bad value for {key}: {e}")))?;
        let mut node = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for part in &parts[..parts.len() - 1] {
            node = node
                .entry(part.to_string())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .ok_or_else(|| Error::format(i + 1, format!("conflicting key {key}")))?;
        }
        node.insert(parts[parts.len() - 1].to_string(), value);
    }
    if !seen {
        return Err(Error::format(1, "report has no param records"));
    }
    serde_json::from_value(Value::Object(root)).map_err(|e| Error::config(e.to_string()))
}

fn trial_seeds(master: u64, trials: usize) -> Vec<TrialSeeds> {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    (0..trials)
        .map(|_| TrialSeeds {
            payload: rng.next_u64(),
            noise: rng.next_u64(),
            jammer: rng.next_u64(),
        })
        .collect()
}

fn run_trial(config: &BerConfig, snr_db: f64, seeds: TrialSeeds) -> Result<TrialOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seeds.payload);
    let payload: BitStream = (0..config.framing.payload_len).map(|_| rng.random::<bool>()).collect();
    let bits = frame(&payload, &config.framing)?;
    let schedule = modulate_fsk(&bits, &config.fsk)?;
    let mut schedule = pad_with_idle(&schedule, config.fsk.rpm_base, config.idle_s)?;
    if let Some(jammer) = &config.jammer {
        schedule = apply_jammer(
            &schedule,
            &JammerParams {
                seed: seeds.jammer,
                ..jammer.clone()
            },
        )?;
    }
    let channel = ChannelParams {
        snr_db,
        noise_seed: seeds.noise,
        ..config.channel.clone()
    };
    let trace = transmit(&schedule, &config.fan, &channel)?;
    let frames = receive(&trace, &config.demod, &config.framing)?;
    Ok(match frames.first() {
        Some(f) => TrialOutcome {
            bit_errors: payload.hamming(&f.payload),
            detected: true,
            check_ok: f.check_ok,
        },
        None => TrialOutcome {
            bit_errors: payload.iter().filter(|&b| b).count(),
            detected: false,
            check_ok: false,
        },
    })
}

/// Runs every trial at one SNR, in parallel, returning outcomes in trial order.
pub fn run_point(config: &BerConfig, snr_db: f64) -> Result<Vec<TrialOutcome>> {
    trial_seeds(config.seed, config.trials)
        .into_par_iter()
        .map(|s| run_trial(config, snr_db, s))
        .collect()
}

pub fn run_ber(config: &BerConfig) -> Result<BerReport> {
    config.validate()?;
    let rows = config
        .points
        .iter()
        .map(|point| {
            let outcomes = run_point(config, point.snr_db)?;
            Ok(BerRow {
                point: point.clone(),
                trials: outcomes.len(),
                bits_sent: outcomes.len() * config.framing.payload_len,
                bit_errors: outcomes.iter().map(|o| o.bit_errors).sum(),
                frames_detected: outcomes.iter().filter(|o| o.detected).count(),
                frames_check_ok: outcomes.iter().filter(|o| o.check_ok).count(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BerReport {
        params: config.clone(),
        rows,
    })
}

/// Per-point sweep summary keyed by label, convenient for assertions.
pub fn ber_by_label(report: &BerReport) -> BTreeMap<String, f64> {
    report.rows.iter().map(|r| (r.point.label.clone(), r.ber())).collect()
}

mod snr_value {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Text(t) => t
                .parse::<f64>()
                .map_err(|_| serde::de::Error::custom(format!("invalid snr {t:?}"))),
        }
    }
}
