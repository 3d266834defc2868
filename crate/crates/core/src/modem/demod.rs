//! Sliding-FFT receiver.
//!
//! Each sample's vector magnitude is high-passed and buffered. Every time
//! `fft_size` samples are buffered, the window is transformed, the magnitudes
//! at the `f0` and `f1` bins are recorded, and `fft_size - noverlap` samples
//! are dropped. Window decisions are majority-voted in groups of
//! `samples_per_bit` once the preamble has been located.
//!
//! With return-to-zero FSK most windows of a bit only see the base speed and
//! carry leakage, not data. A window whose stronger tone is below
//! `erasure_gate` times the strongest tone within one bit period on either
//! side is erased and does not vote.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::dsp::{bin_index, HighPass, Window, WindowedFft};
use crate::error::{Error, Result};
use crate::signal::{vector_magnitude, BitStream, SampleTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemodConfig {
    pub sample_rate: u32,
    pub fft_size: usize,
    pub noverlap: usize,
    pub bit_time: f64,
    pub f0: f64,
    pub f1: f64,
    /// First-order high-pass cutoff; 0 disables the filter.
    pub highpass_hz: f64,
    pub window: Window,
    /// Windows weaker than this fraction of their neighbourhood peak abstain.
    pub erasure_gate: f64,
    /// Minimum fraction of preamble windows that must agree.
    pub enable_threshold: f64,
    /// Minimum ratio of preamble tone peaks to the cross-tone floor.
    pub min_contrast: f64,
}

impl Default for DemodConfig {
    fn default() -> Self {
        DemodConfig {
            sample_rate: 500,
            fft_size: 256,
            noverlap: 156,
            bit_time: 2.0,
            f0: 2600.0 / 60.0,
            f1: 3260.0 / 60.0,
            highpass_hz: 5.0,
            window: Window::Hann,
            erasure_gate: 0.1,
            enable_threshold: 0.8,
            min_contrast: 4.0,
        }
    }
}

impl DemodConfig {
    pub fn hop(&self) -> usize {
        self.fft_size - self.noverlap
    }

    pub fn bin_f0(&self) -> usize {
        bin_index(self.f0, self.fft_size, f64::from(self.sample_rate))
    }

    pub fn bin_f1(&self) -> usize {
        bin_index(self.f1, self.fft_size, f64::from(self.sample_rate))
    }

    /// Windows per bit, rounded to the nearest integer.
    pub fn samples_per_bit(&self) -> usize {
        (f64::from(self.sample_rate) * self.bit_time / self.hop() as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let fs = f64::from(self.sample_rate);
        if self.sample_rate == 0 {
            return Err(Error::config("sample_rate must be positive"));
        }
        if self.fft_size < 2 || self.noverlap >= self.fft_size {
            return Err(Error::config("need 0 <= noverlap < fft_size and fft_size >= 2"));
        }
        if !(self.bit_time > 0.0) || self.fft_size as f64 > fs * self.bit_time {
            return Err(Error::config("fft_size must not exceed sample_rate * bit_time"));
        }
        for (name, f) in [("f0", self.f0), ("f1", self.f1)] {
            if !(f > 0.0 && f < fs / 2.0) {
                return Err(Error::config(format!("{name} = {f} Hz outside (0, {})", fs / 2.0)));
            }
        }
        if self.bin_f0() == self.bin_f1() {
            return Err(Error::config(format!("f0 and f1 both round to bin {}", self.bin_f0())));
        }
        if self.samples_per_bit() < 3 {
            return Err(Error::config(format!(
                "{} windows per bit; majority voting needs at least 3",
                self.samples_per_bit()
            )));
        }
        if !(0.0..1.0).contains(&self.erasure_gate) {
            return Err(Error::config("erasure_gate must be in [0, 1)"));
        }
        if !(self.enable_threshold > 0.5 && self.enable_threshold <= 1.0) {
            return Err(Error::config("enable_threshold must be in (0.5, 1]"));
        }
        if !(self.min_contrast >= 0.0) {
            return Err(Error::config("min_contrast must be non-negative"));
        }
        Ok(())
    }
}

/// Tone magnitudes of one STFT window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowAmplitudes {
    pub f0: f64,
    pub f1: f64,
}

impl WindowAmplitudes {
    fn strength(&self) -> f64 {
        self.f0.max(self.f1)
    }

    fn tone(&self, bit: bool) -> f64 {
        if bit {
            self.f1
        } else {
            self.f0
        }
    }
}

/// Incremental STFT over an accelerometer sample stream.
pub struct StftStream {
    highpass: HighPass,
    fft: WindowedFft,
    buffer: VecDeque<f64>,
    frame: Vec<f64>,
    hop: usize,
    bin0: usize,
    bin1: usize,
}

impl StftStream {
    pub fn new(config: &DemodConfig) -> Result<Self> {
        config.validate()?;
        Ok(StftStream {
            highpass: HighPass::new(config.highpass_hz, f64::from(config.sample_rate)),
            fft: WindowedFft::new(config.fft_size, config.window),
            buffer: VecDeque::with_capacity(config.fft_size),
            frame: vec![0.0; config.fft_size],
            hop: config.hop(),
            bin0: config.bin_f0(),
            bin1: config.bin_f1(),
        })
    }

    /// Feeds one sample; returns the tone magnitudes when a window completes.
    pub fn push(&mut self, sample: [f64; 3]) -> Option<WindowAmplitudes> {
        let v = self.highpass.process(vector_magnitude(sample));
        self.buffer.push_back(v);
        if self.buffer.len() < self.fft.size() {
            return None;
        }
        for (dst, src) in self.frame.iter_mut().zip(&self.buffer) {
            *dst = *src;
        }
        self.buffer.drain(..self.hop);
        let spec = self.fft.transform(&self.frame, false);
        Some(WindowAmplitudes {
            f0: spec[self.bin0].norm(),
            f1: spec[self.bin1].norm(),
        })
    }
}

/// Tone magnitudes of every complete window of `trace`.
pub fn stft_stream(trace: &SampleTrace, config: &DemodConfig) -> Result<Vec<WindowAmplitudes>> {
    if trace.sample_rate() != config.sample_rate {
        return Err(Error::config(format!(
            "trace sampled at {} Hz but receiver configured for {} Hz",
            trace.sample_rate(),
            config.sample_rate
        )));
    }
    let mut stream = StftStream::new(config)?;
    Ok(trace.samples().iter().filter_map(|&s| stream.push(s)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Zero,
    One,
    Erased,
}

impl Decision {
    pub fn from_bit(bit: bool) -> Self {
        if bit {
            Decision::One
        } else {
            Decision::Zero
        }
    }

    fn bit(self) -> Option<bool> {
        match self {
            Decision::Zero => Some(false),
            Decision::One => Some(true),
            Decision::Erased => None,
        }
    }
}

/// Per-window symbol decision: one only when the `f1` tone is strictly stronger.
pub fn decide(amplitudes: WindowAmplitudes) -> Decision {
    Decision::from_bit(amplitudes.f1 > amplitudes.f0)
}

/// Decides every window and erases those that are weak relative to the
/// strongest window within `samples_per_bit` positions on either side.
pub fn gate_decisions(windows: &[WindowAmplitudes], samples_per_bit: usize, gate: f64) -> Vec<Decision> {
    let n = windows.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(samples_per_bit);
            let hi = (i + samples_per_bit + 1).min(n);
            let reference = windows[lo..hi]
                .iter()
                .map(WindowAmplitudes::strength)
                .fold(0.0, f64::max);
            if windows[i].strength() < gate * reference {
                Decision::Erased
            } else {
                decide(windows[i])
            }
        })
        .collect()
}

/// Fraction of non-erased decisions at `offset` that match the preamble
/// expanded to `samples_per_bit` windows per bit. `None` when some preamble
/// bit has no voting window or the span does not fit.
pub fn agreement(decisions: &[Decision], offset: usize, samples_per_bit: usize, preamble: &BitStream) -> Option<f64> {
    if samples_per_bit == 0 || preamble.is_empty() {
        return None;
    }
    let span = preamble.len() * samples_per_bit;
    let window = decisions.get(offset..offset + span)?;
    let (mut active, mut matches) = (0usize, 0usize);
    for (group, expected) in window.chunks(samples_per_bit).zip(preamble.iter()) {
        let before = active;
        for bit in group.iter().filter_map(|d| d.bit()) {
            active += 1;
            matches += usize::from(bit == expected);
        }
        if active == before {
            return None;
        }
    }
    Some(matches as f64 / active as f64)
}

/// Window offset where the preamble starts, or `None` if it never appears.
pub fn detect_enable(decisions: &[Decision], samples_per_bit: usize, preamble: &BitStream) -> Option<usize> {
    detect_enable_from(decisions, samples_per_bit, preamble, 0.8, 0)
}

/// Scans from `start` for the first offset whose agreement reaches
/// `threshold`, then settles on the middle of the best-agreeing run within
/// the following bit period.
pub fn detect_enable_from(
    decisions: &[Decision],
    samples_per_bit: usize,
    preamble: &BitStream,
    threshold: f64,
    start: usize,
) -> Option<usize> {
    let span = preamble.len() * samples_per_bit;
    if decisions.len() < span || span == 0 {
        return None;
    }
    let last = decisions.len() - span;
    let score = |o: usize| agreement(decisions, o, samples_per_bit, preamble).unwrap_or(-1.0);
    let first = (start..=last).find(|&o| score(o) >= threshold)?;
    let end = (first + samples_per_bit).min(last + 1);
    let scores: Vec<f64> = (first..end).map(score).collect();
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let run_start = scores.iter().position(|&s| s == best)?;
    let run_len = scores[run_start..].iter().take_while(|&&s| s == best).count();
    Some(first + run_start + (run_len - 1) / 2)
}

/// Ratio between the weakest per-bit peak of the expected preamble tone and
/// the median cross-tone floor over the preamble span. Noise alone gives
/// values near 3.
pub fn carrier_contrast(
    windows: &[WindowAmplitudes],
    offset: usize,
    samples_per_bit: usize,
    preamble: &BitStream,
) -> f64 {
    let span = preamble.len() * samples_per_bit;
    let Some(region) = windows.get(offset..offset + span) else {
        return 0.0;
    };
    let peak = preamble
        .iter()
        .enumerate()
        .map(|(j, bit)| {
            region[j * samples_per_bit..(j + 1) * samples_per_bit]
                .iter()
                .map(|w| w.tone(bit))
                .fold(0.0, f64::max)
        })
        .fold(f64::INFINITY, f64::min);
    let mut floor: Vec<f64> = region.iter().map(|w| w.f0.min(w.f1)).collect();
    floor.sort_by(f64::total_cmp);
    let median = floor[floor.len() / 2];
    if median > 0.0 {
        peak / median
    } else if peak > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

fn vote(group: &[Decision]) -> bool {
    let ones = group.iter().filter(|d| **d == Decision::One).count();
    let zeros = group.iter().filter(|d| **d == Decision::Zero).count();
    ones > zeros
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CarrierStatus {
    /// Preamble found; bit grouping starts at this window index.
    Locked {
        window_offset: usize,
    },
    NoCarrier,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demodulation {
    /// Bits from the start of the preamble to the end of the trace.
    pub bits: BitStream,
    pub status: CarrierStatus,
    pub windows: usize,
}

/// One frame located by [`Demodulator::finish_frames`].
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedFrame {
    pub window_offset: usize,
    /// Up to the requested frame length; shorter when the trace ends early.
    pub bits: BitStream,
}

impl DecodedFrame {
    pub fn is_complete(&self, frame_len: usize) -> bool {
        self.bits.len() == frame_len
    }
}

/// Streaming receiver: push samples as they arrive, then finish.
pub struct Demodulator {
    config: DemodConfig,
    preamble: BitStream,
    stft: StftStream,
    windows: Vec<WindowAmplitudes>,
}

impl Demodulator {
    pub fn new(config: &DemodConfig, preamble: &BitStream) -> Result<Self> {
        if preamble.is_empty() {
            return Err(Error::config("preamble must not be empty"));
        }
        Ok(Demodulator {
            config: config.clone(),
            preamble: preamble.clone(),
            stft: StftStream::new(config)?,
            windows: Vec::new(),
        })
    }

    pub fn push(&mut self, sample: [f64; 3]) {
        if let Some(w) = self.stft.push(sample) {
            self.windows.push(w);
        }
    }

    pub fn push_all(&mut self, samples: &[[f64; 3]]) {
        for &s in samples {
            self.push(s);
        }
    }

    pub fn windows(&self) -> &[WindowAmplitudes] {
        &self.windows
    }

    fn decisions(&self) -> Vec<Decision> {
        gate_decisions(&self.windows, self.config.samples_per_bit(), self.config.erasure_gate)
    }

    fn lock(&self, decisions: &[Decision], start: usize) -> Option<usize> {
        let spb = self.config.samples_per_bit();
        let mut from = start;
        loop {
            let offset = detect_enable_from(decisions, spb, &self.preamble, self.config.enable_threshold, from)?;
            if carrier_contrast(&self.windows, offset, spb, &self.preamble) >= self.config.min_contrast {
                return Some(offset);
            }
            from = from.max(offset.saturating_sub(spb)) + 1;
        }
    }

    fn read_bits(&self, decisions: &[Decision], offset: usize, max_bits: usize) -> BitStream {
        decisions[offset.min(decisions.len())..]
            .chunks_exact(self.config.samples_per_bit())
            .take(max_bits)
            .map(vote)
            .collect()
    }

    /// Locks onto the first preamble and decodes every following bit period.
    pub fn finish(&self) -> Demodulation {
        let decisions = self.decisions();
        match self.lock(&decisions, 0) {
            Some(offset) => Demodulation {
                bits: self.read_bits(&decisions, offset, usize::MAX),
                status: CarrierStatus::Locked { window_offset: offset },
                windows: self.windows.len(),
            },
            None => Demodulation {
                bits: BitStream::default(),
                status: CarrierStatus::NoCarrier,
                windows: self.windows.len(),
            },
        }
    }

    /// Decodes back-to-back frames of `frame_len` bits, re-locking on each
    /// frame's preamble.
    pub fn finish_frames(&self, frame_len: usize) -> Vec<DecodedFrame> {
        let spb = self.config.samples_per_bit();
        let decisions = self.decisions();
        let mut frames = Vec::new();
        let mut start = 0;
        while let Some(offset) = self.lock(&decisions, start) {
            let bits = self.read_bits(&decisions, offset, frame_len);
            let complete = bits.len() == frame_len;
            frames.push(DecodedFrame {
                window_offset: offset,
                bits,
            });
            if !complete || frame_len == 0 {
                break;
            }
            start = (offset + frame_len * spb).saturating_sub(spb / 2);
        }
        frames
    }
}

/// Demodulates a whole trace.
pub fn demodulate(trace: &SampleTrace, config: &DemodConfig, preamble: &BitStream) -> Result<Demodulation> {
    if trace.sample_rate() != config.sample_rate {
        return Err(Error::config(format!(
            "trace sampled at {} Hz but receiver configured for {} Hz",
            trace.sample_rate(),
            config.sample_rate
        )));
    }
    let mut demod = Demodulator::new(config, preamble)?;
    demod.push_all(trace.samples());
    Ok(demod.finish())
}
