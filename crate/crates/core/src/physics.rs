//! The fan as a vibration source.
//!
//! A fan spinning at `rpm` shakes its mount at `rpm / 60` Hz. The driving
//! force of a rotating unbalance grows with the square of the angular speed,
//! so the synthesized source amplitude follows the same law in frequency.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{RpmSchedule, SampleTrace, DEFAULT_RPM_MAX, GRAVITY};

pub const KG_PER_OUNCE: f64 = 0.028_349_523_125;
pub const METERS_PER_INCH: f64 = 0.0254;

/// Carrier frequency produced by a fan at `rpm`.
pub fn rpm_to_hz(rpm: f64) -> Result<f64> {
    if !(rpm >= 0.0) {
        return Err(Error::domain(format!("rpm must be non-negative, got {rpm}")));
    }
    Ok(rpm / 60.0)
}

/// Centrifugal force in newtons of an unbalance `mass` (kg) at `radius` (m).
pub fn centrifugal_force(mass: f64, radius: f64, rpm: f64) -> Result<f64> {
    if !(mass >= 0.0) {
        return Err(Error::domain(format!("mass must be non-negative, got {mass}")));
    }
    if !(radius > 0.0) {
        return Err(Error::domain(format!("radius must be positive, got {radius}")));
    }
    if !(rpm > 0.0) {
        return Err(Error::domain(format!("rpm must be positive, got {rpm}")));
    }
    let omega = TAU * rpm / 60.0;
    Ok(mass * omega * omega * radius)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    pub order: u32,
    pub relative_amplitude: f64,
}

/// Mechanical and output-scaling parameters of a fan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FanModel {
    pub rpm_max: u32,
    /// First-order time constant of speed changes, seconds.
    pub spinup_tau: f64,
    pub unbalance_mass: f64,
    pub unbalance_radius: f64,
    /// Source acceleration amplitude per squared carrier frequency, (m/s²)/Hz².
    pub amplitude_gain: f64,
    pub harmonics: Vec<Harmonic>,
}

impl Default for FanModel {
    fn default() -> Self {
        FanModel {
            rpm_max: DEFAULT_RPM_MAX,
            spinup_tau: 0.25,
            unbalance_mass: 0.1 * KG_PER_OUNCE,
            unbalance_radius: 2.0 * METERS_PER_INCH,
            amplitude_gain: 2.5e-5,
            harmonics: Vec::new(),
        }
    }
}

impl FanModel {
    pub fn validate(&self) -> Result<()> {
        if self.rpm_max == 0 {
            return Err(Error::domain("rpm_max must be positive"));
        }
        if !(self.spinup_tau >= 0.0) {
            return Err(Error::domain("spinup_tau must be non-negative"));
        }
        if !(self.amplitude_gain >= 0.0) {
            return Err(Error::domain("amplitude_gain must be non-negative"));
        }
        for (i, h) in self.harmonics.iter().enumerate() {
            if h.order < 2 {
                return Err(Error::domain(format!("harmonic order {} < 2", h.order)));
            }
            if !(0.0..=1.0).contains(&h.relative_amplitude) {
                return Err(Error::domain(format!(
                    "harmonic amplitude {} outside [0, 1]",
                    h.relative_amplitude
                )));
            }
            if self.harmonics[..i].iter().any(|o| o.order == h.order) {
                return Err(Error::domain(format!("duplicate harmonic order {}", h.order)));
            }
        }
        Ok(())
    }

    /// Fundamental source amplitude at carrier frequency `hz`.
    pub fn amplitude_at(&self, hz: f64) -> f64 {
        self.amplitude_gain * hz * hz
    }

    pub fn unbalance_force(&self, rpm: f64) -> Result<f64> {
        centrifugal_force(self.unbalance_mass, self.unbalance_radius, rpm)
    }
}

/// Fan speed sampled on a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RpmSeries {
    pub sample_rate: u32,
    pub rpm: Vec<f64>,
}

/// Actual fan speed over time when following `schedule`.
///
/// The fan starts at the first commanded speed and tracks later commands
/// with a first-order lag of `model.spinup_tau`.
pub fn rpm_response(schedule: &RpmSchedule, model: &FanModel, sample_rate: u32) -> Result<RpmSeries> {
    model.validate()?;
    if sample_rate == 0 {
        return Err(Error::domain("sample rate must be positive"));
    }
    let first = schedule
        .segments()
        .first()
        .ok_or_else(|| Error::domain("schedule is empty"))?;
    let fs = f64::from(sample_rate);
    let n = (schedule.total_duration() * fs).round() as usize;
    let decay = if model.spinup_tau > 0.0 {
        (-1.0 / (fs * model.spinup_tau)).exp()
    } else {
        0.0
    };

    let mut rpm = Vec::with_capacity(n);
    let mut current = first.rpm;
    let mut seg = schedule.segments().iter().peekable();
    let mut seg_end = 0.0;
    let mut command = first.rpm;
    for i in 0..n {
        let t = i as f64 / fs;
        while t >= seg_end {
            match seg.next() {
                Some(s) => {
                    seg_end += s.duration;
                    command = s.rpm;
                }
                None => break,
            }
        }
        current = command + (current - command) * decay;
        rpm.push(current);
    }
    Ok(RpmSeries { sample_rate, rpm })
}

/// Source-level vibration for a speed series, before any surface or noise.
pub fn synthesize_vibration(rpm: &RpmSeries, model: &FanModel, phase_seed: u64) -> Result<SampleTrace> {
    synthesize_with_gain(rpm, model, phase_seed, |_| 1.0)
}

/// Like [`synthesize_vibration`], with the amplitude additionally scaled by
/// `gain(f)` at the instantaneous carrier frequency.
pub fn synthesize_with_gain<G: Fn(f64) -> f64>(
    rpm: &RpmSeries,
    model: &FanModel,
    phase_seed: u64,
    gain: G,
) -> Result<SampleTrace> {
    model.validate()?;
    if rpm.rpm.is_empty() {
        return Err(Error::domain("rpm series is empty"));
    }
    let fs = f64::from(rpm.sample_rate);
    let mut phase = ChaCha8Rng::seed_from_u64(phase_seed).random_range(0.0..TAU);
    let samples = rpm
        .rpm
        .iter()
        .map(|&r| {
            let f = r / 60.0;
            let amp = model.amplitude_at(f) * gain(f);
            let mut z = amp * phase.sin();
            for h in &model.harmonics {
                z += amp * h.relative_amplitude * (f64::from(h.order) * phase).sin();
            }
            phase = (phase + TAU * f / fs) % TAU;
            [0.0, 0.0, GRAVITY + z]
        })
        .collect();
    SampleTrace::new(rpm.sample_rate, samples, None)
}
