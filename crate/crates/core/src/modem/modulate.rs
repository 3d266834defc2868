use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{BitStream, RpmSchedule, DEFAULT_RPM_MAX};

/// Return-to-zero FSK timing and speeds.
///
/// Each bit holds `rpm1` (one) or `rpm0` (zero) for `state_duration`, then
/// drops to `rpm_base` for the rest of `bit_duration`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FskParams {
    pub rpm0: f64,
    pub rpm1: f64,
    pub rpm_base: f64,
    pub state_duration: f64,
    pub bit_duration: f64,
    pub rpm_max: u32,
}

impl Default for FskParams {
    fn default() -> Self {
        FskParams {
            rpm0: 2600.0,
            rpm1: 3260.0,
            rpm_base: 3030.0,
            state_duration: 0.5,
            bit_duration: 2.0,
            rpm_max: DEFAULT_RPM_MAX,
        }
    }
}

impl FskParams {
    pub fn validate(&self) -> Result<()> {
        if self.rpm0 == self.rpm1 {
            return Err(Error::config("rpm0 and rpm1 must differ"));
        }
        if self.rpm_base == self.rpm0 || self.rpm_base == self.rpm1 {
            return Err(Error::config("rpm_base must differ from rpm0 and rpm1"));
        }
        if !(self.state_duration > 0.0 && self.state_duration < self.bit_duration) {
            return Err(Error::config("need 0 < state_duration < bit_duration"));
        }
        Ok(())
    }

    /// Time spent at the base speed in each bit.
    pub fn base_duration(&self) -> f64 {
        self.bit_duration - self.state_duration
    }

    /// Payload bits per second.
    pub fn bit_rate(&self) -> f64 {
        1.0 / self.bit_duration
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AskParams {
    pub rpm0: f64,
    pub rpm1: f64,
    pub bit_duration: f64,
    pub rpm_max: u32,
}

impl Default for AskParams {
    fn default() -> Self {
        AskParams {
            rpm0: 2000.0,
            rpm1: 2600.0,
            bit_duration: 2.0,
            rpm_max: DEFAULT_RPM_MAX,
        }
    }
}

impl AskParams {
    pub fn validate(&self) -> Result<()> {
        if self.rpm0 == self.rpm1 {
            return Err(Error::config("rpm0 and rpm1 must differ"));
        }
        if !(self.bit_duration > 0.0) {
            return Err(Error::config("bit_duration must be positive"));
        }
        Ok(())
    }
}

pub fn modulate_fsk(bits: &BitStream, params: &FskParams) -> Result<RpmSchedule> {
    params.validate()?;
    if bits.is_empty() {
        return Err(Error::domain("cannot modulate an empty bit stream"));
    }
    let mut schedule = RpmSchedule::new(params.rpm_max);
    for bit in bits.iter() {
        let rpm = if bit { params.rpm1 } else { params.rpm0 };
        schedule.push(params.state_duration, rpm)?;
        schedule.push(params.base_duration(), params.rpm_base)?;
    }
    Ok(schedule)
}

/// One segment per bit; equal neighbours are not merged.
pub fn modulate_ask(bits: &BitStream, params: &AskParams) -> Result<RpmSchedule> {
    params.validate()?;
    if bits.is_empty() {
        return Err(Error::domain("cannot modulate an empty bit stream"));
    }
    let mut schedule = RpmSchedule::new(params.rpm_max);
    for bit in bits.iter() {
        let rpm = if bit { params.rpm1 } else { params.rpm0 };
        schedule.push(params.bit_duration, rpm)?;
    }
    Ok(schedule)
}
