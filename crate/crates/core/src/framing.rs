//! Packet framing: preamble, payload and a parity bit or CRC-8.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::BitStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckMode {
    /// One even-parity bit.
    Parity,
    /// Eight CRC bits, MSB first.
    Crc8,
}

impl CheckMode {
    pub fn check_len(self) -> usize {
        match self {
            CheckMode::Parity => 1,
            CheckMode::Crc8 => 8,
        }
    }
}

impl std::str::FromStr for CheckMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parity" => Ok(CheckMode::Parity),
            "crc8" | "crc" => Ok(CheckMode::Crc8),
            other => Err(Error::config(format!("unknown check mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FramingConfig {
    pub preamble_bits: BitStream,
    pub payload_len: usize,
    pub check_mode: CheckMode,
    /// CRC-8 generator without the implicit x^8 term.
    pub crc_polynomial: u8,
}

impl Default for FramingConfig {
    fn default() -> Self {
        FramingConfig {
            preamble_bits: BitStream::from_u8s(&[1, 0, 1, 0]),
            payload_len: 32,
            check_mode: CheckMode::Parity,
            crc_polynomial: 0x07,
        }
    }
}

impl FramingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.preamble_bits.is_empty() || !self.preamble_bits.is_alternating() {
            return Err(Error::config(format!(
                "preamble {} must be a non-empty alternating pattern",
                self.preamble_bits
            )));
        }
        if self.payload_len == 0 {
            return Err(Error::config("payload_len must be positive"));
        }
        Ok(())
    }

    pub fn frame_len(&self) -> usize {
        self.preamble_bits.len() + self.payload_len + self.check_mode.check_len()
    }

    fn check_bits(&self, payload: &BitStream) -> BitStream {
        match self.check_mode {
            CheckMode::Parity => BitStream::new(vec![even_parity(payload.bits())]),
            CheckMode::Crc8 => {
                let crc = crc8(payload.bits(), self.crc_polynomial);
                (0..8).rev().map(|i| crc >> i & 1 == 1).collect()
            }
        }
    }
}

/// A transmission unit split into its parts.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub preamble: BitStream,
    pub payload: BitStream,
    pub check: BitStream,
    pub check_mode: CheckMode,
}

impl Frame {
    pub fn build(payload: &BitStream, config: &FramingConfig) -> Result<Frame> {
        config.validate()?;
        if payload.len() != config.payload_len {
            return Err(Error::domain(format!(
                "payload has {} bits, expected {}",
                payload.len(),
                config.payload_len
            )));
        }
        Ok(Frame {
            preamble: config.preamble_bits.clone(),
            payload: payload.clone(),
            check: config.check_bits(payload),
            check_mode: config.check_mode,
        })
    }

    pub fn to_bits(&self) -> BitStream {
        BitStream::concat(&[&self.preamble, &self.payload, &self.check])
    }
}

/// XOR of all bits, so that payload plus parity has an even number of ones.
pub fn even_parity(bits: &[bool]) -> bool {
    bits.iter().fold(false, |acc, &b| acc ^ b)
}

/// Bitwise CRC-8, MSB first, zero init, no reflection, no final XOR.
pub fn crc8(bits: &[bool], polynomial: u8) -> u8 {
    bits.iter().fold(0u8, |crc, &bit| {
        let feedback = (crc >> 7 == 1) ^ bit;
        let shifted = crc << 1;
        if feedback {
            shifted ^ polynomial
        } else {
            shifted
        }
    })
}

/// Serializes `payload` as preamble ‖ payload ‖ check.
pub fn frame(payload: &BitStream, config: &FramingConfig) -> Result<BitStream> {
    Ok(Frame::build(payload, config)?.to_bits())
}

/// Splits a received frame, returning its payload and whether the check matched.
pub fn deframe(bits: &BitStream, config: &FramingConfig) -> Result<(BitStream, bool)> {
    config.validate()?;
    if bits.len() != config.frame_len() {
        return Err(Error::domain(format!(
            "frame has {} bits, expected {}",
            bits.len(),
            config.frame_len()
        )));
    }
    let start = config.preamble_bits.len();
    let end = start + config.payload_len;
    let payload = bits.slice(start, end);
    let check = bits.slice(end, bits.len());
    let ok = config.check_bits(&payload) == check;
    Ok((payload, ok))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bytes_to_bits(bytes: &[u8]) -> Vec<bool> {
        bytes
            .iter()
            .flat_map(|b| (0..8).rev().map(move |i| b >> i & 1 == 1))
            .collect()
    }

    #[test]
    fn crc8_atm_check_value() {
        assert_eq!(crc8(&bytes_to_bits(b"123456789"), 0x07), 0xF4);
    }

    #[test]
    fn parity_of_zeros_and_ones() {
        let cfg = FramingConfig::default();
        let zeros = BitStream::new(vec![false; 32]);
        let f = frame(&zeros, &cfg).unwrap();
        assert_eq!(f.len(), 37);
        assert!(!f.bits()[36]);
        let ones = BitStream::new(vec![true; 32]);
        let f = frame(&ones, &cfg).unwrap();
        assert!(!f.bits()[36]);
        assert_eq!(&f.bits()[..4], &[true, false, true, false]);
    }

    #[test]
    fn wrong_lengths_rejected() {
        let cfg = FramingConfig::default();
        assert!(frame(&BitStream::new(vec![true; 31]), &cfg).is_err());
        assert!(deframe(&BitStream::new(vec![true; 36]), &cfg).is_err());
    }

    #[test]
    fn two_flips_pass_parity() {
        let cfg = FramingConfig::default();
        let payload: BitStream = "10110011100011110000101011001101".parse().unwrap();
        let mut bits = frame(&payload, &cfg).unwrap().into_inner();
        bits[5] = !bits[5];
        bits[20] = !bits[20];
        let (_, ok) = deframe(&BitStream::new(bits), &cfg).unwrap();
        assert!(ok);
    }

    #[test]
    fn crc_frame_layout() {
        let cfg = FramingConfig {
            check_mode: CheckMode::Crc8,
            ..FramingConfig::default()
        };
        let payload = BitStream::new(bytes_to_bits(b"1234"));
        let f = frame(&payload, &cfg).unwrap();
        assert_eq!(f.len(), 44);
        let (p, ok) = deframe(&f, &cfg).unwrap();
        assert_eq!(p, payload);
        assert!(ok);
    }

    #[test]
    fn preamble_must_alternate() {
        let cfg = FramingConfig {
            preamble_bits: BitStream::from_u8s(&[1, 1, 0, 0]),
            ..FramingConfig::default()
        };
        assert!(cfg.validate().is_err());
        let eight = FramingConfig {
            preamble_bits: BitStream::from_u8s(&[1, 0, 1, 0, 1, 0, 1, 0]),
            ..FramingConfig::default()
        };
        assert_eq!(eight.frame_len(), 41);
    }
}
