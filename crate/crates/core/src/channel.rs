//! Surface and sensor path from a fan schedule to a received trace.
//!
//! The desk is reduced to a single Lorentzian resonance plus a target
//! in-band SNR. SNR is defined as the Welch PSD at the carrier bin over the
//! median PSD across 10–60 Hz with the carrier's ±2 bins excluded.

use std::io::BufRead;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dsp::{bin_index, welch_psd};
use crate::error::{Error, Result};
use crate::physics::{rpm_response, synthesize_with_gain, FanModel};
use crate::signal::{quantize, RpmSchedule, SampleTrace, Spectrum};

/// Accelerometer resolution of the reference handset, m/s².
pub const PHONE_QUANTIZATION_STEP: f64 = 0.0023956299;

/// Band over which the noise floor is measured.
pub const SNR_BAND_HZ: (f64, f64) = (10.0, 60.0);

/// Carrier neighbourhood excluded from the noise floor, in bins.
pub const SNR_GUARD_BINS: usize = 2;

/// Minimum Welch segments for an SNR estimate.
pub const SNR_MIN_SEGMENTS: usize = 8;

pub const DEFAULT_LOCATIONS_CSV: &str = include_str!("../data/locations.csv");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelParams {
    pub resonance_hz: f64,
    pub resonance_gain: f64,
    pub resonance_bandwidth: f64,
    /// Target SNR in dB; `inf` disables additive noise.
    #[serde(with = "snr_serde")]
    pub snr_db: f64,
    pub noise_seed: u64,
    /// Accelerometer resolution; 0 disables quantization.
    pub quantization_step: f64,
    pub sample_rate: u32,
    /// Transform size of the SNR estimator used for calibration.
    pub snr_fft_size: usize,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            resonance_hz: 43.0,
            resonance_gain: 1.0,
            resonance_bandwidth: 5.0,
            snr_db: 45.02,
            noise_seed: 0,
            quantization_step: PHONE_QUANTIZATION_STEP,
            sample_rate: 500,
            snr_fft_size: 256,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.resonance_bandwidth > 0.0) {
            return Err(Error::config("resonance_bandwidth must be positive"));
        }
        if !(self.resonance_gain >= 0.0) {
            return Err(Error::config("resonance_gain must be non-negative"));
        }
        if self.sample_rate == 0 {
            return Err(Error::config("sample_rate must be positive"));
        }
        if !(self.quantization_step >= 0.0) {
            return Err(Error::config("quantization_step must be non-negative"));
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(Error::config("snr_db must be a number or inf"));
        }
        if self.snr_fft_size < 16 {
            return Err(Error::config("snr_fft_size must be at least 16"));
        }
        Ok(())
    }

    /// Surface gain at carrier frequency `hz`.
    pub fn resonance(&self, hz: f64) -> f64 {
        let x = (hz - self.resonance_hz) / self.resonance_bandwidth;
        1.0 + self.resonance_gain / (1.0 + x * x)
    }

    pub fn with_snr(&self, snr_db: f64) -> Self {
        ChannelParams { snr_db, ..self.clone() }
    }
}

/// Runs `schedule` through fan dynamics, the surface and the sensor.
pub fn transmit(schedule: &RpmSchedule, fan: &FanModel, params: &ChannelParams) -> Result<SampleTrace> {
    params.validate()?;
    let fs = f64::from(params.sample_rate);
    let max_hz = f64::from(schedule.rpm_max().max(fan.rpm_max)) / 60.0;
    if fs < 2.0 * max_hz {
        return Err(Error::config(format!(
            "sample rate {fs} Hz below Nyquist for {max_hz} Hz carriers"
        )));
    }
    let rpm = rpm_response(schedule, fan, params.sample_rate)?;
    let phase_seed = params.noise_seed ^ 0x9E37_79B9_7F4A_7C15;
    let clean = synthesize_with_gain(&rpm, fan, phase_seed, |f| params.resonance(f))?;

    let step = params.quantization_step;
    let sigma = if params.snr_db.is_finite() {
        noise_sigma(&clean, params, step)?
    } else {
        0.0
    };

    let mut rng = ChaCha8Rng::seed_from_u64(params.noise_seed);
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::domain(e.to_string()))?;
    let samples = clean
        .samples()
        .iter()
        .map(|s| {
            s.map(|v| {
                let noisy = if sigma > 0.0 { v + normal.sample(&mut rng) } else { v };
                if step > 0.0 {
                    quantize(noisy, step)
                } else {
                    noisy
                }
            })
        })
        .collect();
    SampleTrace::new(params.sample_rate, samples, (step > 0.0).then_some(step))
}

/// White noise deviation giving `params.snr_db` against the strongest
/// in-band PSD line of `clean`, net of quantization noise.
fn noise_sigma(clean: &SampleTrace, params: &ChannelParams, step: f64) -> Result<f64> {
    let fs = f64::from(params.sample_rate);
    let (psd, _) = welch_psd(&clean.magnitudes(), fs, params.snr_fft_size)?;
    let (lo, hi) = band_bins(&psd);
    let carrier = psd.magnitudes[lo..=hi].iter().copied().fold(0.0, f64::max);
    // one-sided white-noise density is 2 sigma^2 / fs
    let total_var = carrier * fs / (2.0 * 10f64.powf(params.snr_db / 10.0));
    let quant_var = step * step / 12.0;
    Ok((total_var - quant_var).max(0.0).sqrt())
}

fn band_bins(psd: &Spectrum) -> (usize, usize) {
    let lo = (SNR_BAND_HZ.0 / psd.bin_hz).ceil() as usize;
    let hi = ((SNR_BAND_HZ.1 / psd.bin_hz).floor() as usize).min(psd.magnitudes.len() - 1);
    (lo, hi)
}

/// In-band SNR of `trace` at `carrier_hz`, in dB.
pub fn measure_snr(trace: &SampleTrace, carrier_hz: f64, fft_size: usize) -> Result<f64> {
    let fs = f64::from(trace.sample_rate());
    let (psd, segments) = welch_psd(&trace.magnitudes(), fs, fft_size)?;
    if segments < SNR_MIN_SEGMENTS {
        return Err(Error::domain(format!(
            "trace gives {segments} analysis windows; at least {SNR_MIN_SEGMENTS} needed"
        )));
    }
    let (lo, hi) = band_bins(&psd);
    let k = bin_index(carrier_hz, fft_size, fs);
    if !(lo..=hi).contains(&k) {
        return Err(Error::domain(format!(
            "carrier {carrier_hz} Hz outside the {}-{} Hz analysis band",
            SNR_BAND_HZ.0, SNR_BAND_HZ.1
        )));
    }
    let mut floor: Vec<f64> = (lo..=hi)
        .filter(|b| b.abs_diff(k) > SNR_GUARD_BINS)
        .map(|b| psd.magnitudes[b])
        .collect();
    floor.sort_by(f64::total_cmp);
    let m = floor.len();
    let median = if m % 2 == 1 {
        floor[m / 2]
    } else {
        0.5 * (floor[m / 2 - 1] + floor[m / 2])
    };
    Ok(10.0 * (psd.magnitudes[k] / median).log10())
}

/// Frequency of the strongest in-band PSD line of `trace`.
pub fn dominant_carrier(trace: &SampleTrace, fft_size: usize) -> Result<f64> {
    let (psd, _) = welch_psd(&trace.magnitudes(), f64::from(trace.sample_rate()), fft_size)?;
    let k = psd
        .peak_bin(Some(SNR_BAND_HZ))
        .ok_or_else(|| Error::domain("empty analysis band"))?;
    Ok(psd.frequency(k))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JammerParams {
    /// Largest speed perturbation, RPM.
    pub threshold: f64,
    /// Seconds each perturbation is held.
    pub duration: f64,
    /// Seconds between perturbations.
    pub interval: f64,
    pub seed: u64,
}

impl Default for JammerParams {
    fn default() -> Self {
        JammerParams {
            threshold: 300.0,
            duration: 1.0,
            interval: 1.0,
            seed: 0,
        }
    }
}

impl JammerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold >= 0.0) {
            return Err(Error::config("jammer threshold must be non-negative"));
        }
        if !(self.duration > 0.0 && self.interval > 0.0) {
            return Err(Error::config("jammer duration and interval must be positive"));
        }
        Ok(())
    }
}

/// Overlays random speed perturbations on `schedule`.
///
/// Starting at t = 0, every `duration + interval` seconds the commanded speed
/// is offset by a uniform draw from `[-threshold, threshold]` for `duration`
/// seconds and then restored. Results are clipped to `[0, rpm_max]`.
pub fn apply_jammer(schedule: &RpmSchedule, params: &JammerParams) -> Result<RpmSchedule> {
    params.validate()?;
    if params.threshold == 0.0 {
        return Ok(schedule.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let period = params.duration + params.interval;
    let rpm_max = f64::from(schedule.rpm_max());

    let mut out = RpmSchedule::new(schedule.rpm_max());
    let mut period_index = 0u64;
    let mut delta = rng.random_range(-params.threshold..=params.threshold);
    let mut t = 0.0;
    for seg in schedule.segments() {
        let seg_end = t + seg.duration;
        let mut remaining = seg.duration;
        while remaining > 0.0 {
            // advance to the jam period containing t
            while t >= (period_index + 1) as f64 * period {
                period_index += 1;
                delta = rng.random_range(-params.threshold..=params.threshold);
            }
            let jam_start = period_index as f64 * period;
            let jam_end = jam_start + params.duration;
            let (boundary, offset) = if t < jam_end {
                (jam_end, delta)
            } else {
                (jam_start + period, 0.0)
            };
            let piece = if boundary >= seg_end { remaining } else { boundary - t };
            if piece <= 0.0 {
                break;
            }
            out.push(piece, (seg.rpm + offset).clamp(0.0, rpm_max))?;
            remaining -= piece;
            t += piece;
            if boundary >= seg_end {
                break;
            }
        }
        t = seg_end;
    }
    Ok(out)
}

/// Receiver position with its measured in-band SNR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationProfile {
    pub label: String,
    pub snr_db: f64,
}

/// Parses a `label,snr_db` CSV with a header row.
pub fn parse_locations<R: BufRead>(source: R) -> Result<Vec<LocationProfile>> {
    let mut out: Vec<LocationProfile> = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || (i == 0 && line == "label,snr_db") {
            continue;
        }
        let (label, snr) = line
            .split_once(',')
            .ok_or_else(|| Error::format(lineno, "expected label,snr_db"))?;
        let snr_db: f64 = snr
            .trim()
            .parse()
            .map_err(|_| Error::format(lineno, format!("invalid snr {snr:?}")))?;
        let label = label.trim().to_string();
        if out.iter().any(|p| p.label == label) {
            return Err(Error::format(lineno, format!("duplicate label {label:?}")));
        }
        out.push(LocationProfile { label, snr_db });
    }
    Ok(out)
}

pub fn default_locations() -> Vec<LocationProfile> {
    parse_locations(DEFAULT_LOCATIONS_CSV.as_bytes()).expect("bundled profile parses")
}

pub fn find_location<'a>(profiles: &'a [LocationProfile], label: &str) -> Result<&'a LocationProfile> {
    profiles.iter().find(|p| p.label == label).ok_or_else(|| {
        let known: Vec<&str> = profiles.iter().map(|p| p.label.as_str()).collect();
        Error::config(format!(
            "unknown location {label:?}; known locations: {}",
            known.join(", ")
        ))
    })
}

/// `inf` is written as the string "inf" so configs stay valid JSON/TOML.
mod snr_serde {
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Segment;

    fn constant(rpm: f64, seconds: f64) -> RpmSchedule {
        RpmSchedule::from_segments(3260, vec![Segment { duration: seconds, rpm }]).unwrap()
    }

    #[test]
    fn resonance_neutral_when_gain_zero() {
        let p = ChannelParams {
            resonance_gain: 0.0,
            ..ChannelParams::default()
        };
        for f in [0.0, 10.0, 43.0, 54.3, 250.0] {
            assert_eq!(p.resonance(f), 1.0);
        }
        let p = ChannelParams::default();
        assert_eq!(p.resonance(p.resonance_hz), 1.0 + p.resonance_gain);
    }

    #[test]
    fn output_is_quantized() {
        let t = transmit(&constant(2580.0, 4.0), &FanModel::default(), &ChannelParams::default()).unwrap();
        let step = PHONE_QUANTIZATION_STEP;
        for v in t.samples().iter().flatten() {
            let k = v / step;
            assert!((k - k.round()).abs() < 1e-6);
        }
        assert_eq!(t.quantization_step(), Some(step));
    }

    #[test]
    fn transmit_is_deterministic() {
        let p = ChannelParams {
            snr_db: 20.0,
            noise_seed: 11,
            ..ChannelParams::default()
        };
        let a = transmit(&constant(2600.0, 3.0), &FanModel::default(), &p).unwrap();
        let b = transmit(&constant(2600.0, 3.0), &FanModel::default(), &p).unwrap();
        assert_eq!(a, b);
        let c = transmit(
            &constant(2600.0, 3.0),
            &FanModel::default(),
            &ChannelParams { noise_seed: 12, ..p },
        )
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn pure_tone_snr_is_large() {
        let p = ChannelParams {
            snr_db: f64::INFINITY,
            quantization_step: 0.0,
            ..ChannelParams::default()
        };
        let t = transmit(&constant(2580.0, 10.0), &FanModel::default(), &p).unwrap();
        let snr = measure_snr(&t, 43.0, 256).unwrap();
        assert!(snr > 60.0, "{snr}");
    }

    #[test]
    fn snr_band_and_length_checks() {
        let t = transmit(&constant(2580.0, 10.0), &FanModel::default(), &ChannelParams::default()).unwrap();
        assert!(measure_snr(&t, 5.0, 256).is_err());
        assert!(measure_snr(&t, 70.0, 256).is_err());
        let short = t.truncated(256 + 128 * 6).unwrap();
        assert!(measure_snr(&short, 43.0, 256).is_err());
        let enough = t.truncated(256 + 128 * 7).unwrap();
        assert!(measure_snr(&enough, 43.0, 256).is_ok());
    }

    #[test]
    fn dominant_carrier_of_constant_speed() {
        let t = transmit(&constant(3000.0, 10.0), &FanModel::default(), &ChannelParams::default()).unwrap();
        let f = dominant_carrier(&t, 256).unwrap();
        assert!((f - 50.0).abs() <= 500.0 / 256.0, "{f}");
    }

    #[test]
    fn jammer_zero_threshold_is_identity() {
        let s = constant(2600.0, 10.0);
        let j = apply_jammer(
            &s,
            &JammerParams {
                threshold: 0.0,
                ..JammerParams::default()
            },
        )
        .unwrap();
        assert_eq!(j, s);
    }

    #[test]
    fn jammer_layout() {
        let s = constant(3000.0, 5.0);
        let p = JammerParams {
            threshold: 200.0,
            duration: 1.0,
            interval: 1.0,
            seed: 5,
        };
        let j = apply_jammer(&s, &p).unwrap();
        assert_eq!(j.total_duration(), 5.0);
        let durs: Vec<f64> = j.segments().iter().map(|g| g.duration).collect();
        assert_eq!(durs, vec![1.0, 1.0, 1.0, 1.0, 1.0]);
        for (i, g) in j.segments().iter().enumerate() {
            if i % 2 == 1 {
                assert_eq!(g.rpm, 3000.0);
            } else {
                assert!((g.rpm - 3000.0).abs() <= 200.0);
            }
        }
    }

    #[test]
    fn jammer_clips_to_limits() {
        let s = constant(3200.0, 20.0);
        let p = JammerParams {
            threshold: 3000.0,
            duration: 0.5,
            interval: 0.5,
            seed: 1,
        };
        let j = apply_jammer(&s, &p).unwrap();
        assert!(j.segments().iter().all(|g| (0.0..=3260.0).contains(&g.rpm)));
        assert!(j.segments().iter().any(|g| g.rpm == 3260.0));
    }

    #[test]
    fn default_location_table() {
        let locs = default_locations();
        let snrs: Vec<f64> = locs.iter().take(9).map(|l| l.snr_db).collect();
        assert_eq!(snrs, vec![45.02, 21.68, 29.12, 16.81, 22.1, 11.38, 21.43, 0.0, 7.88]);
        assert_eq!(find_location(&locs, "cpu").unwrap().snr_db, 15.15);
        let err = find_location(&locs, "9").unwrap_err().to_string();
        assert!(err.contains("0, 1, 2"), "{err}");
    }

    #[test]
    fn duplicate_labels_rejected() {
        assert!(parse_locations("label,snr_db\n0,1\n0,2\n".as_bytes()).is_err());
    }

    #[test]
    fn snr_serializes_infinity_as_text() {
        let p = ChannelParams {
            snr_db: f64::INFINITY,
            ..ChannelParams::default()
        };
        let json = serde_json::to_string(&p).unwrap();
        assert!(json.contains("\"snr_db\":\"inf\""));
        let back: ChannelParams = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
    }
}
