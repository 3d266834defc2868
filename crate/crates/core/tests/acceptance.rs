//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.
//!
//! Run with `cargo test -p viber --test acceptance`.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use viber::channel::{
    default_locations, dominant_carrier, find_location, measure_snr, transmit, ChannelParams, JammerParams,
};
use viber::dsp::welch_psd;
use viber::framing::{deframe, frame, CheckMode, FramingConfig};
use viber::harness::{demod_for_fsk, pad_with_idle, run_ber, BerConfig, SweepPoint};
use viber::modem::{demodulate, modulate_fsk, stft_stream, CarrierStatus, DemodConfig, FskParams};
use viber::physics::{centrifugal_force, FanModel};
use viber::{BitStream, RpmSchedule, SampleTrace};

// Pinned tolerances.
const CARRIER_BIN_TOLERANCE: usize = 1;
const CARRIER_RUNTIME: Duration = Duration::from_secs(1);
const CLEAN_RUNTIME: Duration = Duration::from_secs(60);
const FRAMING_RUNTIME: Duration = Duration::from_secs(10);
const JAM_BER_FLOOR: f64 = 0.30;
const JAM_SEEDS_REQUIRED: usize = 8;
const JAM_THRESHOLD_RPM: f64 = 500.0;
const JAM_MIN_PAYLOAD_BITS: usize = 200;
const FORCE_REL_TOL: f64 = 1e-9;
// a few ulps: k^2 is exact in real arithmetic, the evaluation rounds each product
const FORCE_RATIO_REL_TOL: f64 = 4.0 * f64::EPSILON;
const SNR_TARGET_DB: f64 = 20.0;
const SNR_TOLERANCE_DB: f64 = 1.5;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn constant(rpm: f64, seconds: f64) -> RpmSchedule {
    let mut s = RpmSchedule::new(viber::signal::DEFAULT_RPM_MAX);
    s.push(seconds, rpm).unwrap();
    s
}

fn random_bits(rng: &mut ChaCha8Rng, n: usize) -> BitStream {
    (0..n).map(|_| rng.random::<bool>()).collect()
}

fn carrier_law() -> Outcome {
    let started = Instant::now();
    let fan = FanModel::default();
    let params = ChannelParams {
        snr_db: f64::INFINITY,
        quantization_step: 0.0,
        ..ChannelParams::default()
    };
    let trace = transmit(&constant(3000.0, 10.0), &fan, &params).map_err(|e| e.to_string())?;
    let fs = f64::from(trace.sample_rate());
    let (psd, _) = welch_psd(&trace.magnitudes(), fs, 256).map_err(|e| e.to_string())?;
    // search the whole spectrum above DC, not just the analysis band
    let peak = psd.peak_bin(Some((psd.bin_hz, fs / 2.0))).ok_or("empty spectrum")?;
    let expected = (50.0 / psd.bin_hz).round() as usize;
    let elapsed = started.elapsed();
    check(
        peak.abs_diff(expected) <= CARRIER_BIN_TOLERANCE && elapsed < CARRIER_RUNTIME,
        format!(
            "peak {:.3} Hz (bin {peak}, expected {expected}), {elapsed:.2?}",
            psd.frequency(peak)
        ),
    )
}

fn bit_rate() -> Outcome {
    let fsk = FskParams::default();
    let setup = (fsk.rpm_base, fsk.rpm1, fsk.rpm0, fsk.state_duration, fsk.bit_duration);
    let rate = fsk.bit_rate();
    // durations are dyadic, so the schedule length is exact
    let bits = BitStream::from_u8s(&[1, 0, 1, 1, 0, 0, 1, 0]);
    let schedule = modulate_fsk(&bits, &fsk).map_err(|e| e.to_string())?;
    let measured = bits.len() as f64 / schedule.total_duration();
    check(
        setup == (3030.0, 3260.0, 2600.0, 0.5, 2.0) && rate == 0.5 && measured == 0.5,
        format!("{rate} bit/s nominal, {measured} bit/s from an 8-bit schedule"),
    )
}

fn clean_channel() -> Outcome {
    let started = Instant::now();
    let location = find_location(&default_locations(), "0")
        .map_err(|e| e.to_string())?
        .clone();
    let config = BerConfig {
        trials: 100,
        seed: 1,
        points: vec![SweepPoint {
            label: location.label.clone(),
            snr_db: location.snr_db,
        }],
        ..BerConfig::default()
    };
    let report = run_ber(&config).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let frame_len = config.framing.frame_len();
    check(
        frame_len == 37
            && report.bits_sent() == 3200
            && report.bit_errors() == 0
            && report.frames_check_ok() == 100
            && elapsed < CLEAN_RUNTIME,
        format!(
            "{} errors in {} payload bits, {}/100 checks ok, {frame_len}-bit frames at {} dB, {elapsed:.2?}",
            report.bit_errors(),
            report.bits_sent(),
            report.frames_check_ok(),
            location.snr_db
        ),
    )
}

fn snr_monotonicity() -> Outcome {
    let snrs = [5.0, 10.0, 20.0, 30.0, 45.0];
    let mut sums = [0.0; 5];
    for seed in 1..=10u64 {
        let config = BerConfig {
            trials: 10,
            seed,
            points: snrs.iter().map(|&s| SweepPoint::snr(s)).collect(),
            ..BerConfig::default()
        };
        let report = run_ber(&config).map_err(|e| e.to_string())?;
        for (sum, row) in sums.iter_mut().zip(&report.rows) {
            *sum += row.ber();
        }
    }
    let means: Vec<f64> = sums.iter().map(|s| s / 10.0).collect();
    let monotone = means.windows(2).all(|w| w[1] <= w[0]);
    check(
        monotone && means[0] > means[4],
        format!("mean BER at {snrs:?} dB = {:.4?}", means),
    )
}

fn jammer_ber(threshold: f64, seed: u64) -> Result<f64, String> {
    let config = BerConfig {
        trials: 7,
        seed,
        points: vec![SweepPoint::snr(45.02)],
        jammer: Some(JammerParams {
            threshold,
            duration: 1.0,
            interval: 1.0,
            seed: 0,
        }),
        ..BerConfig::default()
    };
    let report = run_ber(&config).map_err(|e| e.to_string())?;
    if report.bits_sent() < JAM_MIN_PAYLOAD_BITS {
        return Err(format!("only {} payload bits", report.bits_sent()));
    }
    Ok(report.ber())
}

fn jammer() -> Outcome {
    let bers: Vec<f64> = (1..=10)
        .map(|s| jammer_ber(JAM_THRESHOLD_RPM, s))
        .collect::<Result<_, _>>()?;
    let above = bers.iter().filter(|&&b| b > JAM_BER_FLOOR).count();
    // the lowest permitted threshold sits on the boundary; reported, not gated
    let at_floor: Vec<f64> = (1..=10).map(|s| jammer_ber(300.0, s)).collect::<Result<_, _>>()?;
    let above_floor = at_floor.iter().filter(|&&b| b > JAM_BER_FLOOR).count();
    check(
        above >= JAM_SEEDS_REQUIRED,
        format!(
            "threshold {JAM_THRESHOLD_RPM} rpm: {above}/10 seeds above {JAM_BER_FLOOR} (min BER {:.3}); \
             at 300 rpm {above_floor}/10",
            bers.iter().copied().fold(f64::INFINITY, f64::min)
        ),
    )
}

fn flip(bits: &BitStream, positions: &[usize]) -> BitStream {
    let mut v = bits.clone().into_inner();
    for &p in positions {
        v[p] = !v[p];
    }
    BitStream::new(v)
}

fn framing_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let parity = FramingConfig::default();
    let crc = FramingConfig {
        check_mode: CheckMode::Crc8,
        ..FramingConfig::default()
    };
    let offset = parity.preamble_bits.len();
    let (mut parity_cases, mut parity_flagged, mut crc_cases, mut crc_flagged) = (0, 0, 0, 0);
    for _ in 0..100 {
        let payload = random_bits(&mut rng, 32);
        let p_frame = frame(&payload, &parity).map_err(|e| e.to_string())?;
        let c_frame = frame(&payload, &crc).map_err(|e| e.to_string())?;
        for i in 0..32 {
            parity_cases += 1;
            let (_, ok) = deframe(&flip(&p_frame, &[offset + i]), &parity).map_err(|e| e.to_string())?;
            parity_flagged += usize::from(!ok);
            for j in i..32 {
                let positions: &[usize] = if i == j {
                    &[offset + i]
                } else {
                    &[offset + i, offset + j]
                };
                crc_cases += 1;
                let (_, ok) = deframe(&flip(&c_frame, positions), &crc).map_err(|e| e.to_string())?;
                crc_flagged += usize::from(!ok);
            }
        }
    }
    let elapsed = started.elapsed();
    check(
        parity_cases == 3200
            && parity_flagged == parity_cases
            && crc_cases == 52_800
            && crc_flagged == crc_cases
            && elapsed < FRAMING_RUNTIME,
        format!("parity {parity_flagged}/{parity_cases}, crc-8 {crc_flagged}/{crc_cases}, {elapsed:.2?}"),
    )
}

fn expected_windows(n: usize, size: usize, noverlap: usize) -> usize {
    let hop = size - noverlap;
    if n < size {
        0
    } else {
        (n - size) / hop + 1
    }
}

fn demod_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let fsk = FskParams::default();
    let preamble = FramingConfig::default().preamble_bits;
    let data = random_bits(&mut rng, 10_000);
    let schedule = modulate_fsk(&BitStream::concat(&[&preamble, &data]), &fsk).map_err(|e| e.to_string())?;
    let schedule = pad_with_idle(&schedule, fsk.rpm_base, fsk.bit_duration).map_err(|e| e.to_string())?;
    let params = ChannelParams {
        snr_db: f64::INFINITY,
        ..ChannelParams::default()
    };
    let trace = transmit(&schedule, &FanModel::default(), &params).map_err(|e| e.to_string())?;
    let demod = demod_for_fsk(&fsk, params.sample_rate);
    let result = demodulate(&trace, &demod, &preamble).map_err(|e| e.to_string())?;
    let locked = matches!(result.status, CarrierStatus::Locked { .. });
    let n = preamble.len();
    let errors = if result.bits.len() >= n + data.len() && result.bits.slice(0, n) == preamble {
        result.bits.slice(n, n + data.len()).hamming(&data)
    } else {
        data.len()
    };

    let config = DemodConfig::default();
    let mut mismatched = 0;
    for _ in 0..50 {
        let len = rng.random_range(0..5_000);
        let trace =
            SampleTrace::new(config.sample_rate, vec![[0.0, 0.0, 9.81]; len], None).map_err(|e| e.to_string())?;
        let got = stft_stream(&trace, &config).map_err(|e| e.to_string())?.len();
        mismatched += usize::from(got != expected_windows(len, config.fft_size, config.noverlap));
    }
    check(
        locked && errors == 0 && mismatched == 0,
        format!(
            "{errors} errors in {} bits, {mismatched}/50 window counts off",
            data.len()
        ),
    )
}

fn physics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let m = rng.random_range(1e-4..1.0);
        let r = rng.random_range(1e-3..0.5);
        let rpm = rng.random_range(1.0..10_000.0);
        let w = 2.0 * PI * (rpm / 60.0);
        let oracle = r * w.powi(2) * m;
        let got = centrifugal_force(m, r, rpm).map_err(|e| e.to_string())?;
        worst = worst.max(((got - oracle) / oracle).abs());
    }
    let mut ratio_dev: f64 = 0.0;
    for k in [2.0, 3.0, 10.0] {
        for _ in 0..100 {
            let m = rng.random_range(1e-4..1.0);
            let r = rng.random_range(1e-3..0.5);
            let rpm = rng.random_range(1.0..1_000.0);
            let ratio = centrifugal_force(m, r, k * rpm).map_err(|e| e.to_string())?
                / centrifugal_force(m, r, rpm).map_err(|e| e.to_string())?;
            ratio_dev = ratio_dev.max((ratio / (k * k) - 1.0).abs());
        }
    }
    check(
        worst <= FORCE_REL_TOL && ratio_dev <= FORCE_RATIO_REL_TOL,
        format!("max relative error {worst:.2e}, max k^2 ratio deviation {ratio_dev:.2e}"),
    )
}

fn determinism() -> Outcome {
    let config = BerConfig {
        trials: 8,
        seed: 9,
        points: vec![SweepPoint::snr(15.0), SweepPoint::snr(45.0)],
        jammer: Some(JammerParams::default()),
        ..BerConfig::default()
    };
    let a = run_ber(&config).map_err(|e| e.to_string())?.to_text();
    let b = run_ber(&config).map_err(|e| e.to_string())?.to_text();
    check(
        a == b,
        format!("two runs, {} bytes each, identical: {}", a.len(), a == b),
    )
}

fn calibration() -> Outcome {
    let fsk = FskParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut measured = Vec::new();
    for seed in 0..10u64 {
        let payload = random_bits(&mut rng, 32);
        let bits = frame(&payload, &FramingConfig::default()).map_err(|e| e.to_string())?;
        let schedule = modulate_fsk(&bits, &fsk).map_err(|e| e.to_string())?;
        let schedule = pad_with_idle(&schedule, fsk.rpm_base, fsk.bit_duration).map_err(|e| e.to_string())?;
        let params = ChannelParams {
            snr_db: SNR_TARGET_DB,
            noise_seed: seed,
            ..ChannelParams::default()
        };
        let trace = transmit(&schedule, &FanModel::default(), &params).map_err(|e| e.to_string())?;
        let carrier = dominant_carrier(&trace, params.snr_fft_size).map_err(|e| e.to_string())?;
        measured.push(measure_snr(&trace, carrier, params.snr_fft_size).map_err(|e| e.to_string())?);
    }
    let ok = measured.iter().all(|m| (m - SNR_TARGET_DB).abs() <= SNR_TOLERANCE_DB);
    check(ok, format!("measured {:.2?} dB", measured))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("carrier frequency law", carrier_law),
        ("bit rate", bit_rate),
        ("clean channel BER", clean_channel),
        ("SNR monotonicity", snr_monotonicity),
        ("jammer effect", jammer),
        ("framing oracle", framing_oracle),
        ("demodulator oracle", demod_oracle),
        ("physics oracle", physics_oracle),
        ("determinism", determinism),
        ("calibration closure", calibration),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
