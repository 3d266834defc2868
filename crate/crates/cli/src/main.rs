mod settings;

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};

use viber::channel::{apply_jammer, dominant_carrier, find_location, measure_snr, transmit, JammerParams};
use viber::dsp::{stft_matrix, welch_psd};
use viber::formats::{format_sig9, read_schedule, read_trace, write_schedule, write_trace};
use viber::framing::CheckMode;
use viber::harness::{
    build_transmission, decode_text, encode_text, pad_with_idle, parse_report_params, receive, run_ber, BerConfig,
    Modulation, SweepPoint, TextEncoding,
};
use viber::physics::{centrifugal_force, KG_PER_OUNCE, METERS_PER_INCH};
use viber::{BitStream, SampleTrace};

use settings::Settings;

/// A frame check failed.
const EXIT_CHECK_FAILED: u8 = 3;
/// The receiver never found a preamble.
const EXIT_NO_CARRIER: u8 = 4;

#[derive(Parser)]
#[command(
    name = "viber",
    version,
    about = "Fan-vibration covert channel modem, channel simulator and BER harness"
)]
struct Cli {
    /// TOML settings file; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Frame and modulate data into an RPM schedule.
    Transmit(TransmitArgs),
    /// Run a schedule through the simulated channel, producing a trace.
    Simulate(SimulateArgs),
    /// Demodulate and deframe a trace.
    Receive(ReceiveArgs),
    /// Measure bit error rates over SNR points or locations.
    Ber(BerArgs),
    /// Write STFT magnitudes and a Welch PSD of a trace as CSV.
    Spectrogram(SpectrogramArgs),
    /// Centrifugal force of a rotating unbalance.
    Force(ForceArgs),
    /// Overlay random speed perturbations on a schedule.
    Jam(JamArgs),
}

#[derive(Args)]
struct FramingFlags {
    /// Frame check: parity or crc8.
    #[arg(long)]
    check: Option<CheckMode>,
    /// Payload bits per frame.
    #[arg(long)]
    payload_len: Option<usize>,
}

impl FramingFlags {
    fn apply(&self, s: &mut Settings) {
        if let Some(c) = self.check {
            s.framing.check_mode = c;
        }
        if let Some(n) = self.payload_len {
            s.framing.payload_len = n;
        }
    }
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Payload {
    /// Text to send.
    #[arg(long)]
    text: Option<String>,
    /// Raw bits to send, e.g. 1011.
    #[arg(long)]
    bits: Option<String>,
    /// File whose contents are sent as text.
    #[arg(long, value_name = "FILE")]
    input: Option<PathBuf>,
}

#[derive(Args)]
struct TransmitArgs {
    #[command(flatten)]
    payload: Payload,
    /// fsk or ask.
    #[arg(long)]
    modulation: Option<Modulation>,
    /// ascii7 or byte8.
    #[arg(long)]
    encoding: Option<TextEncoding>,
    #[command(flatten)]
    framing: FramingFlags,
    /// Schedule file to write; standard output when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Schedule file.
    schedule: PathBuf,
    /// Receiver location label from the location table.
    #[arg(long, conflicts_with = "snr")]
    location: Option<String>,
    /// Target SNR in dB, or inf for a noiseless channel.
    #[arg(long)]
    snr: Option<f64>,
    /// Location table CSV replacing the built-in one.
    #[arg(long, value_name = "FILE")]
    locations: Option<PathBuf>,
    /// Noise seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Idle seconds at the base speed before and after the schedule.
    #[arg(long)]
    idle: Option<f64>,
    /// Trace file to write; standard output when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ReceiveArgs {
    /// Trace file.
    trace: PathBuf,
    /// ascii7 or byte8.
    #[arg(long)]
    encoding: Option<TextEncoding>,
    #[command(flatten)]
    framing: FramingFlags,
    /// Zero bits appended by the transmitter, dropped from the output.
    #[arg(long, default_value_t = 0)]
    pad_bits: usize,
}

#[derive(Args)]
struct BerArgs {
    /// Comma-separated SNR points in dB.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr: Vec<f64>,
    /// Comma-separated location labels.
    #[arg(long, value_delimiter = ',')]
    location: Vec<String>,
    /// Sweep every location in the table.
    #[arg(long)]
    all_locations: bool,
    /// Location table CSV replacing the built-in one.
    #[arg(long, value_name = "FILE")]
    locations: Option<PathBuf>,
    /// Packets per point.
    #[arg(long)]
    trials: Option<usize>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    framing: FramingFlags,
    #[command(flatten)]
    jam: JamFlags,
    /// Re-run the experiment recorded in a report.
    #[arg(
        long,
        value_name = "REPORT",
        conflicts_with_all = ["snr", "location", "all_locations", "trials", "seed", "check", "payload_len"]
    )]
    replay: Option<PathBuf>,
    /// Report file to write; standard output when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct JamFlags {
    /// Largest speed offset, RPM. Enables jamming for BER runs.
    #[arg(long)]
    jam_threshold: Option<f64>,
    /// Seconds each perturbation lasts.
    #[arg(long)]
    jam_duration: Option<f64>,
    /// Seconds between perturbations.
    #[arg(long)]
    jam_interval: Option<f64>,
}

#[derive(Args)]
struct SpectrogramArgs {
    /// Trace file.
    trace: PathBuf,
    /// Samples per FFT window.
    #[arg(long)]
    fft_size: Option<usize>,
    /// Samples shared by consecutive windows.
    #[arg(long)]
    noverlap: Option<usize>,
    /// Matrix CSV to write; standard output when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Also write the Welch PSD here.
    #[arg(long, value_name = "FILE")]
    psd: Option<PathBuf>,
}

#[derive(Args)]
struct ForceArgs {
    /// Unbalance mass in kilograms.
    #[arg(long, required_unless_present = "oz", conflicts_with = "oz")]
    mass: Option<f64>,
    /// Unbalance mass in ounces.
    #[arg(long)]
    oz: Option<f64>,
    /// Radius in metres.
    #[arg(long, required_unless_present = "inches", conflicts_with = "inches")]
    radius: Option<f64>,
    /// Radius in inches.
    #[arg(long = "in", id = "inches")]
    inches: Option<f64>,
    /// Rotation speed.
    #[arg(long)]
    rpm: f64,
}

#[derive(Args)]
struct JamArgs {
    /// Schedule file.
    schedule: PathBuf,
    /// Largest speed offset, RPM.
    #[arg(long)]
    threshold: Option<f64>,
    /// Seconds each perturbation lasts.
    #[arg(long)]
    duration: Option<f64>,
    /// Seconds between perturbations.
    #[arg(long)]
    interval: Option<f64>,
    /// Jammer seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Schedule file to write; standard output when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = Settings::load(cli.config.as_deref()).and_then(|settings| match cli.command {
        Command::Transmit(a) => cmd_transmit(settings, a),
        Command::Simulate(a) => cmd_simulate(settings, a),
        Command::Receive(a) => cmd_receive(settings, a),
        Command::Ber(a) => cmd_ber(settings, a),
        Command::Spectrogram(a) => cmd_spectrogram(settings, a),
        Command::Force(a) => cmd_force(a),
        Command::Jam(a) => cmd_jam(settings, a),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn source(path: &Path) -> Result<impl BufRead> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn load_trace(path: &Path) -> Result<SampleTrace> {
    read_trace(source(path)?).with_context(|| format!("reading {}", path.display()))
}

fn usage_error(message: &str) -> ! {
    Cli::command().error(ErrorKind::InvalidValue, message).exit()
}

fn cmd_transmit(mut s: Settings, a: TransmitArgs) -> Result<ExitCode> {
    a.framing.apply(&mut s);
    let encoding = a.encoding.unwrap_or(s.encoding);
    let data = if let Some(text) = &a.payload.text {
        encode_text(text, encoding)?
    } else if let Some(bits) = &a.payload.bits {
        bits.parse::<BitStream>()?
    } else {
        let path = a.payload.input.as_ref().expect("clap enforces one payload source");
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        encode_text(&text, encoding)?
    };
    if data.is_empty() {
        usage_error("nothing to send: the input is empty");
    }
    let modulation = a.modulation.unwrap_or(s.modulation);
    let (schedule, pad) = build_transmission(&data, &s.framing, modulation, &s.fsk, &s.ask)?;
    let mut out = sink(a.output.as_deref())?;
    write_schedule(&schedule, pad, &mut out)?;
    out.flush()?;
    eprintln!(
        "{} data bits, {pad} pad bits, {} segments, {:.1} s",
        data.len(),
        schedule.segments().len(),
        schedule.total_duration()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_simulate(mut s: Settings, a: SimulateArgs) -> Result<ExitCode> {
    if let Some(label) = &a.location {
        let table = s.location_table(a.locations.as_deref())?;
        s.channel.snr_db = find_location(&table, label)?.snr_db;
    }
    if let Some(snr) = a.snr {
        s.channel.snr_db = snr;
    }
    if let Some(seed) = a.seed {
        s.channel.noise_seed = seed;
    }
    let (schedule, _) =
        read_schedule(source(&a.schedule)?).with_context(|| format!("reading {}", a.schedule.display()))?;
    let idle = a.idle.unwrap_or_else(|| s.idle_s());
    let schedule = pad_with_idle(&schedule, s.fsk.rpm_base, idle)?;
    let trace = transmit(&schedule, &s.fan, &s.channel)?;
    let mut out = sink(a.output.as_deref())?;
    write_trace(&trace, &mut out)?;
    out.flush()?;

    let fft = s.channel.snr_fft_size;
    match dominant_carrier(&trace, fft).and_then(|hz| Ok((hz, measure_snr(&trace, hz, fft)?))) {
        Ok((hz, snr)) => eprintln!("measured SNR at {hz:.2} Hz: {snr:.2} dB"),
        Err(e) => eprintln!("measured SNR: unavailable ({e})"),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_receive(mut s: Settings, a: ReceiveArgs) -> Result<ExitCode> {
    a.framing.apply(&mut s);
    let encoding = a.encoding.unwrap_or(s.encoding);
    let trace = load_trace(&a.trace)?;
    let frames = receive(&trace, &s.demod(), &s.framing)?;
    if frames.is_empty() {
        eprintln!("no carrier");
        return Ok(ExitCode::from(EXIT_NO_CARRIER));
    }
    let mut out = io::stdout().lock();
    let mut payload = BitStream::default();
    for (i, f) in frames.iter().enumerate() {
        let status = match (f.complete, f.check_ok) {
            (false, _) => "partial",
            (true, true) => "ok",
            (true, false) => "FAILED",
        };
        writeln!(
            out,
            "frame {i}: window {} check {status} payload {}",
            f.window_offset, f.payload
        )?;
        payload.extend_from(&f.payload);
    }
    let keep = payload.len().saturating_sub(a.pad_bits);
    let payload = payload.slice(0, keep);
    writeln!(out, "bits: {payload}")?;
    writeln!(out, "text: {}", decode_text(&payload, encoding))?;
    out.flush()?;
    if frames.iter().all(|f| f.check_ok) {
        Ok(ExitCode::SUCCESS)
    } else {
        let bad = frames.iter().filter(|f| !f.check_ok).count();
        eprintln!("{bad} of {} frames failed the check", frames.len());
        Ok(ExitCode::from(EXIT_CHECK_FAILED))
    }
}

fn cmd_ber(mut s: Settings, a: BerArgs) -> Result<ExitCode> {
    let config = if let Some(path) = &a.replay {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        parse_report_params(&text)?
    } else {
        a.framing.apply(&mut s);
        let mut points: Vec<SweepPoint> = a.snr.iter().map(|&v| SweepPoint::snr(v)).collect();
        if a.all_locations || !a.location.is_empty() {
            let table = s.location_table(a.locations.as_deref())?;
            if a.all_locations {
                points.extend(table.iter().map(|l| SweepPoint {
                    label: l.label.clone(),
                    snr_db: l.snr_db,
                }));
            }
            for label in &a.location {
                let l = find_location(&table, label)?;
                points.push(SweepPoint {
                    label: l.label.clone(),
                    snr_db: l.snr_db,
                });
            }
        }
        if points.is_empty() {
            points.push(SweepPoint::snr(s.channel.snr_db));
        }
        let mut jammer = s.jammer.clone();
        if a.jam.jam_threshold.is_some() || a.jam.jam_duration.is_some() || a.jam.jam_interval.is_some() {
            let mut j = jammer.unwrap_or_default();
            j.threshold = a.jam.jam_threshold.unwrap_or(j.threshold);
            j.duration = a.jam.jam_duration.unwrap_or(j.duration);
            j.interval = a.jam.jam_interval.unwrap_or(j.interval);
            jammer = Some(j);
        }
        BerConfig {
            demod: s.demod(),
            idle_s: s.idle_s(),
            fan: s.fan,
            fsk: s.fsk,
            channel: s.channel,
            framing: s.framing,
            jammer,
            trials: a.trials.unwrap_or(s.trials),
            seed: a.seed.unwrap_or(s.seed),
            points,
        }
    };
    let report = run_ber(&config)?;
    let mut out = sink(a.output.as_deref())?;
    out.write_all(report.to_text().as_bytes())?;
    out.flush()?;
    for row in &report.rows {
        eprintln!(
            "{}: BER {:.4} ({} / {} bits), {} / {} frames detected",
            row.point.label,
            row.ber(),
            row.bit_errors,
            row.bits_sent,
            row.frames_detected,
            row.trials
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_spectrogram(s: Settings, a: SpectrogramArgs) -> Result<ExitCode> {
    let demod = s.demod();
    let fft_size = a.fft_size.unwrap_or(demod.fft_size);
    let noverlap = a.noverlap.unwrap_or(demod.noverlap);
    let trace = load_trace(&a.trace)?;
    let fs = f64::from(trace.sample_rate());
    let x = trace.magnitudes();
    let (times, spectra) = stft_matrix(&x, fs, fft_size, noverlap)?;

    let mut out = sink(a.output.as_deref())?;
    let bin_hz = fs / fft_size as f64;
    let bins = fft_size / 2 + 1;
    let header: Vec<String> = (0..bins).map(|k| format_sig9(k as f64 * bin_hz)).collect();
    writeln!(out, "time_s,{}", header.join(","))?;
    for (t, spectrum) in times.iter().zip(&spectra) {
        let row: Vec<String> = spectrum.magnitudes.iter().map(|&m| format_sig9(m)).collect();
        writeln!(out, "{},{}", format_sig9(*t), row.join(","))?;
    }
    out.flush()?;

    if let Some(path) = &a.psd {
        let (psd, _) = welch_psd(&x, fs, fft_size)?;
        let mut out = sink(Some(path))?;
        writeln!(out, "hz,psd")?;
        for (k, p) in psd.magnitudes.iter().enumerate() {
            writeln!(out, "{},{}", format_sig9(psd.frequency(k)), format_sig9(*p))?;
        }
        out.flush()?;
        if let Some(k) = psd.peak_bin(Some((bin_hz, fs / 2.0))) {
            eprintln!("PSD peak at {:.2} Hz", psd.frequency(k));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_force(a: ForceArgs) -> Result<ExitCode> {
    let mass = match (a.mass, a.oz) {
        (Some(kg), _) => kg,
        (None, Some(oz)) => oz * KG_PER_OUNCE,
        (None, None) => bail!("give --mass or --oz"),
    };
    let radius = match (a.radius, a.inches) {
        (Some(m), _) => m,
        (None, Some(inches)) => inches * METERS_PER_INCH,
        (None, None) => bail!("give --radius or --in"),
    };
    let force = centrifugal_force(mass, radius, a.rpm)?;
    println!("{force} N");
    Ok(ExitCode::SUCCESS)
}

fn cmd_jam(s: Settings, a: JamArgs) -> Result<ExitCode> {
    let base = s.jammer.unwrap_or_default();
    let params = JammerParams {
        threshold: a.threshold.unwrap_or(base.threshold),
        duration: a.duration.unwrap_or(base.duration),
        interval: a.interval.unwrap_or(base.interval),
        seed: a.seed.unwrap_or(base.seed),
    };
    let (schedule, pad) =
        read_schedule(source(&a.schedule)?).with_context(|| format!("reading {}", a.schedule.display()))?;
    let jammed = apply_jammer(&schedule, &params)?;
    let mut out = sink(a.output.as_deref())?;
    write_schedule(&jammed, pad, &mut out)?;
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}
