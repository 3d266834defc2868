//! Windows, filters and spectral estimators.

use std::f64::consts::TAU;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::Spectrum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Rectangular,
    Hann,
}

impl Window {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            // Periodic Hann.
            Window::Hann => (0..n).map(|i| 0.5 - 0.5 * (TAU * i as f64 / n as f64).cos()).collect(),
        }
    }
}

impl std::str::FromStr for Window {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rectangular" | "rect" | "none" => Ok(Window::Rectangular),
            "hann" => Ok(Window::Hann),
            other => Err(Error::config(format!("unknown window {other:?}"))),
        }
    }
}

/// First-order RC high-pass filter, processed one sample at a time.
#[derive(Debug, Clone)]
pub struct HighPass {
    alpha: Option<f64>,
    prev_x: Option<f64>,
    prev_y: f64,
}

impl HighPass {
    /// A cutoff of zero (or less) makes the filter a pass-through.
    pub fn new(cutoff_hz: f64, sample_rate: f64) -> Self {
        let alpha = (cutoff_hz > 0.0).then(|| {
            let rc = 1.0 / (TAU * cutoff_hz);
            let dt = 1.0 / sample_rate;
            rc / (rc + dt)
        });
        HighPass {
            alpha,
            prev_x: None,
            prev_y: 0.0,
        }
    }

    pub fn process(&mut self, x: f64) -> f64 {
        let Some(alpha) = self.alpha else {
            return x;
        };
        // Seed with the first input so a constant offset produces no step.
        let prev_x = self.prev_x.replace(x).unwrap_or(x);
        self.prev_y = alpha * (self.prev_y + x - prev_x);
        self.prev_y
    }
}

/// Reusable forward FFT of a fixed size with a fixed window.
pub struct WindowedFft {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    buf: Vec<Complex<f64>>,
}

impl WindowedFft {
    pub fn new(size: usize, window: Window) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(size);
        WindowedFft {
            fft,
            window: window.coefficients(size),
            buf: vec![Complex::default(); size],
        }
    }

    pub fn size(&self) -> usize {
        self.window.len()
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Transforms `frame` (length must equal the size), optionally removing
    /// its mean first. The complex result stays in the internal buffer.
    pub fn transform(&mut self, frame: &[f64], detrend: bool) -> &[Complex<f64>] {
        assert_eq!(frame.len(), self.window.len());
        let mean = if detrend {
            frame.iter().sum::<f64>() / frame.len() as f64
        } else {
            0.0
        };
        for ((b, &x), &w) in self.buf.iter_mut().zip(frame).zip(&self.window) {
            *b = Complex::new((x - mean) * w, 0.0);
        }
        self.fft.process(&mut self.buf);
        &self.buf
    }

    /// One-sided magnitude spectrum of `frame`, bins `0..=size/2`.
    pub fn magnitudes(&mut self, frame: &[f64], detrend: bool) -> Vec<f64> {
        let half = self.size() / 2;
        self.transform(frame, detrend)[..=half]
            .iter()
            .map(|c| c.norm())
            .collect()
    }
}

/// Nearest FFT bin of frequency `hz`.
pub fn bin_index(hz: f64, fft_size: usize, sample_rate: f64) -> usize {
    (fft_size as f64 * hz / sample_rate).round() as usize
}

/// Number of full frames of `size` samples, advancing by `hop`, that fit in `n`.
pub fn frame_count(n: usize, size: usize, hop: usize) -> usize {
    if n < size {
        0
    } else {
        (n - size) / hop + 1
    }
}

/// Welch power spectral density (one-sided, (unit)²/Hz) with a Hann window,
/// 50% overlap and per-segment mean removal.
pub fn welch_psd(x: &[f64], sample_rate: f64, fft_size: usize) -> Result<(Spectrum, usize)> {
    if fft_size < 2 {
        return Err(Error::domain("fft size must be at least 2"));
    }
    let hop = (fft_size / 2).max(1);
    let segments = frame_count(x.len(), fft_size, hop);
    if segments == 0 {
        return Err(Error::domain(format!(
            "signal of {} samples is shorter than fft size {fft_size}",
            x.len()
        )));
    }
    let mut fft = WindowedFft::new(fft_size, Window::Hann);
    let norm = sample_rate * fft.window().iter().map(|w| w * w).sum::<f64>();
    let half = fft_size / 2;
    let mut psd = vec![0.0; half + 1];
    for s in 0..segments {
        let spec = fft.transform(&x[s * hop..s * hop + fft_size], true);
        for (k, p) in psd.iter_mut().enumerate() {
            let one_sided = if k == 0 || (k == half && fft_size.is_multiple_of(2)) {
                1.0
            } else {
                2.0
            };
            *p += one_sided * spec[k].norm_sqr() / norm;
        }
    }
    for p in &mut psd {
        *p /= segments as f64;
    }
    Ok((
        Spectrum {
            bin_hz: sample_rate / fft_size as f64,
            magnitudes: psd,
        },
        segments,
    ))
}

/// Short-time magnitude spectra, Hann windowed with mean removal per frame.
/// Returns frame start times (s) and one spectrum per frame.
pub fn stft_matrix(x: &[f64], sample_rate: f64, fft_size: usize, noverlap: usize) -> Result<(Vec<f64>, Vec<Spectrum>)> {
    if noverlap >= fft_size {
        return Err(Error::domain("noverlap must be smaller than fft size"));
    }
    if x.len() < fft_size {
        return Err(Error::domain(format!(
            "signal of {} samples is shorter than fft size {fft_size}",
            x.len()
        )));
    }
    let hop = fft_size - noverlap;
    let mut fft = WindowedFft::new(fft_size, Window::Hann);
    let bin_hz = sample_rate / fft_size as f64;
    let frames = frame_count(x.len(), fft_size, hop);
    let mut times = Vec::with_capacity(frames);
    let mut spectra = Vec::with_capacity(frames);
    for f in 0..frames {
        let start = f * hop;
        times.push(start as f64 / sample_rate);
        spectra.push(Spectrum {
            bin_hz,
            magnitudes: fft.magnitudes(&x[start..start + fft_size], true),
        });
    }
    Ok((times, spectra))
}

/// Coherent gain of the Hann window relative to rectangular.
pub const HANN_COHERENT_GAIN: f64 = 0.5;

/// Equivalent noise bandwidth of the Hann window in bins.
pub const HANN_ENBW_BINS: f64 = 1.5;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hann_window_shape() {
        let w = Window::Hann.coefficients(8);
        assert_eq!(w[0], 0.0);
        assert!((w[4] - 1.0).abs() < 1e-15);
        let mean = w.iter().sum::<f64>() / 8.0;
        assert!((mean - HANN_COHERENT_GAIN).abs() < 1e-12);
        let enbw = 8.0 * w.iter().map(|v| v * v).sum::<f64>() / w.iter().sum::<f64>().powi(2);
        assert!((enbw - HANN_ENBW_BINS).abs() < 1e-12);
    }

    #[test]
    fn highpass_removes_dc() {
        let mut hp = HighPass::new(5.0, 500.0);
        let out: Vec<f64> = (0..2000).map(|_| hp.process(9.81)).collect();
        assert!(out.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn highpass_passes_carrier() {
        let fs = 500.0;
        let fc = 5.0;
        let f = 43.0;
        let mut hp = HighPass::new(fc, fs);
        let out: Vec<f64> = (0..5000)
            .map(|i| hp.process(9.81 + (TAU * f * i as f64 / fs).sin()))
            .collect();
        let peak = out[2500..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        // |a (1 - z^-1) / (1 - a z^-1)| on the unit circle
        let rc = 1.0 / (TAU * fc);
        let a = rc / (rc + 1.0 / fs);
        let w = TAU * f / fs;
        let num = a * (2.0 - 2.0 * w.cos()).sqrt();
        let den = (1.0 - 2.0 * a * w.cos() + a * a).sqrt();
        assert!((peak - num / den).abs() < 1e-3, "{peak} vs {}", num / den);
        assert!(peak > 0.95);
    }

    #[test]
    fn zero_cutoff_is_pass_through() {
        let mut hp = HighPass::new(0.0, 500.0);
        assert_eq!(hp.process(3.5), 3.5);
    }

    #[test]
    fn frame_count_arithmetic() {
        assert_eq!(frame_count(255, 256, 100), 0);
        assert_eq!(frame_count(256, 256, 100), 1);
        assert_eq!(frame_count(355, 256, 100), 1);
        assert_eq!(frame_count(356, 256, 100), 2);
    }

    #[test]
    fn welch_white_noise_level() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let sigma = 0.5;
        let n = Normal::new(0.0, sigma).unwrap();
        let x: Vec<f64> = (0..200_000).map(|_| n.sample(&mut rng)).collect();
        let (psd, _) = welch_psd(&x, 500.0, 256).unwrap();
        let expected = 2.0 * sigma * sigma / 500.0;
        let mid: f64 = psd.magnitudes[10..120].iter().sum::<f64>() / 110.0;
        assert!((mid / expected - 1.0).abs() < 0.02, "{mid} vs {expected}");
    }

    #[test]
    fn welch_tone_total_power() {
        // Integrated PSD of a sinusoid approximates A^2 / 2.
        let fs = 500.0;
        let a = 0.3;
        let x: Vec<f64> = (0..20_000).map(|i| a * (TAU * 43.0 * i as f64 / fs).sin()).collect();
        let (psd, _) = welch_psd(&x, fs, 256).unwrap();
        let total: f64 = psd.magnitudes.iter().sum::<f64>() * psd.bin_hz;
        assert!((total / (a * a / 2.0) - 1.0).abs() < 0.01, "{total}");
    }

    #[test]
    fn stft_needs_enough_samples() {
        assert!(stft_matrix(&[0.0; 100], 500.0, 256, 156).is_err());
        let (t, s) = stft_matrix(&[0.0; 556], 500.0, 256, 156).unwrap();
        assert_eq!(t, vec![0.0, 0.2, 0.4, 0.6]);
        assert!(s.iter().all(|sp| sp.magnitudes.iter().all(|&m| m == 0.0)));
    }
}
