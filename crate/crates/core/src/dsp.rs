//! Short-time Fourier analysis/synthesis, rational resampling, energy and SNR.
//!
//! The enhancement network consumes raw waveforms; the transforms here are
//! analysis tooling used by the metrics and by diagnostics.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::audio_io::AudioClip;
use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

/// One-sided DFT (`n_fft/2 + 1` bins) of `frame`, zero padded to `n_fft`.
pub fn rfft(frame: &[f64], n_fft: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = frame
        .iter()
        .map(|&x| Complex64::new(x, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(n_fft)
        .collect();
    plan(n_fft, false).process(&mut buf);
    buf.truncate(n_fft / 2 + 1);
    buf
}

/// Inverse of [`rfft`] for an even `n_fft`: rebuilds the Hermitian spectrum and
/// returns the real part scaled by `1/n_fft`.
pub fn irfft(bins: &[Complex64], n_fft: usize) -> Vec<f64> {
    let half = n_fft / 2;
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    buf[..=half].copy_from_slice(&bins[..=half]);
    for k in 1..half {
        buf[n_fft - k] = bins[k].conj();
    }
    plan(n_fft, true).process(&mut buf);
    buf.iter().map(|c| c.re / n_fft as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WindowKind {
    /// Periodic Hann, `0.5 - 0.5 cos(2 pi n / N)`.
    #[default]
    Hann,
    Rectangular,
}

impl WindowKind {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            WindowKind::Hann => (0..len)
                .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
                .collect(),
            WindowKind::Rectangular => vec![1.0; len],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub window: WindowKind,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            frame_len: 512,
            hop: 128,
            window: WindowKind::Hann,
        }
    }
}

impl StftConfig {
    pub fn new(frame_len: usize, hop: usize, window: WindowKind) -> Self {
        Self {
            frame_len,
            hop,
            window,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.frame_len < 2 || !self.frame_len.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "frame_len {} must be a power of two >= 2",
                self.frame_len
            )));
        }
        if self.hop == 0 || self.hop > self.frame_len {
            return Err(Error::InvalidConfig(format!(
                "hop {} must be in 1..={}",
                self.hop, self.frame_len
            )));
        }
        Ok(())
    }

    /// True when shifted copies of the window spaced by `hop` sum to a constant.
    pub fn is_cola(&self) -> bool {
        let w = self.window.coefficients(self.frame_len);
        let sums: Vec<f64> = (0..self.hop)
            .map(|n| w.iter().skip(n).step_by(self.hop).sum())
            .collect();
        let reference = sums[0];
        reference > 0.0
            && sums
                .iter()
                .all(|s| (s - reference).abs() <= 1e-10 * reference.abs())
    }
}

/// One-sided STFT frames `[n_frames][frame_len/2 + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: Vec<Vec<Complex64>>,
    pub config: StftConfig,
    /// Length of the analysed signal, needed to undo the edge padding.
    pub signal_len: usize,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn n_bins(&self) -> usize {
        self.config.frame_len / 2 + 1
    }
}

fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|i| x[i.min(n - 1)]));
    out.extend_from_slice(x);
    out.extend((0..pad).map(|i| x[(n as isize - 2 - i as isize).max(0) as usize]));
    out
}

/// Frame `t` covers padded samples `[t*hop, t*hop + frame_len)`; the signal is
/// reflect padded by `frame_len/2` on both sides first.
pub fn stft(samples: &[f64], cfg: StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    if samples.len() < cfg.frame_len {
        return Err(Error::TooShort {
            needed: cfg.frame_len,
            got: samples.len(),
        });
    }
    let w = cfg.window.coefficients(cfg.frame_len);
    let padded = reflect_pad(samples, cfg.frame_len / 2);
    let n_frames = 1 + (padded.len() - cfg.frame_len) / cfg.hop;
    let mut windowed = vec![0.0; cfg.frame_len];
    let frames = (0..n_frames)
        .map(|t| {
            let start = t * cfg.hop;
            for (i, slot) in windowed.iter_mut().enumerate() {
                *slot = padded[start + i] * w[i];
            }
            rfft(&windowed, cfg.frame_len)
        })
        .collect();
    Ok(Spectrogram {
        frames,
        config: cfg,
        signal_len: samples.len(),
    })
}

/// Weighted overlap-add with the analysis window as synthesis window,
/// normalized by the summed squared window.
pub fn istft(spec: &Spectrogram) -> Result<Vec<f64>> {
    let cfg = spec.config;
    cfg.validate()?;
    if !cfg.is_cola() {
        return Err(Error::NonColaConfig);
    }
    let w = cfg.window.coefficients(cfg.frame_len);
    let pad = cfg.frame_len / 2;
    let total = (spec.n_frames().saturating_sub(1)) * cfg.hop + cfg.frame_len;
    let mut acc = vec![0.0; total];
    let mut norm = vec![0.0; total];
    for (t, bins) in spec.frames.iter().enumerate() {
        let frame = irfft(bins, cfg.frame_len);
        let start = t * cfg.hop;
        for i in 0..cfg.frame_len {
            acc[start + i] += frame[i] * w[i];
            norm[start + i] += w[i] * w[i];
        }
    }
    Ok((pad..pad + spec.signal_len)
        .map(|i| match (acc.get(i), norm.get(i)) {
            (Some(&a), Some(&n)) if n > 1e-12 => a / n,
            _ => 0.0,
        })
        .collect())
}

/// Sum of squares.
pub fn energy(samples: &[f64]) -> f64 {
    samples.iter().map(|x| x * x).sum()
}

/// `10 log10(energy(clean) / energy(residual_noise))`.
pub fn measure_snr(clean: &[f64], residual_noise: &[f64]) -> Result<f64> {
    if clean.len() != residual_noise.len() {
        return Err(Error::LengthMismatch {
            left: clean.len(),
            right: residual_noise.len(),
        });
    }
    let noise = energy(residual_noise);
    if noise == 0.0 {
        return Err(Error::ZeroNoise);
    }
    Ok(10.0 * (energy(clean) / noise).log10())
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

const SINC_ZERO_CROSSINGS: f64 = 16.0;
const KAISER_BETA: f64 = 8.6;

/// Polyphase windowed-sinc rational resampler.
///
/// Output length is `round(len * target / source)`. The low-pass cutoff sits at
/// the lower of the two Nyquist rates, each phase's taps are normalized to unit
/// DC gain, and samples beyond the edges repeat the edge value.
pub fn resample(clip: &AudioClip, target_hz: u32) -> Result<AudioClip> {
    if clip.sample_rate_hz == 0 {
        return Err(Error::InvalidRate(clip.sample_rate_hz));
    }
    if target_hz == 0 {
        return Err(Error::InvalidRate(target_hz));
    }
    if clip.sample_rate_hz == target_hz || clip.is_empty() {
        return Ok(AudioClip::new(clip.samples.clone(), target_hz));
    }
    let g = gcd(clip.sample_rate_hz as u64, target_hz as u64);
    let up = target_hz as u64 / g;
    let down = clip.sample_rate_hz as u64 / g;
    let cutoff = (up as f64 / down as f64).min(1.0);
    let half_taps = (SINC_ZERO_CROSSINGS / cutoff).ceil() as i64;
    let support = half_taps as f64 + 1.0;
    let i0_beta = bessel_i0(KAISER_BETA);

    // phase p holds taps for fractional source offset p/up
    let phases: Vec<Vec<f64>> = (0..up)
        .map(|p| {
            let frac = p as f64 / up as f64;
            let mut taps: Vec<f64> = (-half_taps + 1..=half_taps)
                .map(|k| {
                    let d = k as f64 - frac;
                    let arg = PI * cutoff * d;
                    let sinc = if arg.abs() < 1e-12 { 1.0 } else { arg.sin() / arg };
                    let r = d / support;
                    let win = if r.abs() >= 1.0 {
                        0.0
                    } else {
                        bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta
                    };
                    cutoff * sinc * win
                })
                .collect();
            let s: f64 = taps.iter().sum();
            taps.iter_mut().for_each(|t| *t /= s);
            taps
        })
        .collect();

    let n_in = clip.len() as i64;
    let n_out = (clip.len() as f64 * target_hz as f64 / clip.sample_rate_hz as f64).round() as usize;
    let x = &clip.samples;
    let samples = (0..n_out as u64)
        .map(|n| {
            let pos = n * down;
            let base = (pos / up) as i64;
            let taps = &phases[(pos % up) as usize];
            taps.iter()
                .enumerate()
                .map(|(j, &h)| {
                    let idx = (base - half_taps + 1 + j as i64).clamp(0, n_in - 1);
                    h * x[idx as usize]
                })
                .sum()
        })
        .collect();
    Ok(AudioClip::new(samples, target_hz))
}
