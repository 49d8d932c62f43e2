//! Seeded synthetic signals: a harmonic "speech-like" tone complex with
//! syllabic amplitude and spectral modulation, and stationary noise.
//!
//! Used by tests, benches and the desk-scale learning check when no recorded
//! corpus is at hand.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio_io::AudioClip;

/// Harmonic complex with per-syllable pitch and formant-like emphasis.
///
/// Syllables last 120-320 ms; about one in ten is a pause. Each voiced
/// syllable has its own fundamental (100-240 Hz) and two resonance peaks, and
/// is shaped by a raised-cosine envelope between half and full level, so
/// connected syllables do not drop to silence. The first syllable is always
/// voiced.
/// Peak amplitude is normalized to 0.5.
pub fn tone_complex_speech(seed: u64, seconds: f64, sample_rate_hz: u32) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = sample_rate_hz as f64;
    let n = (seconds * fs).round() as usize;
    let nyquist_guard = (fs / 2.0).min(5000.0);
    let mut out = vec![0.0; n];
    let mut start = 0usize;
    let mut phase = 0.0f64;
    while start < n {
        let len = ((rng.gen_range(0.12..0.32)) * fs) as usize;
        let end = (start + len).min(n);
        let voiced = rng.gen_bool(0.9) || start == 0;
        let f0_start: f64 = rng.gen_range(100.0..240.0);
        let f0_end = f0_start * rng.gen_range(0.85..1.15);
        let formants = [rng.gen_range(300.0..900.0), rng.gen_range(900.0..2800.0)];
        let level = rng.gen_range(0.4..1.0);
        if voiced {
            let span = (end - start).max(1) as f64;
            for (i, slot) in out[start..end].iter_mut().enumerate() {
                let u = i as f64 / span;
                let f0 = f0_start + (f0_end - f0_start) * u;
                phase += 2.0 * PI * f0 / fs;
                // syllables swell from half level rather than from silence
                let env = 0.75 - 0.25 * (2.0 * PI * u).cos();
                let mut s = 0.0;
                let mut h = 1.0;
                while h * f0 < nyquist_guard {
                    let f = h * f0;
                    let emphasis: f64 = formants
                        .iter()
                        .map(|&fc| (-((f - fc) / 150.0).powi(2)).exp())
                        .sum();
                    s += (0.15 + emphasis) / h.sqrt() * (h * phase).sin();
                    h += 1.0;
                }
                *slot = level * env * s;
            }
        }
        start = end;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    AudioClip::new(out, sample_rate_hz)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    White,
    /// 1/f spectrum via a Voss-McCartney generator.
    Pink,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

pub fn noise(kind: NoiseKind, seed: u64, seconds: f64, sample_rate_hz: u32) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * sample_rate_hz as f64).round() as usize;
    let mut samples: Vec<f64> = match kind {
        NoiseKind::White => (0..n).map(|_| gaussian(&mut rng)).collect(),
        NoiseKind::Pink => {
            const ROWS: usize = 12;
            let mut rows = [0.0f64; ROWS];
            for r in rows.iter_mut() {
                *r = gaussian(&mut rng);
            }
            (0..n)
                .map(|i| {
                    let k = (i + 1).trailing_zeros() as usize;
                    if k < ROWS {
                        rows[k] = gaussian(&mut rng);
                    }
                    rows.iter().sum::<f64>() + gaussian(&mut rng)
                })
                .collect()
        }
    };
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        samples.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    AudioClip::new(samples, sample_rate_hz)
}
