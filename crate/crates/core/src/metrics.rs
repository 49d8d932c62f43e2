//! Objective evaluation: STOI, SI-SNR and median aggregation by SNR
//! condition.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::audio_io::AudioClip;
use crate::dsp::{resample, rfft};
use crate::error::{Error, Result};

pub const STOI_RATE_HZ: u32 = 10_000;
const FRAME_LEN: usize = 256;
const HOP: usize = 128;
const N_FFT: usize = 512;
const N_BANDS: usize = 15;
const MIN_FREQ_HZ: f64 = 150.0;
/// Frames per short-time segment (384 ms at 10 kHz).
pub const SEGMENT_FRAMES: usize = 30;
const DYN_RANGE_DB: f64 = 40.0;
/// Lower signal-to-distortion bound used to clip the degraded envelope.
const BETA_DB: f64 = -15.0;
const EPS: f64 = f64::EPSILON;

/// Hann window without its zero endpoints: the inner `len` points of a
/// symmetric `len + 2` window.
fn stoi_window(len: usize) -> Vec<f64> {
    let m = (len + 1) as f64;
    (1..=len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / m).cos())
        .collect()
}

/// Frame starts `0, HOP, ..` strictly below `len - FRAME_LEN`, as in the
/// reference implementation.
fn frame_starts(len: usize) -> impl Iterator<Item = usize> {
    let count = if len > FRAME_LEN { (len - FRAME_LEN - 1) / HOP + 1 } else { 0 };
    (0..count).map(|i| i * HOP)
}

/// Drops frames of `x` more than 40 dB below its loudest frame (and the
/// matching frames of `y`), then overlap-adds what is left.
fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w = stoi_window(FRAME_LEN);
    let starts: Vec<usize> = frame_starts(x.len()).collect();
    let energies: Vec<f64> = starts
        .iter()
        .map(|&s| {
            let e: f64 = x[s..s + FRAME_LEN]
                .iter()
                .zip(&w)
                .map(|(v, w)| (v * w) * (v * w))
                .sum();
            20.0 * (e.sqrt() + EPS).log10()
        })
        .collect();
    let max = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<usize> = starts
        .iter()
        .zip(&energies)
        .filter(|(_, &e)| max - DYN_RANGE_DB - e < 0.0)
        .map(|(&s, _)| s)
        .collect();
    if kept.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let out_len = (kept.len() - 1) * HOP + FRAME_LEN;
    let mut xs = vec![0.0; out_len];
    let mut ys = vec![0.0; out_len];
    for (j, &s) in kept.iter().enumerate() {
        let o = j * HOP;
        for n in 0..FRAME_LEN {
            xs[o + n] += x[s + n] * w[n];
            ys[o + n] += y[s + n] * w[n];
        }
    }
    (xs, ys)
}

/// Bin ranges `[lo, hi)` of the one-third-octave bands.
fn third_octave_bands() -> Vec<(usize, usize)> {
    let n_bins = N_FFT / 2 + 1;
    let freqs: Vec<f64> = (0..n_bins)
        .map(|k| k as f64 * STOI_RATE_HZ as f64 / N_FFT as f64)
        .collect();
    let nearest = |target: f64| {
        let mut best = 0;
        for (i, f) in freqs.iter().enumerate() {
            if (f - target).powi(2) < (freqs[best] - target).powi(2) {
                best = i;
            }
        }
        best
    };
    (0..N_BANDS)
        .map(|k| {
            let k = k as f64;
            let lo = MIN_FREQ_HZ * 2f64.powf((2.0 * k - 1.0) / 6.0);
            let hi = MIN_FREQ_HZ * 2f64.powf((2.0 * k + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

/// `[band][frame]` one-third-octave envelope magnitudes.
fn band_envelopes(x: &[f64], bands: &[(usize, usize)]) -> Vec<Vec<f64>> {
    let w = stoi_window(FRAME_LEN);
    let spectra: Vec<Vec<Complex64>> = frame_starts(x.len())
        .map(|s| {
            let frame: Vec<f64> = x[s..s + FRAME_LEN].iter().zip(&w).map(|(v, w)| v * w).collect();
            rfft(&frame, N_FFT)
        })
        .collect();
    bands
        .iter()
        .map(|&(lo, hi)| {
            spectra
                .iter()
                .map(|bins| bins[lo..hi].iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt())
                .collect()
        })
        .collect()
}

fn centered_unit(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt() + EPS;
    v.iter_mut().for_each(|x| *x /= norm);
}

/// Short-time objective intelligibility of `degraded` against `clean`.
///
/// Both clips are resampled to 10 kHz. Frames of 256 samples (hop 128,
/// 512-point FFT) that are more than 40 dB below the loudest clean frame are
/// removed; fifteen one-third-octave bands from 150 Hz are correlated over
/// 30-frame segments after normalizing and clipping the degraded envelope.
pub fn stoi(clean: &AudioClip, degraded: &AudioClip) -> Result<f64> {
    if clean.len() != degraded.len() {
        return Err(Error::LengthMismatch {
            left: clean.len(),
            right: degraded.len(),
        });
    }
    if clean.sample_rate_hz != degraded.sample_rate_hz {
        return Err(Error::RateMismatch(clean.sample_rate_hz, degraded.sample_rate_hz));
    }
    let (x, y) = if clean.sample_rate_hz == STOI_RATE_HZ {
        (clean.samples.clone(), degraded.samples.clone())
    } else {
        (
            resample(clean, STOI_RATE_HZ)?.samples,
            resample(degraded, STOI_RATE_HZ)?.samples,
        )
    };
    let (x, y) = remove_silent_frames(&x, &y);
    let bands = third_octave_bands();
    let xt = band_envelopes(&x, &bands);
    let yt = band_envelopes(&y, &bands);
    let n_frames = xt[0].len();
    if n_frames < SEGMENT_FRAMES {
        return Err(Error::TooShort {
            needed: SEGMENT_FRAMES,
            got: n_frames,
        });
    }
    let clip = 10f64.powf(-BETA_DB / 20.0);
    let n_segments = n_frames - SEGMENT_FRAMES + 1;
    let mut total = 0.0;
    for m in SEGMENT_FRAMES..=n_frames {
        for (xb, yb) in xt.iter().zip(&yt) {
            let xs = &xb[m - SEGMENT_FRAMES..m];
            let ys = &yb[m - SEGMENT_FRAMES..m];
            let xn = xs.iter().map(|v| v * v).sum::<f64>().sqrt();
            let yn = ys.iter().map(|v| v * v).sum::<f64>().sqrt();
            let norm = xn / (yn + EPS);
            let mut yp: Vec<f64> = ys
                .iter()
                .zip(xs)
                .map(|(y, x)| (y * norm).min(x * (1.0 + clip)))
                .collect();
            let mut xp = xs.to_vec();
            centered_unit(&mut yp);
            centered_unit(&mut xp);
            total += yp.iter().zip(&xp).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    Ok((total / (N_BANDS * n_segments) as f64).clamp(-1.0, 1.0))
}

pub const SI_SNR_CAP_DB: f64 = 60.0;

/// Scale-invariant SNR in dB, clamped to +-60.
pub fn si_snr(estimate: &AudioClip, target: &AudioClip) -> Result<f64> {
    si_snr_samples(&estimate.samples, &target.samples)
}

pub fn si_snr_samples(estimate: &[f64], target: &[f64]) -> Result<f64> {
    if estimate.len() != target.len() {
        return Err(Error::LengthMismatch {
            left: estimate.len(),
            right: target.len(),
        });
    }
    let tt: f64 = target.iter().map(|t| t * t).sum();
    if tt == 0.0 {
        return Err(Error::SilentTarget);
    }
    let proj = estimate.iter().zip(target).map(|(e, t)| e * t).sum::<f64>() / tt;
    let (mut signal, mut residual) = (0.0, 0.0);
    for (e, t) in estimate.iter().zip(target) {
        let s = proj * t;
        signal += s * s;
        residual += (e - s) * (e - s);
    }
    let db = if residual == 0.0 {
        if signal == 0.0 {
            -SI_SNR_CAP_DB
        } else {
            SI_SNR_CAP_DB
        }
    } else {
        10.0 * (signal / residual).log10()
    };
    Ok(db.clamp(-SI_SNR_CAP_DB, SI_SNR_CAP_DB))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub entry: String,
    pub snr_condition_db: f64,
    pub stoi: f64,
    pub si_snr_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Medians {
    pub count: usize,
    pub stoi: f64,
    pub si_snr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionMedians {
    pub snr_db: f64,
    pub medians: Medians,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Sorted by entry id, then condition.
    pub records: Vec<EvalRecord>,
    /// Ascending by condition.
    pub by_condition: Vec<ConditionMedians>,
    pub overall: Option<Medians>,
}

/// Median; an even count averages the two middle values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

fn medians_of(records: &[&EvalRecord]) -> Option<Medians> {
    let stoi: Vec<f64> = records.iter().map(|r| r.stoi).collect();
    let si: Vec<f64> = records.iter().map(|r| r.si_snr_db).collect();
    Some(Medians {
        count: records.len(),
        stoi: median(&stoi)?,
        si_snr_db: median(&si)?,
    })
}

/// Condition keys compare on bit patterns; `-0.0` folds into `0.0`.
fn condition_key(db: f64) -> i64 {
    let db = if db == 0.0 { 0.0 } else { db };
    let bits = db.to_bits() as i64;
    // order-preserving map for IEEE doubles
    if bits < 0 {
        bits ^ i64::MAX
    } else {
        bits
    }
}

pub fn aggregate_median(records: &[EvalRecord]) -> EvalReport {
    let mut sorted = records.to_vec();
    sorted.sort_by(|a, b| {
        a.entry
            .cmp(&b.entry)
            .then(a.snr_condition_db.total_cmp(&b.snr_condition_db))
            .then(a.stoi.total_cmp(&b.stoi))
            .then(a.si_snr_db.total_cmp(&b.si_snr_db))
    });
    let mut groups: BTreeMap<i64, Vec<&EvalRecord>> = BTreeMap::new();
    for r in &sorted {
        groups.entry(condition_key(r.snr_condition_db)).or_default().push(r);
    }
    let by_condition = groups
        .values()
        .filter_map(|g| {
            Some(ConditionMedians {
                snr_db: g[0].snr_condition_db,
                medians: medians_of(g)?,
            })
        })
        .collect();
    let all: Vec<&EvalRecord> = sorted.iter().collect();
    EvalReport {
        overall: medians_of(&all),
        by_condition,
        records: sorted,
    }
}

impl EvalReport {
    /// Medians for a condition within 1e-9 dB of `snr_db`.
    pub fn condition(&self, snr_db: f64) -> Option<&Medians> {
        self.by_condition
            .iter()
            .find(|c| (c.snr_db - snr_db).abs() < 1e-9)
            .map(|c| &c.medians)
    }

    /// `entry,snr_db,stoi,si_snr` with round-trip precision.
    pub fn records_csv(&self) -> String {
        let mut out = String::from("entry,snr_db,stoi,si_snr\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{},{},{}", r.entry, r.snr_condition_db, r.stoi, r.si_snr_db);
        }
        out
    }

    /// `condition,count,stoi,si_snr`: overall first, then each condition.
    pub fn medians_csv(&self) -> String {
        let mut out = String::from("condition,count,stoi,si_snr\n");
        if let Some(m) = &self.overall {
            let _ = writeln!(out, "overall,{},{:.4},{:.4}", m.count, m.stoi, m.si_snr_db);
        }
        for c in &self.by_condition {
            let m = &c.medians;
            let _ = writeln!(out, "{} dB,{},{:.4},{:.4}", c.snr_db, m.count, m.stoi, m.si_snr_db);
        }
        out
    }

    pub fn from_records_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == "entry,snr_db,stoi,si_snr" => {}
            _ => return Err(Error::Manifest("evaluation CSV header missing".into())),
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || Error::Manifest(format!("evaluation CSV line {}: malformed", i + 2));
            let cols: Vec<&str> = line.trim().split(',').collect();
            if cols.len() != 4 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            records.push(EvalRecord {
                entry: cols[0].to_string(),
                snr_condition_db: num(cols[1])?,
                stoi: num(cols[2])?,
                si_snr_db: num(cols[3])?,
            });
        }
        Ok(aggregate_median(&records))
    }

    /// Writes `path` (records) and a sibling `<stem>.medians.csv`.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.records_csv())?;
        std::fs::write(medians_path(path), self.medians_csv())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::from_records_csv(&text)
    }
}

pub fn medians_path(path: &Path) -> std::path::PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("eval");
    path.with_file_name(format!("{stem}.medians.csv"))
}
