//! Deterministic noisy-corpus synthesis: segment merging, the SNR ladder,
//! gain solving, mixing and JSONL manifests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio_io::{read_wav, write_wav, AudioClip};
use crate::dsp::{energy, resample};
use crate::error::{Error, Result};
use crate::par::{self, Exec};

pub const MANIFEST_VERSION: u32 = 1;
pub const DEFAULT_SEGMENT_SECONDS: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrLadder {
    pub snr_min_db: f64,
    pub snr_max_db: f64,
    pub levels: usize,
}

impl SnrLadder {
    pub fn new(snr_min_db: f64, snr_max_db: f64, levels: usize) -> Self {
        Self {
            snr_min_db,
            snr_max_db,
            levels,
        }
    }
}

/// `SNR_k = min + (k-1)/(L-1) * (max - min)` for `k = 1..=L`; a single level is `[min]`.
pub fn snr_ladder(ladder: &SnrLadder) -> Result<Vec<f64>> {
    let SnrLadder {
        snr_min_db: lo,
        snr_max_db: hi,
        levels,
    } = *ladder;
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidLadder("bounds must be finite".into()));
    }
    if lo > hi {
        return Err(Error::InvalidLadder(format!("min {lo} > max {hi}")));
    }
    if levels < 1 {
        return Err(Error::InvalidLadder("need at least one level".into()));
    }
    if levels == 1 {
        return Ok(vec![lo]);
    }
    Ok((1..=levels)
        .map(|k| lo + (k - 1) as f64 / (levels - 1) as f64 * (hi - lo))
        .collect())
}

/// Noise gain `sqrt(E_clean / (E_noise * 10^(snr/10)))`.
pub fn mix_gain(clean: &[f64], noise: &[f64], snr_db: f64) -> Result<f64> {
    if clean.len() != noise.len() {
        return Err(Error::LengthMismatch {
            left: clean.len(),
            right: noise.len(),
        });
    }
    let ec = energy(clean);
    let en = energy(noise);
    if ec == 0.0 {
        return Err(Error::SilentSource("clean"));
    }
    if en == 0.0 {
        return Err(Error::SilentSource("noise"));
    }
    Ok((ec / (en * 10f64.powf(snr_db / 10.0))).sqrt())
}

/// Cuts `len` samples of noise starting at `offset`, wrapping around when the
/// source is shorter than requested.
pub fn align_noise(noise: &[f64], len: usize, offset: usize) -> Vec<f64> {
    if noise.is_empty() {
        return vec![0.0; len];
    }
    (0..len).map(|i| noise[(offset + i) % noise.len()]).collect()
}

/// Returns `(noisy, scaled_noise)` with `noisy = clean + alpha * noise`.
///
/// Noise of a different length is tiled or truncated from its first sample.
pub fn synthesize_noisy(
    clean: &AudioClip,
    noise: &AudioClip,
    snr_db: f64,
) -> Result<(AudioClip, AudioClip)> {
    if clean.sample_rate_hz != noise.sample_rate_hz {
        return Err(Error::RateMismatch(clean.sample_rate_hz, noise.sample_rate_hz));
    }
    let aligned = align_noise(&noise.samples, clean.len(), 0);
    let alpha = mix_gain(&clean.samples, &aligned, snr_db)?;
    let scaled: Vec<f64> = aligned.iter().map(|n| alpha * n).collect();
    let noisy = clean.samples.iter().zip(&scaled).map(|(c, n)| c + n).collect();
    Ok((
        AudioClip::new(noisy, clean.sample_rate_hz),
        AudioClip::new(scaled, clean.sample_rate_hz),
    ))
}

/// Concatenates clips in order and re-cuts them into back-to-back segments of
/// exactly `target_seconds`; the short tail is dropped.
pub fn merge_segments(clips: &[AudioClip], target_seconds: f64) -> Result<Vec<AudioClip>> {
    let Some(first) = clips.first() else {
        return Ok(Vec::new());
    };
    let rate = first.sample_rate_hz;
    if let Some(bad) = clips.iter().find(|c| c.sample_rate_hz != rate) {
        return Err(Error::RateMismatch(rate, bad.sample_rate_hz));
    }
    let seg_len = (target_seconds * rate as f64).round() as usize;
    if seg_len == 0 {
        return Err(Error::InvalidConfig("segment length rounds to zero".into()));
    }
    let stream: Vec<f64> = clips.iter().flat_map(|c| c.samples.iter().copied()).collect();
    Ok(stream
        .chunks_exact(seg_len)
        .map(|s| AudioClip::new(s.to_vec(), rate))
        .collect())
}

/// One synthesized entry: which clean segment, which noise source, at what SNR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub version: u32,
    pub entry: String,
    pub clean_id: String,
    pub noise_id: String,
    pub snr_db: f64,
    pub seed: u64,
    pub clean_offset: usize,
    pub noise_offset: usize,
    /// Factor applied to clean, noise and mixture so the mixture peak is <= 1.
    pub rescale_factor: f64,
}

/// First line of a manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub version: u32,
    pub clean_dir: PathBuf,
    pub noise_dir: PathBuf,
    pub ladder: SnrLadder,
    pub seed: u64,
    pub segment_seconds: f64,
    pub sample_rate_hz: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub entries: Vec<MixSpec>,
}

impl Manifest {
    /// Line-delimited JSON: header record, then one record per entry.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&self.header)?;
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: ManifestHeader = serde_json::from_str(
            lines
                .next()
                .ok_or_else(|| Error::Manifest("empty manifest".into()))?,
        )?;
        if header.version != MANIFEST_VERSION {
            return Err(Error::Manifest(format!(
                "unsupported manifest version {}",
                header.version
            )));
        }
        let entries = lines
            .map(|l| serde_json::from_str(l).map_err(Error::from))
            .collect::<Result<Vec<MixSpec>>>()?;
        Ok(Self { header, entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_jsonl()?.as_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::from_jsonl(&text)
    }
}

/// A named source clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Source {
    pub id: String,
    pub clip: AudioClip,
}

/// Clean segments and noise sources that manifest entries refer to.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub segments: Vec<Source>,
    pub noises: Vec<Source>,
    pub sample_rate_hz: u32,
    pub segment_len: usize,
}

fn list_wavs(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = fs::read_dir(dir).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(dir.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let mut paths = Vec::new();
    for entry in rd {
        let p = entry?.path();
        let is_wav = p
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
        if p.is_file() && is_wav {
            paths.push(p);
        }
    }
    paths.sort();
    Ok(paths)
}

fn file_id(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn segment_id(index: usize) -> String {
    format!("seg{index:05}")
}

pub fn entry_id(index: usize) -> String {
    format!("{index:06}")
}

impl Corpus {
    /// Builds a corpus from in-memory clips. Clean clips are merged and cut into
    /// segments; noise is resampled to the clean rate.
    pub fn from_clips(
        clean: &[AudioClip],
        noises: Vec<Source>,
        segment_seconds: f64,
    ) -> Result<Self> {
        let segments = merge_segments(clean, segment_seconds)?;
        let Some(first) = segments.first() else {
            return Err(Error::EmptyCorpus(PathBuf::from("<clean clips>")));
        };
        let rate = first.sample_rate_hz;
        let segment_len = first.len();
        if noises.is_empty() {
            return Err(Error::EmptyCorpus(PathBuf::from("<noise clips>")));
        }
        let noises = noises
            .into_iter()
            .map(|s| {
                let clip = resample(&s.clip, rate)?;
                if energy(&clip.samples) == 0.0 {
                    return Err(Error::SilentSource("noise"));
                }
                Ok(Source { id: s.id, clip })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            segments: segments
                .into_iter()
                .enumerate()
                .map(|(i, clip)| Source {
                    id: segment_id(i),
                    clip,
                })
                .collect(),
            noises,
            sample_rate_hz: rate,
            segment_len,
        })
    }

    /// Loads every `*.wav` (sorted by name) from the two directories.
    pub fn load(clean_dir: &Path, noise_dir: &Path, segment_seconds: f64) -> Result<Self> {
        let clean_paths = list_wavs(clean_dir)?;
        if clean_paths.is_empty() {
            return Err(Error::EmptyCorpus(clean_dir.to_path_buf()));
        }
        let noise_paths = list_wavs(noise_dir)?;
        if noise_paths.is_empty() {
            return Err(Error::EmptyCorpus(noise_dir.to_path_buf()));
        }
        let clean = clean_paths.iter().map(read_wav).collect::<Result<Vec<_>>>()?;
        let noises = noise_paths
            .iter()
            .map(|p| {
                Ok(Source {
                    id: file_id(p),
                    clip: read_wav(p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_clips(&clean, noises, segment_seconds).map_err(|e| match e {
            Error::EmptyCorpus(_) => Error::EmptyCorpus(clean_dir.to_path_buf()),
            other => other,
        })
    }

    fn noise(&self, id: &str) -> Result<&Source> {
        self.noises
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::Manifest(format!("unknown noise id {id}")))
    }

    fn segment(&self, id: &str) -> Result<&Source> {
        self.segments
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::Manifest(format!("unknown clean id {id}")))
    }

    /// Reproduces the mixture for one manifest entry.
    pub fn realize(&self, spec: &MixSpec) -> Result<RenderedMix> {
        let seg = self.segment(&spec.clean_id)?;
        let noise = self.noise(&spec.noise_id)?;
        let aligned = align_noise(&noise.clip.samples, seg.clip.len(), spec.noise_offset);
        mix_with_rescale(&seg.clip, &aligned, spec.snr_db)
    }
}

/// Clean target, scaled noise and their sum, all multiplied by `rescale_factor`.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedMix {
    pub clean: AudioClip,
    pub noise: AudioClip,
    pub noisy: AudioClip,
    pub rescale_factor: f64,
}

/// Mixes at `snr_db`; if the mixture peak exceeds 1 the whole triple is scaled
/// by `1/peak`, which leaves the clean-to-noise ratio unchanged.
pub fn mix_with_rescale(clean: &AudioClip, aligned_noise: &[f64], snr_db: f64) -> Result<RenderedMix> {
    let noise = AudioClip::new(aligned_noise.to_vec(), clean.sample_rate_hz);
    let (noisy, scaled) = synthesize_noisy(clean, &noise, snr_db)?;
    let peak = noisy.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let factor = if peak > 1.0 { 1.0 / peak } else { 1.0 };
    let scale = |c: &AudioClip| {
        if factor == 1.0 {
            c.clone()
        } else {
            AudioClip::new(c.samples.iter().map(|v| v * factor).collect(), c.sample_rate_hz)
        }
    };
    Ok(RenderedMix {
        clean: scale(clean),
        noise: scale(&scaled),
        noisy: scale(&noisy),
        rescale_factor: factor,
    })
}

/// Pairs every clean segment with a PRNG-chosen noise source and the ladder
/// level `k = i mod L`. Deterministic in `(corpus, ladder, seed)`.
pub fn build_manifest_from_corpus(
    corpus: &Corpus,
    ladder: &SnrLadder,
    seed: u64,
    clean_dir: &Path,
    noise_dir: &Path,
) -> Result<Manifest> {
    let levels = snr_ladder(ladder)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(corpus.segments.len());
    for (i, seg) in corpus.segments.iter().enumerate() {
        let noise = &corpus.noises[rng.gen_range(0..corpus.noises.len())];
        let entry_seed: u64 = rng.gen();
        let slack = noise.clip.len().saturating_sub(seg.clip.len());
        let noise_offset = if slack > 0 {
            ChaCha8Rng::seed_from_u64(entry_seed).gen_range(0..=slack)
        } else {
            0
        };
        let mut spec = MixSpec {
            version: MANIFEST_VERSION,
            entry: entry_id(i),
            clean_id: seg.id.clone(),
            noise_id: noise.id.clone(),
            snr_db: levels[i % levels.len()],
            seed: entry_seed,
            clean_offset: i * corpus.segment_len,
            noise_offset,
            rescale_factor: 1.0,
        };
        spec.rescale_factor = corpus.realize(&spec)?.rescale_factor;
        entries.push(spec);
    }
    Ok(Manifest {
        header: ManifestHeader {
            version: MANIFEST_VERSION,
            clean_dir: clean_dir.to_path_buf(),
            noise_dir: noise_dir.to_path_buf(),
            ladder: *ladder,
            seed,
            segment_seconds: corpus.segment_len as f64 / corpus.sample_rate_hz as f64,
            sample_rate_hz: corpus.sample_rate_hz,
        },
        entries,
    })
}

pub fn build_manifest(
    clean_dir: &Path,
    noise_dir: &Path,
    ladder: &SnrLadder,
    seed: u64,
    segment_seconds: f64,
) -> Result<(Manifest, Corpus)> {
    let corpus = Corpus::load(clean_dir, noise_dir, segment_seconds)?;
    let manifest = build_manifest_from_corpus(&corpus, ladder, seed, clean_dir, noise_dir)?;
    Ok((manifest, corpus))
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Writes `manifest.jsonl` plus `clean/`, `noise/` and `noisy/` WAV trees.
pub fn render_corpus(manifest: &Manifest, corpus: &Corpus, out_dir: &Path, exec: Exec) -> Result<()> {
    for sub in ["clean", "noise", "noisy"] {
        fs::create_dir_all(out_dir.join(sub))?;
    }
    par::try_map(exec, &manifest.entries, |_, spec| -> Result<()> {
        let mix = corpus.realize(spec)?;
        let name = format!("{}.wav", spec.entry);
        write_wav(out_dir.join("clean").join(&name), &mix.clean)?;
        write_wav(out_dir.join("noise").join(&name), &mix.noise)?;
        write_wav(out_dir.join("noisy").join(&name), &mix.noisy)?;
        Ok(())
    })?;
    manifest.save(out_dir.join(MANIFEST_FILE))
}

/// A rendered noisy/clean training or evaluation pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub id: String,
    pub snr_db: f64,
    pub sample_rate_hz: u32,
    pub noisy: Vec<f64>,
    pub clean: Vec<f64>,
}

/// Reads the `noisy/` and `clean/` WAVs that sit next to a rendered manifest.
pub fn load_pairs(manifest_path: &Path, exec: Exec) -> Result<(Manifest, Vec<Pair>)> {
    let manifest = Manifest::load(manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let pairs = par::try_map(exec, &manifest.entries, |_, spec| {
        let name = format!("{}.wav", spec.entry);
        let noisy = read_wav(root.join("noisy").join(&name))?;
        let clean = read_wav(root.join("clean").join(&name))?;
        if noisy.len() != clean.len() {
            return Err(Error::LengthMismatch {
                left: noisy.len(),
                right: clean.len(),
            });
        }
        Ok(Pair {
            id: spec.entry.clone(),
            snr_db: spec.snr_db,
            sample_rate_hz: noisy.sample_rate_hz,
            noisy: noisy.samples,
            clean: clean.samples,
        })
    })?;
    Ok((manifest, pairs))
}
