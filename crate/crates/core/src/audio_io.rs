//! 16-bit mono PCM WAV reading and writing.

use std::fs;
use std::io::ErrorKind;
use std::path::Path;

use crate::error::{Error, Result};

pub const CANONICAL_RATE_HZ: u32 = 16_000;

/// Mono PCM samples normalized to [-1, 1] plus their sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Self {
        Self {
            samples,
            sample_rate_hz,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

/// Float to int16: clamp to [-1, 1], scale by 32767, round half away from zero.
pub fn sample_to_i16(x: f64) -> i16 {
    let x = if x.is_nan() { 0.0 } else { x.clamp(-1.0, 1.0) };
    // f64::round is half-away-from-zero
    (x * 32767.0).round() as i16
}

pub fn i16_to_sample(v: i16) -> f64 {
    v as f64 / 32768.0
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    decode_wav(&bytes)
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Parses an in-memory RIFF/WAVE image.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::CorruptHeader("missing RIFF/WAVE signature".into()));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        match id {
            b"fmt " => {
                if size < 16 || body + size > bytes.len() {
                    return Err(Error::CorruptHeader("truncated fmt chunk".into()));
                }
                let format_tag = u16_at(bytes, body);
                let channels = u16_at(bytes, body + 2);
                let rate = u32_at(bytes, body + 4);
                let bits = u16_at(bytes, body + 14);
                fmt = Some((format_tag, channels, rate, bits));
            }
            b"data" => {
                let (format_tag, channels, rate, bits) =
                    fmt.ok_or_else(|| Error::CorruptHeader("data chunk before fmt chunk".into()))?;
                if format_tag != 1 {
                    return Err(Error::UnsupportedFormat(format!(
                        "audio format tag {format_tag} (only PCM = 1)"
                    )));
                }
                if channels != 1 {
                    return Err(Error::UnsupportedFormat(format!("{channels} channels")));
                }
                if bits != 16 {
                    return Err(Error::UnsupportedFormat(format!("{bits}-bit samples")));
                }
                if rate == 0 {
                    return Err(Error::CorruptHeader("sample rate 0".into()));
                }
                let available = bytes.len() - body;
                if size != available.min(size) || size % 2 != 0 {
                    return Err(Error::CorruptHeader(format!(
                        "data chunk claims {size} bytes, {available} present"
                    )));
                }
                let samples = bytes[body..body + size]
                    .chunks_exact(2)
                    .map(|c| i16_to_sample(i16::from_le_bytes([c[0], c[1]])))
                    .collect();
                return Ok(AudioClip::new(samples, rate));
            }
            _ => {}
        }
        // chunks are word aligned
        pos = body + size + (size & 1);
    }
    Err(Error::CorruptHeader("no data chunk".into()))
}

/// Serializes a clip as a canonical 44-byte-header PCM WAV image.
pub fn encode_wav(clip: &AudioClip) -> Vec<u8> {
    let data_len = clip.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate_hz * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &clip.samples {
        out.extend_from_slice(&sample_to_i16(s).to_le_bytes());
    }
    out
}

pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    fs::write(path, encode_wav(clip))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw_wav(channels: u16, bits: u16, format_tag: u16, payload: &[u8], claim: u32) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(b"RIFF");
        b.extend_from_slice(&(36 + payload.len() as u32).to_le_bytes());
        b.extend_from_slice(b"WAVEfmt ");
        b.extend_from_slice(&16u32.to_le_bytes());
        b.extend_from_slice(&format_tag.to_le_bytes());
        b.extend_from_slice(&channels.to_le_bytes());
        b.extend_from_slice(&16000u32.to_le_bytes());
        b.extend_from_slice(&(16000 * channels as u32 * bits as u32 / 8).to_le_bytes());
        b.extend_from_slice(&(channels * bits / 8).to_le_bytes());
        b.extend_from_slice(&bits.to_le_bytes());
        b.extend_from_slice(b"data");
        b.extend_from_slice(&claim.to_le_bytes());
        b.extend_from_slice(payload);
        b
    }

    fn pcm(vals: &[i16]) -> Vec<u8> {
        vals.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    #[test]
    fn reads_fixed_point_scaling() {
        let p = pcm(&[0, 16384, -32768]);
        let clip = decode_wav(&raw_wav(1, 16, 1, &p, p.len() as u32)).unwrap();
        assert_eq!(clip.samples, vec![0.0, 0.5, -1.0]);
        assert_eq!(clip.sample_rate_hz, 16000);
    }

    #[test]
    fn rejects_stereo_and_other_depths() {
        let p = pcm(&[0, 0]);
        assert!(matches!(
            decode_wav(&raw_wav(2, 16, 1, &p, 4)),
            Err(Error::UnsupportedFormat(_))
        ));
        assert!(matches!(
            decode_wav(&raw_wav(1, 8, 1, &p, 4)),
            Err(Error::UnsupportedFormat(_))
        ));
        assert!(matches!(
            decode_wav(&raw_wav(1, 16, 3, &p, 4)),
            Err(Error::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn rejects_truncated_data() {
        let p = pcm(&[1, 2]);
        assert!(matches!(
            decode_wav(&raw_wav(1, 16, 1, &p, 8)),
            Err(Error::CorruptHeader(_))
        ));
        assert!(matches!(decode_wav(b"RIFX"), Err(Error::CorruptHeader(_))));
    }

    #[test]
    fn missing_file_is_not_found() {
        assert!(matches!(
            read_wav("/definitely/not/here.wav"),
            Err(Error::NotFound(_))
        ));
    }

    #[test]
    fn write_rounding_and_clamping() {
        assert_eq!(sample_to_i16(1.0), 32767);
        assert_eq!(sample_to_i16(1.5), 32767);
        assert_eq!(sample_to_i16(-1.5), -32767);
        // -0.5 * 32767 = -16383.5, rounded away from zero
        assert_eq!(sample_to_i16(-0.5), -16384);
        assert_eq!(sample_to_i16(0.5), 16384);
    }

    #[test]
    fn file_round_trip_and_deterministic_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let clip = AudioClip::new(vec![0.25, -0.75, 0.0, 1.0], 16000);
        let a = dir.path().join("a.wav");
        let b = dir.path().join("b.wav");
        write_wav(&a, &clip).unwrap();
        write_wav(&b, &clip).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        let back = read_wav(&a).unwrap();
        let payload: Vec<i16> = back.samples.iter().map(|s| (s * 32768.0) as i16).collect();
        assert_eq!(payload, vec![8192, -24575, 0, 32767]);
    }

    proptest! {
        #[test]
        fn round_trip_within_one_step(xs in prop::collection::vec(-1.0f64..=1.0, 1..200)) {
            let clip = AudioClip::new(xs.clone(), 16000);
            let back = decode_wav(&encode_wav(&clip)).unwrap();
            prop_assert_eq!(back.len(), xs.len());
            // write scales by 32767, read divides by 32768: half a step of
            // rounding plus the scale mismatch (at most one step)
            let bound = 0.5 / 32767.0 + 1.0 / 32768.0;
            for (a, b) in xs.iter().zip(&back.samples) {
                prop_assert!((a - b).abs() <= bound);
                prop_assert_eq!((b * 32768.0) as i16, sample_to_i16(*a));
            }
        }
    }
}
