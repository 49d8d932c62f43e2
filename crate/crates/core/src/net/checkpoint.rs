//! Binary checkpoint container.
//!
//! Layout (little-endian): magic `EDGE`, format version `u32`, config JSON
//! length `u32`, config JSON bytes, then every parameter tensor in declaration
//! order. Version 1 stores each tensor as raw `f32` elements. Version 2 (used
//! for quantized models) prefixes each tensor with a dtype tag byte: `0` for
//! `f32` elements, `1` for an `f32` scale followed by `i8` elements.

use std::fs;
use std::path::Path;

use super::{parameter_shapes, Model, ModelConfig, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EDGE";
pub const VERSION_F32: u32 = 1;
pub const VERSION_TAGGED: u32 = 2;

const TAG_F32: u8 = 0;
const TAG_I8: u8 = 1;

/// One stored tensor.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorRecord {
    F32(Tensor),
    I8 {
        values: Vec<i8>,
        scale: f64,
        shape: Vec<usize>,
    },
}

fn header(version: u32, cfg: &ModelConfig) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(cfg)?;
    let mut out = Vec::with_capacity(12 + json.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    Ok(out)
}

fn put_f32s(out: &mut Vec<u8>, data: &[f64]) {
    for &v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

/// Serializes an FP32 model (version 1).
pub fn encode_model(model: &Model) -> Result<Vec<u8>> {
    let mut out = header(VERSION_F32, model.config())?;
    for t in model.tensors() {
        put_f32s(&mut out, t.data());
    }
    Ok(out)
}

/// Serializes tagged records (version 2).
pub fn encode_records(cfg: &ModelConfig, records: &[TensorRecord]) -> Result<Vec<u8>> {
    let mut out = header(VERSION_TAGGED, cfg)?;
    for r in records {
        match r {
            TensorRecord::F32(t) => {
                out.push(TAG_F32);
                put_f32s(&mut out, t.data());
            }
            TensorRecord::I8 { values, scale, .. } => {
                out.push(TAG_I8);
                out.extend_from_slice(&(*scale as f32).to_le_bytes());
                out.extend(values.iter().map(|&v| v as u8));
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect())
    }
}

/// Parsed checkpoint: config, format version and tensor records.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub records: Vec<TensorRecord>,
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION_F32 && version != VERSION_TAGGED {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let json_len = r.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(json_len)?)?;
    config.validate()?;
    let mut records = Vec::new();
    for shape in parameter_shapes(&config) {
        let n: usize = shape.iter().product();
        let tag = if version == VERSION_F32 { TAG_F32 } else { r.take(1)?[0] };
        let record = match tag {
            TAG_F32 => TensorRecord::F32(Tensor::new(r.f32s(n)?, shape)?),
            TAG_I8 => {
                let scale = r.f32s(1)?[0];
                if !(scale > 0.0 && scale.is_finite()) {
                    return Err(Error::Checkpoint(format!("invalid scale {scale}")));
                }
                let values = r.take(n)?.iter().map(|&b| b as i8).collect();
                TensorRecord::I8 {
                    values,
                    scale,
                    shape,
                }
            }
            other => return Err(Error::Checkpoint(format!("unknown dtype tag {other}"))),
        };
        records.push(record);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(Checkpoint {
        version,
        config,
        records,
    })
}

pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    let ckpt = decode(bytes)?;
    let tensors = ckpt
        .records
        .into_iter()
        .map(|r| match r {
            TensorRecord::F32(t) => Ok(t),
            TensorRecord::I8 { .. } => Err(Error::Checkpoint(
                "quantized checkpoint where an FP32 model was expected".into(),
            )),
        })
        .collect::<Result<Vec<_>>>()?;
    Model::from_tensors(ckpt.config, tensors)
}

pub fn read(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    decode(&bytes)
}

pub fn save_model(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    decode_model(&bytes)
}

/// Rounds every parameter to `f32`, matching what a save/load cycle yields.
pub fn round_to_f32(model: &mut Model) {
    for t in model.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact_after_f32_rounding() {
        let mut m = Model::init(ModelConfig::tiny(), 3).unwrap();
        round_to_f32(&mut m);
        let bytes = encode_model(&m).unwrap();
        assert_eq!(&bytes[..4], b"EDGE");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let back = decode_model(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode_model(&back).unwrap(), bytes);
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(decode(b"NOPE"), Err(Error::Checkpoint(_))));
        let m = Model::init(ModelConfig::tiny(), 3).unwrap();
        let mut bytes = encode_model(&m).unwrap();
        bytes.pop();
        assert!(matches!(decode(&bytes), Err(Error::Checkpoint(_))));
        bytes.extend_from_slice(&[0, 0]);
        assert!(matches!(decode(&bytes), Err(Error::Checkpoint(_))));
    }
}
