//! Dynamic INT8 post-training quantization of convolution layers.
//!
//! Weights are stored as symmetric per-tensor INT8 (zero point 0, range
//! +-127). Activation scales are computed from each input at call time; the
//! multiply-accumulate runs in `i32` and is rescaled by
//! `input_scale * weight_scale` before the FP32 bias is added. LSTM layers stay
//! FP32.

use std::path::Path;

use crate::error::{Error, Result};
use crate::net::checkpoint::{self, TensorRecord};
use crate::net::{lstm_forward, parameter_shapes, LstmParams, Model, ModelConfig, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub values: Vec<i8>,
    pub scale: f64,
    pub shape: Vec<usize>,
}

fn round_half_away(x: f64) -> f64 {
    x.round()
}

/// `scale = max|t| / 127`, `q = clamp(round(t / scale), -127, 127)`; an all-zero
/// tensor gets scale 1.
pub fn quantize_tensor(t: &Tensor) -> Result<QuantizedTensor> {
    if !t.is_finite() {
        return Err(Error::NonFinite);
    }
    let scale = dynamic_activation_scale(t)?;
    Ok(QuantizedTensor {
        values: quantize_with_scale(t.data(), scale),
        scale,
        shape: t.shape().to_vec(),
    })
}

fn quantize_with_scale(data: &[f64], scale: f64) -> Vec<i8> {
    data.iter()
        .map(|&v| round_half_away(v / scale).clamp(-127.0, 127.0) as i8)
        .collect()
}

pub fn dequantize_tensor(qt: &QuantizedTensor) -> Tensor {
    Tensor::new(
        qt.values.iter().map(|&q| q as f64 * qt.scale).collect(),
        qt.shape.clone(),
    )
    .expect("quantized tensor shape is consistent")
}

/// `max|x| / 127`, or 1 for an all-zero input.
pub fn dynamic_activation_scale(input: &Tensor) -> Result<f64> {
    if !input.is_finite() {
        return Err(Error::NonFinite);
    }
    let m = input.max_abs();
    Ok(if m == 0.0 { 1.0 } else { m / 127.0 })
}

impl QuantizedTensor {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// INT8 payload plus one f32 scale.
    pub fn footprint_bytes(&self) -> usize {
        self.values.len() + 4
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedConv {
    /// `[out, in, k]`
    pub weight: QuantizedTensor,
    pub bias: Tensor,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedDeconv {
    /// `[in, out, k]`
    pub weight: QuantizedTensor,
    pub bias: Tensor,
    pub stride: usize,
}

/// Largest number of 127*127 products an `i32` accumulator can hold.
pub const MAX_ACCUMULATION_TERMS: usize = (i32::MAX as usize) / (127 * 127);

fn check_accumulator(terms: usize) -> Result<()> {
    if terms > MAX_ACCUMULATION_TERMS {
        return Err(Error::AccumulatorOverflow(terms));
    }
    Ok(())
}

struct QuantizedSignal {
    values: Vec<i8>,
    scale: f64,
    channels: usize,
    len: usize,
}

fn quantize_signal(input: &Tensor) -> Result<QuantizedSignal> {
    let scale = dynamic_activation_scale(input)?;
    Ok(QuantizedSignal {
        values: quantize_with_scale(input.data(), scale),
        scale,
        channels: input.dim(0),
        len: input.dim(1),
    })
}

fn rescale(acc: &[i32], rows: usize, cols: usize, scale_in: f64, scale_w: f64, bias: &Tensor) -> Tensor {
    let b = bias.data();
    let data = acc
        .iter()
        .enumerate()
        .map(|(i, &a)| (a as f64 * scale_in) * scale_w + b[i / cols])
        .collect();
    Tensor::new(data, vec![rows, cols]).unwrap()
}

fn relu(t: &mut Tensor) {
    t.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
}

impl QuantizedConv {
    pub fn from_fp32(layer: &crate::net::ConvLayerParams) -> Result<Self> {
        Ok(Self {
            weight: quantize_tensor(&layer.weight)?,
            bias: layer.bias.clone(),
            stride: layer.stride,
        })
    }

    /// Integer correlation, rescale and bias; no activation.
    pub fn linear(&self, input: &Tensor) -> Result<Tensor> {
        let (c_out, c_in, k) = (self.weight.shape[0], self.weight.shape[1], self.weight.shape[2]);
        if input.shape().len() != 2 || input.dim(0) != c_in || input.dim(1) < k {
            return Err(Error::ShapeMismatch(format!(
                "quantized conv expects [{c_in}, T>={k}], got {:?}",
                input.shape()
            )));
        }
        check_accumulator(c_in * k)?;
        let x = quantize_signal(input)?;
        let t_out = (x.len - k) / self.stride + 1;
        let mut acc = vec![0i32; c_out * t_out];
        let w = &self.weight.values;
        for o in 0..c_out {
            let row = &mut acc[o * t_out..(o + 1) * t_out];
            for c in 0..c_in {
                let xr = &x.values[c * x.len..(c + 1) * x.len];
                for kk in 0..k {
                    let wv = w[(o * c_in + c) * k + kk] as i32;
                    if wv == 0 {
                        continue;
                    }
                    for (t, r) in row.iter_mut().enumerate() {
                        *r += wv * xr[t * self.stride + kk] as i32;
                    }
                }
            }
        }
        Ok(rescale(&acc, c_out, t_out, x.scale, self.weight.scale, &self.bias))
    }
}

/// Quantized counterpart of `conv1d_forward` (ReLU applied).
pub fn quantized_conv1d_forward(input: &Tensor, qlayer: &QuantizedConv) -> Result<Tensor> {
    let mut out = qlayer.linear(input)?;
    relu(&mut out);
    Ok(out)
}

impl QuantizedDeconv {
    pub fn from_fp32(layer: &crate::net::DeconvLayerParams) -> Result<Self> {
        Ok(Self {
            weight: quantize_tensor(&layer.weight)?,
            bias: layer.bias.clone(),
            stride: layer.stride,
        })
    }

    pub fn linear(&self, input: &Tensor) -> Result<Tensor> {
        let (c_in, c_out, k) = (self.weight.shape[0], self.weight.shape[1], self.weight.shape[2]);
        if input.shape().len() != 2 || input.dim(0) != c_in || input.dim(1) == 0 {
            return Err(Error::ShapeMismatch(format!(
                "quantized deconv expects [{c_in}, T>0], got {:?}",
                input.shape()
            )));
        }
        check_accumulator(c_in * k)?;
        let x = quantize_signal(input)?;
        let t_out = (x.len - 1) * self.stride + k;
        let mut acc = vec![0i32; c_out * t_out];
        let w = &self.weight.values;
        for o in 0..c_out {
            let row = &mut acc[o * t_out..(o + 1) * t_out];
            for c in 0..x.channels {
                let xr = &x.values[c * x.len..(c + 1) * x.len];
                for kk in 0..k {
                    let wv = w[(c * c_out + o) * k + kk] as i32;
                    if wv == 0 {
                        continue;
                    }
                    for (t, &xv) in xr.iter().enumerate() {
                        row[t * self.stride + kk] += wv * xv as i32;
                    }
                }
            }
        }
        Ok(rescale(&acc, c_out, t_out, x.scale, self.weight.scale, &self.bias))
    }
}

pub fn quantized_deconv1d_forward(
    input: &Tensor,
    qlayer: &QuantizedDeconv,
    apply_activation: bool,
) -> Result<Tensor> {
    let mut out = qlayer.linear(input)?;
    if apply_activation {
        relu(&mut out);
    }
    Ok(out)
}

/// Same topology as [`Model`] with INT8 convolution weights and FP32 LSTM.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    config: ModelConfig,
    encoder: Vec<QuantizedConv>,
    lstm: Vec<LstmParams>,
    decoder: Vec<QuantizedDeconv>,
}

/// Quantizes every convolution and transposed-convolution weight of a copy of
/// `model`; biases and LSTM parameters are carried over unchanged.
pub fn quantize_model(model: &Model) -> Result<QuantizedModel> {
    Ok(QuantizedModel {
        config: *model.config(),
        encoder: model.encoder().iter().map(QuantizedConv::from_fp32).collect::<Result<_>>()?,
        lstm: model.lstm().to_vec(),
        decoder: model.decoder().iter().map(QuantizedDeconv::from_fp32).collect::<Result<_>>()?,
    })
}

impl QuantizedModel {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn encoder(&self) -> &[QuantizedConv] {
        &self.encoder
    }

    pub fn lstm(&self) -> &[LstmParams] {
        &self.lstm
    }

    pub fn decoder(&self) -> &[QuantizedDeconv] {
        &self.decoder
    }

    pub fn forward(&self, wave: &Tensor) -> Result<Tensor> {
        if wave.shape().len() != 2 || wave.dim(0) != 1 {
            return Err(Error::ShapeMismatch(format!(
                "model expects [1, T], got {:?}",
                wave.shape()
            )));
        }
        let t = wave.dim(1);
        if t == 0 {
            return Err(Error::TooShort { needed: 1, got: 0 });
        }
        let depth = self.config.depth;
        let mut x = wave.pad_time(self.config.valid_length(t));
        let mut skips = Vec::with_capacity(depth);
        for layer in &self.encoder {
            x = quantized_conv1d_forward(&x, layer)?;
            skips.push(x.clone());
        }
        for layer in &self.lstm {
            x = lstm_forward(&x, layer)?;
        }
        for (j, layer) in self.decoder.iter().enumerate() {
            x.add_assign(&skips[depth - 1 - j]);
            x = quantized_deconv1d_forward(&x, layer, j + 1 < depth)?;
        }
        Ok(x.truncate_time(t))
    }

    pub fn enhance(&self, samples: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(&Tensor::from_signal(samples))?.into_data())
    }

    /// Tensor records in checkpoint declaration order.
    pub fn records(&self) -> Vec<TensorRecord> {
        let q = |t: &QuantizedTensor| TensorRecord::I8 {
            values: t.values.clone(),
            scale: t.scale,
            shape: t.shape.clone(),
        };
        let mut out = Vec::new();
        for l in &self.encoder {
            out.push(q(&l.weight));
            out.push(TensorRecord::F32(l.bias.clone()));
        }
        for l in &self.lstm {
            out.extend([&l.w_ih, &l.w_hh, &l.bias].map(|t| TensorRecord::F32(t.clone())));
        }
        for l in &self.decoder {
            out.push(q(&l.weight));
            out.push(TensorRecord::F32(l.bias.clone()));
        }
        out
    }

    pub fn from_records(config: ModelConfig, records: Vec<TensorRecord>) -> Result<Self> {
        config.validate()?;
        if records.len() != parameter_shapes(&config).len() {
            return Err(Error::Checkpoint("tensor count does not match config".into()));
        }
        let mut it = records.into_iter();
        let f32_next = |it: &mut std::vec::IntoIter<TensorRecord>| match it.next() {
            Some(TensorRecord::F32(t)) => Ok(t),
            _ => Err(Error::Checkpoint("expected an f32 tensor".into())),
        };
        let i8_next = |it: &mut std::vec::IntoIter<TensorRecord>| match it.next() {
            Some(TensorRecord::I8 {
                values,
                scale,
                shape,
            }) => Ok(QuantizedTensor {
                values,
                scale,
                shape,
            }),
            _ => Err(Error::Checkpoint("expected an i8 tensor".into())),
        };
        let mut encoder = Vec::with_capacity(config.depth);
        for _ in 0..config.depth {
            encoder.push(QuantizedConv {
                weight: i8_next(&mut it)?,
                bias: f32_next(&mut it)?,
                stride: config.stride,
            });
        }
        let mut lstm = Vec::with_capacity(config.lstm_layers);
        for _ in 0..config.lstm_layers {
            lstm.push(LstmParams {
                w_ih: f32_next(&mut it)?,
                w_hh: f32_next(&mut it)?,
                bias: f32_next(&mut it)?,
            });
        }
        let mut decoder = Vec::with_capacity(config.depth);
        for _ in 0..config.depth {
            decoder.push(QuantizedDeconv {
                weight: i8_next(&mut it)?,
                bias: f32_next(&mut it)?,
                stride: config.stride,
            });
        }
        Ok(Self {
            config,
            encoder,
            lstm,
            decoder,
        })
    }

    pub fn to_checkpoint_bytes(&self) -> Result<Vec<u8>> {
        checkpoint::encode_records(&self.config, &self.records())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_bytes()?)?;
        Ok(())
    }
}

/// A model loaded from either checkpoint flavour.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Fp32(Model),
    Int8(QuantizedModel),
}

impl AnyModel {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ckpt = checkpoint::read(path)?;
        let quantized = ckpt.records.iter().any(|r| matches!(r, TensorRecord::I8 { .. }));
        if quantized {
            Ok(AnyModel::Int8(QuantizedModel::from_records(ckpt.config, ckpt.records)?))
        } else {
            let tensors = ckpt
                .records
                .into_iter()
                .map(|r| match r {
                    TensorRecord::F32(t) => t,
                    TensorRecord::I8 { .. } => unreachable!(),
                })
                .collect();
            Ok(AnyModel::Fp32(Model::from_tensors(ckpt.config, tensors)?))
        }
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            AnyModel::Fp32(m) => m.config(),
            AnyModel::Int8(m) => m.config(),
        }
    }

    pub fn enhance(&self, samples: &[f64]) -> Result<Vec<f64>> {
        match self {
            AnyModel::Fp32(m) => m.enhance(samples),
            AnyModel::Int8(m) => m.enhance(samples),
        }
    }

    pub fn footprint(&self) -> Footprint {
        match self {
            AnyModel::Fp32(m) => model_footprint(m),
            AnyModel::Int8(m) => m.footprint(),
        }
    }
}

/// Parameter-byte accounting: FP32 elements cost 4 bytes, INT8 tensors one
/// byte per element plus a 4-byte scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Footprint {
    pub total_bytes: usize,
    /// Convolution and transposed-convolution layers (weights and biases) with
    /// at least [`LARGE_LAYER_PARAMS`] parameters.
    pub large_conv_bytes: usize,
    pub conv_bytes: usize,
}

pub const LARGE_LAYER_PARAMS: usize = 100;

fn fp32_bytes(t: &Tensor) -> usize {
    4 * t.len()
}

pub fn model_footprint(model: &Model) -> Footprint {
    let mut fp = Footprint::default();
    let conv_layers = model
        .encoder()
        .iter()
        .map(|l| (&l.weight, &l.bias))
        .chain(model.decoder().iter().map(|l| (&l.weight, &l.bias)));
    for (w, b) in conv_layers {
        let bytes = fp32_bytes(w) + fp32_bytes(b);
        fp.conv_bytes += bytes;
        if w.len() + b.len() >= LARGE_LAYER_PARAMS {
            fp.large_conv_bytes += bytes;
        }
    }
    let lstm: usize = model
        .lstm()
        .iter()
        .map(|l| fp32_bytes(&l.w_ih) + fp32_bytes(&l.w_hh) + fp32_bytes(&l.bias))
        .sum();
    fp.total_bytes = fp.conv_bytes + lstm;
    fp
}

impl QuantizedModel {
    pub fn footprint(&self) -> Footprint {
        let mut fp = Footprint::default();
        let conv_layers = self
            .encoder
            .iter()
            .map(|l| (&l.weight, &l.bias))
            .chain(self.decoder.iter().map(|l| (&l.weight, &l.bias)));
        for (w, b) in conv_layers {
            let bytes = w.footprint_bytes() + fp32_bytes(b);
            fp.conv_bytes += bytes;
            if w.len() + b.len() >= LARGE_LAYER_PARAMS {
                fp.large_conv_bytes += bytes;
            }
        }
        let lstm: usize = self
            .lstm
            .iter()
            .map(|l| fp32_bytes(&l.w_ih) + fp32_bytes(&l.w_hh) + fp32_bytes(&l.bias))
            .sum();
        fp.total_bytes = fp.conv_bytes + lstm;
        fp
    }
}

/// `||a - b|| / ||b||`.
pub fn relative_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (num / den).sqrt()
    }
}

/// Relative-L2 gate for quantized-vs-FP32 outputs.
pub const FIDELITY_TOLERANCE: f64 = 0.05;
