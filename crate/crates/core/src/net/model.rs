use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    conv1d_backward, conv1d_forward, deconv1d_backward, deconv1d_forward, lstm_backward,
    lstm_forward_cached, Activation, ConvLayerParams, DeconvLayerParams, LstmCache, LstmParams,
};
use super::Tensor;
use crate::error::{Error, Result};

/// Architecture hyperparameters. Channel count of encoder level `i` is
/// `base_channels * 2^i`; the LSTM width must equal the deepest level's.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub lstm_layers: usize,
    pub lstm_hidden: usize,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            base_channels: 16,
            kernel_size: 8,
            stride: 4,
            lstm_layers: 2,
            lstm_hidden: 128,
            activation: Activation::Relu,
        }
    }
}

impl ModelConfig {
    /// Small preset used for desk-scale training runs.
    pub fn tiny() -> Self {
        Self {
            depth: 2,
            base_channels: 8,
            kernel_size: 8,
            stride: 4,
            lstm_layers: 1,
            lstm_hidden: 16,
            activation: Activation::Relu,
        }
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.channels(self.depth - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.depth < 1 {
            return fail("depth must be >= 1".into());
        }
        if self.stride < 1 || self.kernel_size < 1 || self.base_channels < 1 {
            return fail("stride, kernel_size and base_channels must be >= 1".into());
        }
        if self.depth > 16 || self.base_channels.checked_shl(self.depth as u32 - 1).is_none() {
            return fail("depth too large".into());
        }
        if self.lstm_layers > 0 && self.lstm_hidden != self.bottleneck_channels() {
            return fail(format!(
                "lstm_hidden {} must equal bottleneck channels {}",
                self.lstm_hidden,
                self.bottleneck_channels()
            ));
        }
        Ok(())
    }

    /// Smallest length `>= len` that every encoder level divides exactly, so
    /// the decoder reproduces it: run the conv length formula up with ceiling,
    /// then the transposed-conv formula back down.
    pub fn valid_length(&self, len: usize) -> usize {
        let (k, s) = (self.kernel_size, self.stride);
        let mut l = len.max(1);
        for _ in 0..self.depth {
            l = if l <= k { 1 } else { (l - k).div_ceil(s) + 1 };
        }
        for _ in 0..self.depth {
            l = (l - 1) * s + k;
        }
        l
    }
}

static NEXT_STAMP: AtomicU64 = AtomicU64::new(1);

fn fresh_stamp() -> u64 {
    NEXT_STAMP.fetch_add(1, Ordering::Relaxed)
}

/// Encoder stack, LSTM bottleneck and decoder stack. Encoder level `i` feeds
/// decoder layer `depth - 1 - i` through an additive skip connection.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    encoder: Vec<ConvLayerParams>,
    lstm: Vec<LstmParams>,
    decoder: Vec<DeconvLayerParams>,
    stamp: u64,
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.encoder == other.encoder
            && self.lstm == other.lstm
            && self.decoder == other.decoder
    }
}

fn uniform(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| if bound > 0.0 { rng.gen_range(-bound..bound) } else { 0.0 })
        .collect();
    Tensor::new(data, shape.to_vec()).unwrap()
}

/// Parameter tensor shapes in declaration order.
pub fn parameter_shapes(cfg: &ModelConfig) -> Vec<Vec<usize>> {
    let k = cfg.kernel_size;
    let mut shapes = Vec::new();
    for i in 0..cfg.depth {
        let c_in = if i == 0 { 1 } else { cfg.channels(i - 1) };
        shapes.push(vec![cfg.channels(i), c_in, k]);
        shapes.push(vec![cfg.channels(i)]);
    }
    let h = cfg.lstm_hidden;
    for _ in 0..cfg.lstm_layers {
        shapes.push(vec![4 * h, h]);
        shapes.push(vec![4 * h, h]);
        shapes.push(vec![4 * h]);
    }
    for j in 0..cfg.depth {
        let level = cfg.depth - 1 - j;
        let c_out = if level == 0 { 1 } else { cfg.channels(level - 1) };
        shapes.push(vec![cfg.channels(level), c_out, k]);
        shapes.push(vec![c_out]);
    }
    shapes
}

impl Model {
    /// Weights ~ U(-a, a) with `a = sqrt(1/fan_in)`, biases zero. `fan_in` is
    /// `in_channels * kernel` for (transposed) convolutions and `hidden` for
    /// LSTM matrices.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = parameter_shapes(&cfg)
            .into_iter()
            .map(|shape| {
                if shape.len() == 1 {
                    Tensor::zeros(&shape)
                } else {
                    let fan_in = if shape.len() == 3 { shape[1] * shape[2] } else { cfg.lstm_hidden };
                    uniform(&shape, (1.0 / fan_in as f64).sqrt(), &mut rng)
                }
            })
            .collect();
        Self::from_tensors(cfg, tensors)
    }

    /// Assembles a model from tensors in declaration order.
    pub fn from_tensors(cfg: ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        cfg.validate()?;
        let shapes = parameter_shapes(&cfg);
        if tensors.len() != shapes.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} tensors, got {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for (t, s) in tensors.iter().zip(&shapes) {
            if t.shape() != s.as_slice() {
                return Err(Error::ShapeMismatch(format!(
                    "tensor shape {:?}, expected {:?}",
                    t.shape(),
                    s
                )));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().unwrap();
        let encoder = (0..cfg.depth)
            .map(|_| ConvLayerParams {
                weight: next(),
                bias: next(),
                stride: cfg.stride,
            })
            .collect();
        let lstm = (0..cfg.lstm_layers)
            .map(|_| LstmParams {
                w_ih: next(),
                w_hh: next(),
                bias: next(),
            })
            .collect();
        let decoder = (0..cfg.depth)
            .map(|_| DeconvLayerParams {
                weight: next(),
                bias: next(),
                stride: cfg.stride,
            })
            .collect();
        Ok(Self {
            config: cfg,
            encoder,
            lstm,
            decoder,
            stamp: fresh_stamp(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn encoder(&self) -> &[ConvLayerParams] {
        &self.encoder
    }

    pub fn lstm(&self) -> &[LstmParams] {
        &self.lstm
    }

    pub fn decoder(&self) -> &[DeconvLayerParams] {
        &self.decoder
    }

    /// All parameter tensors in declaration order: encoder (weight, bias),
    /// LSTM (w_ih, w_hh, bias), decoder (weight, bias).
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = Vec::new();
        for l in &self.encoder {
            v.extend([&l.weight, &l.bias]);
        }
        for l in &self.lstm {
            v.extend([&l.w_ih, &l.w_hh, &l.bias]);
        }
        for l in &self.decoder {
            v.extend([&l.weight, &l.bias]);
        }
        v
    }

    /// Mutable parameter access; invalidates outstanding forward caches.
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.stamp = fresh_stamp();
        let mut v: Vec<&mut Tensor> = Vec::new();
        for l in &mut self.encoder {
            v.extend([&mut l.weight, &mut l.bias]);
        }
        for l in &mut self.lstm {
            v.extend([&mut l.w_ih, &mut l.w_hh, &mut l.bias]);
        }
        for l in &mut self.decoder {
            v.extend([&mut l.weight, &mut l.bias]);
        }
        v
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn check_waveform(&self, wave: &Tensor) -> Result<()> {
        if wave.shape().len() != 2 || wave.dim(0) != 1 {
            return Err(Error::ShapeMismatch(format!(
                "model expects [1, T], got {:?}",
                wave.shape()
            )));
        }
        if wave.dim(1) == 0 {
            return Err(Error::TooShort { needed: 1, got: 0 });
        }
        Ok(())
    }

    /// Maps a `[1, T]` waveform to a `[1, T]` estimate. Input is zero padded to
    /// [`ModelConfig::valid_length`] and the output trimmed back.
    pub fn forward(&self, wave: &Tensor) -> Result<Tensor> {
        self.forward_cached(wave).map(|(y, _)| y)
    }

    pub fn enhance(&self, samples: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(&Tensor::from_signal(samples))?.into_data())
    }

    pub fn forward_cached(&self, wave: &Tensor) -> Result<(Tensor, ForwardCache)> {
        self.check_waveform(wave)?;
        let t = wave.dim(1);
        let padded = wave.pad_time(self.config.valid_length(t));
        let mut enc_outputs: Vec<Tensor> = Vec::with_capacity(self.config.depth);
        let mut x = padded.clone();
        for layer in &self.encoder {
            let y = conv1d_forward(&x, layer)?;
            enc_outputs.push(y.clone());
            x = y;
        }
        let mut lstm_caches = Vec::with_capacity(self.lstm.len());
        for layer in &self.lstm {
            let (y, cache) = lstm_forward_cached(&x, layer)?;
            lstm_caches.push(cache);
            x = y;
        }
        let depth = self.config.depth;
        let mut dec_inputs = Vec::with_capacity(depth);
        let mut dec_outputs = Vec::with_capacity(depth);
        for (j, layer) in self.decoder.iter().enumerate() {
            let mut input = x;
            input.add_assign(&enc_outputs[depth - 1 - j]);
            let y = deconv1d_forward(&input, layer, j + 1 < depth)?;
            dec_inputs.push(input);
            dec_outputs.push(y.clone());
            x = y;
        }
        let out = x.truncate_time(t);
        Ok((
            out,
            ForwardCache {
                stamp: self.stamp,
                input_len: t,
                padded,
                enc_outputs,
                lstm_caches,
                dec_inputs,
                dec_outputs,
            },
        ))
    }

    /// Reverse-mode gradients of `<grad_output, forward(x)>` for every
    /// parameter and for the input waveform.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &Tensor) -> Result<Gradients> {
        if cache.stamp != self.stamp {
            return Err(Error::StaleCache);
        }
        if grad_output.shape() != [1, cache.input_len] {
            return Err(Error::ShapeMismatch(format!(
                "grad_output {:?}, expected [1, {}]",
                grad_output.shape(),
                cache.input_len
            )));
        }
        let depth = self.config.depth;
        let mut g = grad_output.pad_time(cache.padded.dim(1));
        let mut dec_grads = Vec::with_capacity(depth);
        let mut skip_grads: Vec<Option<Tensor>> = vec![None; depth];
        for j in (0..depth).rev() {
            let layer = &self.decoder[j];
            let grads = deconv1d_backward(
                &cache.dec_inputs[j],
                &cache.dec_outputs[j],
                &g,
                layer,
                j + 1 < depth,
            );
            dec_grads.push((grads.weight, grads.bias));
            // decoder input = previous output + encoder skip
            skip_grads[depth - 1 - j] = Some(grads.input.clone());
            g = grads.input;
        }
        dec_grads.reverse();

        let mut lstm_grads = Vec::with_capacity(self.lstm.len());
        for (layer, lc) in self.lstm.iter().zip(&cache.lstm_caches).rev() {
            let grads = lstm_backward(lc, &g, layer);
            lstm_grads.push((grads.w_ih, grads.w_hh, grads.bias));
            g = grads.input;
        }
        lstm_grads.reverse();

        let mut enc_grads = Vec::with_capacity(depth);
        for i in (0..depth).rev() {
            if let Some(skip) = &skip_grads[i] {
                g.add_assign(skip);
            }
            let input = if i == 0 { &cache.padded } else { &cache.enc_outputs[i - 1] };
            let grads = conv1d_backward(input, &cache.enc_outputs[i], &g, &self.encoder[i]);
            enc_grads.push((grads.weight, grads.bias));
            g = grads.input;
        }
        enc_grads.reverse();

        let mut params = Vec::new();
        for (w, b) in enc_grads {
            params.extend([w, b]);
        }
        for (wi, wh, b) in lstm_grads {
            params.extend([wi, wh, b]);
        }
        for (w, b) in dec_grads {
            params.extend([w, b]);
        }
        Ok(Gradients {
            params,
            input: g.truncate_time(cache.input_len),
        })
    }
}

/// Activations from one [`Model::forward_cached`] call.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    stamp: u64,
    input_len: usize,
    padded: Tensor,
    enc_outputs: Vec<Tensor>,
    lstm_caches: Vec<LstmCache>,
    dec_inputs: Vec<Tensor>,
    dec_outputs: Vec<Tensor>,
}

/// Parameter gradients in declaration order, plus the input gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<Tensor>,
    pub input: Tensor,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Self {
            params: model.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect(),
            input: Tensor::zeros(&[1, 0]),
        }
    }

    /// Accumulates parameter gradients (the input gradient is not summed).
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.params.iter_mut().for_each(|t| t.scale(s));
    }
}

impl Model {
    /// Pre-activation outputs of every ReLU layer (encoder layers, then all
    /// decoder layers except the last), in forward order.
    pub fn relu_preactivations(&self, wave: &Tensor) -> Result<Vec<Tensor>> {
        self.check_waveform(wave)?;
        let depth = self.config.depth;
        let mut pre = Vec::new();
        let mut enc = Vec::new();
        let mut x = wave.pad_time(self.config.valid_length(wave.dim(1)));
        for layer in &self.encoder {
            let p = layer.linear(&x)?;
            x = p.clone();
            x.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            pre.push(p);
            enc.push(x.clone());
        }
        for layer in &self.lstm {
            x = super::layers::lstm_forward(&x, layer)?;
        }
        for (j, layer) in self.decoder.iter().enumerate() {
            x.add_assign(&enc[depth - 1 - j]);
            let p = layer.linear(&x)?;
            x = p.clone();
            if j + 1 < depth {
                x.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
                pre.push(p);
            }
        }
        Ok(pre)
    }

    /// Index into [`Model::tensors`] of the bias belonging to the `n`-th ReLU
    /// layer as ordered by [`Model::relu_preactivations`].
    pub fn relu_bias_index(&self, n: usize) -> usize {
        let depth = self.config.depth;
        if n < depth {
            2 * n + 1
        } else {
            2 * depth + 3 * self.config.lstm_layers + 2 * (n - depth) + 1
        }
    }
}
