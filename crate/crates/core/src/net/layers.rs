use serde::{Deserialize, Serialize};

use super::kernels::{correlate, correlate_adjoint, correlate_weight_grad};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

impl Activation {
    fn apply(self, t: &mut Tensor) {
        match self {
            Activation::Relu => t.data_mut().iter_mut().for_each(|v| *v = v.max(0.0)),
        }
    }

    /// Masks `grad` in place given the activation's output.
    fn backprop(self, output: &Tensor, grad: &mut Tensor) {
        match self {
            Activation::Relu => grad
                .data_mut()
                .iter_mut()
                .zip(output.data())
                .for_each(|(g, &y)| {
                    if y <= 0.0 {
                        *g = 0.0
                    }
                }),
        }
    }
}

/// Strided encoder convolution: kernel `[out, in, k]`, bias `[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
}

/// Transposed decoder convolution: kernel `[in, out, k]`, bias `[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeconvLayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
}

/// Unidirectional LSTM layer, gate order (input, forget, cell, output).
/// `w_ih` is `[4H, I]`, `w_hh` is `[4H, H]`, `bias` is `[4H]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub bias: Tensor,
}

impl LstmParams {
    pub fn hidden(&self) -> usize {
        self.w_hh.dim(1)
    }

    pub fn input_size(&self) -> usize {
        self.w_ih.dim(1)
    }
}

fn add_bias(t: &mut Tensor, bias: &Tensor) {
    for (o, &b) in bias.data().iter().enumerate() {
        t.row_mut(o).iter_mut().for_each(|v| *v += b);
    }
}

fn bias_grad(g: &Tensor) -> Tensor {
    let rows = g.dim(0);
    Tensor::new((0..rows).map(|r| g.row(r).iter().sum()).collect(), vec![rows]).unwrap()
}

impl ConvLayerParams {
    pub fn out_channels(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim(2)
    }

    pub fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.shape().len() != 2 || input.dim(0) != self.in_channels() {
            return Err(Error::ShapeMismatch(format!(
                "conv expects [{}, T], got {:?}",
                self.in_channels(),
                input.shape()
            )));
        }
        if input.dim(1) < self.kernel() {
            return Err(Error::ShapeMismatch(format!(
                "conv input length {} shorter than kernel {}",
                input.dim(1),
                self.kernel()
            )));
        }
        Ok(())
    }

    /// `(x * h) + b` without activation.
    pub fn linear(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let mut out = correlate(input, &self.weight, self.stride);
        add_bias(&mut out, &self.bias);
        Ok(out)
    }
}

/// `relu((x * h) + b)` with valid, strided correlation;
/// `T_out = floor((T - k) / stride) + 1`.
pub fn conv1d_forward(input: &Tensor, layer: &ConvLayerParams) -> Result<Tensor> {
    let mut out = layer.linear(input)?;
    Activation::Relu.apply(&mut out);
    Ok(out)
}

pub struct ConvGrads {
    pub weight: Tensor,
    pub bias: Tensor,
    pub input: Tensor,
}

/// Backward through `conv1d_forward`; `output` is that call's result.
pub fn conv1d_backward(
    input: &Tensor,
    output: &Tensor,
    grad_output: &Tensor,
    layer: &ConvLayerParams,
) -> ConvGrads {
    let mut g = grad_output.clone();
    Activation::Relu.backprop(output, &mut g);
    let mut input_grad = correlate_adjoint(&g, &layer.weight, layer.stride);
    if input_grad.dim(1) != input.dim(1) {
        // trailing samples that no window reached
        input_grad = input_grad.pad_time(input.dim(1));
    }
    ConvGrads {
        weight: correlate_weight_grad(input, &g, layer.kernel(), layer.stride),
        bias: bias_grad(&g),
        input: input_grad,
    }
}

impl DeconvLayerParams {
    pub fn in_channels(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim(2)
    }

    pub fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.shape().len() != 2 || input.dim(0) != self.in_channels() || input.dim(1) == 0 {
            return Err(Error::ShapeMismatch(format!(
                "deconv expects [{}, T>0], got {:?}",
                self.in_channels(),
                input.shape()
            )));
        }
        Ok(())
    }

    pub fn linear(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let mut out = correlate_adjoint(input, &self.weight, self.stride);
        add_bias(&mut out, &self.bias);
        Ok(out)
    }
}

/// Transposed convolution `(y * h') + b'`, the adjoint of the encoder's linear
/// map; `T_out = (T - 1) * stride + k`. ReLU only when `apply_activation`.
pub fn deconv1d_forward(
    input: &Tensor,
    layer: &DeconvLayerParams,
    apply_activation: bool,
) -> Result<Tensor> {
    let mut out = layer.linear(input)?;
    if apply_activation {
        Activation::Relu.apply(&mut out);
    }
    Ok(out)
}

pub fn deconv1d_backward(
    input: &Tensor,
    output: &Tensor,
    grad_output: &Tensor,
    layer: &DeconvLayerParams,
    applied_activation: bool,
) -> ConvGrads {
    let mut g = grad_output.clone();
    if applied_activation {
        Activation::Relu.backprop(output, &mut g);
    }
    ConvGrads {
        // deconv weight is [in, out, k]: same layout as a conv from `out` to `in`
        weight: correlate_weight_grad(&g, input, layer.kernel(), layer.stride),
        bias: bias_grad(&g),
        input: correlate(&g, &layer.weight, layer.stride),
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-step activations kept for backpropagation through time.
#[derive(Debug, Clone)]
pub struct LstmCache {
    /// Time-major input `[T][I]`.
    inputs: Vec<Vec<f64>>,
    /// Activated gates `[T][4H]` in (i, f, g, o) order.
    gates: Vec<Vec<f64>>,
    cells: Vec<Vec<f64>>,
    hiddens: Vec<Vec<f64>>,
}

fn matvec_into(w: &Tensor, x: &[f64], out: &mut [f64]) {
    let cols = w.dim(1);
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w.data()[r * cols..(r + 1) * cols];
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn lstm_check(seq: &Tensor, p: &LstmParams) -> Result<()> {
    let h = p.hidden();
    if p.w_ih.dim(0) != 4 * h || p.w_hh.dim(0) != 4 * h || p.bias.len() != 4 * h {
        return Err(Error::ShapeMismatch("lstm gate dimension must be 4*hidden".into()));
    }
    if seq.shape().len() != 2 || seq.dim(0) != p.input_size() {
        return Err(Error::ShapeMismatch(format!(
            "lstm expects [{}, T], got {:?}",
            p.input_size(),
            seq.shape()
        )));
    }
    Ok(())
}

/// Standard LSTM recurrence from zero initial state:
/// `c_t = f*c_{t-1} + i*g`, `h_t = o*tanh(c_t)`. Returns `[H, T]`.
pub fn lstm_forward(seq: &Tensor, params: &LstmParams) -> Result<Tensor> {
    lstm_forward_cached(seq, params).map(|(out, _)| out)
}

pub fn lstm_forward_cached(seq: &Tensor, params: &LstmParams) -> Result<(Tensor, LstmCache)> {
    lstm_check(seq, params)?;
    let h = params.hidden();
    let (n_in, steps) = (seq.dim(0), seq.dim(1));
    let inputs: Vec<Vec<f64>> = (0..steps)
        .map(|t| (0..n_in).map(|c| seq.row(c)[t]).collect())
        .collect();
    let mut gates = Vec::with_capacity(steps);
    let mut cells = Vec::with_capacity(steps);
    let mut hiddens: Vec<Vec<f64>> = Vec::with_capacity(steps);
    let zeros = vec![0.0; h];
    for x in &inputs {
        let h_prev = hiddens.last().unwrap_or(&zeros);
        let c_prev = cells.last().unwrap_or(&zeros);
        let mut z = params.bias.data().to_vec();
        matvec_into(&params.w_ih, x, &mut z);
        matvec_into(&params.w_hh, h_prev, &mut z);
        for j in 0..h {
            z[j] = sigmoid(z[j]);
            z[h + j] = sigmoid(z[h + j]);
            z[2 * h + j] = z[2 * h + j].tanh();
            z[3 * h + j] = sigmoid(z[3 * h + j]);
        }
        let c: Vec<f64> = (0..h).map(|j| z[h + j] * c_prev[j] + z[j] * z[2 * h + j]).collect();
        let hn: Vec<f64> = (0..h).map(|j| z[3 * h + j] * c[j].tanh()).collect();
        gates.push(z);
        cells.push(c);
        hiddens.push(hn);
    }
    let mut out = Tensor::zeros(&[h, steps]);
    for (t, hv) in hiddens.iter().enumerate() {
        for (j, &v) in hv.iter().enumerate() {
            out.row_mut(j)[t] = v;
        }
    }
    Ok((
        out,
        LstmCache {
            inputs,
            gates,
            cells,
            hiddens,
        },
    ))
}

pub struct LstmGrads {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub bias: Tensor,
    pub input: Tensor,
}

/// Backpropagation through time for [`lstm_forward_cached`].
pub fn lstm_backward(cache: &LstmCache, grad_output: &Tensor, params: &LstmParams) -> LstmGrads {
    let h = params.hidden();
    let n_in = params.input_size();
    let steps = cache.inputs.len();
    let mut gw_ih = Tensor::zeros(&[4 * h, n_in]);
    let mut gw_hh = Tensor::zeros(&[4 * h, h]);
    let mut gb = vec![0.0; 4 * h];
    let mut g_in = Tensor::zeros(&[n_in, steps]);
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dz = vec![0.0; 4 * h];
    let zeros = vec![0.0; h];
    for t in (0..steps).rev() {
        let gates = &cache.gates[t];
        let c = &cache.cells[t];
        let c_prev = if t > 0 { &cache.cells[t - 1] } else { &zeros };
        let h_prev = if t > 0 { &cache.hiddens[t - 1] } else { &zeros };
        for j in 0..h {
            let (i, f, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
            let tc = c[j].tanh();
            let dh = grad_output.row(j)[t] + dh_next[j];
            let dc = dh * o * (1.0 - tc * tc) + dc_next[j];
            dz[j] = dc * g * i * (1.0 - i);
            dz[h + j] = dc * c_prev[j] * f * (1.0 - f);
            dz[2 * h + j] = dc * i * (1.0 - g * g);
            dz[3 * h + j] = dh * tc * o * (1.0 - o);
            dc_next[j] = dc * f;
        }
        let x = &cache.inputs[t];
        for (r, &d) in dz.iter().enumerate() {
            gb[r] += d;
            if d == 0.0 {
                continue;
            }
            let row = &mut gw_ih.data_mut()[r * n_in..(r + 1) * n_in];
            row.iter_mut().zip(x).for_each(|(a, b)| *a += d * b);
            let row = &mut gw_hh.data_mut()[r * h..(r + 1) * h];
            row.iter_mut().zip(h_prev).for_each(|(a, b)| *a += d * b);
        }
        // dx = W_ih^T dz, dh_prev = W_hh^T dz
        for c_idx in 0..n_in {
            g_in.row_mut(c_idx)[t] = (0..4 * h).map(|r| params.w_ih.data()[r * n_in + c_idx] * dz[r]).sum();
        }
        for (j, slot) in dh_next.iter_mut().enumerate() {
            *slot = (0..4 * h).map(|r| params.w_hh.data()[r * h + j] * dz[r]).sum();
        }
    }
    LstmGrads {
        w_ih: gw_ih,
        w_hh: gw_hh,
        bias: Tensor::new(gb, vec![4 * h]).unwrap(),
        input: g_in,
    }
}
