//! The three linear maps behind every (transposed) convolution.
//!
//! `correlate` is the valid, strided cross-correlation used by encoder
//! layers; `correlate_adjoint` is its exact adjoint and doubles as the
//! transposed convolution; `correlate_weight_grad` is the derivative of
//! `correlate` with respect to the kernel.

use super::Tensor;

/// `out[o, t] = sum_{c,k} w[o, c, k] * x[c, t*stride + k]`, with
/// `T_out = (T - K) / stride + 1`. `w` is `[C_out, C_in, K]`.
pub fn correlate(x: &Tensor, w: &Tensor, stride: usize) -> Tensor {
    let (c_out, c_in, k) = (w.dim(0), w.dim(1), w.dim(2));
    let t_in = x.dim(1);
    let t_out = (t_in - k) / stride + 1;
    let mut out = Tensor::zeros(&[c_out, t_out]);
    let wd = w.data();
    for o in 0..c_out {
        let row = out.row_mut(o);
        for c in 0..c_in {
            let xr = x.row(c);
            for kk in 0..k {
                let wv = wd[(o * c_in + c) * k + kk];
                if wv == 0.0 {
                    continue;
                }
                for (t, r) in row.iter_mut().enumerate() {
                    *r += wv * xr[t * stride + kk];
                }
            }
        }
    }
    out
}

/// Adjoint of [`correlate`]: `out[c, t*stride + k] += w[o, c, k] * y[o, t]`.
/// Output length is `(T_y - 1) * stride + K`.
pub fn correlate_adjoint(y: &Tensor, w: &Tensor, stride: usize) -> Tensor {
    let (c_out, c_in, k) = (w.dim(0), w.dim(1), w.dim(2));
    let t_y = y.dim(1);
    let t_out = (t_y - 1) * stride + k;
    let mut out = Tensor::zeros(&[c_in, t_out]);
    let wd = w.data();
    for c in 0..c_in {
        let row = out.row_mut(c);
        for o in 0..c_out {
            let yr = y.row(o);
            for kk in 0..k {
                let wv = wd[(o * c_in + c) * k + kk];
                if wv == 0.0 {
                    continue;
                }
                for (t, &yv) in yr.iter().enumerate() {
                    row[t * stride + kk] += wv * yv;
                }
            }
        }
    }
    out
}

/// `gw[o, c, k] = sum_t g[o, t] * x[c, t*stride + k]`.
pub fn correlate_weight_grad(x: &Tensor, g: &Tensor, k: usize, stride: usize) -> Tensor {
    let (c_in, c_out) = (x.dim(0), g.dim(0));
    let mut gw = Tensor::zeros(&[c_out, c_in, k]);
    let gwd = gw.data_mut();
    for o in 0..c_out {
        let gr = g.row(o);
        for c in 0..c_in {
            let xr = x.row(c);
            for kk in 0..k {
                gwd[(o * c_in + c) * k + kk] = gr
                    .iter()
                    .enumerate()
                    .map(|(t, &gv)| gv * xr[t * stride + kk])
                    .sum();
            }
        }
    }
    gw
}
