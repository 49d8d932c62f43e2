//! Waveform-domain encoder/LSTM/decoder denoiser with exact reverse-mode
//! gradients.

pub mod checkpoint;
mod kernels;
mod layers;
mod model;
mod tensor;

pub use kernels::{correlate, correlate_adjoint, correlate_weight_grad};
pub use layers::{
    conv1d_backward, conv1d_forward, deconv1d_backward, deconv1d_forward, lstm_backward,
    lstm_forward, lstm_forward_cached, Activation, ConvGrads, ConvLayerParams, DeconvLayerParams,
    LstmCache, LstmGrads, LstmParams,
};
pub use model::{parameter_shapes, ForwardCache, Gradients, Model, ModelConfig};
pub use tensor::Tensor;
