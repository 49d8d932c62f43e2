//! Speech enhancement toolkit: SNR-controlled noisy-corpus synthesis, a
//! waveform-domain encoder/LSTM/decoder denoiser trained from scratch, dynamic
//! INT8 quantization, STOI/SI-SNR evaluation and a latency/footprint harness.

pub mod audio_io;
pub mod bench;
pub mod config;
pub mod dataset;
pub mod dsp;
pub mod error;
pub mod metrics;
pub mod net;
pub mod par;
pub mod quant;
pub mod synthetic;
pub mod train;

pub use audio_io::AudioClip;
pub use error::{Error, Result};
pub use par::Exec;
