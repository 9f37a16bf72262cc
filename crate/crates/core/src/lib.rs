//! Algorithmic core of a flow-based end-to-end text-to-speech stack, built
//! for desk-scale verification: a reverse-mode autodiff tensor engine with
//! AdamW, spectrogram DSP, monotonic alignment search with an exhaustive
//! oracle, invertible coupling flows, the full training-loss family, and a
//! trainable flow-based stochastic duration predictor.
//!
//! All numeric code is generic over the scalar type via [`scalar::Scalar`];
//! the aliases at the crate root pin the default 64-bit instantiation.

pub mod align;
pub mod config;
pub mod dist;
pub mod dsp;
pub mod error;
pub mod flows;
pub mod losses;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod sdp;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};

/// Default 64-bit tensor.
pub type Tensor = tensor::Tensor<f64>;
/// Default 64-bit spectrogram.
pub type Spectrogram = dsp::Spectrogram<f64>;
/// Default 64-bit waveform.
pub type Waveform = dsp::Waveform<f64>;
/// Default 64-bit STFT configuration.
pub type StftConfig = dsp::StftConfig<f64>;
/// Default 64-bit mel configuration.
pub type MelConfig = dsp::MelConfig<f64>;
/// Default 64-bit likelihood matrix.
pub type LikelihoodMatrix = align::LikelihoodMatrix<f64>;
/// Default 64-bit diagonal Gaussian.
pub type DiagGaussian = dist::DiagGaussian<f64>;
/// Default 64-bit flow stack.
pub type FlowStack = flows::FlowStack<f64>;
/// Default 64-bit duration predictor.
pub type StochasticDurationPredictor = sdp::StochasticDurationPredictor<f64>;
/// Default 64-bit optimizer.
pub type AdamW = tensor::AdamW<f64>;
