//! Chunkwise streaming singing-voice synthesis.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`]: dense `f32` arrays and the numeric kernels;
//! * [`conv`]: causal convolutions with offline, streaming and
//!   natural-padding evaluation;
//! * [`attention`]: the chunkwise streaming attention decoder and its
//!   full-attention counterpart;
//! * [`acoustic`]: score handling, posterior encoder, latent sampling and
//!   loss arithmetic;
//! * [`vocoder`]: the causal upsampling generator;
//! * [`metrics`]: mel spectrogram and objective metrics;
//! * [`pipeline`]: model bundles, file formats, end-to-end synthesis,
//!   benchmarking and self-verification.

pub mod acoustic;
pub mod attention;
pub mod conv;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod tensor;
pub mod vocoder;

pub use error::{Error, Result};
pub use tensor::Tensor;
