//! Self-supervised channel in-painting for multi-antenna RF captures.
//!
//! Raw IQ frames are turned into standardized STFT tensors ([`dsp`]), one
//! antenna's channels are zeroed, and [`models::InpaintNet`] learns to
//! restore them. Its encoder is then copied into [`models::BandwidthNet`],
//! which regresses per-bin signal bandwidth. [`tensor`] is the small
//! reverse-mode autodiff engine underneath; [`synth`] generates labeled
//! captures and [`formats`] reads and writes them.

pub mod dsp;
pub mod error;
pub mod formats;
pub mod gradsuite;
pub mod models;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
