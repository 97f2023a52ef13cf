//! Subject-aligned EEG decoding at desk scale.
//!
//! The crate bundles everything needed to train and evaluate the aligned
//! inception-style decoder on multi-subject trial data:
//!
//! * [`tensor`] — dense f64 tensors with reverse-mode autodiff
//! * [`dsp`] — Butterworth/notch filtering, resampling, referencing
//! * [`align`] — per-subject statistical alignment and deep-set alignment
//! * [`model`] — the sleep / motor-imagery model variants and checkpoints
//! * [`datapipe`] — trial containers, folds, sampling, synthetic data
//! * [`training`] — losses, Adam, UAR, the cross-validation driver
//!
//! Everything is deterministic: random draws come from named counter-based
//! streams ([`rng`]), so identical seeds give bitwise-identical artifacts
//! regardless of thread count.

pub mod align;
pub mod datapipe;
pub mod dsp;
pub mod error;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;

#[cfg(test)]
pub(crate) mod testsupport;
