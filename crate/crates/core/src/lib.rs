//! Single-task Reptile training for low-resource sequence classification.
//!
//! The crate bundles everything needed to compare Reptile against plain
//! gradient-descent training on a synthetic speaker-variation benchmark:
//!
//! * [`tensor`], [`tape`], [`gradcheck`]: `f64` tensors with tape-based
//!   reverse-mode differentiation and a finite-difference checker.
//! * [`model`]: stacked GRU encoder, max-pool over time, MLP decoder.
//! * [`optim`]: SGD and Adam steps, the Reptile episode loop, Lookahead and
//!   the plain baseline, all with early stopping.
//! * [`data`]: benchmark generator and speaker-disjoint splitting.
//! * [`stats`]: accuracy, paired t-test, gradient alignment, curve smoothness.

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod stats;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{ModelConfig, SpeakerId, Utterance};
pub use tensor::{GradientSet, ParameterSet, Tensor};
