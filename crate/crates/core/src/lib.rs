//! # cortexdec-core
//!
//! Subject-independent decoding of spoken-word EEG with a skip-connected
//! 1-D convolutional network.
//!
//! The crate is organised bottom-up:
//! - [`signal`]: Butterworth band-pass design, zero-phase filtering, trial
//!   epoching with baseline correction, channel selection.
//! - [`tensor`]: a small reverse-mode autodiff engine over dense tensors with
//!   exactly the layers the decoder needs.
//! - [`model`]: the 5-block skip-connected encoder and 3-layer classifier head.
//! - [`training`]: Adam, early stopping, subject-grouped folds, metrics and the
//!   skip/no-skip ablation.
//! - [`data`]: the `CDT1` dataset container, class vocabulary and a synthetic
//!   EEG corpus generator.

pub mod data;
pub mod model;
pub mod seed;
pub mod signal;
pub mod tensor;
pub mod training;

pub use data::{ClassVocabulary, SynthConfig, TrialSet};
pub use model::{EncoderConfig, SkipCnnModel};
pub use signal::{BiquadCascade, PreprocessConfig, RawRecording};
pub use tensor::{Scalar, Tape, Tensor, Var};
pub use training::{AdamState, FoldPlan, Grouping, Metrics, TrainConfig};
