//! Overlap-aware speaker diarization at desk scale.
//!
//! The crates in this workspace implement a complete pipeline: a power-set
//! label codec that folds multi-hot speaker activity into single class ids,
//! a sequence scorer built from feed-forward layers with learnable memory
//! taps, a synthetic overlapping-speech simulator, a deterministic trainer,
//! and diarization error rate tooling.

pub mod adam;
pub mod checkpoint;
pub mod datasim;
pub mod error;
pub mod gradcheck;
pub mod params;
pub mod metrics;
pub mod model;
pub mod postproc;
pub mod pse;
pub mod rttm;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamState};
pub use error::{Error, Result};
pub use gradcheck::grad_check;
pub use params::{BoundParams, ParamStore};
pub use pse::{
    num_classes, BinaryLabelMatrix, OverflowPolicy, PseCodec, PseLabelSequence,
};
pub use tape::{softmax_rows_value, Tape, Var};
pub use tensor::Tensor;
