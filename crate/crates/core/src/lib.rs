//! Contrastive positive sample propagation for audio-visual event
//! localization.
//!
//! The pipeline: audio-guided visual attention and per-modality
//! bidirectional LSTMs ([`encoder`]), cross-modal positive sample
//! propagation ([`psp`]), segment- and video-level contrastive objectives
//! ([`contrast`]), classification heads ([`heads`]), the staged training
//! protocol ([`trainer`]) and clustering diagnostics ([`eval`]).

pub mod cli;
pub mod contrast;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod heads;
pub mod model;
pub mod nn;
pub mod psp;
pub mod tensor_io;
pub mod trainer;

pub use error::{Error, Result};
