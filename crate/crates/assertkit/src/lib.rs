//! Files and command line around `assertkit-core`: WAV audio, protocol
//! files, the on-disk synthetic corpus, feature archives, checkpoints,
//! score files and the `assertkit` binary.
//!
//! Per-utterance work (corpus rendering, feature extraction, scoring) runs
//! on a rayon pool whose size is capped by `ASSERTKIT_THREADS`; results are
//! always written in protocol order.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
mod error;
pub mod features;
pub mod pool;
pub mod scores;
pub mod wav;

pub use assertkit_core as core;
pub use error::{Error, Result};
