//! Core of the assertkit anti-spoofing pipeline.
//!
//! Everything in this crate is pure computation over in-memory buffers:
//! acoustic features, the segment/padding front end, a small reverse-mode
//! autodiff engine with the layers the five countermeasure networks need,
//! training and model selection, EER / t-DCF scoring, and logistic
//! regression calibration with greedy fusion. File formats, audio IO and
//! the command line live in the `assertkit` crate.
//!
//! The crate is `no_std` and only needs an allocator.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod audio;
pub mod dsp;
mod error;
pub mod featmap;
pub mod fusion;
pub mod metrics;
pub mod models;
pub mod nn;
mod real;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
pub use real::Real;
