//! Trackwise polyphonic sound event localization and detection.
//!
//! A self-contained pipeline: synthetic first-order-ambisonics scene
//! generation, log-mel + intensity-vector features, a dual-branch
//! convolutional network with per-track multi-head self-attention and
//! cross-stitch soft parameter sharing, permutation-invariant training, and
//! joint localization/detection scoring. The `seld` binary drives the whole
//! pipeline; see the crate README.

pub mod cli;
pub mod config;
pub mod data;
pub mod diffcore;
pub mod error;
pub mod features;
pub mod gradsuite;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod trainer;
pub mod util;

pub use error::{Result, SeldError};
