//! Synthetic anomaly toolkit for self-supervised anomaly localisation.
//!
//! Generates, calibrates and labels patch-based synthetic anomalies (FPI,
//! CutPaste, PII, NSA and NSA with mixed gradients) on n-dimensional images,
//! plans dataset-adaptive parameters, samples training patches and evaluates
//! pixel-wise anomaly scores.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod foreground;
pub mod image;
pub mod io;
pub mod patch;
pub mod plan;
pub mod poisson;
pub mod sampling;
pub mod tasks;
mod util;

pub use error::{Error, Result};
pub use image::{AnomalyMap, ForegroundMask, ForegroundStats, NdImage};
pub use util::{mix_seed, splitmix64};
