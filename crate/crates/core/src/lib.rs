//! Measurement-grounded vision-language data primitives.
//!
//! The crate is `no_std` (it needs `alloc`) and contains every pure
//! algorithm of the toolkit; file formats, network clients and the batch
//! CLI live in the companion `measground` crate.
//!
//! Pipeline, in data-flow order:
//!
//! - [`capture`]: RAW capture model, validation and synthetic scenes.
//! - [`meas_xyz`]: the RAW → linear XYZ observation operator.
//! - [`isp`]: exposure-conditioned proxy renderer (gain, matrix, clip,
//!   transfer, quantization) and exposure brackets.
//! - [`lost_signal`]: render inversion and unrecoverable-residual statistics.
//! - [`bracketsup`]: annotation over a bracket and candidate aggregation.
//! - [`dataset`]: score floors, placeholder removal and capped balancing.
//! - [`benchmark`]: grouped hold-out splits, leakage checks and the
//!   capability taxonomy.
//! - [`text_metrics`]: BLEU-4, ROUGE-L, judge clients and run evaluation.
//! - [`probe`]: metadata serialization and residual metadata conditioning
//!   with an analytic backward pass.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod benchmark;
pub mod bracketsup;
pub mod capture;
pub mod image;
pub mod dataset;
mod error;
pub mod isp;
pub mod linalg;
pub mod lost_signal;
pub mod meas_xyz;
pub mod mock;
pub mod probe;
pub mod text;
pub mod text_metrics;

pub use error::{Error, Result};
pub use linalg::Mat3;

/// Crate version, recorded in run logs.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
