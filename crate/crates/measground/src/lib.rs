//! File formats, annotator/judge clients and the batch CLI around
//! `measground-core`.
//!
//! - [`bundle`]: capture bundles (`mosaic.pgm` + `capture.json`).
//! - [`views`]: float-plane measurement views, proxy renders, lost-signal
//!   report files.
//! - [`manifest`]: JSON-lines manifests with stats sidecars.
//! - [`clients`]: HTTP and transcript-replay annotators and judges.
//! - [`cli`]: the `measground` subcommands.

pub mod bundle;
pub mod cli;
pub mod clients;
pub mod config;
pub mod error;
pub mod logging;
pub mod manifest;
pub mod pnm;
pub mod views;

pub use error::{Error, Result};
