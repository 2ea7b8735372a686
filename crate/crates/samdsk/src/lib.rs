//! File formats, run persistence and the `samdsk` command-line tool.
//!
//! Rasters use the little-endian `RAST` container ([`raster`]); proposals,
//! annotations, manifests and run state are JSON documents written with
//! sorted keys so identical inputs give identical bytes.

pub mod annotation;
pub mod cli;
pub mod error;
pub mod export;
pub mod json;
pub mod manifest;
pub mod proposals;
pub mod raster;
pub mod run;
pub mod source;
pub mod state;

pub use error::{IoError, Result};
