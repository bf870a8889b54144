//! File formats, dataset IO and the command line for the HG-TNet classifier.
//!
//! The numerical work lives in `hgtnet-core`; this crate reads and writes
//! PPM images, dataset trees, config text, checkpoints and CSV artifacts,
//! and wires them into the `hgtnet` commands.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod csv;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod fsio;
pub mod ppm;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use error::{CheckpointError, HgtError, Result};
