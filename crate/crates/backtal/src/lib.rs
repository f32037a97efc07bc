//! File formats, training runner and command-line workflows built on
//! [`backtal_core`].

pub mod ablate;
pub mod cli;
pub mod dataset;
pub mod formats;
pub mod infer;
pub mod metrics;
pub mod train;

pub use backtal_core as core;
