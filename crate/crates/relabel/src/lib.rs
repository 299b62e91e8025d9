//! File formats, run directory, annotation service and CLI for the relabel
//! pipeline. The algorithms live in `relabel-core`; this crate moves their
//! inputs and outputs on and off disk and over HTTP.

pub mod cli;
pub mod config;
mod error;
pub mod io;
pub mod model_file;
pub mod rundir;
pub mod service;

pub use error::{Error, Result};
