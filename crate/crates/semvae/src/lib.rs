//! File formats, dataset tooling, the `semvae` command line and the HTTP
//! editing service built on `semvae-core`.

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod edit;
pub mod error;
pub mod io;
pub mod server;

pub use error::{CliError, Result};
