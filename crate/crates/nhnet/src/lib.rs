//! File formats, checkpoints and the `nhnet` command line built on
//! [`nhnet_core`].

pub use nhnet_core as core;

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod records;
pub mod run;

pub use checkpoint::Checkpoint;
pub use error::{CliError, Result};
