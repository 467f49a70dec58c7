//! File formats, configuration and the command-line driver around
//! `evdemosaic-core`.

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod manifest;
pub mod plot;
pub mod report;

pub use error::{AppError, AppResult};
