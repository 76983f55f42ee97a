//! File formats, parallel evaluation, and the command-line harness around
//! `gatecraft-core`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod parallel;
pub mod report;

pub use error::{HarnessError, Result};
