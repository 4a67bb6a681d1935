//! Command-line front end for cross-modal alignment experiments: file
//! formats, checkpoints, configuration and the experiment lifecycle.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod summarizer;
