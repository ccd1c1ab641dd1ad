//! Shard IO, scorer transports, pipeline orchestration and the `forge` CLI
//! around `forge-core`.

pub mod cli;
pub mod config;
pub mod embeddings;
pub mod error;
pub mod index_io;
pub mod media;
pub mod pipeline;
pub mod report;
pub mod scorer_client;
pub mod shard;
pub mod synth;

pub use error::{ForgeError, Result};
