//! Allocation-only building blocks for curating multimodal moderation corpora.
//!
//! Everything in this crate is a pure function of its inputs (plus an explicit
//! seed where sampling is involved). File formats, transports and the command
//! line live in the `forge` companion crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod cluster;
pub mod dedup;
pub mod difficulty;
pub mod eval;
pub mod filters;
pub mod hashing;
mod linalg;
pub mod record;
pub mod rewards;
pub mod scorer;
pub mod text;
pub mod vision;

pub use linalg::symmetric_eigen;
