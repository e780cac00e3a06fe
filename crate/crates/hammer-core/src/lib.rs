//! Hierarchical multi-modal encoder for moment localization in video corpora.
//!
//! A video is split into fixed-length clips; a frame-level cross-modal
//! encoder contextualizes each clip's frames against the query, and a
//! clip-level encoder contextualizes the per-clip summaries. Task heads
//! score videos for retrieval, localize segment boundaries, and predict
//! masked query tokens. Everything runs in f64 on a reverse-mode tape.
//!
//! The crate is `no_std` + `alloc`: all algorithms, codecs, and the
//! training loop are pure computation. File and terminal IO live in the
//! companion CLI crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod checkpoint;
pub mod data;
pub mod encoder;
pub mod error;
pub mod heads;
pub mod infer;
pub mod metrics;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod types;

pub use error::{Error, Result};
pub use types::Segment;
