//! Pruning laboratory for observing cascade weight shedding.
//!
//! The crate bundles learning-rate and keep-ratio schedules, a small dense
//! network engine, unstructured (GMP and random) and 4x1 block pruning with
//! threshold-based shedding, an experiment harness, post-hoc analyses and the
//! on-disk formats used to exchange traces, masks and weights.

pub mod analysis;
pub mod block;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod io;
pub mod pruning;
pub mod schedules;
pub mod tensor;

pub use error::{Error, Result};
