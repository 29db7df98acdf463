//! On-disk formats: configs, traces, mask snapshots and weight files.

pub mod config;
pub mod snapshot;
pub mod trace;
pub mod weights;

pub use config::{config_to_string, parse_config, parse_config_str, write_config};
pub use snapshot::{Granularity, MaskSnapshot, SnapshotTensor};
pub use trace::{read_trace, trace_from_str, trace_to_string, write_trace, TRACE_HEADER};
pub use weights::{WeightFile, WeightTensor};
