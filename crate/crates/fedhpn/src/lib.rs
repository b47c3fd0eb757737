//! Experiment harness for per-client federated hyperparameter search:
//! TOML configs, on-disk formats, pipeline stages and reports.
//!
//! The simulation itself lives in `fedhpn-core`; this crate adds everything
//! that touches the filesystem.

pub mod checkpoint;
pub mod config;
pub mod csvdata;
pub mod error;
pub mod exec;
pub mod logs;
pub mod manifest;
pub mod pipeline;
pub mod report;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use pipeline::{Method, Options, Pipeline};

/// Pretty JSON with a trailing newline.
pub(crate) fn json_bytes<T: serde::Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable");
    out.push(b'\n');
    out
}
