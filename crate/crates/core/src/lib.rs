//! Deterministic, simulation-driven implementation of a hierarchical sharded
//! ledger: per-zone local chains commit speculatively-executed transactions,
//! and a main chain built on a DAG mempool orders, validates (MVCC) and
//! executes the cross-zone traffic. Two flat sharding baselines (full
//! replication, coordinator 2PC) run on the same simulator for comparison.
//!
//! Everything runs single-threaded on a discrete-event clock; with a fixed
//! seed and config every run is byte-identical, including reports and traces.

pub mod alt;
pub mod audit;
pub mod codec;
pub mod config;
pub mod consensus;
pub mod crypto;
pub mod dag;
pub mod experiment;
pub mod localchain;
pub mod mempool;
pub mod metrics;
pub mod node;
pub mod processing;
pub mod simnet;
pub mod statedb;
pub mod types;
pub mod workload;

pub use types::{NodeId, ZoneId};

/// Crate-wide error type. Protocol-rule rejections are not errors (handlers
/// record and drop); these are integrity failures and usage errors.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("integrity violation: {0}")]
    Integrity(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, Error>;
