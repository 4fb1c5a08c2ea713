//! Disk-resident dynamic approximate nearest-neighbor index.
//!
//! Upper HNSW layers live in memory; the bottom layer is stored as one
//! record per directed edge in an LSM tree ([`lsm::LsmGraphStore`]), and
//! vectors live in a slot file ([`vector_store::VectorStore`]). Bottom-layer
//! search can skip candidates whose SimHash collision count falls below a
//! Hoeffding threshold ([`simhash`]), and a reordering pass
//! ([`reorder`]) rewrites physical placement so that frequently co-traversed
//! nodes share storage windows.
//!
//! Start from [`LsmVecIndex`]; `examples/` has one program per capability.

pub mod bench;
pub mod config;
pub mod error;
pub mod hnsw;
pub mod lsm;
pub mod metrics;
pub mod reorder;
pub mod simhash;
pub mod vector_store;

/// Stable identifier of a stored vector. Never reused after deletion.
pub type VectorId = u64;

pub use error::{Error, Result};
pub use hnsw::{HnswParams, IndexConfig, LsmVecIndex, SearchParams, SearchResult};
pub use metrics::{IoCounters, IoSnapshot};
pub use simhash::FilterParams;
