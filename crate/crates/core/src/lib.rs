//! pangea-engine: a monolithic storage engine that manages persistent,
//! cached and transient data in one layer.
//!
//! Data lives in named [`locality`] sets of equal-sized pages. All sets share
//! one bounded [`buffer_pool`]; when it fills, the [`paging`] policy evicts
//! the pages with the lowest expected cost, and [`file_store`] keeps page
//! images on disk. [`services`] map sequential, shuffle and hash-aggregation
//! workloads onto pages, and [`placement`] with [`cluster`] replicate sets
//! across simulated nodes and recover from node failure.

pub mod bench;
pub mod buffer_pool;
pub mod cluster;
pub mod engine;
pub mod error;
pub mod file_store;
pub mod locality;
pub mod paging;
pub mod parallel;
pub mod placement;
pub mod services;

pub use buffer_pool::{AllocatorKind, PageKey};
pub use engine::{Engine, EngineConfig, FlushMode, PageHandle, PoolStats};
pub use error::{Error, Result};
pub use locality::{Durability, ServiceKind, SetId};
pub use paging::{CostModelParams, PolicyKind, WriteCostForm};
pub use parallel::ExecMode;
