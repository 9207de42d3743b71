use std::io;

use crate::locality::SetId;
use crate::buffer_pool::PageKey;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors surfaced by the engine, its services and the cluster simulator.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    // locality registry
    #[error("locality set name `{0}` is already in use")]
    DuplicateName(String),
    #[error("page size {page_size} exceeds pool capacity {capacity}")]
    PageSizeExceedsPool { page_size: u64, capacity: u64 },
    #[error("page size must be positive")]
    ZeroPageSize,
    #[error("locality set {0} not found")]
    SetNotFound(SetId),
    #[error("locality set named `{0}` not found")]
    SetNameNotFound(String),
    #[error("locality set {0} has ended its lifetime")]
    LifetimeEnded(SetId),
    #[error("locality set {0} still has pinned pages")]
    PagesStillPinned(SetId),

    // buffer pool
    #[error("buffer pool capacity must be positive")]
    ZeroCapacity,
    #[error("no unpinned page can be evicted to make room for {requested} bytes")]
    EvictionExhausted { requested: u64 },
    #[error("page {0} is unknown")]
    PageUnknown(PageKey),
    #[error("page {0} is neither resident nor on disk")]
    MissingImage(PageKey),
    #[error("page {0} is not pinned")]
    NotPinned(PageKey),
    #[error("page {0} is pinned")]
    PagePinned(PageKey),
    #[error("page {0} is not resident")]
    NotResident(PageKey),
    #[error("slab pool serves {slot} byte pages, requested {requested}")]
    SlabSizeMismatch { slot: u64, requested: u64 },

    // paging
    #[error("t_now ({now}) must be greater than t_ref ({reference})")]
    NonPositiveInterval { now: u64, reference: u64 },
    #[error("no evictable page")]
    NoEvictablePage,
    #[error("policy blocked: desired {desired_bytes} bytes exceed pool capacity {capacity}")]
    PolicyBlocked { desired_bytes: u64, capacity: u64 },
    #[error("invalid cost model parameters: {0}")]
    InvalidParams(String),

    // file store
    #[error("page {seq} of set {set} is not on disk")]
    PageNotOnDisk { set: SetId, seq: u64 },
    #[error("expected {expected} bytes, got {actual}")]
    SizeMismatch { expected: u64, actual: u64 },
    #[error("corrupt meta file {path}: {reason}")]
    CorruptMeta { path: String, reason: String },
    #[error("corrupt catalog: {0}")]
    CorruptCatalog(String),
    #[error(transparent)]
    Io(#[from] io::Error),

    // services
    #[error("record of {len} bytes does not fit in a {capacity} byte page")]
    RecordLargerThanPage { len: usize, capacity: usize },
    #[error("record of {len} bytes does not fit in a {capacity} byte small page")]
    RecordLargerThanSmallPage { len: usize, capacity: usize },
    #[error("key/value of {len} bytes exceeds the largest in-page slab class ({max})")]
    KeyLargerThanPage { len: usize, max: usize },
    #[error("records must not be empty")]
    EmptyRecord,
    #[error("set {set} is not attached to the {service} service")]
    ServiceNotAttached { set: SetId, service: &'static str },
    #[error("invalid service configuration: {0}")]
    InvalidServiceConfig(String),

    // placement
    #[error("target set `{0}` is not empty")]
    TargetNotEmpty(String),
    #[error("replica object sets differ: {0}")]
    ObjectSetMismatch(String),
    #[error("invalid arguments: {0}")]
    InvalidArgs(String),
    #[error("no surviving replica to recover from")]
    NoSurvivingReplica,
    #[error("{0} objects cannot be recovered")]
    UnrecoverableObjects(usize),
    #[error("set `{0}` has no partition scheme")]
    NotPartitioned(String),
    #[error("replica group {0} not found")]
    GroupNotFound(u64),

    // cluster
    #[error("node {0} is down")]
    NodeDown(usize),
    #[error("unknown node {0}")]
    UnknownNode(usize),
    #[error("insufficient disk space: {0}")]
    InsufficientDiskSpace(String),
}
