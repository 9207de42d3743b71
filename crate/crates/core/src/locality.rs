//! Locality sets: the registry of named page sets, their attribute vectors
//! and lifecycle.
//!
//! Attributes that describe access patterns are not set by callers. They are
//! inferred from the services a set is attached to (see [`ServiceKind`]).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seed throughput for the profiled read/write cost before any I/O is observed.
pub const SEED_THROUGHPUT_BYTES_PER_SEC: f64 = 200.0 * 1024.0 * 1024.0;
/// Smoothing factor of the I/O time moving averages.
pub const PROFILE_EMA_ALPHA: f64 = 0.3;
/// Read penalty applied to sets with a random reading pattern.
pub const DEFAULT_RANDOM_READ_PENALTY: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SetId(pub u64);

impl fmt::Display for SetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "set#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Durability {
    WriteBack,
    WriteThrough,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WritingPattern {
    SequentialWrite,
    ConcurrentWrite,
    RandomMutableWrite,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReadingPattern {
    SequentialRead,
    RandomRead,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Lifetime {
    Alive,
    LifetimeEnded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CurrentOperation {
    Read,
    Write,
    ReadAndWrite,
    None,
}

impl CurrentOperation {
    /// Sets being written give up a single page per eviction.
    pub fn is_writing(self) -> bool {
        matches!(self, CurrentOperation::Write | CurrentOperation::ReadAndWrite)
    }
}

/// Services that read or write a locality set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ServiceKind {
    SeqWrite,
    SeqRead,
    Shuffle,
    Hash,
}

impl ServiceKind {
    pub fn name(self) -> &'static str {
        match self {
            ServiceKind::SeqWrite => "sequential-write",
            ServiceKind::SeqRead => "sequential-read",
            ServiceKind::Shuffle => "shuffle",
            ServiceKind::Hash => "hash",
        }
    }

    fn reads(self) -> bool {
        matches!(self, ServiceKind::SeqRead | ServiceKind::Hash)
    }

    fn writes(self) -> bool {
        matches!(self, ServiceKind::SeqWrite | ServiceKind::Shuffle | ServiceKind::Hash)
    }
}

/// Page replacement order used inside one locality set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EvictionOrder {
    Mru,
    Lru,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetAttributes {
    pub durability: Durability,
    pub writing_pattern: WritingPattern,
    pub reading_pattern: ReadingPattern,
    pub lifetime: Lifetime,
    pub current_operation: CurrentOperation,
    /// Logical tick of the last access. Never decreases.
    pub access_recency: u64,
}

impl SetAttributes {
    pub fn new(durability: Durability, tick: u64) -> Self {
        SetAttributes {
            durability,
            writing_pattern: WritingPattern::None,
            reading_pattern: ReadingPattern::None,
            lifetime: Lifetime::Alive,
            current_operation: CurrentOperation::None,
            access_recency: tick,
        }
    }

    /// MRU for sequential and concurrent patterns, LRU once anything random
    /// is involved. Sets with no observed pattern default to LRU.
    pub fn eviction_order(&self) -> EvictionOrder {
        let random = self.writing_pattern == WritingPattern::RandomMutableWrite
            || self.reading_pattern == ReadingPattern::RandomRead;
        let sequential = matches!(
            self.writing_pattern,
            WritingPattern::SequentialWrite | WritingPattern::ConcurrentWrite
        ) || self.reading_pattern == ReadingPattern::SequentialRead;
        if random {
            EvictionOrder::Lru
        } else if sequential {
            EvictionOrder::Mru
        } else {
            EvictionOrder::Lru
        }
    }

    pub fn is_ended(&self) -> bool {
        self.lifetime == Lifetime::LifetimeEnded
    }
}

/// Number of attached read-type and write-type services.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceCounts {
    pub readers: u32,
    pub writers: u32,
}

fn operation_for(counts: ServiceCounts) -> CurrentOperation {
    match (counts.readers > 0, counts.writers > 0) {
        (true, true) => CurrentOperation::ReadAndWrite,
        (true, false) => CurrentOperation::Read,
        (false, true) => CurrentOperation::Write,
        (false, false) => CurrentOperation::None,
    }
}

/// Attribute vector after attaching `kind`. Pure in its inputs.
pub fn attach_service(
    attrs: SetAttributes,
    counts: ServiceCounts,
    kind: ServiceKind,
) -> (SetAttributes, ServiceCounts) {
    let mut attrs = attrs;
    let mut counts = counts;
    match kind {
        ServiceKind::SeqWrite => attrs.writing_pattern = WritingPattern::SequentialWrite,
        ServiceKind::SeqRead => attrs.reading_pattern = ReadingPattern::SequentialRead,
        ServiceKind::Shuffle => attrs.writing_pattern = WritingPattern::ConcurrentWrite,
        ServiceKind::Hash => {
            attrs.writing_pattern = WritingPattern::RandomMutableWrite;
            attrs.reading_pattern = ReadingPattern::RandomRead;
        }
    }
    if kind.reads() {
        counts.readers += 1;
    }
    if kind.writes() {
        counts.writers += 1;
    }
    attrs.current_operation = operation_for(counts);
    (attrs, counts)
}

/// Attribute vector after detaching `kind`. Patterns stay as observed; only
/// the current operation follows the remaining attachments.
pub fn detach_service(
    attrs: SetAttributes,
    counts: ServiceCounts,
    kind: ServiceKind,
) -> (SetAttributes, ServiceCounts) {
    let mut attrs = attrs;
    let mut counts = counts;
    if kind.reads() {
        counts.readers = counts.readers.saturating_sub(1);
    }
    if kind.writes() {
        counts.writers = counts.writers.saturating_sub(1);
    }
    attrs.current_operation = operation_for(counts);
    (attrs, counts)
}

/// One locality set. Page bookkeeping that drives eviction lives here too so
/// victim selection never scans the whole page table.
#[derive(Debug, Clone)]
pub struct LocalitySet {
    pub id: SetId,
    pub name: String,
    pub page_size: u64,
    pub attributes: SetAttributes,
    /// Profiled per-page read time, seconds.
    pub profiled_v_r: f64,
    /// Profiled per-page write time, seconds.
    pub profiled_v_w: f64,
    pub random_read_penalty: f64,
    pub partition_scheme: Option<u64>,
    pub(crate) services: ServiceCounts,
    /// Page sequence numbers in creation order.
    pub(crate) pages: BTreeSet<u64>,
    pub(crate) next_seq: u64,
    /// Record chunk length used by services that lay several chunks in a page.
    pub(crate) chunk_size: u64,
    /// Unpinned resident pages keyed by (last access tick, seq).
    pub(crate) evictable: BTreeSet<(u64, u64)>,
    pub(crate) resident_pages: u64,
}

impl LocalitySet {
    fn new(id: SetId, name: String, page_size: u64, durability: Durability, tick: u64) -> Self {
        let seed = page_size as f64 / SEED_THROUGHPUT_BYTES_PER_SEC;
        LocalitySet {
            id,
            name,
            page_size,
            attributes: SetAttributes::new(durability, tick),
            profiled_v_r: seed,
            profiled_v_w: seed,
            random_read_penalty: DEFAULT_RANDOM_READ_PENALTY,
            partition_scheme: None,
            services: ServiceCounts::default(),
            pages: BTreeSet::new(),
            next_seq: 0,
            chunk_size: page_size,
            evictable: BTreeSet::new(),
            resident_pages: 0,
        }
    }

    /// w_r: 1 for sequential reads, the configured penalty for random reads.
    pub fn read_penalty(&self) -> f64 {
        if self.attributes.reading_pattern == ReadingPattern::RandomRead {
            self.random_read_penalty
        } else {
            1.0
        }
    }

    pub fn observe_read_time(&mut self, secs: f64) {
        if secs > 0.0 {
            self.profiled_v_r = PROFILE_EMA_ALPHA * secs + (1.0 - PROFILE_EMA_ALPHA) * self.profiled_v_r;
        }
    }

    pub fn observe_write_time(&mut self, secs: f64) {
        if secs > 0.0 {
            self.profiled_v_w = PROFILE_EMA_ALPHA * secs + (1.0 - PROFILE_EMA_ALPHA) * self.profiled_v_w;
        }
    }

    pub fn page_count(&self) -> usize {
        self.pages.len()
    }

    pub fn snapshot(&self) -> SetInfo {
        SetInfo {
            id: self.id,
            name: self.name.clone(),
            page_size: self.page_size,
            attributes: self.attributes,
            profiled_v_r: self.profiled_v_r,
            profiled_v_w: self.profiled_v_w,
            random_read_penalty: self.random_read_penalty,
            partition_scheme: self.partition_scheme,
            services: self.services,
            pages: self.pages.iter().copied().collect(),
            resident_pages: self.resident_pages,
            resident_unpinned: self.evictable.len() as u64,
        }
    }
}

/// Point-in-time copy of a set's metadata.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SetInfo {
    pub id: SetId,
    pub name: String,
    pub page_size: u64,
    pub attributes: SetAttributes,
    pub profiled_v_r: f64,
    pub profiled_v_w: f64,
    pub random_read_penalty: f64,
    pub partition_scheme: Option<u64>,
    pub services: ServiceCounts,
    pub pages: Vec<u64>,
    pub resident_pages: u64,
    pub resident_unpinned: u64,
}

/// Named locality sets of one node.
#[derive(Debug, Default)]
pub struct Registry {
    sets: BTreeMap<SetId, LocalitySet>,
    names: HashMap<String, SetId>,
    next_id: u64,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create_set(
        &mut self,
        name: &str,
        page_size: u64,
        durability: Durability,
        pool_capacity: u64,
        tick: u64,
    ) -> Result<SetId> {
        if self.names.contains_key(name) {
            return Err(Error::DuplicateName(name.to_string()));
        }
        if page_size == 0 {
            return Err(Error::ZeroPageSize);
        }
        if page_size > pool_capacity {
            return Err(Error::PageSizeExceedsPool { page_size, capacity: pool_capacity });
        }
        let id = SetId(self.next_id);
        self.next_id += 1;
        self.insert(LocalitySet::new(id, name.to_string(), page_size, durability, tick));
        Ok(id)
    }

    /// Re-registers a set recovered from disk under its original id.
    pub(crate) fn restore_set(
        &mut self,
        id: SetId,
        name: &str,
        page_size: u64,
        durability: Durability,
        tick: u64,
    ) -> &mut LocalitySet {
        self.next_id = self.next_id.max(id.0 + 1);
        self.insert(LocalitySet::new(id, name.to_string(), page_size, durability, tick));
        self.sets.get_mut(&id).expect("just inserted")
    }

    fn insert(&mut self, set: LocalitySet) {
        self.names.insert(set.name.clone(), set.id);
        self.sets.insert(set.id, set);
    }

    pub fn get(&self, id: SetId) -> Result<&LocalitySet> {
        self.sets.get(&id).ok_or(Error::SetNotFound(id))
    }

    pub fn get_mut(&mut self, id: SetId) -> Result<&mut LocalitySet> {
        self.sets.get_mut(&id).ok_or(Error::SetNotFound(id))
    }

    pub fn lookup(&self, name: &str) -> Option<SetId> {
        self.names.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &LocalitySet> {
        self.sets.values()
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    pub fn infer_attributes(&mut self, id: SetId, kind: ServiceKind) -> Result<SetAttributes> {
        let set = self.get_mut(id)?;
        if set.attributes.is_ended() {
            return Err(Error::LifetimeEnded(id));
        }
        let (attrs, counts) = attach_service(set.attributes, set.services, kind);
        set.attributes = attrs;
        set.services = counts;
        Ok(attrs)
    }

    pub fn detach(&mut self, id: SetId, kind: ServiceKind) -> Result<SetAttributes> {
        let set = self.get_mut(id)?;
        let (attrs, counts) = detach_service(set.attributes, set.services, kind);
        set.attributes = attrs;
        set.services = counts;
        Ok(attrs)
    }

    /// Idempotent.
    pub fn mark_lifetime_ended(&mut self, id: SetId) -> Result<()> {
        self.get_mut(id)?.attributes.lifetime = Lifetime::LifetimeEnded;
        Ok(())
    }

    pub fn record_access(&mut self, id: SetId, tick: u64) -> Result<()> {
        let set = self.get_mut(id)?;
        set.attributes.access_recency = set.attributes.access_recency.max(tick);
        Ok(())
    }

    pub(crate) fn remove(&mut self, id: SetId) -> Result<LocalitySet> {
        let set = self.sets.remove(&id).ok_or(Error::SetNotFound(id))?;
        self.names.remove(&set.name);
        Ok(set)
    }
}
