//! The unified buffer pool: one bounded arena shared by every locality set.
//!
//! [`BufferPool`] owns memory accounting and the page table. Pin counts,
//! dirty flags and access ticks are kept by the engine in [`PageState`],
//! outside the arena, so evicting a page never loses its bookkeeping.

mod arena;
mod scan;

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use parking_lot::RwLock;

pub use arena::{AllocatorKind, Arena, Slot};
pub use scan::ScanQueue;

use crate::error::{Error, Result};
use crate::locality::SetId;

/// A page is identified by its set and its position in creation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PageKey {
    pub set: SetId,
    pub seq: u64,
}

impl PageKey {
    pub fn new(set: SetId, seq: u64) -> Self {
        PageKey { set, seq }
    }
}

impl fmt::Display for PageKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/p{}", self.set, self.seq)
    }
}

/// Bytes of a resident page. Shared under multiple pins, written under the
/// write lock.
pub type PageData = Arc<RwLock<Vec<u8>>>;

#[derive(Debug)]
struct Frame {
    slot: Slot,
    data: PageData,
}

/// Per-page bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PageState {
    pub size: u64,
    pub pin_count: u32,
    pub dirty: bool,
    pub last_access_tick: u64,
    pub resident: bool,
    pub on_disk: bool,
}

#[derive(Debug)]
pub struct BufferPool {
    arena: Arena,
    used: u64,
    page_table: HashMap<PageKey, Frame>,
}

impl BufferPool {
    pub fn new(capacity: u64, kind: AllocatorKind) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::ZeroCapacity);
        }
        Ok(BufferPool { arena: Arena::new(capacity, kind), used: 0, page_table: HashMap::new() })
    }

    pub fn capacity(&self) -> u64 {
        self.arena.capacity()
    }

    /// Sum of the sizes of resident pages.
    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn free_bytes(&self) -> u64 {
        self.arena.capacity() - self.arena.allocated()
    }

    pub fn allocator_kind(&self) -> AllocatorKind {
        self.arena.kind()
    }

    pub fn resident_count(&self) -> usize {
        self.page_table.len()
    }

    pub fn is_resident(&self, key: PageKey) -> bool {
        self.page_table.contains_key(&key)
    }

    pub fn data(&self, key: PageKey) -> Option<PageData> {
        self.page_table.get(&key).map(|f| f.data.clone())
    }

    pub fn slot(&self, key: PageKey) -> Option<Slot> {
        self.page_table.get(&key).map(|f| f.slot)
    }

    /// Places a zeroed page in the arena, or `Ok(None)` if no block fits.
    pub fn try_insert(&mut self, key: PageKey, size: u64) -> Result<Option<PageData>> {
        debug_assert!(!self.page_table.contains_key(&key));
        let Some(slot) = self.arena.allocate(size)? else {
            return Ok(None);
        };
        let data: PageData = Arc::new(RwLock::new(vec![0u8; size as usize]));
        self.page_table.insert(key, Frame { slot, data: data.clone() });
        self.used += size;
        Ok(Some(data))
    }

    pub fn remove(&mut self, key: PageKey) -> Option<PageData> {
        let frame = self.page_table.remove(&key)?;
        self.arena.free(frame.slot);
        self.used -= frame.data.read().len() as u64;
        Some(frame.data)
    }

    pub fn resident_keys(&self) -> impl Iterator<Item = PageKey> + '_ {
        self.page_table.keys().copied()
    }
}
