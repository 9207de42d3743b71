//! Offset allocators for the pool arena.
//!
//! `SegregatedFit` bins free blocks by power-of-two size class and coalesces
//! neighbours on free. `Slab` serves a single uniform slot size.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AllocatorKind {
    SegregatedFit,
    Slab,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Slot {
    pub offset: u64,
    pub len: u64,
}

#[derive(Debug)]
pub struct Arena {
    capacity: u64,
    allocated: u64,
    inner: Inner,
}

#[derive(Debug)]
enum Inner {
    Segregated(SegregatedFit),
    Slab(Slab),
}

impl Arena {
    pub fn new(capacity: u64, kind: AllocatorKind) -> Self {
        let inner = match kind {
            AllocatorKind::SegregatedFit => Inner::Segregated(SegregatedFit::new(capacity)),
            AllocatorKind::Slab => Inner::Slab(Slab { slot: None, free: BTreeSet::new(), next_unused: 0 }),
        };
        Arena { capacity, allocated: 0, inner }
    }

    pub fn kind(&self) -> AllocatorKind {
        match self.inner {
            Inner::Segregated(_) => AllocatorKind::SegregatedFit,
            Inner::Slab(_) => AllocatorKind::Slab,
        }
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    /// Bytes handed out, including slab slack.
    pub fn allocated(&self) -> u64 {
        self.allocated
    }

    /// `Ok(None)` when no block large enough is free.
    pub fn allocate(&mut self, size: u64) -> Result<Option<Slot>> {
        assert!(size > 0);
        let slot = match &mut self.inner {
            Inner::Segregated(s) => s.allocate(size),
            Inner::Slab(s) => s.allocate(size, self.capacity)?,
        };
        if let Some(slot) = slot {
            self.allocated += slot.len;
        }
        Ok(slot)
    }

    pub fn free(&mut self, slot: Slot) {
        self.allocated -= slot.len;
        match &mut self.inner {
            Inner::Segregated(s) => s.free(slot),
            Inner::Slab(s) => s.free(slot),
        }
    }
}

fn size_class(len: u64) -> usize {
    63 - len.leading_zeros() as usize
}

#[derive(Debug)]
struct SegregatedFit {
    /// offset -> len of every free block
    free: BTreeMap<u64, u64>,
    /// size class -> offsets of free blocks in that class
    bins: Vec<BTreeSet<u64>>,
}

impl SegregatedFit {
    fn new(capacity: u64) -> Self {
        let mut s = SegregatedFit { free: BTreeMap::new(), bins: vec![BTreeSet::new(); 64] };
        if capacity > 0 {
            s.insert_free(0, capacity);
        }
        s
    }

    fn insert_free(&mut self, offset: u64, len: u64) {
        self.free.insert(offset, len);
        self.bins[size_class(len)].insert(offset);
    }

    fn remove_free(&mut self, offset: u64) -> u64 {
        let len = self.free.remove(&offset).expect("free block");
        self.bins[size_class(len)].remove(&offset);
        len
    }

    fn allocate(&mut self, size: u64) -> Option<Slot> {
        let class = size_class(size);
        // Blocks in the request's own class may still be too small.
        let mut found = self.bins[class].iter().copied().find(|off| self.free[off] >= size);
        if found.is_none() {
            found = self.bins[class + 1..].iter().find_map(|bin| bin.first().copied());
        }
        let offset = found?;
        let len = self.remove_free(offset);
        if len > size {
            self.insert_free(offset + size, len - size);
        }
        Some(Slot { offset, len: size })
    }

    fn free(&mut self, slot: Slot) {
        let mut offset = slot.offset;
        let mut len = slot.len;
        if let Some((&prev_off, &prev_len)) = self.free.range(..offset).next_back() {
            if prev_off + prev_len == offset {
                self.remove_free(prev_off);
                offset = prev_off;
                len += prev_len;
            }
        }
        let end = offset + len;
        if self.free.contains_key(&end) {
            len += self.remove_free(end);
        }
        self.insert_free(offset, len);
    }
}

#[derive(Debug)]
struct Slab {
    slot: Option<u64>,
    free: BTreeSet<u64>,
    next_unused: u64,
}

impl Slab {
    fn allocate(&mut self, size: u64, capacity: u64) -> Result<Option<Slot>> {
        let slot = *self.slot.get_or_insert(size);
        if size != slot {
            return Err(Error::SlabSizeMismatch { slot, requested: size });
        }
        if let Some(index) = self.free.pop_first() {
            return Ok(Some(Slot { offset: index * slot, len: slot }));
        }
        if (self.next_unused + 1) * slot <= capacity {
            let index = self.next_unused;
            self.next_unused += 1;
            return Ok(Some(Slot { offset: index * slot, len: slot }));
        }
        Ok(None)
    }

    fn free(&mut self, slot: Slot) {
        let size = self.slot.expect("slab slot size set on first allocation");
        self.free.insert(slot.offset / size);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn segregated_fills_and_coalesces() {
        let mut a = Arena::new(1000, AllocatorKind::SegregatedFit);
        let x = a.allocate(300).unwrap().unwrap();
        let y = a.allocate(300).unwrap().unwrap();
        let z = a.allocate(300).unwrap().unwrap();
        assert!(a.allocate(300).unwrap().is_none());
        let tail = a.allocate(100).unwrap().unwrap();
        assert_eq!(a.allocated(), 1000);
        a.free(x);
        a.free(z);
        // 600 free but not contiguous
        assert!(a.allocate(400).unwrap().is_none());
        a.free(y);
        assert_eq!(a.allocate(900).unwrap(), Some(Slot { offset: 0, len: 900 }));
        a.free(tail);
        assert_eq!(a.allocated(), 900);
    }

    #[test]
    fn slab_rejects_mixed_sizes() {
        let mut a = Arena::new(1024, AllocatorKind::Slab);
        let s = a.allocate(256).unwrap().unwrap();
        assert!(matches!(a.allocate(128), Err(Error::SlabSizeMismatch { .. })));
        for _ in 0..3 {
            a.allocate(256).unwrap().unwrap();
        }
        assert!(a.allocate(256).unwrap().is_none());
        a.free(s);
        assert_eq!(a.allocate(256).unwrap(), Some(s));
    }

    proptest! {
        #[test]
        fn blocks_never_overlap(ops in proptest::collection::vec((any::<bool>(), 1u64..200), 1..200)) {
            let cap = 2000;
            let mut a = Arena::new(cap, AllocatorKind::SegregatedFit);
            let mut live: Vec<Slot> = Vec::new();
            for (alloc, size) in ops {
                if alloc || live.is_empty() {
                    if let Some(s) = a.allocate(size).unwrap() {
                        prop_assert!(s.offset + s.len <= cap);
                        for o in &live {
                            prop_assert!(s.offset + s.len <= o.offset || o.offset + o.len <= s.offset);
                        }
                        live.push(s);
                    }
                } else {
                    let s = live.swap_remove(size as usize % live.len());
                    a.free(s);
                }
                prop_assert_eq!(a.allocated(), live.iter().map(|s| s.len).sum::<u64>());
            }
            for s in live.drain(..) {
                a.free(s);
            }
            prop_assert!(a.allocate(cap).unwrap().is_some());
        }
    }
}
