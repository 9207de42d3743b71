//! Hash aggregation through a virtual hash buffer.
//!
//! Keys are spread over K root partitions by `hash % K`. Each root grows an
//! extendible-hashing directory over the high hash bits; every directory
//! entry points at a partition whose page holds an independent in-page hash
//! table. A full partition first splits into a fresh page. When the pool has
//! no page to give, the largest resident partition of the root is written out
//! as a partial aggregate and the partition restarts empty. Finalize merges
//! each root's live pages with its spilled pages.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::Mutex;

use crate::buffer_pool::PageKey;
use crate::engine::{Engine, PageHandle};
use crate::error::{Error, Result};
use crate::locality::{ServiceKind, SetId};
use crate::parallel::{self, ExecMode};
use crate::services::hash_page::{self, Upsert};
use crate::services::stable_hash;

pub const DEFAULT_ROOTS: usize = 200;
pub const MAX_DEPTH: u32 = 24;

/// Combine function over encoded values. Must be associative and
/// commutative.
pub type CombineFn = dyn Fn(&[u8], &[u8]) -> Vec<u8> + Send + Sync;

/// `i64` little-endian sum.
pub fn sum_i64(a: &[u8], b: &[u8]) -> Vec<u8> {
    let a = i64::from_le_bytes(a.try_into().expect("8-byte value"));
    let b = i64::from_le_bytes(b.try_into().expect("8-byte value"));
    a.wrapping_add(b).to_le_bytes().to_vec()
}

pub fn decode_i64(v: &[u8]) -> i64 {
    i64::from_le_bytes(v.try_into().expect("8-byte value"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashConfig {
    pub roots: usize,
    pub seed: u64,
    pub max_depth: u32,
}

impl Default for HashConfig {
    fn default() -> Self {
        HashConfig { roots: DEFAULT_ROOTS, seed: 0, max_depth: MAX_DEPTH }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HashEvent {
    Split { root: usize, depth: u32 },
    Spill { root: usize, page: u64 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HashStats {
    pub splits: u64,
    pub spills: u64,
    pub upserts: u64,
}

#[derive(Debug)]
struct Partition<'e> {
    depth: u32,
    page: Option<PageHandle<'e>>,
}

#[derive(Debug)]
struct Root<'e> {
    global_depth: u32,
    /// Directory entry -> partition index. Indexed by the top `global_depth`
    /// bits of the hash.
    dir: Vec<usize>,
    parts: Vec<Partition<'e>>,
    spills: Vec<u64>,
}

impl Root<'_> {
    fn slot(&self, hash: u64) -> usize {
        if self.global_depth == 0 {
            0
        } else {
            (hash >> (64 - self.global_depth)) as usize
        }
    }
}

/// Hash aggregation buffer over one locality set. Upserts to distinct roots
/// run concurrently; a mutex per root serializes the rest.
pub struct VirtualHashBuffer<'e> {
    engine: &'e Engine,
    set: SetId,
    config: HashConfig,
    page_size: usize,
    combine: Box<CombineFn>,
    roots: Vec<Mutex<Root<'e>>>,
    splits: AtomicU64,
    spills: AtomicU64,
    upserts: AtomicU64,
    events: Mutex<Vec<HashEvent>>,
}

impl std::fmt::Debug for VirtualHashBuffer<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VirtualHashBuffer").field("set", &self.set).field("config", &self.config).finish()
    }
}

impl<'e> VirtualHashBuffer<'e> {
    pub fn new(
        engine: &'e Engine,
        set: SetId,
        config: HashConfig,
        combine: impl Fn(&[u8], &[u8]) -> Vec<u8> + Send + Sync + 'static,
    ) -> Result<Self> {
        if config.roots == 0 {
            return Err(Error::InvalidServiceConfig("at least one root partition is required".into()));
        }
        if config.max_depth > 32 {
            return Err(Error::InvalidServiceConfig("directory depth is limited to 32 bits".into()));
        }
        let page_size = engine.set_info(set)?.page_size as usize;
        if page_size > u32::MAX as usize {
            return Err(Error::InvalidServiceConfig("hash pages must be smaller than 4 GiB".into()));
        }
        engine.attach_service(set, ServiceKind::Hash)?;
        let roots = (0..config.roots)
            .map(|_| {
                Mutex::new(Root { global_depth: 0, dir: vec![0], parts: vec![Partition { depth: 0, page: None }], spills: Vec::new() })
            })
            .collect();
        Ok(VirtualHashBuffer {
            engine,
            set,
            config,
            page_size,
            combine: Box::new(combine),
            roots,
            splits: AtomicU64::new(0),
            spills: AtomicU64::new(0),
            upserts: AtomicU64::new(0),
            events: Mutex::new(Vec::new()),
        })
    }

    pub fn set(&self) -> SetId {
        self.set
    }

    pub fn max_payload(&self) -> usize {
        hash_page::max_payload(self.page_size)
    }

    pub fn stats(&self) -> HashStats {
        HashStats {
            splits: self.splits.load(Ordering::Relaxed),
            spills: self.spills.load(Ordering::Relaxed),
            upserts: self.upserts.load(Ordering::Relaxed),
        }
    }

    /// Splits and spills in the order they happened.
    pub fn events(&self) -> Vec<HashEvent> {
        self.events.lock().clone()
    }

    fn hash(&self, key: &[u8]) -> u64 {
        stable_hash(key, self.config.seed)
    }

    fn root_of(&self, hash: u64) -> usize {
        (hash % self.config.roots as u64) as usize
    }

    pub fn upsert(&self, key: &[u8], value: &[u8]) -> Result<()> {
        let max = self.max_payload();
        if key.len() + value.len() > max {
            return Err(Error::KeyLargerThanPage { len: key.len() + value.len(), max });
        }
        let hash = self.hash(key);
        let r = self.root_of(hash);
        let mut root = self.roots[r].lock();
        self.engine.tick();
        self.upserts.fetch_add(1, Ordering::Relaxed);
        loop {
            let pi = root.dir[root.slot(hash)];
            if root.parts[pi].page.is_none() {
                let page = self.allocate(&mut root, r)?;
                root.parts[pi].page = Some(page);
            }
            let outcome = {
                let page = root.parts[pi].page.as_ref().expect("allocated above");
                let mut data = page.write();
                hash_page::upsert(&mut data, hash, key, value, &*self.combine)?
            };
            if outcome != Upsert::Full {
                return Ok(());
            }
            self.make_space(&mut root, r, pi)?;
        }
    }

    /// Allocates a formatted page, spilling partitions of this root (then of
    /// other roots) while the pool is exhausted.
    fn allocate(&self, root: &mut Root<'e>, r: usize) -> Result<PageHandle<'e>> {
        let mut attempts = 0;
        loop {
            match self.engine.allocate_page(self.set) {
                Ok(page) => {
                    hash_page::init(&mut page.write());
                    return Ok(page);
                }
                Err(Error::EvictionExhausted { requested }) => {
                    if let Some(victim) = largest_partition(root, None) {
                        self.spill(root, r, victim)?;
                    } else if !self.spill_elsewhere(r)? {
                        attempts += 1;
                        if attempts > 1000 {
                            return Err(Error::EvictionExhausted { requested });
                        }
                        std::thread::yield_now();
                    }
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn spill_elsewhere(&self, own: usize) -> Result<bool> {
        for (r, m) in self.roots.iter().enumerate() {
            if r == own {
                continue;
            }
            if let Some(mut root) = m.try_lock() {
                if let Some(victim) = largest_partition(&root, None) {
                    self.spill(&mut root, r, victim)?;
                    return Ok(true);
                }
            }
        }
        Ok(false)
    }

    /// Frees room after partition `pi` filled up: split it if a page can be
    /// had, otherwise spill the largest partition of the root.
    fn make_space(&self, root: &mut Root<'e>, r: usize, pi: usize) -> Result<()> {
        if root.parts[pi].depth < self.config.max_depth {
            match self.engine.allocate_page(self.set) {
                Ok(page) => {
                    hash_page::init(&mut page.write());
                    self.split(root, r, pi, page);
                    return Ok(());
                }
                Err(Error::EvictionExhausted { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        let victim = largest_partition(root, None).expect("the full partition is resident");
        self.spill(root, r, victim)
    }

    fn split(&self, root: &mut Root<'e>, r: usize, pi: usize, new_page: PageHandle<'e>) {
        let depth = root.parts[pi].depth;
        if depth == root.global_depth {
            root.dir = root.dir.iter().flat_map(|&p| [p, p]).collect();
            root.global_depth += 1;
        }
        let new_pi = root.parts.len();
        root.parts[pi].depth = depth + 1;
        // entries whose next hash bit is set move to the new partition
        let bit = 63 - depth;
        {
            let old = root.parts[pi].page.as_ref().expect("splitting a resident partition");
            let mut old_data = old.write();
            let entries: Vec<(Vec<u8>, Vec<u8>)> =
                hash_page::iter(&old_data).map(|(k, v)| (k.to_vec(), v.to_vec())).collect();
            hash_page::init(&mut old_data);
            let mut new_data = new_page.write();
            for (k, v) in entries {
                let h = self.hash(&k);
                let target = if (h >> bit) & 1 == 1 { &mut *new_data } else { &mut *old_data };
                let out = hash_page::upsert(target, h, &k, &v, &*self.combine).expect("entry fit before split");
                debug_assert_eq!(out, Upsert::Inserted);
            }
        }
        root.parts.push(Partition { depth: depth + 1, page: Some(new_page) });
        let shift = root.global_depth - depth - 1;
        for (slot, p) in root.dir.iter_mut().enumerate() {
            if *p == pi && (slot >> shift) & 1 == 1 {
                *p = new_pi;
            }
        }
        self.splits.fetch_add(1, Ordering::Relaxed);
        self.events.lock().push(HashEvent::Split { root: r, depth: depth + 1 });
    }

    /// Writes partition `pi`'s page out as a partial aggregate.
    fn spill(&self, root: &mut Root<'e>, r: usize, pi: usize) -> Result<()> {
        let page = root.parts[pi].page.take().expect("spilling a resident partition");
        let key = page.key();
        page.unpin(true)?;
        match self.engine.evict_page(key) {
            // a concurrent allocation may already have written it out
            Ok(_) | Err(Error::NotResident(_)) => {}
            Err(e) => return Err(e),
        }
        root.spills.push(key.seq);
        self.spills.fetch_add(1, Ordering::Relaxed);
        self.events.lock().push(HashEvent::Spill { root: r, page: key.seq });
        Ok(())
    }

    /// Value in the live page of the key's partition, if any. Spilled partial
    /// aggregates are only merged by [`finalize`](Self::finalize).
    pub fn lookup(&self, key: &[u8]) -> Option<Vec<u8>> {
        let hash = self.hash(key);
        let root = self.roots[self.root_of(hash)].lock();
        let part = &root.parts[root.dir[root.slot(hash)]];
        let page = part.page.as_ref()?;
        let data = page.read();
        hash_page::get(&data, hash, key).map(<[u8]>::to_vec)
    }

    /// Merges every root's live pages with its spill chain. Spilled pages are
    /// read back through the pool. The set's lifetime ends here, so consumed
    /// pages are dropped without write-back.
    pub fn finalize(self, mode: ExecMode) -> Result<HashMap<Vec<u8>, Vec<u8>>> {
        let engine = self.engine;
        let set = self.set;
        let combine = &*self.combine;
        engine.mark_lifetime_ended(set)?;
        // live pages first, so every frame is free for reading spills back
        let mut work = Vec::with_capacity(self.roots.len());
        for root in self.roots.into_iter().map(Mutex::into_inner) {
            let mut acc: HashMap<Vec<u8>, Vec<u8>> = HashMap::new();
            for part in root.parts {
                if let Some(page) = part.page {
                    // keys are unique within a page and pages of a root are disjoint
                    acc.extend(hash_page::iter(&page.read()).map(|(k, v)| (k.to_vec(), v.to_vec())));
                    page.unpin(true)?;
                }
            }
            work.push((acc, root.spills));
        }
        let merged = parallel::try_map(mode, work, |(mut acc, spills)| -> Result<HashMap<Vec<u8>, Vec<u8>>> {
            for seq in spills {
                let page = engine.pin_page(PageKey::new(set, seq))?;
                for (k, v) in hash_page::iter(&page.read()) {
                    match acc.get_mut(k) {
                        Some(old) => *old = combine(old, v),
                        None => {
                            acc.insert(k.to_vec(), v.to_vec());
                        }
                    }
                }
                page.unpin(false)?;
            }
            Ok(acc)
        })?;
        engine.detach_service(set, ServiceKind::Hash)?;
        let mut out = HashMap::with_capacity(merged.iter().map(HashMap::len).sum());
        for m in merged {
            out.extend(m);
        }
        Ok(out)
    }
}

fn largest_partition(root: &Root<'_>, exclude: Option<usize>) -> Option<usize> {
    root.parts
        .iter()
        .enumerate()
        .filter(|(i, p)| p.page.is_some() && Some(*i) != exclude)
        .max_by_key(|(i, p)| (hash_page::live_bytes(&p.page.as_ref().unwrap().read()), std::cmp::Reverse(*i)))
        .map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::EngineConfig;
    use crate::locality::Durability;

    fn engine(capacity: u64) -> (tempfile::TempDir, Engine) {
        let dir = tempfile::tempdir().unwrap();
        let e = Engine::open(EngineConfig::new(capacity, vec![dir.path().to_path_buf()])).unwrap();
        (dir, e)
    }

    fn pairs(n: u32, distinct: u32) -> Vec<(Vec<u8>, i64)> {
        (0..n).map(|i| (format!("key{:07}", (i * 7919) % distinct).into_bytes(), (i % 5) as i64 + 1)).collect()
    }

    fn oracle(p: &[(Vec<u8>, i64)]) -> HashMap<Vec<u8>, i64> {
        let mut m = HashMap::new();
        for (k, v) in p {
            *m.entry(k.clone()).or_insert(0) += v;
        }
        m
    }

    fn run(e: &Engine, roots: usize, p: &[(Vec<u8>, i64)]) -> (HashMap<Vec<u8>, i64>, HashStats, Vec<HashEvent>) {
        let set = e.create_set("agg", 4096, Durability::WriteBack).unwrap();
        let hb = VirtualHashBuffer::new(e, set, HashConfig { roots, ..Default::default() }, sum_i64).unwrap();
        for (k, v) in p {
            hb.upsert(k, &v.to_le_bytes()).unwrap();
        }
        let stats = hb.stats();
        let events = hb.events();
        let out = hb.finalize(ExecMode::Parallel).unwrap();
        (out.into_iter().map(|(k, v)| (k, decode_i64(&v))).collect(), stats, events)
    }

    #[test]
    fn combine_twice() {
        let (_d, e) = engine(1 << 20);
        let set = e.create_set("agg", 4096, Durability::WriteBack).unwrap();
        let hb = VirtualHashBuffer::new(&e, set, HashConfig { roots: 4, ..Default::default() }, sum_i64).unwrap();
        hb.upsert(b"k", &1i64.to_le_bytes()).unwrap();
        hb.upsert(b"k", &1i64.to_le_bytes()).unwrap();
        assert_eq!(decode_i64(&hb.lookup(b"k").unwrap()), 2);
        assert!(matches!(hb.upsert(&[0; 5000], b"", ), Err(Error::KeyLargerThanPage { .. })));
    }

    #[test]
    fn ample_memory_splits_without_spilling() {
        let (_d, e) = engine(16 << 20);
        let p = pairs(20_000, 5_000);
        let (got, stats, _) = run(&e, 4, &p);
        assert_eq!(got, oracle(&p));
        assert!(stats.splits > 0);
        assert_eq!(stats.spills, 0);
        assert_eq!(e.io_stats().bytes_read, 0);
    }

    #[test]
    fn constrained_memory_spills_and_still_matches() {
        let (_d, e) = engine(16 * 4096);
        let p = pairs(20_000, 5_000);
        let (got, stats, _) = run(&e, 4, &p);
        assert_eq!(got, oracle(&p));
        assert!(stats.spills >= 3, "{stats:?}");
        assert!(e.io_stats().bytes_read > 0);
    }

    #[test]
    fn spill_sequence_is_reproducible() {
        let p = pairs(10_000, 4_000);
        let (_d1, e1) = engine(12 * 4096);
        let (_d2, e2) = engine(12 * 4096);
        let (_, _, ev1) = run(&e1, 3, &p);
        let (_, _, ev2) = run(&e2, 3, &p);
        assert!(ev1.iter().any(|e| matches!(e, HashEvent::Spill { .. })));
        assert_eq!(ev1, ev2);
    }

    #[test]
    fn spilled_partials_merge() {
        let (_d, e) = engine(1 << 20);
        let set = e.create_set("agg", 4096, Durability::WriteBack).unwrap();
        let hb = VirtualHashBuffer::new(&e, set, HashConfig { roots: 1, ..Default::default() }, sum_i64).unwrap();
        for v in [1i64, 2] {
            hb.upsert(b"a", &v.to_le_bytes()).unwrap();
            let mut root = hb.roots[0].lock();
            hb.spill(&mut root, 0, 0).unwrap();
        }
        hb.upsert(b"a", &4i64.to_le_bytes()).unwrap();
        let out = hb.finalize(ExecMode::Sequential).unwrap();
        assert_eq!(decode_i64(&out[&b"a".to_vec()]), 7);
    }

    #[test]
    fn concurrent_upserts() {
        let (_d, e) = engine(64 * 4096);
        let p = pairs(40_000, 9_000);
        let set = e.create_set("agg", 4096, Durability::WriteBack).unwrap();
        let hb = VirtualHashBuffer::new(&e, set, HashConfig { roots: 8, ..Default::default() }, sum_i64).unwrap();
        std::thread::scope(|sc| {
            for t in 0..4 {
                let hb = &hb;
                let p = &p;
                sc.spawn(move || {
                    for (k, v) in p.iter().skip(t).step_by(4) {
                        hb.upsert(k, &v.to_le_bytes()).unwrap();
                    }
                });
            }
        });
        let got: HashMap<Vec<u8>, i64> =
            hb.finalize(ExecMode::Parallel).unwrap().into_iter().map(|(k, v)| (k, decode_i64(&v))).collect();
        assert_eq!(got, oracle(&p));
    }
}
