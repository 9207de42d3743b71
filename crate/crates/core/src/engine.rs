//! Single-node storage engine: the locality registry, one buffer pool, the
//! paging policy and a file store behind one facade.
//!
//! Bookkeeping sits under one mutex. Page bytes are shared through
//! [`PageData`] so readers and writers of distinct pages never contend on it.

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLockReadGuard, RwLockWriteGuard};
use serde::{Deserialize, Serialize};

use crate::buffer_pool::{AllocatorKind, BufferPool, PageData, PageKey, PageState, ScanQueue};
use crate::error::{Error, Result};
use crate::file_store::{FileStore, IoStats, SetIoStats};
use crate::locality::{Durability, LocalitySet, Registry, ServiceKind, SetAttributes, SetId, SetInfo};
use crate::paging::{decide, CostModelParams, EvictionDecision, PolicyContext, PolicyKind};

const CATALOG_FILE: &str = "catalog.json";

/// When write-through pages reach disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlushMode {
    /// Inside the unpin that left the page dirty and unpinned.
    Sync,
    /// Queued until [`Engine::flush_pending`].
    Deferred,
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub capacity: u64,
    pub allocator: AllocatorKind,
    pub storage_dirs: Vec<PathBuf>,
    pub policy: PolicyKind,
    pub cost: CostModelParams,
    pub flush_mode: FlushMode,
    /// Feed measured I/O times into the per-set cost profile. Off by default
    /// so victim choices depend only on logical ticks.
    pub profile_io: bool,
    /// Keep a log of page writes and evictions.
    pub audit_log: bool,
    pub sync_writes: bool,
}

impl EngineConfig {
    pub fn new(capacity: u64, storage_dirs: Vec<PathBuf>) -> Self {
        EngineConfig {
            capacity,
            allocator: AllocatorKind::SegregatedFit,
            storage_dirs,
            policy: PolicyKind::DataAware,
            cost: CostModelParams::default(),
            flush_mode: FlushMode::Sync,
            profile_io: false,
            audit_log: false,
            sync_writes: false,
        }
    }

    pub fn with_policy(mut self, policy: PolicyKind) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_allocator(mut self, allocator: AllocatorKind) -> Self {
        self.allocator = allocator;
        self
    }
}

/// Counters kept by the pool. Disk byte counters live in the file store.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PoolStats {
    pub pages_allocated: u64,
    pub pages_loaded: u64,
    pub pages_evicted: u64,
    pub dirty_discarded: u64,
    pub eviction_decisions: u64,
    pub pins: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuditKind {
    /// A page image reached the file store.
    Write,
    /// A page left memory; `dirty_alive` if it was dirty in an alive set.
    Evict { dirty_alive: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuditEvent {
    pub key: PageKey,
    pub kind: AuditKind,
}

#[derive(Debug, Serialize, Deserialize)]
struct Catalog {
    next_id: u64,
    sets: Vec<CatalogEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CatalogEntry {
    id: u64,
    name: String,
    page_size: u64,
    durability: Durability,
    chunk_size: u64,
    partition_scheme: Option<u64>,
}

#[derive(Debug)]
struct State {
    registry: Registry,
    pages: HashMap<PageKey, PageState>,
    pool: BufferPool,
    stats: PoolStats,
    pending_flush: VecDeque<PageKey>,
    audit: Vec<AuditEvent>,
    last_decision: Option<EvictionDecision>,
}

#[derive(Debug)]
pub struct Engine {
    config: EngineConfig,
    /// Logical clock: advanced by every pin and every service record access.
    clock: AtomicU64,
    store: FileStore,
    state: Mutex<State>,
}

impl Engine {
    /// Opens an engine over `storage_dirs`, restoring any sets recorded in
    /// the catalog there. Restored pages start on disk only.
    pub fn open(config: EngineConfig) -> Result<Self> {
        config.cost.validate()?;
        let pool = BufferPool::new(config.capacity, config.allocator)?;
        let store = FileStore::new(config.storage_dirs.clone(), config.sync_writes)?;
        let mut state = State {
            registry: Registry::new(),
            pages: HashMap::new(),
            pool,
            stats: PoolStats::default(),
            pending_flush: VecDeque::new(),
            audit: Vec::new(),
            last_decision: None,
        };
        let catalog_path = store.dirs()[0].join(CATALOG_FILE);
        if catalog_path.exists() {
            let raw = fs::read(&catalog_path)?;
            let catalog: Catalog =
                serde_json::from_slice(&raw).map_err(|e| Error::CorruptCatalog(e.to_string()))?;
            for entry in catalog.sets {
                let id = SetId(entry.id);
                let set = state.registry.restore_set(id, &entry.name, entry.page_size, entry.durability, 0);
                set.chunk_size = entry.chunk_size;
                set.partition_scheme = entry.partition_scheme;
                if store.has_meta(id) {
                    let meta = store.load_meta(id)?;
                    for &seq in meta.index.keys() {
                        set.pages.insert(seq);
                        state.pages.insert(
                            PageKey::new(id, seq),
                            PageState {
                                size: entry.page_size,
                                pin_count: 0,
                                dirty: false,
                                last_access_tick: 0,
                                resident: false,
                                on_disk: true,
                            },
                        );
                    }
                    set.next_seq = meta.index.keys().next_back().map_or(0, |s| s + 1);
                } else {
                    store.register(id, entry.page_size);
                }
            }
        }
        Ok(Engine { config, clock: AtomicU64::new(0), store, state: Mutex::new(state) })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn store(&self) -> &FileStore {
        &self.store
    }

    pub fn capacity(&self) -> u64 {
        self.config.capacity
    }

    // ----- locality sets -----

    pub fn create_set(&self, name: &str, page_size: u64, durability: Durability) -> Result<SetId> {
        let mut st = self.state.lock();
        let tick = self.now();
        if self.config.allocator == AllocatorKind::Slab {
            if let Some(other) = st.registry.iter().find(|s| s.page_size != page_size) {
                return Err(Error::SlabSizeMismatch { slot: other.page_size, requested: page_size });
            }
        }
        let id = st.registry.create_set(name, page_size, durability, self.config.capacity, tick)?;
        self.store.register(id, page_size);
        self.write_catalog(&st)?;
        Ok(id)
    }

    /// Sets the length of the independent record chunks that make up each
    /// page of the set (the whole page by default).
    pub fn set_chunk_size(&self, set: SetId, chunk_size: u64) -> Result<()> {
        let mut st = self.state.lock();
        let s = st.registry.get_mut(set)?;
        if chunk_size == 0 || s.page_size % chunk_size != 0 {
            return Err(Error::InvalidServiceConfig(format!(
                "chunk size {chunk_size} must divide page size {}",
                s.page_size
            )));
        }
        s.chunk_size = chunk_size;
        self.write_catalog(&st)
    }

    pub fn set_partition_scheme(&self, set: SetId, scheme: Option<u64>) -> Result<()> {
        let mut st = self.state.lock();
        st.registry.get_mut(set)?.partition_scheme = scheme;
        self.write_catalog(&st)
    }

    pub fn set_random_read_penalty(&self, set: SetId, w_r: f64) -> Result<()> {
        if !(w_r >= 1.0) {
            return Err(Error::InvalidArgs(format!("random read penalty must be >= 1, got {w_r}")));
        }
        self.state.lock().registry.get_mut(set)?.random_read_penalty = w_r;
        Ok(())
    }

    pub fn set_id(&self, name: &str) -> Result<SetId> {
        self.state.lock().registry.lookup(name).ok_or_else(|| Error::SetNameNotFound(name.to_string()))
    }

    pub fn set_info(&self, set: SetId) -> Result<SetInfo> {
        Ok(self.state.lock().registry.get(set)?.snapshot())
    }

    pub fn sets(&self) -> Vec<SetInfo> {
        self.state.lock().registry.iter().map(LocalitySet::snapshot).collect()
    }

    pub fn chunk_size(&self, set: SetId) -> Result<u64> {
        Ok(self.state.lock().registry.get(set)?.chunk_size)
    }

    pub fn attach_service(&self, set: SetId, kind: ServiceKind) -> Result<SetAttributes> {
        self.state.lock().registry.infer_attributes(set, kind)
    }

    pub fn detach_service(&self, set: SetId, kind: ServiceKind) -> Result<SetAttributes> {
        self.state.lock().registry.detach(set, kind)
    }

    pub fn mark_lifetime_ended(&self, set: SetId) -> Result<()> {
        self.state.lock().registry.mark_lifetime_ended(set)
    }

    pub fn record_access(&self, set: SetId, tick: u64) -> Result<()> {
        self.state.lock().registry.record_access(set, tick)
    }

    /// Advances the logical clock by one and returns the new tick.
    pub fn tick(&self) -> u64 {
        self.clock.fetch_add(1, Ordering::Relaxed) + 1
    }

    pub fn now(&self) -> u64 {
        self.clock.load(Ordering::Relaxed)
    }

    /// Frees every page of the set at once and deletes its files.
    pub fn remove_set(&self, set: SetId) -> Result<()> {
        let mut st = self.state.lock();
        let seqs: Vec<u64> = st.registry.get(set)?.pages.iter().copied().collect();
        if seqs.iter().any(|&seq| st.pages.get(&PageKey::new(set, seq)).is_some_and(|p| p.pin_count > 0)) {
            return Err(Error::PagesStillPinned(set));
        }
        for seq in seqs {
            let key = PageKey::new(set, seq);
            st.pool.remove(key);
            st.pages.remove(&key);
        }
        st.pending_flush.retain(|k| k.set != set);
        st.registry.remove(set)?;
        self.store.remove_set(set)?;
        self.write_catalog(&st)?;
        self.check_accounting(&st);
        Ok(())
    }

    fn write_catalog(&self, st: &State) -> Result<()> {
        let catalog = Catalog {
            next_id: st.registry.next_id(),
            sets: st
                .registry
                .iter()
                .map(|s| CatalogEntry {
                    id: s.id.0,
                    name: s.name.clone(),
                    page_size: s.page_size,
                    durability: s.attributes.durability,
                    chunk_size: s.chunk_size,
                    partition_scheme: s.partition_scheme,
                })
                .collect(),
        };
        let path = self.store.dirs()[0].join(CATALOG_FILE);
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec(&catalog).expect("catalog serializes"))?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    // ----- pages -----

    /// Appends a fresh zeroed page to the set, pinned once.
    pub fn allocate_page(&self, set: SetId) -> Result<PageHandle<'_>> {
        let mut st = self.state.lock();
        let s = st.registry.get(set)?;
        if s.attributes.is_ended() {
            return Err(Error::LifetimeEnded(set));
        }
        let size = s.page_size;
        let key = PageKey::new(set, s.next_seq);
        let data = self.make_room_and_insert(&mut st, key, size)?;
        let tick = self.tick();
        let s = st.registry.get_mut(set)?;
        s.next_seq += 1;
        s.pages.insert(key.seq);
        s.resident_pages += 1;
        s.attributes.access_recency = s.attributes.access_recency.max(tick);
        st.pages.insert(
            key,
            PageState { size, pin_count: 1, dirty: false, last_access_tick: tick, resident: true, on_disk: false },
        );
        st.stats.pages_allocated += 1;
        st.stats.pins += 1;
        self.check_accounting(&st);
        Ok(PageHandle { engine: self, key, size, data, released: false })
    }

    /// Pins an existing page, loading it from disk if needed.
    pub fn pin_page(&self, key: PageKey) -> Result<PageHandle<'_>> {
        let mut st = self.state.lock();
        self.pin_locked(&mut st, key)
    }

    fn pin_locked(&self, st: &mut State, key: PageKey) -> Result<PageHandle<'_>> {
        let page = *st.pages.get(&key).ok_or(Error::PageUnknown(key))?;
        let data = if page.resident {
            if page.pin_count == 0 {
                st.registry.get_mut(key.set)?.evictable.remove(&(page.last_access_tick, key.seq));
            }
            st.pool.data(key).expect("resident page has a frame")
        } else {
            if !page.on_disk {
                return Err(Error::MissingImage(key));
            }
            let data = self.make_room_and_insert(st, key, page.size)?;
            let elapsed = self.store.read_page_into(key.set, key.seq, &mut data.write())?;
            let s = st.registry.get_mut(key.set)?;
            s.resident_pages += 1;
            if self.config.profile_io {
                s.observe_read_time(elapsed.as_secs_f64());
            }
            st.stats.pages_loaded += 1;
            data
        };
        let tick = self.tick();
        let p = st.pages.get_mut(&key).expect("checked above");
        p.pin_count += 1;
        p.resident = true;
        p.last_access_tick = tick;
        let size = p.size;
        st.registry.record_access(key.set, tick)?;
        st.stats.pins += 1;
        self.check_accounting(st);
        Ok(PageHandle { engine: self, key, size, data, released: false })
    }

    fn make_room_and_insert(&self, st: &mut State, key: PageKey, size: u64) -> Result<PageData> {
        loop {
            if let Some(data) = st.pool.try_insert(key, size)? {
                return Ok(data);
            }
            self.evict_round(st, size)?;
        }
    }

    /// One policy decision and the evictions it names.
    fn evict_round(&self, st: &mut State, requested: u64) -> Result<()> {
        let decision = {
            let sets: Vec<&LocalitySet> = st.registry.iter().collect();
            let pages = &st.pages;
            let is_dirty = |k: PageKey| pages.get(&k).is_some_and(|p| p.dirty);
            let ctx = PolicyContext {
                sets: &sets,
                is_dirty: &is_dirty,
                now: self.now(),
                params: &self.config.cost,
                capacity: self.config.capacity,
            };
            match decide(self.config.policy, &ctx) {
                Err(Error::NoEvictablePage) => return Err(Error::EvictionExhausted { requested }),
                other => other?,
            }
        };
        st.stats.eviction_decisions += 1;
        for &key in &decision.victim_pages {
            self.evict_locked(st, key)?;
        }
        st.last_decision = Some(decision);
        Ok(())
    }

    /// Drops a page from memory, writing it first if it holds the only copy
    /// of live data. Returns the bytes written.
    pub fn evict_page(&self, key: PageKey) -> Result<u64> {
        let mut st = self.state.lock();
        let written = self.evict_locked(&mut st, key)?;
        self.check_accounting(&st);
        Ok(written)
    }

    fn evict_locked(&self, st: &mut State, key: PageKey) -> Result<u64> {
        let page = *st.pages.get(&key).ok_or(Error::PageUnknown(key))?;
        if page.pin_count > 0 {
            return Err(Error::PagePinned(key));
        }
        if !page.resident {
            return Err(Error::NotResident(key));
        }
        let set = st.registry.get(key.set)?;
        let alive = !set.attributes.is_ended();
        let durability = set.attributes.durability;
        let mut written = 0;
        let mut on_disk = page.on_disk;
        // a never-written page also has no other copy
        let needs_write = page.dirty || !page.on_disk;
        if needs_write && alive {
            let data = st.pool.data(key).expect("resident page has a frame");
            let elapsed = self.store.append_page(key.set, key.seq, &data.read())?;
            if self.config.audit_log {
                st.audit.push(AuditEvent { key, kind: AuditKind::Write });
            }
            if durability == Durability::WriteThrough {
                self.store.persist_meta(key.set)?;
            }
            if self.config.profile_io {
                st.registry.get_mut(key.set)?.observe_write_time(elapsed.as_secs_f64());
            }
            written = page.size;
            on_disk = true;
        } else if page.dirty {
            // ended lifetime: the stale image, if any, must not come back
            self.store.forget_page(key.set, key.seq);
            on_disk = false;
            st.stats.dirty_discarded += 1;
        }
        st.pool.remove(key);
        let s = st.registry.get_mut(key.set)?;
        s.evictable.remove(&(page.last_access_tick, key.seq));
        s.resident_pages -= 1;
        let p = st.pages.get_mut(&key).expect("checked above");
        p.resident = false;
        p.dirty = false;
        p.on_disk = on_disk;
        st.stats.pages_evicted += 1;
        st.pending_flush.retain(|k| *k != key);
        if self.config.audit_log {
            st.audit.push(AuditEvent { key, kind: AuditKind::Evict { dirty_alive: page.dirty && alive } });
        }
        Ok(written)
    }

    fn unpin(&self, key: PageKey, dirty: bool) -> Result<()> {
        let mut st = self.state.lock();
        let p = st.pages.get_mut(&key).ok_or(Error::PageUnknown(key))?;
        if p.pin_count == 0 {
            return Err(Error::NotPinned(key));
        }
        p.pin_count -= 1;
        p.dirty |= dirty;
        let page = *p;
        if page.pin_count > 0 {
            return Ok(());
        }
        let set = st.registry.get_mut(key.set)?;
        set.evictable.insert((page.last_access_tick, key.seq));
        let write_through = set.attributes.durability == Durability::WriteThrough;
        if write_through && page.dirty && !set.attributes.is_ended() {
            match self.config.flush_mode {
                FlushMode::Sync => self.flush_locked(&mut st, key)?,
                FlushMode::Deferred => st.pending_flush.push_back(key),
            }
        }
        Ok(())
    }

    /// Writes a resident dirty page in place, leaving it resident and clean.
    fn flush_locked(&self, st: &mut State, key: PageKey) -> Result<()> {
        let page = st.pages[&key];
        if !page.dirty || !page.resident {
            return Ok(());
        }
        let data = st.pool.data(key).expect("resident page has a frame");
        let elapsed = self.store.append_page(key.set, key.seq, &data.read())?;
        if self.config.audit_log {
            st.audit.push(AuditEvent { key, kind: AuditKind::Write });
        }
        let set = st.registry.get_mut(key.set)?;
        if self.config.profile_io {
            set.observe_write_time(elapsed.as_secs_f64());
        }
        if set.attributes.durability == Durability::WriteThrough {
            self.store.persist_meta(key.set)?;
        }
        let p = st.pages.get_mut(&key).expect("checked above");
        p.dirty = false;
        p.on_disk = true;
        Ok(())
    }

    /// Drains the deferred write-through queue. Returns pages written.
    pub fn flush_pending(&self) -> Result<usize> {
        let mut st = self.state.lock();
        let mut n = 0;
        while let Some(key) = st.pending_flush.pop_front() {
            if st.pages.get(&key).is_some_and(|p| p.dirty && p.resident && p.pin_count == 0) {
                self.flush_locked(&mut st, key)?;
                n += 1;
            }
        }
        Ok(n)
    }

    /// Writes every unpinned dirty page of the set and persists its meta.
    pub fn flush_set(&self, set: SetId) -> Result<usize> {
        let mut st = self.state.lock();
        let seqs: Vec<u64> = st.registry.get(set)?.pages.iter().copied().collect();
        let mut n = 0;
        for seq in seqs {
            let key = PageKey::new(set, seq);
            if st.pages.get(&key).is_some_and(|p| p.dirty && p.resident && p.pin_count == 0) {
                self.flush_locked(&mut st, key)?;
                n += 1;
            }
        }
        self.store.persist_meta(set)?;
        Ok(n)
    }

    /// Flushes deferred write-through pages and persists every meta file.
    /// Write-back pages stay in memory.
    pub fn close(&self) -> Result<()> {
        self.flush_pending()?;
        let st = self.state.lock();
        for set in st.registry.iter() {
            self.store.persist_meta(set.id)?;
        }
        self.write_catalog(&st)
    }

    pub fn scan_queue(&self, set: SetId, consumers: usize) -> Result<Arc<ScanQueue>> {
        let st = self.state.lock();
        let seqs = st.registry.get(set)?.pages.iter().copied().collect();
        Ok(Arc::new(ScanQueue::new(set, seqs, consumers.max(1))))
    }

    /// Takes the next page of a scan and pins it. `None` once exhausted.
    pub fn scan_next(&self, queue: &ScanQueue) -> Result<Option<PageHandle<'_>>> {
        // the cursor lock keeps pins in sequence order across consumers
        let mut cursor = queue.cursor.lock();
        let Some(key) = queue.key_at(*cursor) else { return Ok(None) };
        let handle = self.pin_page(key)?;
        *cursor += 1;
        Ok(Some(handle))
    }

    // ----- inspection -----

    pub fn page_state(&self, key: PageKey) -> Option<PageState> {
        self.state.lock().pages.get(&key).copied()
    }

    pub fn pool_used(&self) -> u64 {
        self.state.lock().pool.used()
    }

    pub fn pool_free(&self) -> u64 {
        self.state.lock().pool.free_bytes()
    }

    pub fn resident_count(&self) -> usize {
        self.state.lock().pool.resident_count()
    }

    pub fn stats(&self) -> PoolStats {
        self.state.lock().stats
    }

    pub fn io_stats(&self) -> IoStats {
        self.store.stats()
    }

    pub fn set_io_stats(&self, set: SetId) -> SetIoStats {
        self.store.set_stats(set)
    }

    pub fn last_decision(&self) -> Option<EvictionDecision> {
        self.state.lock().last_decision.clone()
    }

    pub fn audit_log(&self) -> Vec<AuditEvent> {
        self.state.lock().audit.clone()
    }

    fn check_accounting(&self, st: &State) {
        debug_assert!(st.pool.used() <= self.config.capacity);
        debug_assert_eq!(st.pool.resident_count(), st.registry.iter().map(|s| s.resident_pages as usize).sum::<usize>());
    }

    /// Full consistency check of pool, page table and eviction indexes.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let st = self.state.lock();
        let mut used = 0;
        for (key, p) in &st.pages {
            if p.pin_count > 0 && !p.resident {
                return Err(format!("{key} pinned but not resident"));
            }
            if p.dirty && !p.resident {
                return Err(format!("{key} dirty but not resident"));
            }
            if p.resident != st.pool.is_resident(*key) {
                return Err(format!("{key} residency disagrees with the page table"));
            }
            let set = st.registry.get(key.set).map_err(|e| e.to_string())?;
            let indexed = set.evictable.contains(&(p.last_access_tick, key.seq));
            if indexed != (p.resident && p.pin_count == 0) {
                return Err(format!("{key} eviction index out of date"));
            }
            if p.resident {
                used += p.size;
            }
        }
        if used != st.pool.used() {
            return Err(format!("pool used {} but resident pages sum to {used}", st.pool.used()));
        }
        if used > self.config.capacity {
            return Err(format!("pool used {used} exceeds capacity {}", self.config.capacity));
        }
        if st.pool.resident_count() != st.pages.values().filter(|p| p.resident).count() {
            return Err("page table holds non-resident pages".into());
        }
        Ok(())
    }
}

/// A pinned page. Dropping the handle unpins it as clean.
#[derive(Debug)]
pub struct PageHandle<'e> {
    engine: &'e Engine,
    key: PageKey,
    size: u64,
    data: PageData,
    released: bool,
}

impl<'e> PageHandle<'e> {
    pub fn key(&self) -> PageKey {
        self.key
    }

    pub fn size(&self) -> u64 {
        self.size
    }

    pub fn engine(&self) -> &'e Engine {
        self.engine
    }

    pub(crate) fn shared_data(&self) -> PageData {
        self.data.clone()
    }

    pub fn read(&self) -> RwLockReadGuard<'_, Vec<u8>> {
        self.data.read()
    }

    pub fn write(&self) -> RwLockWriteGuard<'_, Vec<u8>> {
        self.data.write()
    }

    pub fn unpin(mut self, dirty: bool) -> Result<()> {
        self.released = true;
        self.engine.unpin(self.key, dirty)
    }
}

impl Drop for PageHandle<'_> {
    fn drop(&mut self) {
        if !self.released {
            let _ = self.engine.unpin(self.key, false);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    const MIB: u64 = 1 << 20;

    fn engine(capacity: u64, policy: PolicyKind) -> (TempDir, Engine) {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = EngineConfig::new(capacity, vec![dir.path().join("d0")]).with_policy(policy);
        cfg.audit_log = true;
        (dir, Engine::open(cfg).unwrap())
    }

    #[test]
    fn fifth_allocation_evicts() {
        let (_d, e) = engine(4 * MIB, PolicyKind::DataAware);
        let s = e.create_set("data", MIB, Durability::WriteBack).unwrap();
        for _ in 0..4 {
            e.allocate_page(s).unwrap().unpin(true).unwrap();
        }
        assert_eq!(e.pool_used(), 4 * MIB);
        assert_eq!(e.stats().pages_evicted, 0);
        e.allocate_page(s).unwrap().unpin(true).unwrap();
        assert_eq!(e.stats().pages_evicted, 1);
        assert_eq!(e.io_stats().bytes_written, MIB);
        e.check_invariants().unwrap();
    }

    #[test]
    fn all_pinned_exhausts() {
        let (_d, e) = engine(4 * MIB, PolicyKind::DataAware);
        let s = e.create_set("data", MIB, Durability::WriteBack).unwrap();
        let _held: Vec<_> = (0..4).map(|_| e.allocate_page(s).unwrap()).collect();
        assert!(matches!(e.allocate_page(s), Err(Error::EvictionExhausted { .. })));
    }

    #[test]
    fn clean_page_of_other_set_is_taken() {
        let (_d, e) = engine(2 * MIB, PolicyKind::DataAware);
        let a = e.create_set("a", MIB, Durability::WriteThrough).unwrap();
        let b = e.create_set("b", MIB, Durability::WriteBack).unwrap();
        e.allocate_page(a).unwrap().unpin(true).unwrap();
        let held = e.allocate_page(b).unwrap();
        let _second = e.allocate_page(b).unwrap();
        assert!(!e.page_state(PageKey::new(a, 0)).unwrap().resident);
        // write-through page was written once on unpin, not again on eviction
        assert_eq!(e.io_stats().pages_written, 1);
        drop(held);
    }

    #[test]
    fn pin_resident_and_reload() {
        let (_d, e) = engine(MIB, PolicyKind::DataAware);
        let s = e.create_set("wt", MIB, Durability::WriteThrough).unwrap();
        let h = e.allocate_page(s).unwrap();
        h.write()[0] = 42;
        h.unpin(true).unwrap();
        assert_eq!(e.io_stats().pages_written, 1);
        let key = PageKey::new(s, 0);
        let h = e.pin_page(key).unwrap();
        assert_eq!(e.page_state(key).unwrap().pin_count, 1);
        assert_eq!(e.io_stats().pages_read, 0);
        drop(h);
        assert_eq!(e.evict_page(key).unwrap(), 0);
        let h = e.pin_page(key).unwrap();
        assert_eq!(h.read()[0], 42);
        assert_eq!(e.io_stats().pages_read, 1);
        assert_eq!(e.stats().pages_loaded, 1);
    }

    #[test]
    fn write_back_defers_writes() {
        let (_d, e) = engine(4 * MIB, PolicyKind::DataAware);
        let s = e.create_set("wb", MIB, Durability::WriteBack).unwrap();
        e.allocate_page(s).unwrap().unpin(true).unwrap();
        assert_eq!(e.io_stats().bytes_written, 0);
        assert_eq!(e.evict_page(PageKey::new(s, 0)).unwrap(), MIB);
        let log = e.audit_log();
        assert_eq!(log[0].kind, AuditKind::Write);
        assert_eq!(log[1].kind, AuditKind::Evict { dirty_alive: true });
    }

    #[test]
    fn ended_set_discards_dirty_pages() {
        let (_d, e) = engine(8 * MIB, PolicyKind::DataAware);
        let s = e.create_set("tmp", MIB, Durability::WriteBack).unwrap();
        for _ in 0..5 {
            e.allocate_page(s).unwrap().unpin(true).unwrap();
        }
        e.mark_lifetime_ended(s).unwrap();
        e.mark_lifetime_ended(s).unwrap();
        for seq in 0..5 {
            assert_eq!(e.evict_page(PageKey::new(s, seq)).unwrap(), 0);
        }
        assert_eq!(e.set_io_stats(s).write_bytes, 0);
        assert!(matches!(e.pin_page(PageKey::new(s, 0)), Err(Error::MissingImage(_))));
        assert!(matches!(e.allocate_page(s), Err(Error::LifetimeEnded(_))));
    }

    #[test]
    fn ended_set_is_evicted_first() {
        let (_d, e) = engine(4 * MIB, PolicyKind::DataAware);
        let keep = e.create_set("keep", MIB, Durability::WriteThrough).unwrap();
        let tmp = e.create_set("tmp", MIB, Durability::WriteBack).unwrap();
        e.allocate_page(tmp).unwrap().unpin(true).unwrap();
        e.allocate_page(tmp).unwrap().unpin(true).unwrap();
        e.allocate_page(keep).unwrap().unpin(true).unwrap();
        e.allocate_page(keep).unwrap().unpin(true).unwrap();
        e.mark_lifetime_ended(tmp).unwrap();
        e.allocate_page(keep).unwrap().unpin(true).unwrap();
        assert_eq!(e.last_decision().unwrap().victim_set, tmp);
        assert_eq!(e.set_io_stats(tmp).write_bytes, 0);
    }

    #[test]
    fn pinned_page_of_ended_set_waits_for_unpin() {
        let (_d, e) = engine(MIB, PolicyKind::DataAware);
        let s = e.create_set("tmp", MIB, Durability::WriteBack).unwrap();
        let t = e.create_set("other", MIB, Durability::WriteBack).unwrap();
        let h = e.allocate_page(s).unwrap();
        e.mark_lifetime_ended(s).unwrap();
        assert!(matches!(e.allocate_page(t), Err(Error::EvictionExhausted { .. })));
        h.unpin(true).unwrap();
        e.allocate_page(t).unwrap();
    }

    #[test]
    fn unpin_twice_fails() {
        let (_d, e) = engine(MIB, PolicyKind::DataAware);
        let s = e.create_set("x", MIB, Durability::WriteBack).unwrap();
        e.allocate_page(s).unwrap().unpin(false).unwrap();
        assert!(matches!(e.unpin(PageKey::new(s, 0), false), Err(Error::NotPinned(_))));
    }

    #[test]
    fn evict_errors() {
        let (_d, e) = engine(2 * MIB, PolicyKind::DataAware);
        let s = e.create_set("x", MIB, Durability::WriteBack).unwrap();
        let h = e.allocate_page(s).unwrap();
        assert!(matches!(e.evict_page(h.key()), Err(Error::PagePinned(_))));
        let key = h.key();
        h.unpin(true).unwrap();
        e.evict_page(key).unwrap();
        assert!(matches!(e.evict_page(key), Err(Error::NotResident(_))));
        assert!(matches!(e.pin_page(PageKey::new(s, 9)), Err(Error::PageUnknown(_))));
    }

    #[test]
    fn remove_set_frees_pool_and_files() {
        let (_d, e) = engine(128 * MIB, PolicyKind::DataAware);
        let s = e.create_set("x", MIB, Durability::WriteThrough).unwrap();
        for _ in 0..100 {
            e.allocate_page(s).unwrap().unpin(true).unwrap();
        }
        let data = e.store().data_path(s, 0);
        assert!(data.exists());
        let free = e.pool_free();
        let h = e.pin_page(PageKey::new(s, 3)).unwrap();
        assert!(matches!(e.remove_set(s), Err(Error::PagesStillPinned(_))));
        assert_eq!(e.pool_free(), free);
        drop(h);
        e.remove_set(s).unwrap();
        assert_eq!(e.pool_free(), free + 100 * MIB);
        assert!(!data.exists());
        assert!(e.create_set("x", MIB, Durability::WriteBack).is_ok());
    }

    #[test]
    fn write_through_survives_restart() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = EngineConfig::new(2 * MIB, vec![dir.path().join("a"), dir.path().join("b")]);
        {
            let e = Engine::open(cfg.clone()).unwrap();
            let s = e.create_set("wt", MIB, Durability::WriteThrough).unwrap();
            for i in 0..5u8 {
                let h = e.allocate_page(s).unwrap();
                h.write()[7] = i;
                h.unpin(true).unwrap();
            }
        }
        let e = Engine::open(cfg).unwrap();
        let s = e.set_id("wt").unwrap();
        for i in 0..5u8 {
            assert_eq!(e.pin_page(PageKey::new(s, i as u64)).unwrap().read()[7], i);
        }
        let h = e.allocate_page(s).unwrap();
        assert_eq!(h.key().seq, 5);
    }

    #[test]
    fn deferred_flush() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = EngineConfig::new(4 * MIB, vec![dir.path().to_path_buf()]);
        cfg.flush_mode = FlushMode::Deferred;
        let e = Engine::open(cfg).unwrap();
        let s = e.create_set("wt", MIB, Durability::WriteThrough).unwrap();
        e.allocate_page(s).unwrap().unpin(true).unwrap();
        assert_eq!(e.io_stats().pages_written, 0);
        assert_eq!(e.flush_pending().unwrap(), 1);
        assert_eq!(e.io_stats().pages_written, 1);
        assert!(!e.page_state(PageKey::new(s, 0)).unwrap().dirty);
    }

    #[test]
    fn scan_queue_delivers_each_page_once() {
        let (_d, e) = engine(64 * MIB, PolicyKind::DataAware);
        let s = e.create_set("x", MIB, Durability::WriteBack).unwrap();
        for _ in 0..10 {
            e.allocate_page(s).unwrap().unpin(true).unwrap();
        }
        let q = e.scan_queue(s, 3).unwrap();
        let seen = Mutex::new(Vec::new());
        std::thread::scope(|sc| {
            for _ in 0..3 {
                sc.spawn(|| {
                    while let Some(h) = e.scan_next(&q).unwrap() {
                        seen.lock().push(h.key().seq);
                    }
                });
            }
        });
        let mut seen = seen.into_inner();
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        for seq in 0..10 {
            assert_eq!(e.page_state(PageKey::new(s, seq)).unwrap().pin_count, 0);
        }
        let empty = e.create_set("empty", MIB, Durability::WriteBack).unwrap();
        assert!(e.scan_next(&e.scan_queue(empty, 2).unwrap()).unwrap().is_none());
    }

    #[test]
    fn slab_pool_requires_uniform_pages() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = EngineConfig::new(4 * MIB, vec![dir.path().to_path_buf()]).with_allocator(AllocatorKind::Slab);
        let e = Engine::open(cfg).unwrap();
        e.create_set("a", MIB, Durability::WriteBack).unwrap();
        assert!(matches!(e.create_set("b", 2 * MIB, Durability::WriteBack), Err(Error::SlabSizeMismatch { .. })));
    }
}
