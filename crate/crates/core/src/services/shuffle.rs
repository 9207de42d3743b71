//! Shuffle through virtual shuffle buffers.
//!
//! Every partition is its own locality set. A per-partition allocator keeps
//! one large host page pinned and hands out small pages carved from it; each
//! writer fills its own small page, so many writers share a host page without
//! sharing bytes. A host page is unpinned (dirty) once all of its small pages
//! have been claimed and released. Because each partition writes into one
//! set, a partition that overflows memory produces one data file, not one per
//! writer.

use std::collections::HashMap;

use parking_lot::Mutex;

use crate::buffer_pool::PageData;
use crate::engine::{Engine, PageHandle};
use crate::error::{Error, Result};
use crate::locality::{Durability, ServiceKind, SetId};
use crate::services::{record, stable_hash};

pub const DEFAULT_SMALL_PAGE: u64 = 4 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShuffleConfig {
    pub partitions: usize,
    pub page_size: u64,
    pub small_page_size: u64,
    pub durability: Durability,
    pub seed: u64,
}

impl ShuffleConfig {
    pub fn new(partitions: usize, page_size: u64) -> Self {
        ShuffleConfig {
            partitions,
            page_size,
            small_page_size: DEFAULT_SMALL_PAGE.min(page_size),
            durability: Durability::WriteBack,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.partitions == 0 {
            return Err(Error::InvalidServiceConfig("at least one partition is required".into()));
        }
        if self.small_page_size == 0 || !self.page_size.is_multiple_of(self.small_page_size) {
            return Err(Error::InvalidServiceConfig(format!(
                "page size {} must be a multiple of the small page size {}",
                self.page_size, self.small_page_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug)]
struct Host<'e> {
    handle: PageHandle<'e>,
    claimed: usize,
    released: usize,
}

#[derive(Debug)]
struct SmallPageAllocator<'e> {
    set: SetId,
    /// Host page currently being carved, by page seq.
    current: Option<u64>,
    hosts: HashMap<u64, Host<'e>>,
}

/// A claimed small page: a byte range of a pinned host page.
#[derive(Debug)]
struct SmallPage {
    host: u64,
    data: PageData,
    start: usize,
    end: usize,
    pos: usize,
}

/// The partition sets of one shuffle and their small-page allocators.
#[derive(Debug)]
pub struct Shuffle<'e> {
    engine: &'e Engine,
    config: ShuffleConfig,
    sets: Vec<SetId>,
    allocators: Vec<Mutex<SmallPageAllocator<'e>>>,
    finished: bool,
}

impl<'e> Shuffle<'e> {
    /// Creates sets `<name>#p<i>` for every partition.
    pub fn create(engine: &'e Engine, name: &str, config: ShuffleConfig) -> Result<Self> {
        config.validate()?;
        let mut sets = Vec::with_capacity(config.partitions);
        for p in 0..config.partitions {
            let set = engine.create_set(&format!("{name}#p{p}"), config.page_size, config.durability)?;
            engine.set_chunk_size(set, config.small_page_size)?;
            engine.attach_service(set, ServiceKind::Shuffle)?;
            sets.push(set);
        }
        let allocators = sets
            .iter()
            .map(|&set| Mutex::new(SmallPageAllocator { set, current: None, hosts: HashMap::new() }))
            .collect();
        Ok(Shuffle { engine, config, sets, allocators, finished: false })
    }

    pub fn config(&self) -> &ShuffleConfig {
        &self.config
    }

    pub fn partition_sets(&self) -> &[SetId] {
        &self.sets
    }

    /// Partition of a key: a pure function of the key bytes and the seed.
    pub fn route(&self, key: &[u8]) -> usize {
        route(key, self.config.partitions, self.config.seed)
    }

    /// The buffer through which `writer_id` writes into `partition`.
    pub fn buffer(&self, writer_id: usize, partition: usize) -> Result<VirtualShuffleBuffer<'_, 'e>> {
        if partition >= self.sets.len() {
            return Err(Error::InvalidArgs(format!("partition {partition} out of range")));
        }
        Ok(VirtualShuffleBuffer { shuffle: self, writer_id, partition, current: None, records: 0 })
    }

    fn small_pages_per_host(&self) -> usize {
        (self.config.page_size / self.config.small_page_size) as usize
    }

    fn claim(&self, partition: usize) -> Result<SmallPage> {
        let per_host = self.small_pages_per_host();
        let mut alloc = self.allocators[partition].lock();
        let seq = match alloc.current {
            Some(seq) if alloc.hosts[&seq].claimed < per_host => seq,
            _ => {
                let handle = self.engine.allocate_page(alloc.set)?;
                let seq = handle.key().seq;
                alloc.hosts.insert(seq, Host { handle, claimed: 0, released: 0 });
                alloc.current = Some(seq);
                seq
            }
        };
        let host = alloc.hosts.get_mut(&seq).expect("host registered");
        let idx = host.claimed;
        host.claimed += 1;
        let size = self.config.small_page_size as usize;
        Ok(SmallPage { host: seq, data: host.handle.shared_data(), start: idx * size, end: (idx + 1) * size, pos: idx * size })
    }

    fn release(&self, partition: usize, host_seq: u64) -> Result<()> {
        let per_host = self.small_pages_per_host();
        let mut alloc = self.allocators[partition].lock();
        let host = alloc.hosts.get_mut(&host_seq).expect("released small page has a host");
        host.released += 1;
        if host.claimed == per_host && host.released == per_host {
            let host = alloc.hosts.remove(&host_seq).expect("present");
            if alloc.current == Some(host_seq) {
                alloc.current = None;
            }
            drop(alloc);
            host.handle.unpin(true)?;
        }
        Ok(())
    }

    /// Unpins partially used host pages and detaches the shuffle service.
    /// All buffers must have been closed.
    pub fn finish(mut self) -> Result<ShuffleSummary> {
        self.close()?;
        Ok(self.summary())
    }

    fn close(&mut self) -> Result<()> {
        if self.finished {
            return Ok(());
        }
        self.finished = true;
        for (alloc, &set) in self.allocators.iter().zip(&self.sets) {
            let mut alloc = alloc.lock();
            alloc.current = None;
            let hosts: Vec<Host<'e>> = alloc.hosts.drain().map(|(_, h)| h).collect();
            drop(alloc);
            for host in hosts {
                if host.released != host.claimed {
                    return Err(Error::InvalidServiceConfig("shuffle finished with open buffers".into()));
                }
                host.handle.unpin(true)?;
            }
            self.engine.detach_service(set, ServiceKind::Shuffle)?;
        }
        Ok(())
    }

    pub fn summary(&self) -> ShuffleSummary {
        let spill_files = self.sets.iter().map(|&s| self.engine.store().data_file_count(s)).sum();
        let pages = self.sets.iter().map(|&s| self.engine.set_info(s).map_or(0, |i| i.pages.len())).sum();
        ShuffleSummary { partitions: self.sets.len(), spill_files, pages }
    }
}

impl Drop for Shuffle<'_> {
    fn drop(&mut self) {
        let _ = self.close();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShuffleSummary {
    pub partitions: usize,
    /// Data files holding spilled pages, over all partitions.
    pub spill_files: usize,
    pub pages: usize,
}

pub fn route(key: &[u8], partitions: usize, seed: u64) -> usize {
    (stable_hash(key, seed) % partitions as u64) as usize
}

/// One writer's view of one partition.
#[derive(Debug)]
pub struct VirtualShuffleBuffer<'s, 'e> {
    shuffle: &'s Shuffle<'e>,
    writer_id: usize,
    partition: usize,
    current: Option<SmallPage>,
    records: u64,
}

impl VirtualShuffleBuffer<'_, '_> {
    pub fn writer_id(&self) -> usize {
        self.writer_id
    }

    pub fn partition(&self) -> usize {
        self.partition
    }

    pub fn records(&self) -> u64 {
        self.records
    }

    pub fn add_object(&mut self, rec: &[u8]) -> Result<()> {
        if rec.is_empty() {
            return Err(Error::EmptyRecord);
        }
        let need = record::framed_len(rec.len());
        let small = self.shuffle.config.small_page_size as usize;
        if need > small {
            return Err(Error::RecordLargerThanSmallPage { len: rec.len(), capacity: small - record::LEN_PREFIX });
        }
        if self.current.as_ref().is_none_or(|p| p.pos + need > p.end) {
            self.release_current()?;
            self.current = Some(self.shuffle.claim(self.partition)?);
        }
        let page = self.current.as_mut().expect("claimed above");
        page.pos = record::put(&mut page.data.write(), page.pos, rec);
        self.shuffle.engine.tick();
        self.records += 1;
        Ok(())
    }

    fn release_current(&mut self) -> Result<()> {
        if let Some(page) = self.current.take() {
            debug_assert!(page.start <= page.pos && page.pos <= page.end);
            self.shuffle.release(self.partition, page.host)?;
        }
        Ok(())
    }

    /// Returns the current small page to its host.
    pub fn close(mut self) -> Result<u64> {
        self.release_current()?;
        Ok(self.records)
    }
}

impl Drop for VirtualShuffleBuffer<'_, '_> {
    fn drop(&mut self) {
        let _ = self.release_current();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::EngineConfig;
    use crate::services::sequential::seq_get_iterators;

    fn engine(capacity: u64) -> (tempfile::TempDir, Engine) {
        let dir = tempfile::tempdir().unwrap();
        let e = Engine::open(EngineConfig::new(capacity, vec![dir.path().to_path_buf()])).unwrap();
        (dir, e)
    }

    fn read_all(e: &Engine, set: SetId) -> Vec<Vec<u8>> {
        let mut out = Vec::new();
        for mut it in seq_get_iterators(e, set, 1).unwrap() {
            it.for_each_record(|r| out.push(r.to_vec())).unwrap();
        }
        out
    }

    #[test]
    fn config_checks() {
        assert!(ShuffleConfig { small_page_size: 3000, ..ShuffleConfig::new(2, 8192) }.validate().is_err());
        assert!(ShuffleConfig::new(0, 8192).validate().is_err());
    }

    #[test]
    fn concurrent_writers_route_and_conserve() {
        let (_d, e) = engine(4 << 20);
        let cfg = ShuffleConfig { small_page_size: 1024, ..ShuffleConfig::new(4, 8192) };
        let shuffle = Shuffle::create(&e, "sh", cfg).unwrap();
        let keys: Vec<Vec<u8>> = (0..20_000u32).map(|i| format!("k{i:09}").into_bytes()).collect();
        std::thread::scope(|sc| {
            for w in 0..4 {
                let shuffle = &shuffle;
                let keys = &keys;
                sc.spawn(move || {
                    let mut bufs: Vec<_> = (0..4).map(|p| shuffle.buffer(w, p).unwrap()).collect();
                    for k in keys.iter().skip(w).step_by(4) {
                        bufs[shuffle.route(k)].add_object(k).unwrap();
                    }
                    for b in bufs {
                        b.close().unwrap();
                    }
                });
            }
        });
        let sets = shuffle.partition_sets().to_vec();
        let summary = shuffle.finish().unwrap();
        assert!(summary.spill_files <= 4);
        let mut all = Vec::new();
        for (p, &set) in sets.iter().enumerate() {
            for r in read_all(&e, set) {
                assert_eq!(route(&r, 4, 0), p);
                all.push(r);
            }
        }
        all.sort();
        assert_eq!(all, keys);
    }

    #[test]
    fn host_page_unpinned_when_all_small_pages_released() {
        let (_d, e) = engine(1 << 20);
        let cfg = ShuffleConfig { small_page_size: 64, ..ShuffleConfig::new(1, 128) };
        let shuffle = Shuffle::create(&e, "sh", cfg).unwrap();
        let set = shuffle.partition_sets()[0];
        let mut a = shuffle.buffer(0, 0).unwrap();
        let mut b = shuffle.buffer(1, 0).unwrap();
        a.add_object(&[1; 50]).unwrap();
        b.add_object(&[2; 50]).unwrap();
        let key = crate::buffer_pool::PageKey::new(set, 0);
        assert_eq!(e.page_state(key).unwrap().pin_count, 1);
        a.close().unwrap();
        assert_eq!(e.page_state(key).unwrap().pin_count, 1);
        b.close().unwrap();
        let st = e.page_state(key).unwrap();
        assert_eq!(st.pin_count, 0);
        assert!(st.dirty);
        assert!(matches!(
            shuffle.buffer(0, 0).unwrap().add_object(&[0; 61]),
            Err(Error::RecordLargerThanSmallPage { .. })
        ));
        shuffle.finish().unwrap();
        assert_eq!(read_all(&e, set).len(), 2);
    }
}
