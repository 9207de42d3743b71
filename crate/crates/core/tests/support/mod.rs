//! Reference models shared by the integration tests.

#![allow(dead_code)]

use std::collections::BTreeMap;

/// Page-level replay of a write-once, scan-many workload over one set, kept
/// independent of the engine: it only knows pages, recency and the victim
/// rule of each policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimPolicy {
    /// One set: MRU victims, one per decision while writing, 10% while
    /// reading.
    DataAware,
    /// 10% of resident pages per decision, least recent first.
    GlobalLru,
    /// 10% of resident pages per decision, most recent first.
    GlobalMru,
    /// One MRU victim per decision.
    DbminAdaptive,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SimCounts {
    pub loads_per_scan: Vec<u64>,
    pub pages_written: u64,
    pub evictions: u64,
}

impl SimCounts {
    pub fn loads(&self) -> u64 {
        self.loads_per_scan.iter().sum()
    }
}

#[derive(Debug, Clone, Copy)]
struct Page {
    dirty: bool,
    on_disk: bool,
}

struct Sim {
    policy: SimPolicy,
    pool_pages: usize,
    clock: u64,
    /// last access -> page
    resident: BTreeMap<u64, usize>,
    last: Vec<u64>,
    pages: Vec<Page>,
    counts: SimCounts,
}

impl Sim {
    fn evict_round(&mut self, writing: bool) {
        let n = self.resident.len();
        let tenth = n.div_ceil(10).max(1);
        let (quota, mru) = match self.policy {
            SimPolicy::DataAware => (if writing { 1 } else { tenth }, true),
            SimPolicy::GlobalLru => (tenth, false),
            SimPolicy::GlobalMru => (tenth, true),
            SimPolicy::DbminAdaptive => (1, true),
        };
        let victims: Vec<u64> = if mru {
            self.resident.keys().rev().take(quota).copied().collect()
        } else {
            self.resident.keys().take(quota).copied().collect()
        };
        for t in victims {
            let p = self.resident.remove(&t).unwrap();
            let page = &mut self.pages[p];
            if page.dirty || !page.on_disk {
                self.counts.pages_written += 1;
                page.on_disk = true;
            }
            page.dirty = false;
            self.counts.evictions += 1;
        }
    }

    fn touch(&mut self, p: usize) {
        self.resident.remove(&self.last[p]);
        self.clock += 1;
        self.last[p] = self.clock;
        self.resident.insert(self.clock, p);
    }

    fn is_resident(&self, p: usize) -> bool {
        self.resident.get(&self.last[p]) == Some(&p)
    }
}

/// Writes `pages` pages (each dirty on release), then scans them in order
/// `scans` times, in a pool of `pool_pages` pages.
pub fn simulate_seq(policy: SimPolicy, pages: usize, pool_pages: usize, scans: usize) -> SimCounts {
    let mut s = Sim {
        policy,
        pool_pages,
        clock: 0,
        resident: BTreeMap::new(),
        last: vec![0; pages],
        pages: vec![Page { dirty: false, on_disk: false }; pages],
        counts: SimCounts::default(),
    };
    for p in 0..pages {
        while s.resident.len() >= s.pool_pages {
            s.evict_round(true);
        }
        s.touch(p);
        s.pages[p].dirty = true;
    }
    for _ in 0..scans {
        let mut loads = 0;
        for p in 0..pages {
            if !s.is_resident(p) {
                while s.resident.len() >= s.pool_pages {
                    s.evict_round(false);
                }
                loads += 1;
            }
            s.touch(p);
        }
        s.counts.loads_per_scan.push(loads);
    }
    s.counts
}

/// Records of `size` bytes that fit in a page of `page_size` bytes, with a
/// 4-byte length in front of each.
pub fn records_per_page(page_size: usize, size: usize) -> usize {
    page_size / (size + 4)
}
