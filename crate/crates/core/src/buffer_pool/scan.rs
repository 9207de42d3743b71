use parking_lot::Mutex;

use crate::buffer_pool::PageKey;
use crate::locality::SetId;

/// Shared cursor over a set's pages in sequence order. Consumers take pages
/// exclusively; the engine pins each page as it is taken.
#[derive(Debug)]
pub struct ScanQueue {
    set: SetId,
    seqs: Vec<u64>,
    consumers: usize,
    pub(crate) cursor: Mutex<usize>,
}

impl ScanQueue {
    pub(crate) fn new(set: SetId, seqs: Vec<u64>, consumers: usize) -> Self {
        ScanQueue { set, seqs, consumers, cursor: Mutex::new(0) }
    }

    pub fn set(&self) -> SetId {
        self.set
    }

    pub fn len(&self) -> usize {
        self.seqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seqs.is_empty()
    }

    pub fn consumers(&self) -> usize {
        self.consumers
    }

    pub fn remaining(&self) -> usize {
        self.seqs.len() - *self.cursor.lock()
    }

    pub(crate) fn key_at(&self, i: usize) -> Option<PageKey> {
        self.seqs.get(i).map(|&seq| PageKey::new(self.set, seq))
    }
}
