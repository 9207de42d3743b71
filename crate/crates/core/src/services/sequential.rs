//! Sequential write and parallel sequential read.

use std::sync::Arc;

use crate::buffer_pool::ScanQueue;
use crate::engine::{Engine, PageHandle};
use crate::error::{Error, Result};
use crate::locality::{ServiceKind, SetId};
use crate::services::record::{self, Cursor};

/// Appends records to a set page by page. One writer per set.
#[derive(Debug)]
pub struct SeqWriter<'e> {
    engine: &'e Engine,
    set: SetId,
    page_size: usize,
    current: Option<PageHandle<'e>>,
    offset: usize,
    written: u64,
    finished: bool,
}

impl<'e> SeqWriter<'e> {
    pub fn new(engine: &'e Engine, set: SetId) -> Result<Self> {
        let page_size = engine.set_info(set)?.page_size as usize;
        engine.attach_service(set, ServiceKind::SeqWrite)?;
        Ok(SeqWriter { engine, set, page_size, current: None, offset: 0, written: 0, finished: false })
    }

    pub fn set(&self) -> SetId {
        self.set
    }

    pub fn records_written(&self) -> u64 {
        self.written
    }

    pub fn add_object(&mut self, rec: &[u8]) -> Result<()> {
        if rec.is_empty() {
            return Err(Error::EmptyRecord);
        }
        let need = record::framed_len(rec.len());
        if need > self.page_size {
            return Err(Error::RecordLargerThanPage { len: rec.len(), capacity: self.page_size - record::LEN_PREFIX });
        }
        if self.current.is_none() || self.offset + need > self.page_size {
            if let Some(full) = self.current.take() {
                full.unpin(true)?;
            }
            self.current = Some(self.engine.allocate_page(self.set)?);
            self.offset = 0;
        }
        let page = self.current.as_ref().expect("page allocated above");
        self.offset = record::put(&mut page.write(), self.offset, rec);
        self.engine.tick();
        self.written += 1;
        Ok(())
    }

    /// Unpins the last page and detaches the write service.
    pub fn finish(mut self) -> Result<u64> {
        self.close()?;
        Ok(self.written)
    }

    fn close(&mut self) -> Result<()> {
        if self.finished {
            return Ok(());
        }
        self.finished = true;
        if let Some(page) = self.current.take() {
            page.unpin(true)?;
        }
        self.engine.detach_service(self.set, ServiceKind::SeqWrite)?;
        Ok(())
    }
}

impl Drop for SeqWriter<'_> {
    fn drop(&mut self) {
        let _ = self.close();
    }
}

/// Detaches the read service when the last iterator of a group is dropped.
#[derive(Debug)]
struct ReadAttachment<'e> {
    engine: &'e Engine,
    set: SetId,
}

impl Drop for ReadAttachment<'_> {
    fn drop(&mut self) {
        let _ = self.engine.detach_service(self.set, ServiceKind::SeqRead);
    }
}

/// One of several iterators sharing a scan of a set. Each page goes to
/// exactly one iterator.
#[derive(Debug)]
pub struct SeqIterator<'e> {
    engine: &'e Engine,
    queue: Arc<ScanQueue>,
    chunk_size: usize,
    page: Option<PageHandle<'e>>,
    cursor: Cursor,
    _attachment: Arc<ReadAttachment<'e>>,
}

/// Splits a scan of `set` among `num_threads` iterators.
pub fn seq_get_iterators(engine: &Engine, set: SetId, num_threads: usize) -> Result<Vec<SeqIterator<'_>>> {
    let chunk_size = engine.chunk_size(set)? as usize;
    engine.attach_service(set, ServiceKind::SeqRead)?;
    let attachment = Arc::new(ReadAttachment { engine, set });
    let queue = engine.scan_queue(set, num_threads)?;
    Ok((0..num_threads.max(1))
        .map(|_| SeqIterator {
            engine,
            queue: queue.clone(),
            chunk_size,
            page: None,
            cursor: Cursor::default(),
            _attachment: attachment.clone(),
        })
        .collect())
}

impl<'e> SeqIterator<'e> {
    /// Takes the next whole page off the shared queue. The page stays pinned
    /// until the handle is dropped.
    pub fn next_page(&mut self) -> Result<Option<PageHandle<'e>>> {
        self.page = None;
        self.engine.scan_next(&self.queue)
    }

    /// Calls `f` on every record this iterator receives, releasing each page
    /// once its records are consumed. Returns the record count.
    pub fn for_each_record(&mut self, mut f: impl FnMut(&[u8])) -> Result<u64> {
        let mut n = 0;
        if let Some(page) = self.page.take() {
            let data = page.read();
            while let Some(rec) = self.cursor.next_in(&data, self.chunk_size) {
                f(rec);
                n += 1;
            }
        }
        while let Some(page) = self.engine.scan_next(&self.queue)? {
            let data = page.read();
            for rec in record::page_records(&data, self.chunk_size) {
                self.engine.tick();
                f(rec);
                n += 1;
            }
        }
        Ok(n)
    }

    /// Next record, copied out of its page.
    pub fn next_record(&mut self) -> Result<Option<Vec<u8>>> {
        loop {
            if let Some(page) = &self.page {
                let data = page.read();
                if let Some(rec) = self.cursor.next_in(&data, self.chunk_size) {
                    self.engine.tick();
                    return Ok(Some(rec.to_vec()));
                }
            }
            self.page = None;
            match self.engine.scan_next(&self.queue)? {
                Some(page) => {
                    self.page = Some(page);
                    self.cursor = Cursor::default();
                }
                None => return Ok(None),
            }
        }
    }
}

impl Iterator for SeqIterator<'_> {
    type Item = Result<Vec<u8>>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_record().transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::EngineConfig;
    use crate::locality::{CurrentOperation, Durability, ReadingPattern, WritingPattern};
    use parking_lot::Mutex;

    fn engine(capacity: u64) -> (tempfile::TempDir, Engine) {
        let dir = tempfile::tempdir().unwrap();
        let e = Engine::open(EngineConfig::new(capacity, vec![dir.path().to_path_buf()])).unwrap();
        (dir, e)
    }

    fn rec(i: u32) -> Vec<u8> {
        format!("record-{i:08}").into_bytes()
    }

    #[test]
    fn write_then_read_in_order() {
        let (_d, e) = engine(1 << 20);
        let s = e.create_set("s", 4096, Durability::WriteBack).unwrap();
        let mut w = SeqWriter::new(&e, s).unwrap();
        assert_eq!(e.set_info(s).unwrap().attributes.writing_pattern, WritingPattern::SequentialWrite);
        for i in 0..1000 {
            w.add_object(&rec(i)).unwrap();
        }
        assert_eq!(w.finish().unwrap(), 1000);
        // 15-byte payloads, 19 framed, 215 per page
        assert_eq!(e.set_info(s).unwrap().pages.len(), 1000usize.div_ceil(4096 / 19));
        let mut it = seq_get_iterators(&e, s, 1).unwrap();
        let info = e.set_info(s).unwrap();
        assert_eq!(info.attributes.reading_pattern, ReadingPattern::SequentialRead);
        assert_eq!(info.attributes.current_operation, CurrentOperation::Read);
        let got: Vec<Vec<u8>> = it.remove(0).map(|r| r.unwrap()).collect();
        assert_eq!(got, (0..1000).map(rec).collect::<Vec<_>>());
        assert_eq!(e.set_info(s).unwrap().attributes.current_operation, CurrentOperation::None);
    }

    #[test]
    fn rollover_when_record_does_not_fit() {
        let (_d, e) = engine(1 << 20);
        let s = e.create_set("s", 100, Durability::WriteBack).unwrap();
        let mut w = SeqWriter::new(&e, s).unwrap();
        w.add_object(&[1; 60]).unwrap();
        w.add_object(&[2; 60]).unwrap();
        assert!(matches!(w.add_object(&[0; 97]), Err(Error::RecordLargerThanPage { .. })));
        assert!(matches!(w.add_object(&[]), Err(Error::EmptyRecord)));
        w.add_object(&[3; 96]).unwrap();
        w.finish().unwrap();
        assert_eq!(e.set_info(s).unwrap().pages.len(), 3);
    }

    #[test]
    fn parallel_iterators_partition_records() {
        let (_d, e) = engine(1 << 20);
        let s = e.create_set("s", 1024, Durability::WriteBack).unwrap();
        let mut w = SeqWriter::new(&e, s).unwrap();
        for i in 0..5000 {
            w.add_object(&rec(i)).unwrap();
        }
        w.finish().unwrap();
        let out = Mutex::new(Vec::new());
        let its = seq_get_iterators(&e, s, 4).unwrap();
        std::thread::scope(|sc| {
            for mut it in its {
                let out = &out;
                sc.spawn(move || {
                    let mut local = Vec::new();
                    it.for_each_record(|r| local.push(r.to_vec())).unwrap();
                    out.lock().extend(local);
                });
            }
        });
        let mut got = out.into_inner();
        got.sort();
        assert_eq!(got, (0..5000).map(rec).collect::<Vec<_>>());
    }

    #[test]
    fn empty_set_exhausts_immediately() {
        let (_d, e) = engine(1 << 20);
        let s = e.create_set("s", 1024, Durability::WriteBack).unwrap();
        for mut it in seq_get_iterators(&e, s, 3).unwrap() {
            assert!(it.next_record().unwrap().is_none());
        }
    }
}
