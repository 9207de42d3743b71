//! Per-set persistent storage.
//!
//! Each locality set owns one data file per stripe directory
//! (`<set_id>.data.<stripe>`) holding page images back to back, and one meta
//! file (`<set_id>.meta`, in the first directory) indexing where each page
//! lives. Pages are assigned to stripes round-robin by sequence number.
//!
//! Meta layout, little-endian:
//!
//! ```text
//! "PGMF" | version u32 | set_id u64 | page_size u64 | count u64
//! count x { page_seq u64 | stripe u32 | offset u64 }
//! crc32 of every preceding byte, u32
//! ```
//!
//! Writes go through the OS page cache and are optionally followed by
//! `fdatasync`. Counters, not wall time, are the contract of this module.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::ErrorKind;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use parking_lot::Mutex;

use crate::error::{Error, Result};
use crate::locality::SetId;

pub const META_MAGIC: &[u8; 4] = b"PGMF";
pub const META_VERSION: u32 = 1;
const META_HEADER_LEN: usize = 4 + 4 + 8 + 8 + 8;
const META_ENTRY_LEN: usize = 8 + 4 + 8;

/// Location of one page image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PageLocation {
    pub stripe: u32,
    pub offset: u64,
}

/// Decoded meta file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaImage {
    pub set_id: SetId,
    pub page_size: u64,
    pub index: BTreeMap<u64, PageLocation>,
}

pub fn encode_meta(meta: &MetaImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(META_HEADER_LEN + meta.index.len() * META_ENTRY_LEN + 4);
    out.extend_from_slice(META_MAGIC);
    out.extend_from_slice(&META_VERSION.to_le_bytes());
    out.extend_from_slice(&meta.set_id.0.to_le_bytes());
    out.extend_from_slice(&meta.page_size.to_le_bytes());
    out.extend_from_slice(&(meta.index.len() as u64).to_le_bytes());
    for (seq, loc) in &meta.index {
        out.extend_from_slice(&seq.to_le_bytes());
        out.extend_from_slice(&loc.stripe.to_le_bytes());
        out.extend_from_slice(&loc.offset.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode_meta(bytes: &[u8], path: &str) -> Result<MetaImage> {
    let corrupt = |reason: &str| Error::CorruptMeta { path: path.to_string(), reason: reason.to_string() };
    if bytes.len() < META_HEADER_LEN + 4 {
        return Err(corrupt("truncated header"));
    }
    if &bytes[..4] != META_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let u64_at = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
    if u32_at(4) != META_VERSION {
        return Err(corrupt("unsupported version"));
    }
    let count = u64_at(24) as usize;
    let body_len = count
        .checked_mul(META_ENTRY_LEN)
        .and_then(|n| n.checked_add(META_HEADER_LEN))
        .ok_or_else(|| corrupt("entry count overflow"))?;
    if bytes.len() != body_len + 4 {
        return Err(corrupt("length does not match entry count"));
    }
    if crc32fast::hash(&bytes[..body_len]) != u32_at(body_len) {
        return Err(corrupt("checksum mismatch"));
    }
    let page_size = u64_at(16);
    let mut index = BTreeMap::new();
    for i in 0..count {
        let at = META_HEADER_LEN + i * META_ENTRY_LEN;
        let loc = PageLocation { stripe: u32_at(at + 8), offset: u64_at(at + 12) };
        if page_size == 0 || !loc.offset.is_multiple_of(page_size) {
            return Err(corrupt("unaligned page offset"));
        }
        index.insert(u64_at(at), loc);
    }
    Ok(MetaImage { set_id: SetId(u64_at(8)), page_size, index })
}

/// Global I/O counters of a store.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IoStats {
    pub bytes_written: u64,
    pub bytes_read: u64,
    pub pages_written: u64,
    pub pages_read: u64,
}

#[derive(Debug)]
struct SetFile {
    set_id: SetId,
    page_size: u64,
    index: BTreeMap<u64, PageLocation>,
    next_slot: Vec<u64>,
    files: Vec<Option<File>>,
    write_bytes: u64,
    read_bytes: u64,
}

impl SetFile {
    fn new(set_id: SetId, page_size: u64, stripes: usize) -> Self {
        SetFile {
            set_id,
            page_size,
            index: BTreeMap::new(),
            next_slot: vec![0; stripes],
            files: (0..stripes).map(|_| None).collect(),
            write_bytes: 0,
            read_bytes: 0,
        }
    }

    fn meta(&self) -> MetaImage {
        MetaImage { set_id: self.set_id, page_size: self.page_size, index: self.index.clone() }
    }
}

/// Per-set counters, session local.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SetIoStats {
    pub write_bytes: u64,
    pub read_bytes: u64,
    pub pages_on_disk: u64,
}

#[derive(Debug)]
pub struct FileStore {
    dirs: Vec<PathBuf>,
    sync: bool,
    sets: Mutex<HashMap<SetId, SetFile>>,
    bytes_written: AtomicU64,
    bytes_read: AtomicU64,
    pages_written: AtomicU64,
    pages_read: AtomicU64,
}

impl FileStore {
    pub fn new(dirs: Vec<PathBuf>, sync: bool) -> Result<Self> {
        if dirs.is_empty() {
            return Err(Error::InvalidArgs("at least one storage directory is required".into()));
        }
        for d in &dirs {
            fs::create_dir_all(d)?;
        }
        Ok(FileStore {
            dirs,
            sync,
            sets: Mutex::new(HashMap::new()),
            bytes_written: AtomicU64::new(0),
            bytes_read: AtomicU64::new(0),
            pages_written: AtomicU64::new(0),
            pages_read: AtomicU64::new(0),
        })
    }

    pub fn dirs(&self) -> &[PathBuf] {
        &self.dirs
    }

    pub fn stripes(&self) -> usize {
        self.dirs.len()
    }

    pub fn data_path(&self, set: SetId, stripe: usize) -> PathBuf {
        self.dirs[stripe].join(format!("{}.data.{}", set.0, stripe))
    }

    pub fn meta_path(&self, set: SetId) -> PathBuf {
        self.dirs[0].join(format!("{}.meta", set.0))
    }

    /// Makes the store aware of a set. Idempotent.
    pub fn register(&self, set: SetId, page_size: u64) {
        self.sets.lock().entry(set).or_insert_with(|| SetFile::new(set, page_size, self.dirs.len()));
    }

    fn open_stripe<'a>(&self, file: &'a mut SetFile, stripe: usize) -> Result<&'a File> {
        if file.files[stripe].is_none() {
            let f = OpenOptions::new()
                .read(true)
                .write(true)
                .create(true)
                .truncate(false)
                .open(self.data_path(file.set_id, stripe))?;
            file.files[stripe] = Some(f);
        }
        Ok(file.files[stripe].as_ref().unwrap())
    }

    /// Writes a page image, reusing the page's slot if it was written before.
    /// Returns the time the write took.
    pub fn append_page(&self, set: SetId, seq: u64, bytes: &[u8]) -> Result<Duration> {
        let mut sets = self.sets.lock();
        let file = sets.get_mut(&set).ok_or(Error::SetNotFound(set))?;
        if bytes.len() as u64 != file.page_size {
            return Err(Error::SizeMismatch { expected: file.page_size, actual: bytes.len() as u64 });
        }
        let loc = match file.index.get(&seq) {
            Some(loc) => *loc,
            None => {
                let stripe = (seq % self.dirs.len() as u64) as usize;
                let offset = file.next_slot[stripe] * file.page_size;
                file.next_slot[stripe] += 1;
                PageLocation { stripe: stripe as u32, offset }
            }
        };
        let started = Instant::now();
        let f = self.open_stripe(file, loc.stripe as usize)?;
        f.write_all_at(bytes, loc.offset)?;
        if self.sync {
            f.sync_data()?;
        }
        let elapsed = started.elapsed();
        file.index.insert(seq, loc);
        file.write_bytes += file.page_size;
        self.bytes_written.fetch_add(file.page_size, Ordering::Relaxed);
        self.pages_written.fetch_add(1, Ordering::Relaxed);
        Ok(elapsed)
    }

    /// Reads the last written image of a page into `buf`.
    pub fn read_page_into(&self, set: SetId, seq: u64, buf: &mut [u8]) -> Result<Duration> {
        let mut sets = self.sets.lock();
        let file = sets.get_mut(&set).ok_or(Error::SetNotFound(set))?;
        let loc = *file.index.get(&seq).ok_or(Error::PageNotOnDisk { set, seq })?;
        if buf.len() as u64 != file.page_size {
            return Err(Error::SizeMismatch { expected: file.page_size, actual: buf.len() as u64 });
        }
        let started = Instant::now();
        let f = self.open_stripe(file, loc.stripe as usize)?;
        f.read_exact_at(buf, loc.offset)?;
        let elapsed = started.elapsed();
        file.read_bytes += file.page_size;
        self.bytes_read.fetch_add(file.page_size, Ordering::Relaxed);
        self.pages_read.fetch_add(1, Ordering::Relaxed);
        Ok(elapsed)
    }

    pub fn read_page(&self, set: SetId, seq: u64) -> Result<Vec<u8>> {
        let page_size = self.sets.lock().get(&set).ok_or(Error::SetNotFound(set))?.page_size;
        let mut buf = vec![0u8; page_size as usize];
        self.read_page_into(set, seq, &mut buf)?;
        Ok(buf)
    }

    pub fn location(&self, set: SetId, seq: u64) -> Option<PageLocation> {
        self.sets.lock().get(&set).and_then(|f| f.index.get(&seq).copied())
    }

    /// Drops a page from the index. The bytes stay in the data file until the
    /// slot is rewritten.
    pub fn forget_page(&self, set: SetId, seq: u64) {
        if let Some(f) = self.sets.lock().get_mut(&set) {
            f.index.remove(&seq);
        }
    }

    pub fn persist_meta(&self, set: SetId) -> Result<()> {
        let meta = self.sets.lock().get(&set).ok_or(Error::SetNotFound(set))?.meta();
        let path = self.meta_path(set);
        let tmp = path.with_extension("meta.tmp");
        fs::write(&tmp, encode_meta(&meta))?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    /// Loads a set's meta file and installs it, resetting session counters.
    pub fn load_meta(&self, set: SetId) -> Result<MetaImage> {
        let path = self.meta_path(set);
        let bytes = fs::read(&path)?;
        let meta = decode_meta(&bytes, &path.display().to_string())?;
        if meta.set_id != set {
            return Err(Error::CorruptMeta {
                path: path.display().to_string(),
                reason: format!("meta belongs to {}", meta.set_id),
            });
        }
        let mut file = SetFile::new(set, meta.page_size, self.dirs.len());
        for loc in meta.index.values() {
            let stripe = loc.stripe as usize;
            if stripe >= self.dirs.len() {
                return Err(Error::CorruptMeta {
                    path: path.display().to_string(),
                    reason: format!("stripe {stripe} out of range"),
                });
            }
            file.next_slot[stripe] = file.next_slot[stripe].max(loc.offset / meta.page_size + 1);
        }
        file.index = meta.index.clone();
        self.sets.lock().insert(set, file);
        Ok(meta)
    }

    pub fn has_meta(&self, set: SetId) -> bool {
        self.meta_path(set).exists()
    }

    /// Deletes every file of the set.
    pub fn remove_set(&self, set: SetId) -> Result<()> {
        self.sets.lock().remove(&set);
        for stripe in 0..self.dirs.len() {
            remove_if_exists(&self.data_path(set, stripe))?;
        }
        remove_if_exists(&self.meta_path(set))?;
        Ok(())
    }

    /// Data files of the set that hold at least one page image.
    pub fn data_file_count(&self, set: SetId) -> usize {
        let sets = self.sets.lock();
        match sets.get(&set) {
            Some(f) => f.next_slot.iter().filter(|n| **n > 0).count(),
            None => 0,
        }
    }

    pub fn set_stats(&self, set: SetId) -> SetIoStats {
        let sets = self.sets.lock();
        sets.get(&set)
            .map(|f| SetIoStats {
                write_bytes: f.write_bytes,
                read_bytes: f.read_bytes,
                pages_on_disk: f.index.len() as u64,
            })
            .unwrap_or_default()
    }

    pub fn stats(&self) -> IoStats {
        IoStats {
            bytes_written: self.bytes_written.load(Ordering::Relaxed),
            bytes_read: self.bytes_read.load(Ordering::Relaxed),
            pages_written: self.pages_written.load(Ordering::Relaxed),
            pages_read: self.pages_read.load(Ordering::Relaxed),
        }
    }
}

fn remove_if_exists(path: &Path) -> Result<()> {
    match fs::remove_file(path) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == ErrorKind::NotFound => Ok(()),
        Err(e) => Err(e.into()),
    }
}
