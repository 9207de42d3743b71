//! Record framing: a little-endian u32 length followed by the payload.
//!
//! A page is a run of equal chunks (the whole page unless the set says
//! otherwise). Inside a chunk, records follow each other until a zero length
//! or until fewer than four bytes remain. Records never cross chunks.

pub const LEN_PREFIX: usize = 4;

pub fn framed_len(payload: usize) -> usize {
    LEN_PREFIX + payload
}

/// Records of `record_len` bytes that fit in one chunk.
pub fn records_per_chunk(chunk_size: u64, record_len: u64) -> u64 {
    chunk_size / (record_len + LEN_PREFIX as u64)
}

/// Writes one framed record at `at` and returns the offset after it. The
/// caller checks that it fits.
pub fn put(buf: &mut [u8], at: usize, record: &[u8]) -> usize {
    let end = at + framed_len(record.len());
    buf[at..at + LEN_PREFIX].copy_from_slice(&(record.len() as u32).to_le_bytes());
    buf[at + LEN_PREFIX..end].copy_from_slice(record);
    end
}

/// Decodes the record at `pos` of `chunk`, returning it and the next offset.
pub fn get(chunk: &[u8], pos: usize) -> Option<(&[u8], usize)> {
    if pos + LEN_PREFIX > chunk.len() {
        return None;
    }
    let len = u32::from_le_bytes(chunk[pos..pos + LEN_PREFIX].try_into().unwrap()) as usize;
    let start = pos + LEN_PREFIX;
    if len == 0 || start + len > chunk.len() {
        return None;
    }
    Some((&chunk[start..start + len], start + len))
}

/// Every record of a page, in order.
pub fn page_records(page: &[u8], chunk_size: usize) -> impl Iterator<Item = &[u8]> {
    page.chunks(chunk_size).flat_map(|chunk| {
        let mut pos = 0;
        std::iter::from_fn(move || {
            let (rec, next) = get(chunk, pos)?;
            pos = next;
            Some(rec)
        })
    })
}

/// Position inside a page: chunk index and offset within it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Cursor {
    pub chunk: usize,
    pub pos: usize,
}

impl Cursor {
    /// Reads the record under the cursor and advances past it.
    pub fn next_in<'p>(&mut self, page: &'p [u8], chunk_size: usize) -> Option<&'p [u8]> {
        let chunks = page.len() / chunk_size;
        while self.chunk < chunks {
            let chunk = &page[self.chunk * chunk_size..(self.chunk + 1) * chunk_size];
            if let Some((rec, next)) = get(chunk, self.pos) {
                self.pos = next;
                return Some(rec);
            }
            self.chunk += 1;
            self.pos = 0;
        }
        None
    }
}
