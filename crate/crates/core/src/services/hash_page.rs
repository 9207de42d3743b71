//! A hash table that lives entirely inside one page.
//!
//! ```text
//! header: buckets u32 | bump u32 | entries u32 | live u32 | free heads [u32; CLASSES]
//! bucket heads: [u32; buckets]
//! heap: slab blocks of 32 << class bytes
//! block: next u32 | klen u32 | vlen u32 | key | value
//! ```
//!
//! Offsets are from the page start; 0 means none. Blocks come from a bump
//! pointer or from the free list of their class.

use crate::error::{Error, Result};

const CLASSES: usize = 16;
const MIN_BLOCK: usize = 32;
const HEADER: usize = 16 + 4 * CLASSES;
const BLOCK_HEADER: usize = 12;

fn rd(p: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(p[at..at + 4].try_into().unwrap())
}

fn wr(p: &mut [u8], at: usize, v: u32) {
    p[at..at + 4].copy_from_slice(&v.to_le_bytes());
}

fn class_of(block_len: usize) -> usize {
    let mut c = 0;
    while MIN_BLOCK << c < block_len {
        c += 1;
    }
    c
}

fn bucket_count(page_len: usize) -> usize {
    (page_len / 128).next_power_of_two().clamp(16, 1 << 20)
}

/// Largest key+value payload a page of this size accepts.
pub fn max_payload(page_len: usize) -> usize {
    let heap = page_len.saturating_sub(HEADER + 4 * bucket_count(page_len));
    (0..CLASSES).rev().map(|c| MIN_BLOCK << c).find(|&b| b <= heap).map_or(0, |b| b - BLOCK_HEADER)
}

/// Formats `page` as an empty table.
pub fn init(page: &mut [u8]) {
    assert!(page.len() <= u32::MAX as usize, "hash pages are addressed with u32 offsets");
    let buckets = bucket_count(page.len());
    page[..HEADER + 4 * buckets].fill(0);
    wr(page, 0, buckets as u32);
    wr(page, 4, (HEADER + 4 * buckets) as u32);
}

pub fn is_initialized(page: &[u8]) -> bool {
    rd(page, 0) != 0
}

pub fn entries(page: &[u8]) -> u32 {
    rd(page, 8)
}

/// Bytes of live blocks.
pub fn live_bytes(page: &[u8]) -> u32 {
    rd(page, 12)
}

fn bucket_slot(page: &[u8], hash: u64) -> usize {
    let buckets = rd(page, 0) as usize;
    HEADER + 4 * ((hash.rotate_right(24) as usize) & (buckets - 1))
}

fn block_len(page: &[u8], off: usize) -> usize {
    BLOCK_HEADER + rd(page, off + 4) as usize + rd(page, off + 8) as usize
}

fn key_at(page: &[u8], off: usize) -> &[u8] {
    let klen = rd(page, off + 4) as usize;
    &page[off + BLOCK_HEADER..off + BLOCK_HEADER + klen]
}

fn value_at(page: &[u8], off: usize) -> &[u8] {
    let klen = rd(page, off + 4) as usize;
    let vlen = rd(page, off + 8) as usize;
    &page[off + BLOCK_HEADER + klen..off + BLOCK_HEADER + klen + vlen]
}

/// Finds `key`, returning (slot pointing at the block, block offset).
fn find(page: &[u8], hash: u64, key: &[u8]) -> Option<(usize, usize)> {
    let mut slot = bucket_slot(page, hash);
    let mut off = rd(page, slot) as usize;
    while off != 0 {
        if key_at(page, off) == key {
            return Some((slot, off));
        }
        slot = off;
        off = rd(page, off) as usize;
    }
    None
}

pub fn get<'p>(page: &'p [u8], hash: u64, key: &[u8]) -> Option<&'p [u8]> {
    find(page, hash, key).map(|(_, off)| value_at(page, off))
}

fn alloc_block(page: &mut [u8], class: usize) -> Option<usize> {
    let head_at = 16 + 4 * class;
    let head = rd(page, head_at) as usize;
    if head != 0 {
        let next = rd(page, head);
        wr(page, head_at, next);
        return Some(head);
    }
    let bump = rd(page, 4) as usize;
    let size = MIN_BLOCK << class;
    if bump + size > page.len() {
        return None;
    }
    wr(page, 4, (bump + size) as u32);
    Some(bump)
}

fn free_block(page: &mut [u8], off: usize, class: usize) {
    let head_at = 16 + 4 * class;
    let head = rd(page, head_at);
    wr(page, off, head);
    wr(page, head_at, off as u32);
}

fn write_block(page: &mut [u8], off: usize, next: u32, key: &[u8], value: &[u8]) {
    wr(page, off, next);
    wr(page, off + 4, key.len() as u32);
    wr(page, off + 8, value.len() as u32);
    let k = off + BLOCK_HEADER;
    page[k..k + key.len()].copy_from_slice(key);
    page[k + key.len()..k + key.len() + value.len()].copy_from_slice(value);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Upsert {
    Inserted,
    Combined,
    /// No room; the page is unchanged.
    Full,
}

/// Inserts `key -> value`, or replaces the stored value `old` with
/// `combine(old, value)`.
pub fn upsert(
    page: &mut [u8],
    hash: u64,
    key: &[u8],
    value: &[u8],
    combine: &dyn Fn(&[u8], &[u8]) -> Vec<u8>,
) -> Result<Upsert> {
    let max = max_payload(page.len());
    if key.len() + value.len() > max {
        return Err(Error::KeyLargerThanPage { len: key.len() + value.len(), max });
    }
    match find(page, hash, key) {
        Some((slot, off)) => {
            let merged = combine(value_at(page, off), value);
            if key.len() + merged.len() > max {
                return Err(Error::KeyLargerThanPage { len: key.len() + merged.len(), max });
            }
            let old_len = block_len(page, off);
            let old_class = class_of(old_len);
            let new_len = BLOCK_HEADER + key.len() + merged.len();
            let next = rd(page, off);
            if class_of(new_len) == old_class {
                write_block(page, off, next, key, &merged);
            } else {
                let Some(new_off) = alloc_block(page, class_of(new_len)) else { return Ok(Upsert::Full) };
                write_block(page, new_off, next, key, &merged);
                wr(page, slot, new_off as u32);
                free_block(page, off, old_class);
            }
            wr(page, 12, rd(page, 12) - old_len as u32 + new_len as u32);
            Ok(Upsert::Combined)
        }
        None => {
            let len = BLOCK_HEADER + key.len() + value.len();
            let Some(off) = alloc_block(page, class_of(len)) else { return Ok(Upsert::Full) };
            let slot = bucket_slot(page, hash);
            let head = rd(page, slot);
            write_block(page, off, head, key, value);
            wr(page, slot, off as u32);
            wr(page, 8, rd(page, 8) + 1);
            wr(page, 12, rd(page, 12) + len as u32);
            Ok(Upsert::Inserted)
        }
    }
}

/// Every (key, value) of the table.
pub fn iter(page: &[u8]) -> impl Iterator<Item = (&[u8], &[u8])> {
    let buckets = if page.len() >= HEADER { rd(page, 0) as usize } else { 0 };
    (0..buckets).flat_map(move |b| {
        let mut off = rd(page, HEADER + 4 * b) as usize;
        std::iter::from_fn(move || {
            if off == 0 {
                return None;
            }
            let item = (key_at(page, off), value_at(page, off));
            off = rd(page, off) as usize;
            Some(item)
        })
    })
}
