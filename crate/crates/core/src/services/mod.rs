//! Data-processing services built on pages: sequential read/write, shuffle
//! and hash aggregation. Records are opaque byte strings.

pub mod hash;
pub mod hash_page;
pub mod record;
pub mod sequential;
pub mod shuffle;

pub use hash::{sum_i64, HashConfig, HashEvent, HashStats, VirtualHashBuffer};
pub use sequential::{seq_get_iterators, SeqIterator, SeqWriter};
pub use shuffle::{Shuffle, ShuffleConfig, ShuffleSummary, VirtualShuffleBuffer};

use std::hash::Hasher;

/// Seeded 64-bit hash, stable across runs and platforms.
pub fn stable_hash(bytes: &[u8], seed: u64) -> u64 {
    let mut h = twox_hash::XxHash64::with_seed(seed);
    h.write(bytes);
    h.finish()
}
