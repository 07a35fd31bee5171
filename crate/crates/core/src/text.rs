//! Small text utilities shared across stages.

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};

/// Lowercased tokens split on non-alphanumeric boundaries.
pub fn word_tokens(s: &str) -> impl Iterator<Item = String> + '_ {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Collapse runs of whitespace and trim; lowercase.
pub fn normalize_label(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Seeded 64-bit hash of a string: FNV-1a over the bytes followed by a
/// splitmix64 finalizer. Stable across platforms and toolchains.
pub fn seeded_hash(s: &str, seed: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ splitmix64(seed);
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(h)
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Read a one-entry-per-line list (stopwords, blocklists). Entries are
/// normalized; blank lines and `#` comments are skipped.
pub fn read_word_list(path: &Path) -> Result<BTreeSet<String>> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(raw
        .lines()
        .map(normalize_label)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect())
}
