//! Query text normalization shared by every stage.

use alloc::string::String;
use alloc::vec::Vec;

/// Lowercases, strips punctuation other than hyphens and collapses whitespace.
///
/// Punctuation is replaced by a space so that "shoes,boots" yields two tokens.
pub fn normalize(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_space = false;
    for ch in raw.chars() {
        if ch.is_alphanumeric() || ch == '-' {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            for lower in ch.to_lowercase() {
                out.push(lower);
            }
        } else {
            pending_space = true;
        }
    }
    out
}

/// Whitespace tokens of already-normalized text.
pub fn tokens(normalized: &str) -> impl Iterator<Item = &str> {
    normalized.split_whitespace()
}

pub fn token_vec(normalized: &str) -> Vec<&str> {
    tokens(normalized).collect()
}

/// Stable 64-bit FNV-1a hash of a string.
pub fn stable_hash(text: &str) -> u64 {
    use core::hash::Hasher;
    let mut hasher = fnv::FnvHasher::default();
    hasher.write(text.as_bytes());
    hasher.finish()
}
