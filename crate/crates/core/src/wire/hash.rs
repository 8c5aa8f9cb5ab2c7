//! Key hashing for the switch table.
//!
//! The slot index and the fingerprint come from two unrelated hash
//! functions so that tests can force index collisions while fingerprints
//! still differ.

use serde::{Deserialize, Serialize};

use super::{KeyHash, WireError};

/// Number of bits in a full slot index.
pub const INDEX_BITS: u8 = 16;
/// Number of bits in a full fingerprint.
pub const FINGERPRINT_BITS: u8 = 32;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Murmur3 64-bit finalizer.
#[inline]
pub fn fmix64(mut h: u64) -> u64 {
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^= h >> 33;
    h
}

fn index_hash(seed: u64, key: &[u8]) -> u64 {
    let mut h = FNV_OFFSET ^ fmix64(seed);
    for &b in key {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    fmix64(h)
}

fn fingerprint_hash(seed: u64, key: &[u8]) -> u64 {
    // multiply-rotate over 8-byte words, unrelated to FNV above
    const K: u64 = 0x9e37_79b9_7f4a_7c15;
    let mut h = seed.wrapping_add(0x2545_f491_4f6c_dd1d) ^ (key.len() as u64).wrapping_mul(K);
    for chunk in key.chunks(8) {
        let mut word = [0u8; 8];
        word[..chunk.len()].copy_from_slice(chunk);
        let w = u64::from_le_bytes(word);
        h = (h ^ w.wrapping_mul(K)).rotate_left(29).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    }
    fmix64(h)
}

/// Hashing parameters. `index_bits` / `fingerprint_bits` below the full
/// widths shrink the hash space to force collisions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HashConfig {
    pub seed: u64,
    pub index_bits: u8,
    pub fingerprint_bits: u8,
}

impl Default for HashConfig {
    fn default() -> Self {
        Self {
            seed: 0x5157_4348_4445_4c54,
            index_bits: INDEX_BITS,
            fingerprint_bits: FINGERPRINT_BITS,
        }
    }
}

impl HashConfig {
    pub fn hash(&self, key: &[u8]) -> Result<KeyHash, WireError> {
        if key.is_empty() {
            return Err(WireError::EmptyKey);
        }
        let ib = u32::from(self.index_bits.min(INDEX_BITS));
        let fb = u32::from(self.fingerprint_bits.min(FINGERPRINT_BITS));
        let index = if ib == 0 {
            0
        } else {
            (index_hash(self.seed, key) >> (64 - ib)) as u16
        };
        let fp = fingerprint_hash(self.seed, key) as u32;
        let fingerprint = if fb == 32 { fp } else { fp & ((1u32 << fb) - 1) };
        Ok(KeyHash { index, fingerprint })
    }

    /// Number of distinct slot indices this configuration can produce.
    pub fn slots(&self) -> usize {
        1usize << self.index_bits.min(INDEX_BITS)
    }
}

/// Hashes `key` with the default configuration.
pub fn hash_key(key: &[u8]) -> Result<KeyHash, WireError> {
    HashConfig::default().hash(key)
}
