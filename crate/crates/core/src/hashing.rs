//! Stable hashing for RNG stream keys, cache keys and index digests. Unlike
//! `std::hash`, these values are fixed across platforms and releases.

use sha2::{Digest, Sha256};

/// Hashes length-prefixed parts, so `["ab", "c"]` and `["a", "bc"]` differ.
pub fn digest_parts(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().into()
}

pub fn hash64(parts: &[&[u8]]) -> u64 {
    let d = digest_parts(parts);
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Uniform draw in [0, 1) determined by the key.
pub fn unit_interval(parts: &[&[u8]]) -> f64 {
    (hash64(parts) >> 11) as f64 / (1u64 << 53) as f64
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}
