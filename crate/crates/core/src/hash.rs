//! Keyed, machine-independent hashing used for sampling, splitting, instruction
//! selection and the mock backends.
//!
//! The digest is `SHA-256(domain || 0x00 || seed_le64 || (len_le64 || part)*)` and
//! the returned value is the first eight digest bytes read little-endian. The
//! definition is small enough to recompute from any language, which the tests
//! rely on.

use sha2::{Digest, Sha256};

pub fn keyed_u64(seed: u64, domain: &str, parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(domain.as_bytes());
    hasher.update([0u8]);
    hasher.update(seed.to_le_bytes());
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}

/// Maps a hash to a float in `[0, 1)` using its top 53 bits.
pub fn unit_interval(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Hex-encoded SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    // Frozen from an independent Python hashlib computation of the same layout.
    #[test]
    fn matches_reference_digest() {
        assert_eq!(keyed_u64(42, "test", &[b"abc"]), 0xec2a_c6a9_b89a_3006);
    }

    #[test]
    fn domain_and_parts_are_separated() {
        assert_ne!(keyed_u64(1, "a", &[b"bc"]), keyed_u64(1, "ab", &[b"c"]));
        assert_ne!(keyed_u64(1, "a", &[b"b", b"c"]), keyed_u64(1, "a", &[b"bc"]));
        assert_ne!(keyed_u64(1, "a", &[b"x"]), keyed_u64(2, "a", &[b"x"]));
    }

    #[test]
    fn unit_interval_bounds() {
        assert_eq!(unit_interval(0), 0.0);
        assert!(unit_interval(u64::MAX) < 1.0);
    }
}
