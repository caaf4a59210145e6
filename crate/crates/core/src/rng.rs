//! Reproducible random streams.
//!
//! Every stream is a ChaCha8 generator whose 256-bit key is
//! `SHA-256(master || tag || index)`. Distinct purposes and replicas never
//! share a stream, and a stream can be rebuilt from its three coordinates
//! alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type LabRng = ChaCha8Rng;

/// 32-byte key for the stream `(master, tag, index)`.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((tag.len() as u64).to_le_bytes());
    h.update(tag.as_bytes());
    h.update(index.to_le_bytes());
    h.finalize().into()
}

/// Short numeric form of a derived seed, convenient for nesting streams.
pub fn derive_u64(master: u64, tag: &str, index: u64) -> u64 {
    let s = derive_seed(master, tag, index);
    u64::from_le_bytes(s[..8].try_into().unwrap())
}

pub fn stream(master: u64, tag: &str, index: u64) -> LabRng {
    ChaCha8Rng::from_seed(derive_seed(master, tag, index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = stream(7, "x", 0).random_iter().take(4).collect();
        let b: Vec<u64> = stream(7, "x", 0).random_iter().take(4).collect();
        let c: Vec<u64> = stream(7, "x", 1).random_iter().take(4).collect();
        let d: Vec<u64> = stream(7, "y", 0).random_iter().take(4).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn tag_boundaries_do_not_alias() {
        // "ab" + index vs "a" + "b..." must differ thanks to the length prefix
        assert_ne!(derive_seed(1, "ab", 0), derive_seed(1, "a", 0));
    }
}
