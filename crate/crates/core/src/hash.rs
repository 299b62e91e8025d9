//! Seeded hashing and RNG stream derivation.
//!
//! The string hash is 64-bit FNV-1a over the little-endian seed bytes followed
//! by the input bytes, finished with the MurmurHash3 `fmix64` avalanche so the
//! low bits (used for bucket masks) are well mixed. Model files record a
//! fingerprint of the featurizer config, so this function must never change.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Incremental form of [`hash_bytes`].
#[derive(Debug, Clone)]
pub struct SeededHasher {
    state: u64,
}

impl SeededHasher {
    pub fn new(seed: u64) -> Self {
        let mut h = SeededHasher { state: FNV_OFFSET };
        h.write(&seed.to_le_bytes());
        h
    }

    #[inline]
    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.state ^= u64::from(b);
            self.state = self.state.wrapping_mul(FNV_PRIME);
        }
    }

    #[inline]
    pub fn finish(&self) -> u64 {
        fmix64(self.state)
    }
}

pub fn hash_bytes(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = SeededHasher::new(seed);
    h.write(bytes);
    h.finish()
}

#[inline]
pub fn fmix64(mut k: u64) -> u64 {
    k ^= k >> 33;
    k = k.wrapping_mul(0xff51_afd7_ed55_8ccd);
    k ^= k >> 33;
    k = k.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    k ^= k >> 33;
    k
}

/// Folds a sequence of indices into one stream id.
pub fn mix_indices(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x9e37_79b9_7f4a_7c15, |acc, &p| fmix64(acc ^ fmix64(p.wrapping_add(0x632b_e59b_d9b4_e019))))
}

/// ChaCha8 generator keyed by `seed`, positioned on an independent `stream`.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn incremental_matches_one_shot() {
        let mut h = SeededHasher::new(7);
        h.write(b"ab");
        h.write(b"c");
        assert_eq!(h.finish(), hash_bytes(7, b"abc"));
    }

    #[test]
    fn seed_changes_hash() {
        assert_ne!(hash_bytes(1, b"token"), hash_bytes(2, b"token"));
    }

    #[test]
    fn streams_are_independent_and_reproducible() {
        let a: u64 = rng_stream(3, 0).random();
        let b: u64 = rng_stream(3, 1).random();
        assert_ne!(a, b);
        assert_eq!(a, rng_stream(3, 0).random::<u64>());
    }

    #[test]
    fn low_bits_spread() {
        // 4096 distinct keys into 64 buckets: every bucket should be hit.
        let mut counts = [0u32; 64];
        for i in 0..4096u32 {
            counts[(hash_bytes(0, &i.to_le_bytes()) & 63) as usize] += 1;
        }
        assert!(counts.iter().all(|&c| c > 30 && c < 110), "{counts:?}");
    }
}
