//! Named random streams derived from a single root seed.
//!
//! A stream is identified by a purpose string; its seed is a hash of the root
//! seed and the purpose, so adding a new stream never shifts existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a. Stable across platforms and toolchains.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the stream named `purpose` under `root`.
pub fn stream_seed(root: u64, purpose: &str) -> u64 {
    splitmix64(root ^ fnv1a(purpose.as_bytes()))
}

/// Generator for one chunk of a stream; chunks are independent of scheduling.
pub fn chunk_rng(stream: u64, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    rng.set_stream(chunk as u64);
    rng
}

pub fn stream_rng(root: u64, purpose: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(root, purpose))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn streams_are_distinct_and_stable() {
        let a = stream_seed(7, "engine");
        assert_eq!(a, stream_seed(7, "engine"));
        assert_ne!(a, stream_seed(7, "dataset"));
        assert_ne!(a, stream_seed(8, "engine"));
        let x: u64 = chunk_rng(a, 3).gen();
        let y: u64 = chunk_rng(a, 3).gen();
        let z: u64 = chunk_rng(a, 4).gen();
        assert_eq!(x, y);
        assert_ne!(x, z);
    }
}
