//! Keyed random streams. Every random draw in a run comes from a stream keyed by
//! `(seed, epoch, client, purpose)`, so client work can be scheduled in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Permutation,
    Compress,
    Data,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Permutation => 0x7065_726d, // "perm"
            Purpose::Compress => 0x636f_6d70,    // "comp"
            Purpose::Data => 0x6461_7461,        // "data"
        }
    }
}

/// Derives an independent ChaCha stream whose 256-bit key is the 4-tuple itself.
pub fn rng_substream(seed: u64, t: u64, m: u64, purpose: Purpose) -> Stream {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&t.to_le_bytes());
    key[16..24].copy_from_slice(&m.to_le_bytes());
    key[24..].copy_from_slice(&purpose.tag().to_le_bytes());
    ChaCha8Rng::from_seed(key)
}
