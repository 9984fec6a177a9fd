//! Deterministic random substreams.
//!
//! A master seed is split by hashing labels (suite names, replica indices,
//! roles) into independent ChaCha streams, so results depend only on the
//! labels and never on thread scheduling or suite order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Node in a tree of labelled substreams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Stream {
    key: u64,
}

impl Stream {
    pub fn new(master_seed: u64) -> Self {
        Self {
            key: splitmix(master_seed),
        }
    }

    /// Child stream identified by a text label.
    pub fn child(&self, label: &str) -> Self {
        self.mix(fnv1a(label.as_bytes()))
    }

    /// Child stream identified by an index (replica, field, cell ...).
    pub fn index(&self, i: u64) -> Self {
        self.mix(splitmix(i ^ 0x5851_f42d_4c95_7f2d))
    }

    fn mix(&self, v: u64) -> Self {
        Self {
            key: splitmix(self.key ^ v.rotate_left(17)),
        }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    /// Generator positioned at the start of this stream.
    pub fn rng(&self) -> StreamRng {
        let mut seed = [0u8; 32];
        let mut z = self.key;
        for chunk in seed.chunks_mut(8) {
            z = splitmix(z);
            chunk.copy_from_slice(&z.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let root = Stream::new(7);
        let a: u64 = root.child("gnz").index(3).rng().random();
        let b: u64 = root.child("gnz").index(3).rng().random();
        let c: u64 = root.child("gnz").index(4).rng().random();
        let d: u64 = root.child("balance").index(3).rng().random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
        assert_ne!(Stream::new(7).key(), Stream::new(8).key());
    }
}
