//! Splittable, keyed random streams.
//!
//! Every random draw in the crate comes from a stream identified by a key
//! tuple (for example `(site, event index)`) under a root seed, so results do
//! not depend on evaluation order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Domain tags keeping unrelated key tuples apart.
pub mod tag {
    pub const CLOCK: u64 = 1;
    pub const UPDATE: u64 = 2;
    pub const REPLICA: u64 = 3;
    pub const SAMPLE: u64 = 4;
    pub const BOOTSTRAP: u64 = 5;
    pub const DIRECTION: u64 = 6;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamFactory {
    root: u64,
}

impl StreamFactory {
    pub fn new(root_seed: u64) -> Self {
        Self { root: root_seed }
    }

    pub fn root_seed(&self) -> u64 {
        self.root
    }

    fn mix(&self, key: &[u64]) -> u64 {
        let mut h = splitmix64(self.root ^ 0x5851_F42D_4C95_7F2D);
        for &k in key {
            h = splitmix64(h ^ splitmix64(k.wrapping_add(0x2545_F491_4F6C_DD1D)));
        }
        h
    }

    /// Independent stream for `key`.
    pub fn stream(&self, key: &[u64]) -> Stream {
        let a = self.mix(key);
        let b = splitmix64(a);
        let c = splitmix64(b);
        let d = splitmix64(c);
        let mut seed = [0u8; 32];
        for (i, w) in [a, b, c, d].iter().enumerate() {
            seed[8 * i..8 * i + 8].copy_from_slice(&w.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }

    /// Child factory whose streams are disjoint from the parent's other keys.
    pub fn child(&self, key: &[u64]) -> StreamFactory {
        StreamFactory::new(self.mix(key))
    }
}
