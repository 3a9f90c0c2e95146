//! Named random substreams derived from a single seed.
//!
//! Every consumer asks for `(name, index)` and gets its own ChaCha generator, so
//! changing one parameter of a scenario (antenna count, say) does not shift the
//! draws seen by unrelated stages.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    seed: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child tree, e.g. one per Monte-Carlo run.
    pub fn child(&self, name: &str, index: u64) -> SeedTree {
        SeedTree { seed: self.key(name, index) }
    }

    pub fn stream(&self, name: &str, index: u64) -> StreamRng {
        let mut state = self.key(name, index);
        let mut bytes = [0u8; 32];
        for chunk in bytes.chunks_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        ChaCha8Rng::from_seed(bytes)
    }

    fn key(&self, name: &str, index: u64) -> u64 {
        splitmix64(self.seed ^ splitmix64(fnv1a(name) ^ splitmix64(index.wrapping_add(1))))
    }
}

/// Circularly-symmetric complex Gaussian with `E|z|^2 = var`.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

pub fn real_normal<R: Rng + ?Sized>(rng: &mut R, var: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    var.sqrt() * z
}
