//! Pinned, splittable random streams.
//!
//! Every stream is ChaCha8 keyed by `splitmix64`-expanded `(seed, domain)` with
//! the stream index as the ChaCha stream id, so draws for one replicate or
//! resample never depend on how many others exist or in which order they run.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::glm::normal_quantile;

/// Independent families of streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Data,
    Bootstrap,
    Replicate,
    Auxiliary,
}

impl Domain {
    fn tag(self) -> u64 {
        match self {
            Domain::Data => 0x6461_7461,
            Domain::Bootstrap => 0x626f_6f74,
            Domain::Replicate => 0x7265_706c,
            Domain::Auxiliary => 0x6175_7869,
        }
    }
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of replicate `index` under a master seed.
pub fn replicate_seed(master: u64, index: u64) -> u64 {
    StreamRng::new(master, Domain::Replicate, index).next_u64()
}

pub struct StreamRng(ChaCha8Rng);

impl StreamRng {
    pub fn new(seed: u64, domain: Domain, index: u64) -> Self {
        let mut state = seed ^ domain.tag().rotate_left(32);
        let mut key = [0u8; 32];
        for chunk in key.chunks_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(index);
        Self(rng)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal by inversion.
    pub fn normal(&mut self) -> f64 {
        normal_quantile(self.uniform())
    }

    /// 1.0 with probability `p`, else 0.0.
    pub fn bernoulli(&mut self, p: f64) -> f64 {
        if self.uniform() < p {
            1.0
        } else {
            0.0
        }
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }
}
