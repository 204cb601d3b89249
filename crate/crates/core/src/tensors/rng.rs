use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Deterministic random source keyed by `(seed, invocation index)`.
///
/// Every consumer asks for a fresh stream; stream `k` of seed `s` is ChaCha8
/// keyed by `s` with stream id `k`, so the output depends only on the seed
/// and the order of requests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeededRng {
    seed: u64,
    invocation: u64,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self { seed, invocation: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn invocation(&self) -> u64 {
        self.invocation
    }

    pub fn next_stream(&mut self) -> ChaCha8Rng {
        let mut stream = ChaCha8Rng::seed_from_u64(self.seed);
        stream.set_stream(self.invocation);
        self.invocation += 1;
        stream
    }

    /// `n` draws from `U[lo, hi)` on a single fresh stream.
    pub fn uniform_vec(&mut self, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        let mut s = self.next_stream();
        (0..n).map(|_| lo + (hi - lo) * s.gen::<f64>()).collect()
    }

    /// Independent generator for a named sub-component, leaving `self` untouched.
    pub fn fork(&self, tag: u64) -> SeededRng {
        SeededRng::new(self.seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}
