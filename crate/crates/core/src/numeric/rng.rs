//! Counter-based deterministic randomness.
//!
//! Every stream is a ChaCha8 keystream keyed by the experiment seed. Consumers
//! take their own stream through [`Rng::fork`], so adding draws in one place
//! (say, dropout) never shifts the values seen by another (say, data shuffling).

use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const ALGORITHM: &str = "chacha8";

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, stream, inner }
    }

    /// An independent stream for `purpose`, derived from this stream's identity
    /// only (not from how much of it has been consumed).
    pub fn fork(&self, purpose: &str) -> Rng {
        let mut h = fnv1a(self.stream.to_le_bytes().iter().copied());
        h = fnv1a_continue(h, purpose.bytes());
        Self::with_stream(self.seed, h)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Position in the keystream, in 32-bit words.
    pub fn position(&self) -> u128 {
        self.inner.get_word_pos()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.inner);
        mean + std * z
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.inner.random::<f64>() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: impl Iterator<Item = u8>) -> u64 {
    fnv1a_continue(FNV_OFFSET, bytes)
}

fn fnv1a_continue(mut h: u64, bytes: impl Iterator<Item = u8>) -> u64 {
    for b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        assert_eq!(a.position(), b.position());
    }

    #[test]
    fn forks_are_independent_of_consumption() {
        let root = Rng::new(7);
        let mut used = root.clone();
        for _ in 0..10 {
            used.next_u64();
        }
        let mut f1 = root.fork("dropout");
        let mut f2 = used.fork("dropout");
        assert_eq!(f1.next_u64(), f2.next_u64());
        let mut other = root.fork("shuffle");
        let mut again = root.fork("dropout");
        assert_ne!(other.next_u64(), again.next_u64());
    }

    #[test]
    fn frozen_reference_values() {
        // Pinned so a dependency bump that changes the keystream is caught.
        let mut r = Rng::new(2024);
        let first = r.next_u64();
        let mut again = Rng::new(2024);
        assert_eq!(first, again.next_u64());
        assert_eq!(r.position(), 2);
        assert_eq!(first, 3080959604347521991);
        assert_eq!(Rng::new(2024).fork("init").next_u64(), 13201514498420535137);
    }
}
