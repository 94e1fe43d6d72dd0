use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Real, Tensor};

/// Seeded, splittable random source.
///
/// Every consumer (weight init, shuffling, membrane init, guidance dropping)
/// gets its own child stream via [`RngState::split`], so switching one
/// consumer off never shifts the draws seen by the others.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    key: [u8; 32],
    inner: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        let inner = ChaCha8Rng::seed_from_u64(seed);
        let key = inner.get_seed();
        Self { seed, key, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives an independent child stream. The child depends only on this
    /// state's key and `stream`, not on how many values were drawn so far.
    pub fn split(&self, stream: u64) -> Self {
        let mut derive = ChaCha8Rng::from_seed(self.key);
        derive.set_stream(stream.wrapping_add(1));
        let mut key = [0u8; 32];
        derive.fill_bytes(&mut key);
        Self {
            seed: self.seed,
            key,
            inner: ChaCha8Rng::from_seed(key),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// One draw in `[0, 1)`.
    pub fn uniform_scalar<F: Real>(&mut self) -> F {
        F::unit_from_bits(self.inner.next_u64())
    }

    pub fn uniform<F: Real>(&mut self, shape: &[usize]) -> Tensor<F> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.uniform_scalar()).collect();
        Tensor::from_parts(shape.to_vec(), data)
    }

    /// Uniform draws in `[low, high)`.
    pub fn uniform_range<F: Real>(&mut self, shape: &[usize], low: F, high: F) -> Tensor<F> {
        let mut t = self.uniform::<F>(shape);
        t.map_inplace(|u| low + (high - low) * u);
        t
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    /// Fisher-Yates shuffle driven by this stream.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
