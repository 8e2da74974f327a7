//! Seedable, splittable random streams.
//!
//! Every stochastic operation takes an explicit generator. [`SplitRng`] wraps
//! ChaCha8, a counter-based generator, and derives independent child streams
//! from `(seed, stream)` pairs so that separate parts of a run never share
//! state.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Debug)]
pub struct SplitRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SplitRng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SplitRng { seed, inner }
    }

    /// Independent child generator identified by `stream`. Does not advance `self`.
    pub fn split(&self, stream: u64) -> SplitRng {
        // Children live in a different seed space from the parent so that
        // split(0) never aliases the parent stream.
        let child_seed = self
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .rotate_left(17)
            ^ self.inner.get_stream().wrapping_add(0xD1B5_4A32_D192_ED03);
        SplitRng::with_stream(child_seed, stream)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }
}

impl RngCore for SplitRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
}
