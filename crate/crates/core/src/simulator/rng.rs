//! Per-trajectory random streams.
//!
//! ChaCha8 is a counter-based generator: the key is derived from the run
//! seed, the 64-bit stream id is the trajectory index, and steps consume the
//! stream in order. A trajectory's draws therefore depend only on
//! `(seed, trajectory_index, step_index)` and never on which worker ran it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone)]
pub struct TrajectoryRng {
    inner: ChaCha8Rng,
}

impl TrajectoryRng {
    pub fn new(seed: u64, trajectory_index: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(trajectory_index);
        inner.set_word_pos(0);
        Self { inner }
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.normal();
        }
    }
}
