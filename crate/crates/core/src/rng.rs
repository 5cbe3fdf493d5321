//! Hierarchical, schedule-independent random streams.
//!
//! Every random draw made by a filter comes from a stream keyed by
//! `(master seed, time step, particle index, purpose)`, so a run gives the
//! same bytes whether particles are processed serially or on a thread pool.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// What a derived stream is used for. Distinct purposes never share draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    /// Outer resampling (one stream per time step).
    Resample = 1,
    /// Simulation of the inner state u_{t-1} for one outer particle.
    Inner = 2,
    /// Propagation of one outer particle (κ, the transition, or FFBS backward pass).
    Propagate = 3,
    /// Data simulation.
    Simulate = 4,
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combines a seed with further key words into a new seed.
pub fn derive_seed(seed: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(mix64(seed), |acc, &k| mix64(acc ^ mix64(k)))
}

/// Factory for the per-step and per-particle streams of one filter run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    master: u64,
}

impl Streams {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn stream(&self, t: usize, index: usize, purpose: Purpose) -> StreamRng {
        StreamRng::seed_from_u64(derive_seed(
            self.master,
            &[t as u64, index as u64, purpose as u64],
        ))
    }

    pub fn step(&self, t: usize, purpose: Purpose) -> StreamRng {
        self.stream(t, usize::MAX, purpose)
    }
}

pub fn seeded(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}
