//! Keyed random streams.
//!
//! A stream is addressed by `(master_seed, stream_id)`. Stream 0 drives the
//! signal (prior draw and process noise), stream 1 the observation noise and
//! stream `2 + i` particle `i` (initial draw, then process noise). Replicas
//! derive their own master seed from the experiment seed and the replica
//! index, so results never depend on scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const SIGNAL_STREAM: u64 = 0;
pub const OBSERVATION_STREAM: u64 = 1;
pub const FIRST_PARTICLE_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self {
            master_seed,
            stream_id,
        }
    }

    pub fn signal(master_seed: u64) -> Self {
        Self::new(master_seed, SIGNAL_STREAM)
    }

    pub fn observation(master_seed: u64) -> Self {
        Self::new(master_seed, OBSERVATION_STREAM)
    }

    pub fn particle(master_seed: u64, index: usize) -> Self {
        Self::new(master_seed, FIRST_PARTICLE_STREAM + index as u64)
    }

    pub fn generator(&self) -> GaussianSource {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        GaussianSource { rng }
    }
}

/// Master seed of replica `index` of an experiment seeded with `seed`.
pub fn replica_seed(seed: u64, index: usize) -> u64 {
    splitmix64(splitmix64(seed) ^ (index as u64).wrapping_mul(0xA24B_AED4_963E_E407))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Standard-normal sample source bound to one stream.
#[derive(Debug, Clone)]
pub struct GaussianSource {
    rng: ChaCha8Rng,
}

impl GaussianSource {
    #[inline]
    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for x in out {
            *x = self.normal();
        }
    }
}
