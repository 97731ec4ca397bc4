//! Seeded ChaCha streams. Every random ingredient has its own stream so that
//! changing one parameter (LO mode, κ, M) leaves the other draws untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    ApLayout,
    UeLayout,
    Shadowing,
    /// Small-scale fading of trial `t`.
    Fading(u64),
    /// Phase-noise chains of trial `t`.
    Phase(u64),
    /// Pilot-phase distortions and noise of trial `t`.
    PilotNoise(u64),
    /// Data-phase symbols, distortions and noise of trial `t`.
    DataNoise(u64),
    /// Free-form stream for tests and auxiliary draws.
    Aux(u64),
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::ApLayout => 1,
            Stream::UeLayout => 2,
            Stream::Shadowing => 3,
            Stream::Fading(t) => 16 + 8 * t,
            Stream::Phase(t) => 17 + 8 * t,
            Stream::PilotNoise(t) => 18 + 8 * t,
            Stream::DataNoise(t) => 19 + 8 * t,
            Stream::Aux(t) => 20 + 8 * t,
        }
    }
}

/// Independent generator for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}
