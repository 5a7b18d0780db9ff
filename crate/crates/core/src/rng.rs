//! Seeded random streams. Every consumer draws from its own ChaCha stream so
//! adding draws in one place never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Prototypes = 1,
    Labels = 2,
    Split = 3,
    Scene = 4,
    Init = 5,
    Shuffle = 6,
    Instance = 7,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
