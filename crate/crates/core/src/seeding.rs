use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Generator for one independent stream under a run seed. Deriving per-item
/// streams this way keeps parallel output identical to sequential output.
pub fn stream(seed: u64, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Two-level stream id, e.g. (sample index, repetition).
pub fn substream(seed: u64, index: u64, sub: u64) -> Rng {
    stream(seed, index.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ sub)
}
