use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent, reproducible stream keyed by `(seed, tag, index)`.
pub(crate) fn substream(seed: u64, tag: u32, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((tag as u64) << 48) ^ index);
    rng
}

