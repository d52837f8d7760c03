use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Every randomized routine in the crate draws from this generator so that
/// results are a pure function of the seed on every platform.
pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent child stream.
pub fn fork(rng: &mut Rng) -> Rng {
    use rand::Rng as _;
    ChaCha8Rng::seed_from_u64(rng.random())
}
