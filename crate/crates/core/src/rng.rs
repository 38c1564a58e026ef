use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent stream for trial `index` of a stochastic step.
///
/// Streams are keyed by (seed, domain, index), so trials can run in any order
/// and still draw the same numbers.
pub fn stream(seed: u64, domain: u32, index: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((u64::from(domain) << 32) | u64::from(index));
    rng
}

pub const DOMAIN_PERMUTATION: u32 = 1;
pub const DOMAIN_RANDOM_BASELINE: u32 = 2;
pub const DOMAIN_KMEANS: u32 = 3;
pub const DOMAIN_SYNTHETIC: u32 = 4;
