use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

/// Generator for layer `layer_index` of a network seeded with `seed`.
pub fn layer_rng(seed: u64, layer_index: u64) -> SplitMix64 {
    // Mix the pair through one SplitMix64 step so neighbouring indices
    // do not start on overlapping streams.
    let mut mixer = SplitMix64::seed_from_u64(seed ^ layer_index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    SplitMix64::seed_from_u64(mixer.gen::<u64>())
}

/// Glorot-uniform values in `(-s, s)`, `s = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(rng: &mut SplitMix64, n: usize, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-s..s)).collect()
}
