//! Deterministic derivation of independent RNG stream seeds from one master
//! seed. Keeping distinct streams (covariates vs observation noise, training
//! vs evaluation) means changing one knob never perturbs draws owned by
//! another.

/// SplitMix64 finalizer: full-avalanche mixing of a 64-bit state.
fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Seed for stream `tag` under `master`. Distinct tags give statistically
/// independent streams; the map is pure and stable across platforms.
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    splitmix64(master ^ splitmix64(tag))
}
