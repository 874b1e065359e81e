//! Deterministic derivation of per-task RNG seeds from a master seed.
//!
//! Replicates and simulation runs each get an independent stream seed
//! computed from `(master_seed, stream_index)` alone, so results do not
//! depend on scheduling or thread count.

/// Mixes a master seed with a stream index into a well-spread 64-bit seed.
///
/// Splitmix64 finalizer applied to the offset master seed; consecutive
/// stream indices yield statistically independent seeds.
pub fn derive_seed(master_seed: u64, stream: u64) -> u64 {
    let mut z = master_seed
        .wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
