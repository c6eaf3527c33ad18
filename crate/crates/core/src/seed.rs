//! Counter-based seed derivation so that replicate- and scenario-level RNG
//! streams are independent of execution order.

/// SplitMix64 finalizer; a full-period bijective mixer.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a stream index. Chaining calls
/// gives hierarchical streams: scenario → replication → bootstrap replicate.
pub fn derive(parent: u64, index: u64) -> u64 {
    splitmix(splitmix(parent) ^ index.wrapping_mul(0xd6e8_feb8_6659_fd93))
}
