//! Per-stage seed derivation from one root seed.

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable seed for a named stage. Independent of platform and build.
pub fn derive_seed(root: u64, stage: &str) -> u64 {
    // FNV-1a over the stage name, folded into the root
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stage.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    mix64(root ^ mix64(h))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_and_distinct() {
        assert_eq!(derive_seed(7, "pair"), derive_seed(7, "pair"));
        assert_ne!(derive_seed(7, "pair"), derive_seed(7, "split"));
        assert_ne!(derive_seed(7, "pair"), derive_seed(8, "pair"));
        // pinned so a change in derivation is caught
        assert_eq!(mix64(0), 0xe220_a839_7b1d_cdaf);
    }
}
