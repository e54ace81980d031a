//! Small shared helpers.

/// Derives an independent stream seed from a base seed and a salt
/// (splitmix64 finalizer). Every seeded stage of the pipeline gets its own
/// stream so that adding a stage never shifts the draws of another.
pub(crate) fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Total order for finite f64 used in deterministic sorts.
pub(crate) fn cmp_f64(a: f64, b: f64) -> std::cmp::Ordering {
    a.total_cmp(&b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix_seed_spreads_salts() {
        let a = mix_seed(7, 1);
        let b = mix_seed(7, 2);
        assert_ne!(a, b);
        assert_eq!(a, mix_seed(7, 1));
    }
}
