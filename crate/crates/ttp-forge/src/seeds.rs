//! Seed derivation for parallel task matrices. Every task gets a seed
//! mixed from the master seed and its coordinates, so scheduling order
//! cannot change any result.

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn mix(master: u64, parts: &[u64]) -> u64 {
    let mut acc = splitmix64(master);
    for &p in parts {
        acc = splitmix64(acc ^ splitmix64(p));
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixing_is_stable_and_order_sensitive() {
        assert_eq!(mix(42, &[1, 2, 3]), mix(42, &[1, 2, 3]));
        assert_ne!(mix(42, &[1, 2, 3]), mix(42, &[3, 2, 1]));
        assert_ne!(mix(42, &[1]), mix(43, &[1]));
        assert_ne!(mix(42, &[]), mix(42, &[0]));
    }
}
