//! Deterministic pseudo-random word vectors.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const ZERO_STATE: u64 = 0x9E37_79B9_7F4A_7C15;
const XORSHIFT_MULT: u64 = 0x2545_F491_4F6C_DD1D;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Vector of `dim` components in `[-1/√dim, 1/√dim)` seeded by the FNV-1a
/// hash of `key` and advanced with xorshift64*.
pub fn hashed_embedding(key: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut x = fnv1a64(key.as_bytes()) ^ seed;
    if x == 0 {
        x = ZERO_STATE;
    }
    let scale = 1.0 / (dim as f64).sqrt();
    (0..dim)
        .map(|_| {
            x ^= x >> 12;
            x ^= x << 25;
            x ^= x >> 27;
            let out = x.wrapping_mul(XORSHIFT_MULT);
            let u = (out >> 11) as f64 / (1u64 << 53) as f64;
            (2.0 * u - 1.0) * scale
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn deterministic_and_bounded() {
        let a = hashed_embedding("ulm", 16, 7);
        let b = hashed_embedding("ulm", 16, 7);
        assert_eq!(a, b);
        let bound = 1.0 / 4.0;
        assert!(a.iter().all(|&v| (-bound..bound).contains(&v)));
    }

    #[test]
    fn zero_state_is_replaced() {
        // seed equal to the key hash would zero the state
        let seed = fnv1a64(b"k");
        let v = hashed_embedding("k", 4, seed);
        assert!(v.iter().any(|&c| c != v[0]));
    }
}
