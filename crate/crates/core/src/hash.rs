//! FNV-1a hashes used for feature hashing (32-bit) and trace keys (64-bit).

const FNV32_OFFSET: u32 = 2_166_136_261;
const FNV32_PRIME: u32 = 16_777_619;
const FNV64_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV64_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a32(bytes: &[u8]) -> u32 {
    bytes.iter().fold(FNV32_OFFSET, |h, &b| (h ^ u32::from(b)).wrapping_mul(FNV32_PRIME))
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV64_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV64_PRIME))
}

#[cfg(test)]
mod tests {
    use super::*;

    // Golden values from an independent reference implementation.
    #[test]
    fn fnv1a32_golden() {
        assert_eq!(fnv1a32(b""), 2_166_136_261);
        assert_eq!(fnv1a32(b"a"), 0xe40c_292c);
        assert_eq!(fnv1a32(b"6"), 856_466_825);
        assert_eq!(fnv1a32(b"6 6"), 2_322_909_959);
        assert_eq!(fnv1a32(b"6 63"), 702_276_316);
    }

    #[test]
    fn fnv1a64_golden() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a64(b"6"), 0xaf63_ab4c_8601_9949);
        assert_eq!(fnv1a64(b"6 63"), 0x2285_56ea_2ade_875c);
    }
}
