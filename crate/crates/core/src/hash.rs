//! The fixed 128-bit digest used for path, crash, and seed identities.
//!
//! All identities in this crate are FNV-1a in its 128-bit form:
//!
//! ```text
//! h0    = 0x6c62272e07bb014262b821756295c58d   (offset basis)
//! prime = 0x0000000001000000000000000000013b   (2^88 + 2^8 + 0x3b)
//! h     = (h ^ byte) * prime                    per input byte, wrapping
//! ```
//!
//! The choice is part of the on-disk contract: seed file names, path ids,
//! and crash ids recorded in reports are stable across platforms and
//! releases. Do not change the constants.

/// FNV-1a 128-bit offset basis.
pub const FNV128_OFFSET: u128 = 0x6c62272e07bb014262b821756295c58d;
/// FNV-1a 128-bit prime.
pub const FNV128_PRIME: u128 = 0x0000000001000000000000000000013b;

/// Incremental FNV-1a (128-bit) hasher.
#[derive(Debug, Clone)]
pub struct Fnv128 {
    state: u128,
}

impl Fnv128 {
    pub fn new() -> Self {
        Fnv128 {
            state: FNV128_OFFSET,
        }
    }

    pub fn write(&mut self, bytes: &[u8]) -> &mut Self {
        for &b in bytes {
            self.state ^= b as u128;
            self.state = self.state.wrapping_mul(FNV128_PRIME);
        }
        self
    }

    pub fn finish(&self) -> u128 {
        self.state
    }
}

impl Default for Fnv128 {
    fn default() -> Self {
        Self::new()
    }
}

/// One-shot digest of a byte string.
pub fn fnv128(bytes: &[u8]) -> u128 {
    let mut h = Fnv128::new();
    h.write(bytes);
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_is_offset_basis() {
        assert_eq!(fnv128(&[]), FNV128_OFFSET);
    }

    #[test]
    fn reference_vector() {
        // Published FNV-1a 128 test vector for "a".
        assert_eq!(fnv128(b"a"), 0xd228cb696f1a8caf78912b704e4a8964);
    }

    #[test]
    fn incremental_matches_one_shot() {
        let mut h = Fnv128::new();
        h.write(b"hello ").write(b"world");
        assert_eq!(h.finish(), fnv128(b"hello world"));
    }
}
