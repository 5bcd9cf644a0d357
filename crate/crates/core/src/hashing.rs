//! Stable content hashing and seed derivation.
//!
//! Everything that must be reproducible across runs and platforms (ids,
//! fingerprints, derived seeds) goes through SHA-256 rather than
//! `std::hash`, whose output is not stable between releases.

use sha2::{Digest, Sha256};

/// Incremental hasher with length-prefixed fields, so `("ab", "c")` and
/// `("a", "bc")` never collide.
#[derive(Clone, Default)]
pub struct FieldHasher {
    inner: Sha256,
}

impl FieldHasher {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn field(&mut self, bytes: impl AsRef<[u8]>) -> &mut Self {
        let bytes = bytes.as_ref();
        self.inner.update((bytes.len() as u64).to_le_bytes());
        self.inner.update(bytes);
        self
    }

    pub fn u64(&mut self, value: u64) -> &mut Self {
        self.field(value.to_le_bytes())
    }

    pub fn finish(&self) -> [u8; 32] {
        self.inner.clone().finalize().into()
    }

    pub fn hex(&self) -> String {
        hex::encode(self.finish())
    }

    /// First eight bytes of the digest as a little-endian integer.
    pub fn seed(&self) -> u64 {
        let digest = self.finish();
        u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }
}

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(bytes.as_ref()))
}

/// Derives an independent seed for a named stage from a global seed.
pub fn derive_seed(seed: u64, stage: &str) -> u64 {
    FieldHasher::new().u64(seed).field(stage).seed()
}

/// Short deterministic id built from hashed fields (16 hex chars).
pub fn short_id(fields: &[&[u8]]) -> String {
    let mut h = FieldHasher::new();
    for f in fields {
        h.field(f);
    }
    h.hex()[..16].to_string()
}
