// SPDX-License-Identifier: Apache-2.0

//! Content digests for cache keys.

use sha2::{Digest as _, Sha256};

/// Incremental, field-delimited SHA-256. Each field is length-prefixed so
/// `("ab", "c")` and `("a", "bc")` hash differently.
#[derive(Clone, Default)]
pub struct Digest {
    inner: Sha256,
}

impl Digest {
    pub fn new(domain: &str) -> Self {
        let mut d = Self::default();
        d.bytes(domain.as_bytes());
        d
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.inner.update((b.len() as u64).to_le_bytes());
        self.inner.update(b);
        self
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.bytes(s.as_bytes())
    }

    pub fn field(&mut self, name: &str, value: impl std::fmt::Display) -> &mut Self {
        self.str(name).str(&value.to_string())
    }

    pub fn f64(&mut self, name: &str, v: f64) -> &mut Self {
        self.str(name).bytes(&v.to_bits().to_le_bytes())
    }

    pub fn finish(&self) -> String {
        hex::encode(self.inner.clone().finalize())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
