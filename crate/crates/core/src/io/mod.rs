//! Persistence formats: the FRVS tensor container and PGM mask images.

pub mod frvs;
pub mod pgm;

use sha2::{Digest, Sha256};

/// Hex SHA-256 of a byte stream; used for corpus digests and video pairing.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let out = h.finalize();
    let mut s = String::with_capacity(64);
    for b in out {
        s.push_str(&format!("{b:02x}"));
    }
    s
}
