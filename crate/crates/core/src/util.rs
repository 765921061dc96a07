//! Small shared helpers: deterministic seed derivation and content hashing.

use sha2::{Digest, Sha256};

/// SplitMix64 step. Used to derive independent seeds from a base seed so
/// that sub-stages (folds, directions, epochs) draw from disjoint streams.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for sub-stream `stream` of a run seeded with `base`. Stable across
/// runs and platforms; streams with different indices never collide in
/// practice because SplitMix64 is a bijection.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(base ^ stream.wrapping_mul(0xA24B_AED4_963E_E407))
}

/// Hex-encoded SHA-256 of a byte buffer. Used for config hashes and corpus
/// checksums recorded in evaluation reports.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}
