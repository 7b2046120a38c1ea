//! Seed derivation.
//!
//! Every random stream in the crate is keyed by a SHA-256 digest over a
//! domain tag and a list of integers, so streams for different purposes
//! (disorder, thermal updates, exchanges, bootstrap) never overlap and adding
//! a temperature, a sweep or a config row never perturbs an existing stream.
//!
//! | tag          | parts                                  | consumer                 |
//! |--------------|----------------------------------------|--------------------------|
//! | `sample`     | master, p bits, L, sample index        | per-sample master seed   |
//! | `batch`      | master, p bits, L, batch index         | packed-engine seed       |
//! | `disorder`   | sample seed                            | ChaCha8 coupling signs   |
//! | `thermal`    | run seed, set, slot                    | Metropolis updates       |
//! | `exchange`   | run seed                               | replica exchange         |
//! | `lanes`      | run seed, set, slot, word              | packed Metropolis        |
//! | `bootstrap`  | seed, ...                              | resampling               |

use sha2::{Digest, Sha256};

/// 32-byte key for stream `tag` and the given integer parts.
pub fn derive_key(tag: &str, parts: &[u64]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(b"tribody/");
    hasher.update(tag.as_bytes());
    hasher.update([0u8]);
    for part in parts {
        hasher.update(part.to_le_bytes());
    }
    hasher.finalize().into()
}

/// 64-bit seed for stream `tag`; the first eight digest bytes.
pub fn derive_seed(tag: &str, parts: &[u64]) -> u64 {
    let key = derive_key(tag, parts);
    u64::from_le_bytes(key[..8].try_into().unwrap())
}

/// Seed of one disorder sample: stable in (master, p, L, sample).
pub fn sample_seed(master: u64, p: f64, size: usize, sample: usize) -> u64 {
    derive_seed("sample", &[master, p.to_bits(), size as u64, sample as u64])
}

/// Thermal seed of one packed batch.
pub fn batch_seed(master: u64, p: f64, size: usize, batch: usize) -> u64 {
    derive_seed("batch", &[master, p.to_bits(), size as u64, batch as u64])
}

/// Hex digest of arbitrary bytes; used for lattice and disorder fingerprints.
pub fn digest_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Fixed-point acceptance threshold: `floor(q * 2^64)` clamped to `u64::MAX`.
///
/// A uniform 64-bit draw `r` is accepted iff `r < threshold`, which realises a
/// Bernoulli trial with probability `threshold / 2^64`. `q >= 1` maps to
/// `u64::MAX` and callers must treat it as certain acceptance.
pub fn probability_threshold(q: f64) -> u64 {
    if q.is_nan() || q <= 0.0 {
        0
    } else if q >= 1.0 {
        u64::MAX
    } else {
        // exact for q < 1: multiplying by a power of two only shifts the exponent
        let scaled = q * 18_446_744_073_709_551_616.0;
        if scaled >= 18_446_744_073_709_551_615.0 {
            u64::MAX
        } else {
            scaled as u64
        }
    }
}
