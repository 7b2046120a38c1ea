//! Quenched coupling signs and the Nishimori line.
//!
//! Temperatures are in units of the coupling `J = 1`.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::rng::{derive_key, digest_hex, probability_threshold};

/// One realization of the triangle signs `tau`, `-1` with probability `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisorderRealization {
    tau: Vec<i8>,
    p: f64,
    seed: u64,
    n_negative: usize,
}

impl DisorderRealization {
    /// All-ferromagnetic couplings (`p = 0`).
    pub fn uniform(n_triangles: usize) -> Self {
        DisorderRealization {
            tau: vec![1; n_triangles],
            p: 0.0,
            seed: 0,
            n_negative: 0,
        }
    }

    /// Builds a realization from explicit signs. `p` and `seed` are recorded
    /// for provenance only.
    pub fn from_signs(tau: Vec<i8>, p: f64, seed: u64) -> Result<Self> {
        if let Some(bad) = tau.iter().find(|&&t| t != 1 && t != -1) {
            return Err(Error::Domain(format!("coupling sign must be +1 or -1, got {bad}")));
        }
        let n_negative = tau.iter().filter(|&&t| t < 0).count();
        Ok(DisorderRealization {
            tau,
            p,
            seed,
            n_negative,
        })
    }

    pub fn tau(&self) -> &[i8] {
        &self.tau
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_negative(&self) -> usize {
        self.n_negative
    }

    pub fn n_triangles(&self) -> usize {
        self.tau.len()
    }

    /// Little-endian bitset, one bit per triangle, 1 = negative.
    pub fn packed_bits(&self) -> Vec<u8> {
        let mut bytes = vec![0u8; self.tau.len().div_ceil(8)];
        for (t, &sign) in self.tau.iter().enumerate() {
            if sign < 0 {
                bytes[t / 8] |= 1 << (t % 8);
            }
        }
        bytes
    }

    pub fn fingerprint(&self) -> String {
        let mut bytes = (self.tau.len() as u64).to_le_bytes().to_vec();
        bytes.extend(self.packed_bits());
        digest_hex(&bytes)
    }

    pub fn to_record(&self) -> DisorderRecord {
        DisorderRecord {
            p: self.p,
            seed: self.seed,
            n_triangles: self.tau.len(),
            tau_packed: self.packed_bits().iter().map(|b| format!("{b:02x}")).collect(),
        }
    }

    pub fn from_record(record: &DisorderRecord) -> Result<Self> {
        let hex = record.tau_packed.as_bytes();
        if hex.len() != 2 * record.n_triangles.div_ceil(8) {
            return Err(Error::Parse(format!(
                "packed signs hold {} hex digits, expected {}",
                hex.len(),
                2 * record.n_triangles.div_ceil(8)
            )));
        }
        let bytes = hex
            .chunks(2)
            .map(|pair| {
                std::str::from_utf8(pair)
                    .ok()
                    .and_then(|s| u8::from_str_radix(s, 16).ok())
                    .ok_or_else(|| Error::Parse("packed signs are not valid hex".into()))
            })
            .collect::<Result<Vec<u8>>>()?;
        let tau = (0..record.n_triangles)
            .map(|t| if bytes[t / 8] >> (t % 8) & 1 == 1 { -1 } else { 1 })
            .collect();
        Self::from_signs(tau, record.p, record.seed)
    }
}

/// Serialized realization `{p, seed, n_triangles, tau_packed}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisorderRecord {
    pub p: f64,
    pub seed: u64,
    pub n_triangles: usize,
    /// Hex of the little-endian sign bitset.
    pub tau_packed: String,
}

fn check_probability(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Domain(format!("error probability must lie in [0, 1), got {p}")));
    }
    Ok(())
}

/// Draws independent signs, each negative with probability `p`.
///
/// The stream is ChaCha8 keyed by `("disorder", seed)` and is disjoint from
/// every thermal stream.
pub fn sample_disorder(lat: &Lattice, p: f64, seed: u64) -> Result<DisorderRealization> {
    check_probability(p)?;
    let mut rng = ChaCha8Rng::from_seed(derive_key("disorder", &[seed]));
    let threshold = probability_threshold(p);
    let tau: Vec<i8> = (0..lat.n_triangles())
        .map(|_| if rng.next_u64() < threshold { -1 } else { 1 })
        .collect();
    let n_negative = tau.iter().filter(|&&t| t < 0).count();
    Ok(DisorderRealization {
        tau,
        p,
        seed,
        n_negative,
    })
}

/// Temperature of the Nishimori line, `exp(-2/T) = p / (1 - p)`.
pub fn nishimori_temperature(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 0.5) {
        return Err(Error::Domain(format!(
            "the Nishimori temperature is finite and positive only for 0 < p < 1/2, got {p}"
        )));
    }
    Ok(2.0 / ((1.0 - p) / p).ln())
}

/// Inverse of [`nishimori_temperature`].
pub fn nishimori_probability(temperature: f64) -> f64 {
    1.0 / (1.0 + (2.0 / temperature).exp())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NishimoriPoint {
    pub p: f64,
    pub temperature: f64,
}

impl NishimoriPoint {
    pub fn new(p: f64) -> Result<Self> {
        Ok(NishimoriPoint {
            p,
            temperature: nishimori_temperature(p)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use statrs::distribution::{Binomial, DiscreteCDF};

    use super::*;
    use crate::lattice::build_union_jack;

    #[test]
    fn zero_probability_is_all_ferromagnetic() {
        let lat = build_union_jack(6).unwrap();
        for seed in 0..20 {
            let d = sample_disorder(&lat, 0.0, seed).unwrap();
            assert_eq!(d.n_negative(), 0);
            assert!(d.tau().iter().all(|&t| t == 1));
        }
    }

    #[test]
    fn probability_domain() {
        let lat = build_union_jack(2).unwrap();
        for p in [-0.1, 1.0, 1.5, f64::NAN] {
            assert!(matches!(sample_disorder(&lat, p, 1), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let lat = build_union_jack(12).unwrap();
        let a = sample_disorder(&lat, 0.1, 42).unwrap();
        let b = sample_disorder(&lat, 0.1, 42).unwrap();
        let c = sample_disorder(&lat, 0.1, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.tau(), c.tau());
        assert_eq!(a.n_negative(), a.tau().iter().filter(|&&t| t < 0).count());
    }

    #[test]
    fn negative_fraction_stays_in_binomial_window() {
        // P(|k/n - 0.1| > 0.02) for n = 5184 from the exact binomial cdf.
        let n = 5184u64;
        let dist = Binomial::new(0.1, n).unwrap();
        let lo = (0.08 * n as f64).ceil() as u64; // 415
        let hi = (0.12 * n as f64).floor() as u64; // 622
        let outside = dist.cdf(lo - 1) + (1.0 - dist.cdf(hi));
        assert!(outside < 1e-4, "tail mass {outside}");

        let lat = build_union_jack(36).unwrap();
        assert_eq!(lat.n_triangles(), 5184);
        for seed in 0..500 {
            let d = sample_disorder(&lat, 0.10, seed).unwrap();
            let frac = d.n_negative() as f64 / n as f64;
            assert!((0.08..=0.12).contains(&frac), "seed {seed}: {frac}");
        }
    }

    #[test]
    fn empirical_frequency_over_many_seeds() {
        let lat = build_union_jack(2).unwrap();
        let p = 0.109;
        let seeds = 10_000;
        let negatives: usize = (0..seeds)
            .map(|s| sample_disorder(&lat, p, s).unwrap().n_negative())
            .sum();
        let trials = (seeds as usize * lat.n_triangles()) as f64;
        let sd = (trials * p * (1.0 - p)).sqrt();
        assert!((negatives as f64 - trials * p).abs() < 4.0 * sd);
    }

    #[test]
    fn nishimori_values() {
        assert!(matches!(nishimori_temperature(0.5), Err(Error::Domain(_))));
        assert!(nishimori_temperature(0.0).is_err());
        assert!(nishimori_temperature(0.7).is_err());
        assert!(nishimori_temperature(0.5 - 1e-9).unwrap() > 1e8);

        let p_unit = 1.0 / (1.0 + (2.0f64).exp());
        assert!((nishimori_temperature(p_unit).unwrap() - 1.0).abs() < 1e-14);

        // independent route: bisection on exp(-2/T) = p/(1-p)
        let p = 0.109;
        let target = p / (1.0 - p);
        let (mut lo, mut hi) = (0.1f64, 10.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (-2.0 / mid).exp() < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let t = nishimori_temperature(p).unwrap();
        assert!((t - lo).abs() < 1e-12);
        assert!((t - 0.9520).abs() < 5e-4, "{t}");
    }

    #[test]
    fn packed_record_round_trip() {
        let lat = build_union_jack(6).unwrap();
        let d = sample_disorder(&lat, 0.3, 9).unwrap();
        let rec = d.to_record();
        assert_eq!(rec.tau_packed.len(), 2 * 144usize.div_ceil(8));
        let json = serde_json::to_string(&rec).unwrap();
        let back = DisorderRealization::from_record(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, d);
        // bit 0 of byte 0 is triangle 0
        let bits = d.packed_bits();
        assert_eq!(bits[0] & 1 == 1, d.tau()[0] == -1);
    }

    proptest! {
        #[test]
        fn nishimori_round_trip(k in 1usize..50) {
            let p = k as f64 / 100.0;
            let t = nishimori_temperature(p).unwrap();
            prop_assert!((nishimori_probability(t) - p).abs() < 1e-12);
            let point = NishimoriPoint::new(p).unwrap();
            prop_assert!(((-2.0 / point.temperature).exp() - p / (1.0 - p)).abs() < 1e-12);
        }
    }
}
