//! Exact enumeration on tiny systems.
//!
//! All `2^N` states are visited once in Gray-code order and their
//! contributions are binned by energy. Because energies are integers in
//! `[-N_tri, N_tri]`, any temperature is then a weighted sum over at most
//! `2 N_tri + 1` levels, done in log-sum-exp arithmetic.

use num_complex::Complex64;
use serde::Serialize;

use crate::disorder::DisorderRealization;
use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::mc::{Couplings, SpinConfiguration};
use crate::observables::{
    aggregate, FourierBasis, Observable, ObservableRow, ThermalAverages, WaveVectors, N_OBSERVABLES,
};

/// Largest number of spins [`exact_thermal`] enumerates.
pub const MAX_SITES: usize = 24;
/// Largest number of triangles [`exact_disorder_average`] enumerates.
pub const MAX_TRIANGLES: usize = 20;
/// Spin-glass correlations are tracked up to this many sites.
pub const MAX_CORRELATION_SITES: usize = 16;

#[derive(Debug, Clone, Default)]
struct Level {
    count: f64,
    m0_sq: f64,
    mk_sq: f64,
    m2: f64,
    m4: f64,
    /// `sum over states of s_i s_j`, row-major; empty when not tracked.
    corr: Vec<f64>,
}

/// Energy-resolved state sums of one disorder realization.
#[derive(Debug, Clone)]
pub struct DensityOfStates {
    n_triangles: usize,
    size: usize,
    levels: Vec<Level>,
    /// `cos` and `sin` of `k_min (R_i - R_j)` for the spin-glass transform.
    pair_phase: Option<Vec<f64>>,
    disorder_fingerprint: String,
}

/// Exact thermal averages at one temperature.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactResult {
    pub temperature: f64,
    pub log_z: f64,
    pub energy: f64,
    pub energy_sq: f64,
    /// `<|m(0)|^2>`, unnormalized.
    pub m0_sq: f64,
    /// `<|m(k_min)|^2>`, unnormalized.
    pub mk_sq: f64,
    /// `<(m(0)/N)^2>`.
    pub m2: f64,
    /// `<(m(0)/N)^4>`.
    pub m4: f64,
    /// `[sum_ij <s_i s_j>^2]`; NaN above [`MAX_CORRELATION_SITES`].
    pub q0_sq: f64,
    /// `[|sum_ij <s_i s_j>^2 e^{i k (R_i - R_j)}|]`; NaN above the same bound.
    pub qk_sq: f64,
    pub disorder_fingerprint: String,
}

impl ExactResult {
    /// The same quantities in the convention of the Monte Carlo observables.
    pub fn averages(&self, size: usize) -> ThermalAverages {
        let area = (size * size) as f64;
        let mut v = [0.0; N_OBSERVABLES];
        v[Observable::Energy.index()] = self.energy;
        v[Observable::Chi0.index()] = self.m0_sq / area;
        v[Observable::ChiK.index()] = self.mk_sq / area;
        v[Observable::M2.index()] = self.m2;
        v[Observable::M4.index()] = self.m4;
        v[Observable::ChiSg0.index()] = self.q0_sq / area;
        v[Observable::ChiSgK.index()] = self.qk_sq / area;
        ThermalAverages(v)
    }
}

impl DensityOfStates {
    /// Enumerates all `2^N` spin states. Uses `k_min` along `x` only.
    pub fn enumerate(lat: &Lattice, dis: &DisorderRealization) -> Result<Self> {
        let n = lat.n_sites();
        if n > MAX_SITES {
            return Err(Error::TooLarge(format!(
                "exact enumeration is limited to {MAX_SITES} spins, got {n}"
            )));
        }
        let couplings = Couplings::new(lat, dis)?;
        let basis = FourierBasis::new(lat, WaveVectors::XOnly);
        let phases = basis.phases_x();
        let n_tri = lat.n_triangles();
        let track = n <= MAX_CORRELATION_SITES;

        let mut levels = vec![
            Level {
                corr: if track { vec![0.0; n * n] } else { Vec::new() },
                ..Level::default()
            };
            2 * n_tri + 1
        ];
        let mut cfg = SpinConfiguration::all_up(&couplings);
        let mut m0: i64 = n as i64;
        let mut mk: Complex64 = phases.iter().sum();
        let inv_n = 1.0 / n as f64;
        for step in 0u64..(1u64 << n) {
            if step > 0 {
                let site = step.trailing_zeros() as usize;
                let s = cfg.spins()[site];
                cfg.flip(site, &couplings);
                m0 -= 2 * s as i64;
                mk -= phases[site] * (2.0 * s as f64);
            }
            let level = &mut levels[(cfg.energy() + n_tri as i64) as usize];
            let m = m0 as f64 * inv_n;
            level.count += 1.0;
            level.m0_sq += (m0 * m0) as f64;
            level.mk_sq += mk.norm_sqr();
            level.m2 += m * m;
            level.m4 += m * m * m * m;
            if track {
                let spins = cfg.spins();
                for i in 0..n {
                    for j in 0..n {
                        level.corr[i * n + j] += (spins[i] * spins[j]) as f64;
                    }
                }
            }
        }
        let pair_phase = track.then(|| {
            let k = lat.k_min();
            let x: Vec<f64> = lat.sites().iter().map(|s| s.coords[0]).collect();
            (0..n * n).map(|ij| (k * (x[ij / n] - x[ij % n])).cos()).collect()
        });
        Ok(DensityOfStates {
            n_triangles: n_tri,
            size: lat.size(),
            levels,
            pair_phase,
            disorder_fingerprint: dis.fingerprint(),
        })
    }

    /// Number of states at energy `e`.
    pub fn degeneracy(&self, e: i64) -> f64 {
        let idx = e + self.n_triangles as i64;
        if idx < 0 || idx as usize >= self.levels.len() {
            return 0.0;
        }
        self.levels[idx as usize].count
    }

    pub fn ground_state_energy(&self) -> i64 {
        let idx = self.levels.iter().position(|l| l.count > 0.0).unwrap();
        idx as i64 - self.n_triangles as i64
    }

    /// `ln Z` at inverse temperature `beta`.
    pub fn log_partition(&self, beta: f64) -> f64 {
        let (shift, sum) = self.weights(beta);
        shift + sum.iter().sum::<f64>().ln()
    }

    /// Relative Boltzmann weights of the occupied levels, scaled so the
    /// largest is 1, together with the log of the scale.
    fn weights(&self, beta: f64) -> (f64, Vec<f64>) {
        let log_w: Vec<f64> = self
            .levels
            .iter()
            .enumerate()
            .map(|(idx, l)| {
                if l.count > 0.0 {
                    l.count.ln() - beta * (idx as f64 - self.n_triangles as f64)
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let shift = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (shift, log_w.iter().map(|&lw| (lw - shift).exp()).collect())
    }

    pub fn at(&self, temperature: f64) -> Result<ExactResult> {
        if !(temperature > 0.0) {
            return Err(Error::Domain(format!("temperature must be positive, got {temperature}")));
        }
        let beta = 1.0 / temperature;
        let (shift, w) = self.weights(beta);
        let z: f64 = w.iter().sum();
        // level sums hold totals over states, so divide by the count
        let avg = |f: &dyn Fn(&Level) -> f64| -> f64 {
            self.levels
                .iter()
                .zip(&w)
                .filter(|(l, _)| l.count > 0.0)
                .map(|(l, &wi)| wi * f(l) / l.count)
                .sum::<f64>()
                / z
        };
        let (mut energy, mut energy_sq) = (0.0, 0.0);
        for (idx, &wi) in w.iter().enumerate() {
            let e = idx as f64 - self.n_triangles as f64;
            energy += wi * e;
            energy_sq += wi * e * e;
        }
        energy /= z;
        energy_sq /= z;

        let (q0_sq, qk_sq) = match &self.pair_phase {
            Some(phase) => {
                let n2 = phase.len();
                let mut c = vec![0.0; n2];
                for (l, &wi) in self.levels.iter().zip(&w) {
                    if l.count > 0.0 {
                        let scale = wi / l.count;
                        for (acc, &v) in c.iter_mut().zip(&l.corr) {
                            *acc += scale * v;
                        }
                    }
                }
                let q0: f64 = c.iter().map(|v| (v / z).powi(2)).sum();
                let qk: f64 = c.iter().zip(phase).map(|(v, ph)| (v / z).powi(2) * ph).sum();
                (q0, qk)
            }
            None => (f64::NAN, f64::NAN),
        };

        Ok(ExactResult {
            temperature,
            log_z: shift + z.ln(),
            energy,
            energy_sq,
            m0_sq: avg(&|l| l.m0_sq),
            mk_sq: avg(&|l| l.mk_sq),
            m2: avg(&|l| l.m2),
            m4: avg(&|l| l.m4),
            q0_sq,
            qk_sq,
            disorder_fingerprint: self.disorder_fingerprint.clone(),
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }
}

/// Exact thermal averages of one realization at temperature `t`.
pub fn exact_thermal(lat: &Lattice, dis: &DisorderRealization, temperature: f64) -> Result<ExactResult> {
    DensityOfStates::enumerate(lat, dis)?.at(temperature)
}

/// Exact disorder average of every observable, enumerating all `2^N_tri`
/// sign patterns with their binomial weights.
pub fn exact_disorder_averages(lat: &Lattice, p: f64, temperature: f64) -> Result<ThermalAverages> {
    let n_tri = lat.n_triangles();
    if n_tri > MAX_TRIANGLES {
        return Err(Error::TooLarge(format!(
            "exact disorder averages are limited to {MAX_TRIANGLES} triangles, got {n_tri}"
        )));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("error probability must lie in [0, 1], got {p}")));
    }
    let mut total = [0.0; N_OBSERVABLES];
    for pattern in 0u64..(1u64 << n_tri) {
        let n_neg = pattern.count_ones() as i32;
        let weight = p.powi(n_neg) * (1.0 - p).powi(n_tri as i32 - n_neg);
        if weight == 0.0 {
            continue;
        }
        let tau = (0..n_tri).map(|t| if pattern >> t & 1 == 1 { -1 } else { 1 }).collect();
        let dis = DisorderRealization::from_signs(tau, p, pattern)?;
        let avg = exact_thermal(lat, &dis, temperature)?.averages(lat.size());
        for (acc, v) in total.iter_mut().zip(avg.0) {
            *acc += weight * v;
        }
    }
    Ok(ThermalAverages(total))
}

/// Exact `[<O>]` for a single observable.
pub fn exact_disorder_average(lat: &Lattice, p: f64, temperature: f64, observable: Observable) -> Result<f64> {
    Ok(exact_disorder_averages(lat, p, temperature)?.get(observable))
}

/// Exact disorder-averaged rows in the observables CSV schema. Error
/// columns are zero and `n_samples` counts the enumerated sign patterns.
pub fn exact_rows(lat: &Lattice, p: f64, temperatures: &[f64]) -> Result<Vec<ObservableRow>> {
    temperatures
        .iter()
        .map(|&t| {
            let avg = exact_disorder_averages(lat, p, t)?;
            let agg = aggregate(&[avg], lat.size(), 0, 0)?;
            let mut row = ObservableRow::from_aggregate(p, t, lat.size(), &agg, true);
            row.n_samples = 1 << lat.n_triangles();
            Ok(row)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disorder::{nishimori_temperature, sample_disorder};
    use crate::lattice::{build_triangular, build_union_jack};

    /// Plain double loop over states with ordinary exponentials.
    fn brute_force(lat: &Lattice, dis: &DisorderRealization, t: f64) -> (f64, f64, f64, f64) {
        let n = lat.n_sites();
        let c = Couplings::new(lat, dis).unwrap();
        let k = lat.k_min();
        let (mut z, mut e, mut m0, mut mk) = (0.0, 0.0, 0.0, 0.0);
        for state in 0u32..(1 << n) {
            let spins: Vec<i8> = (0..n).map(|i| if state >> i & 1 == 1 { -1 } else { 1 }).collect();
            let energy = c.energy(&spins) as f64;
            let w = (-energy / t).exp();
            let mag: f64 = spins.iter().map(|&s| s as f64).sum();
            let (mut re, mut im) = (0.0, 0.0);
            for (s, site) in spins.iter().zip(lat.sites()) {
                re += *s as f64 * (k * site.coords[0]).cos();
                im += *s as f64 * (k * site.coords[0]).sin();
            }
            z += w;
            e += w * energy;
            m0 += w * mag * mag;
            mk += w * (re * re + im * im);
        }
        (z.ln(), e / z, m0 / z, mk / z)
    }

    #[test]
    fn matches_brute_force() {
        let lat = build_union_jack(2).unwrap();
        for seed in 0..3 {
            let dis = sample_disorder(&lat, 0.3, seed).unwrap();
            for t in [0.7, 2.269, 5.0] {
                let r = exact_thermal(&lat, &dis, t).unwrap();
                let (lz, e, m0, mk) = brute_force(&lat, &dis, t);
                assert!((r.log_z - lz).abs() < 1e-12 * lz.abs().max(1.0));
                assert!((r.energy - e).abs() < 1e-10);
                assert!((r.m0_sq - m0).abs() < 1e-10);
                assert!((r.mk_sq - mk).abs() < 1e-10);
                assert!(r.energy_sq >= r.energy * r.energy - 1e-9);
            }
        }
    }

    #[test]
    fn ground_states_and_limits() {
        let lat = build_union_jack(2).unwrap();
        let dis = DisorderRealization::uniform(lat.n_triangles());
        let dos = DensityOfStates::enumerate(&lat, &dis).unwrap();
        assert_eq!(dos.ground_state_energy(), -16);
        assert_eq!(dos.degeneracy(-16), 4.0);
        let total: f64 = (-16..=16).map(|e| dos.degeneracy(e)).sum();
        assert_eq!(total, 256.0);

        let cold = dos.at(0.02).unwrap();
        assert!((cold.energy + 16.0).abs() < 1e-9);
        let hot = dos.at(1e7).unwrap();
        assert!(hot.energy.abs() < 1e-4);
        assert!((hot.m0_sq - 8.0).abs() < 1e-4);
        // no overflow deep in the ordered phase
        assert!(dos.at(1e-3).unwrap().log_z.is_finite());
    }

    #[test]
    fn derivative_of_log_z_is_minus_energy() {
        let lat = build_union_jack(2).unwrap();
        let dis = sample_disorder(&lat, 0.2, 8).unwrap();
        let dos = DensityOfStates::enumerate(&lat, &dis).unwrap();
        for t in [0.8, 1.5, 3.0] {
            let beta = 1.0 / t;
            let h = 1e-5;
            let deriv = (dos.log_partition(beta + h) - dos.log_partition(beta - h)) / (2.0 * h);
            let e = dos.at(t).unwrap().energy;
            assert!((deriv + e).abs() <= 1e-6 * e.abs().max(1.0), "{deriv} vs {e}");
        }
    }

    #[test]
    fn nishimori_energy_identity() {
        let lat = build_union_jack(2).unwrap();
        for p in [0.05, 0.109, 0.2, 0.3] {
            let t = nishimori_temperature(p).unwrap();
            let e = exact_disorder_average(&lat, p, t, Observable::Energy).unwrap();
            let per_triangle = e / lat.n_triangles() as f64;
            assert!((per_triangle + (1.0 - 2.0 * p)).abs() < 1e-10, "p = {p}: {per_triangle}");
        }
    }

    #[test]
    fn zero_probability_reduces_to_clean_system() {
        let lat = build_union_jack(2).unwrap();
        let clean = exact_thermal(&lat, &DisorderRealization::uniform(16), 1.7).unwrap().averages(2);
        let avg = exact_disorder_averages(&lat, 0.0, 1.7).unwrap();
        for o in Observable::ALL {
            assert!((clean.get(o) - avg.get(o)).abs() < 1e-12);
        }
    }

    #[test]
    fn complementary_probabilities_agree() {
        // reversing every spin maps tau to -tau
        let lat = build_union_jack(2).unwrap();
        let a = exact_disorder_averages(&lat, 0.3, 1.3).unwrap();
        let b = exact_disorder_averages(&lat, 0.7, 1.3).unwrap();
        for o in [Observable::Chi0, Observable::ChiK, Observable::ChiSg0, Observable::M4] {
            assert!((a.get(o) - b.get(o)).abs() < 1e-10 * a.get(o).abs().max(1.0), "{o:?}");
        }
        assert!((a.get(Observable::Energy) - b.get(Observable::Energy)).abs() < 1e-10);
    }

    #[test]
    fn spin_glass_sums_match_explicit_correlations() {
        let lat = build_union_jack(2).unwrap();
        let dis = sample_disorder(&lat, 0.25, 4).unwrap();
        let t = 1.1;
        let r = exact_thermal(&lat, &dis, t).unwrap();
        let n = lat.n_sites();
        let c = Couplings::new(&lat, &dis).unwrap();
        let mut corr = vec![0.0; n * n];
        let mut z = 0.0;
        for state in 0u32..(1 << n) {
            let spins: Vec<i8> = (0..n).map(|i| if state >> i & 1 == 1 { -1 } else { 1 }).collect();
            let w = (-(c.energy(&spins) as f64) / t).exp();
            z += w;
            for i in 0..n {
                for j in 0..n {
                    corr[i * n + j] += w * (spins[i] * spins[j]) as f64;
                }
            }
        }
        let q0: f64 = corr.iter().map(|v| (v / z).powi(2)).sum();
        assert!((r.q0_sq - q0).abs() < 1e-10);
        assert!(r.qk_sq <= r.q0_sq + 1e-12);
    }

    #[test]
    fn exact_rows_use_the_table_schema() {
        let lat = build_union_jack(2).unwrap();
        let rows = exact_rows(&lat, 0.1, &[1.0, 2.0]).unwrap();
        assert_eq!(rows.len(), 2);
        let avg = exact_disorder_averages(&lat, 0.1, 2.0).unwrap();
        assert_eq!(rows[1].chi0, avg.get(Observable::Chi0));
        assert_eq!(rows[1].chi0_err, 0.0);
        let text = crate::observables::write_rows(&rows);
        assert_eq!(crate::observables::parse_rows(&text).unwrap(), rows);
    }

    #[test]
    fn size_limits() {
        let big = build_union_jack(4).unwrap();
        let dis = DisorderRealization::uniform(big.n_triangles());
        assert!(matches!(exact_thermal(&big, &dis, 1.0), Err(Error::TooLarge(_))));
        assert!(matches!(
            exact_disorder_averages(&big, 0.1, 1.0),
            Err(Error::TooLarge(_))
        ));
        let tr = build_triangular(3).unwrap();
        let r = exact_thermal(&tr, &DisorderRealization::uniform(tr.n_triangles()), 2.0).unwrap();
        assert!(r.log_z.is_finite());
    }
}
