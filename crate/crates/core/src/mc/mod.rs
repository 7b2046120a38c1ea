//! Equilibrium sampling of the three-spin Hamiltonian
//! `H = -sum_t tau_t S_t^1 S_t^2 S_t^3`.
//!
//! Two engines share the same update protocol: sequential-order single-spin
//! Metropolis sweeps, followed by one replica-exchange phase per sweep that
//! alternates between even and odd adjacent temperature pairs. Two
//! independent replica sets run at every temperature so overlap observables
//! come from the same pass.
//!
//! * [`ReplicaLadder`] / [`Simulation`]: one disorder sample, one `i8` per
//!   spin and one private RNG stream per replica. Used as the reference and
//!   by the exact-oracle tests.
//! * [`packed`]: up to 512 disorder samples evolved together, one bit per
//!   sample, with per-lane exact Bernoulli acceptance. Used for sweeps.

mod bins;
mod ladder;
pub mod packed;
mod run;

pub use bins::{
    aggregate_bins, check_series, equilibration_check, BinMoments, BinSummary, BinTable, EquilibrationVerdict, LogBinnedSeries,
};
pub use ladder::{attempt_exchanges, swap_probability, ExchangeStats, ReplicaLadder};
pub use run::{run_simulation, MeasurementSeries, Schedule, ScalarCheckpoint, Simulation, SimulationOutput};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::disorder::DisorderRealization;
use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::rng::probability_threshold;

/// Lattice and coupling signs fused into per-site interaction lists.
#[derive(Debug, Clone)]
pub struct Couplings {
    n_sites: usize,
    offsets: Vec<u32>,
    partners: Vec<[u32; 2]>,
    signs: Vec<i8>,
    triangles: Vec<[u32; 3]>,
    tau: Vec<i8>,
    max_coordination: usize,
    lattice_fingerprint: String,
    disorder_fingerprint: String,
}

impl Couplings {
    pub fn new(lat: &Lattice, dis: &DisorderRealization) -> Result<Self> {
        if dis.n_triangles() != lat.n_triangles() {
            return Err(Error::Domain(format!(
                "disorder has {} signs but the lattice has {} triangles",
                dis.n_triangles(),
                lat.n_triangles()
            )));
        }
        let mut offsets = Vec::with_capacity(lat.n_sites() + 1);
        let mut partners = Vec::with_capacity(3 * lat.n_triangles());
        let mut signs = Vec::with_capacity(3 * lat.n_triangles());
        offsets.push(0);
        for site in 0..lat.n_sites() {
            for &t in lat.incidence(site) {
                let others: Vec<u32> = lat.triangles()[t]
                    .vertices
                    .iter()
                    .filter(|&&v| v != site)
                    .map(|&v| v as u32)
                    .collect();
                partners.push([others[0], others[1]]);
                signs.push(dis.tau()[t]);
            }
            offsets.push(partners.len() as u32);
        }
        Ok(Couplings {
            n_sites: lat.n_sites(),
            offsets,
            partners,
            signs,
            triangles: lat
                .triangles()
                .iter()
                .map(|t| t.vertices.map(|v| v as u32))
                .collect(),
            tau: dis.tau().to_vec(),
            max_coordination: lat.max_coordination(),
            lattice_fingerprint: lat.fingerprint(),
            disorder_fingerprint: dis.fingerprint(),
        })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn max_coordination(&self) -> usize {
        self.max_coordination
    }

    pub fn lattice_fingerprint(&self) -> &str {
        &self.lattice_fingerprint
    }

    pub fn disorder_fingerprint(&self) -> &str {
        &self.disorder_fingerprint
    }

    /// Total energy, recomputed from scratch.
    pub fn energy(&self, spins: &[i8]) -> i64 {
        -self
            .triangles
            .iter()
            .zip(&self.tau)
            .map(|(&[a, b, c], &t)| (t * spins[a as usize] * spins[b as usize] * spins[c as usize]) as i64)
            .sum::<i64>()
    }

    /// `E(flipped) - E(current)` for flipping `site`.
    #[inline]
    pub fn delta_energy(&self, spins: &[i8], site: usize) -> i64 {
        let range = self.offsets[site] as usize..self.offsets[site + 1] as usize;
        let field: i32 = self.partners[range.clone()]
            .iter()
            .zip(&self.signs[range])
            .map(|(&[j, k], &t)| (t * spins[j as usize] * spins[k as usize]) as i32)
            .sum();
        2 * (spins[site] as i32 * field) as i64
    }
}

/// `E(flipped) - E(current)` for flipping `site`, read straight off the
/// lattice incidence lists.
pub fn delta_energy(cfg: &SpinConfiguration, lat: &Lattice, dis: &DisorderRealization, site: usize) -> i64 {
    let s = cfg.spins();
    2 * lat
        .incidence(site)
        .iter()
        .map(|&t| {
            let [a, b, c] = lat.triangles()[t].vertices;
            (dis.tau()[t] * s[a] * s[b] * s[c]) as i64
        })
        .sum::<i64>()
}

/// Ising spins with their energy kept in step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpinConfiguration {
    spins: Vec<i8>,
    energy: i64,
}

impl SpinConfiguration {
    pub fn all_up(couplings: &Couplings) -> Self {
        Self::from_spins(vec![1; couplings.n_sites()], couplings)
    }

    pub fn random<R: RngCore>(couplings: &Couplings, rng: &mut R) -> Self {
        let mut spins = Vec::with_capacity(couplings.n_sites());
        while spins.len() < couplings.n_sites() {
            let bits = rng.next_u64();
            let take = (couplings.n_sites() - spins.len()).min(64);
            spins.extend((0..take).map(|b| if bits >> b & 1 == 0 { 1 } else { -1 }));
        }
        Self::from_spins(spins, couplings)
    }

    pub fn from_spins(spins: Vec<i8>, couplings: &Couplings) -> Self {
        assert_eq!(spins.len(), couplings.n_sites());
        let energy = couplings.energy(&spins);
        SpinConfiguration { spins, energy }
    }

    /// Trusts the caller's energy. Only for measurement fixtures.
    pub fn from_spins_unchecked(spins: Vec<i8>, energy: i64) -> Self {
        SpinConfiguration { spins, energy }
    }

    pub fn spins(&self) -> &[i8] {
        &self.spins
    }

    pub fn energy(&self) -> i64 {
        self.energy
    }

    /// Flips `site`, updating the energy incrementally.
    pub fn flip(&mut self, site: usize, couplings: &Couplings) {
        self.energy += couplings.delta_energy(&self.spins, site);
        self.spins[site] = -self.spins[site];
    }

    pub fn is_consistent(&self, couplings: &Couplings) -> bool {
        self.energy == couplings.energy(&self.spins)
    }
}

/// Metropolis acceptance thresholds at one inverse temperature.
///
/// Energy changes are even integers bounded by twice the coordination, so
/// `exp(-beta dE)` is tabulated once per temperature as a 64-bit fixed-point
/// threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceTable {
    beta: f64,
    /// Indexed by `dE / 2` for `dE > 0`.
    thresholds: Vec<u64>,
}

impl AcceptanceTable {
    pub fn new(beta: f64, max_coordination: usize) -> Self {
        assert!(beta >= 0.0, "inverse temperature must be non-negative");
        let thresholds = (0..=max_coordination)
            .map(|half| {
                if half == 0 {
                    u64::MAX
                } else {
                    probability_threshold((-beta * 2.0 * half as f64).exp())
                }
            })
            .collect();
        AcceptanceTable { beta, thresholds }
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Decides one proposal, drawing a random number only when `dE > 0`.
    #[inline]
    pub fn accept<R: RngCore>(&self, delta: i64, rng: &mut R) -> bool {
        if delta <= 0 {
            return true;
        }
        let threshold = self.thresholds[(delta / 2) as usize];
        let r = rng.next_u64();
        threshold == u64::MAX || r < threshold
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepStats {
    pub proposed: u64,
    pub accepted: u64,
}

impl SweepStats {
    pub fn acceptance_rate(&self) -> f64 {
        self.accepted as f64 / self.proposed.max(1) as f64
    }
}

/// One sequential sweep: a flip proposal at every site `0..N`.
pub fn metropolis_sweep<R: RngCore>(
    cfg: &mut SpinConfiguration,
    couplings: &Couplings,
    table: &AcceptanceTable,
    rng: &mut R,
) -> SweepStats {
    let mut accepted = 0;
    for site in 0..couplings.n_sites() {
        let delta = couplings.delta_energy(&cfg.spins, site);
        if table.accept(delta, rng) {
            cfg.spins[site] = -cfg.spins[site];
            cfg.energy += delta;
            accepted += 1;
        }
    }
    SweepStats {
        proposed: couplings.n_sites() as u64,
        accepted,
    }
}
