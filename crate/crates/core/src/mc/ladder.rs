use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{metropolis_sweep, AcceptanceTable, Couplings, SpinConfiguration};
use crate::error::{Error, Result};
use crate::rng::{derive_key, probability_threshold};

/// Per adjacent temperature pair, summed over both replica sets.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExchangeStats {
    pub attempts: Vec<u64>,
    pub accepts: Vec<u64>,
}

impl ExchangeStats {
    fn new(pairs: usize) -> Self {
        ExchangeStats {
            attempts: vec![0; pairs],
            accepts: vec![0; pairs],
        }
    }

    pub fn acceptance_rates(&self) -> Vec<f64> {
        self.attempts
            .iter()
            .zip(&self.accepts)
            .map(|(&n, &a)| a as f64 / n.max(1) as f64)
            .collect()
    }
}

/// Checks a temperature ladder: non-empty, positive, finite, strictly increasing.
pub(crate) fn validate_temperatures(temperatures: &[f64]) -> Result<()> {
    if temperatures.is_empty() {
        return Err(Error::Domain("temperature ladder is empty".into()));
    }
    if let Some(t) = temperatures.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
        return Err(Error::Domain(format!("temperatures must be positive and finite, got {t}")));
    }
    if temperatures.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain("temperatures must be strictly increasing".into()));
    }
    Ok(())
}

/// Two replica sets spread over a temperature ladder.
///
/// `replicas[set][slot]` is the configuration currently at temperature
/// `slot`. Exchanges move configurations between slots of the same set; the
/// random streams stay with their slot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicaLadder {
    temperatures: Vec<f64>,
    tables: Vec<AcceptanceTable>,
    replicas: [Vec<SpinConfiguration>; 2],
    rngs: [Vec<Xoshiro256PlusPlus>; 2],
    stats: ExchangeStats,
    parity: usize,
}

impl ReplicaLadder {
    /// Random initial configurations, each drawn from its replica's stream
    /// `("thermal", seed, set, slot)`.
    pub fn new(couplings: &Couplings, temperatures: &[f64], seed: u64) -> Result<Self> {
        validate_temperatures(temperatures)?;
        let tables = temperatures
            .iter()
            .map(|t| AcceptanceTable::new(1.0 / t, couplings.max_coordination()))
            .collect();
        let mut rngs: [Vec<Xoshiro256PlusPlus>; 2] = Default::default();
        let mut replicas: [Vec<SpinConfiguration>; 2] = Default::default();
        for set in 0..2 {
            for slot in 0..temperatures.len() {
                let mut rng = Xoshiro256PlusPlus::from_seed(derive_key("thermal", &[seed, set as u64, slot as u64]));
                replicas[set].push(SpinConfiguration::random(couplings, &mut rng));
                rngs[set].push(rng);
            }
        }
        Ok(ReplicaLadder {
            temperatures: temperatures.to_vec(),
            tables,
            replicas,
            rngs,
            stats: ExchangeStats::new(temperatures.len().saturating_sub(1)),
            parity: 0,
        })
    }

    pub fn temperatures(&self) -> &[f64] {
        &self.temperatures
    }

    pub fn len(&self) -> usize {
        self.temperatures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.temperatures.is_empty()
    }

    pub fn replica(&self, set: usize, slot: usize) -> &SpinConfiguration {
        &self.replicas[set][slot]
    }

    pub fn set(&self, set: usize) -> &[SpinConfiguration] {
        &self.replicas[set]
    }

    pub fn replica_mut(&mut self, set: usize, slot: usize) -> &mut SpinConfiguration {
        &mut self.replicas[set][slot]
    }

    pub fn exchange_stats(&self) -> &ExchangeStats {
        &self.stats
    }

    /// One Metropolis sweep of every replica. Replicas own their streams, so
    /// the parallel and serial paths produce identical states.
    pub fn sweep(&mut self, couplings: &Couplings, parallel: bool) {
        let tables = &self.tables;
        let [r0, r1] = &mut self.replicas;
        let [g0, g1] = &mut self.rngs;
        let mut work: Vec<(&mut SpinConfiguration, &mut Xoshiro256PlusPlus, &AcceptanceTable)> = r0
            .iter_mut()
            .zip(g0.iter_mut())
            .zip(tables)
            .chain(r1.iter_mut().zip(g1.iter_mut()).zip(tables))
            .map(|((c, g), t)| (c, g, t))
            .collect();
        if parallel {
            work.par_iter_mut().for_each(|(cfg, rng, table)| {
                metropolis_sweep(cfg, couplings, table, *rng);
            });
        } else {
            for (cfg, rng, table) in work.iter_mut() {
                metropolis_sweep(cfg, couplings, table, *rng);
            }
        }
    }
}

/// Metropolis probability for exchanging the configurations at two
/// temperatures, `min(1, exp[(beta_i - beta_j)(E_i - E_j)])`.
pub fn swap_probability(beta_i: f64, beta_j: f64, energy_i: f64, energy_j: f64) -> f64 {
    let exponent = (beta_i - beta_j) * (energy_i - energy_j);
    if exponent >= 0.0 {
        1.0
    } else {
        exponent.exp()
    }
}

/// One exchange phase: pairs `(i, i+1)` with `i` even on one call and odd on
/// the next, attempted independently within each replica set.
pub fn attempt_exchanges<'a, R: RngCore>(ladder: &'a mut ReplicaLadder, rng: &mut R) -> &'a ExchangeStats {
    let n = ladder.len();
    if n < 2 {
        return &ladder.stats;
    }
    let start = ladder.parity;
    ladder.parity ^= 1;
    for set in 0..2 {
        for i in (start..n - 1).step_by(2) {
            let prob = swap_probability(
                1.0 / ladder.temperatures[i],
                1.0 / ladder.temperatures[i + 1],
                ladder.replicas[set][i].energy() as f64,
                ladder.replicas[set][i + 1].energy() as f64,
            );
            let r = rng.next_u64();
            ladder.stats.attempts[i] += 1;
            if prob >= 1.0 || r < probability_threshold(prob) {
                ladder.replicas[set].swap(i, i + 1);
                ladder.stats.accepts[i] += 1;
            }
        }
    }
    &ladder.stats
}
