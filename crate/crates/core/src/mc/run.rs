use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use super::bins::LogBinnedSeries;
use super::ladder::{attempt_exchanges, validate_temperatures, ExchangeStats, ReplicaLadder};
use super::Couplings;
use crate::disorder::DisorderRealization;
use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::observables::{measure, FourierBasis, WaveVectors, N_OBSERVABLES};
use crate::rng::derive_key;

pub(crate) const CHECKPOINT_VERSION: u32 = 1;

/// Run parameters for one disorder sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub temperatures: Vec<f64>,
    /// Total sweeps; a power of two.
    pub n_sweeps: u64,
    /// Measure after every `measure_every`-th sweep; a power of two.
    pub measure_every: u64,
    pub seed: u64,
    #[serde(default)]
    pub wave_vectors: WaveVectors,
    /// Keep every measurement, not only the bins.
    #[serde(default)]
    pub record_series: bool,
}

impl Schedule {
    pub fn new(temperatures: Vec<f64>, n_sweeps: u64, seed: u64) -> Self {
        Schedule {
            temperatures,
            n_sweeps,
            measure_every: 1,
            seed,
            wave_vectors: WaveVectors::XOnly,
            record_series: false,
        }
    }

    pub fn n_measurements(&self) -> u64 {
        self.n_sweeps / self.measure_every
    }

    pub fn validate(&self) -> Result<()> {
        validate_temperatures(&self.temperatures)?;
        if !self.n_sweeps.is_power_of_two() {
            return Err(Error::Domain(format!(
                "the number of sweeps must be a power of two, got {}",
                self.n_sweeps
            )));
        }
        if !self.measure_every.is_power_of_two() || self.measure_every > self.n_sweeps {
            return Err(Error::Domain(format!(
                "measure_every must be a power of two not above the sweep count, got {}",
                self.measure_every
            )));
        }
        Ok(())
    }
}

/// Every measurement, indexed `[temperature][t]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSeries {
    pub values: Vec<Vec<[f64; N_OBSERVABLES]>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutput {
    pub temperatures: Vec<f64>,
    pub bins: LogBinnedSeries,
    pub series: Option<MeasurementSeries>,
    pub exchange: ExchangeStats,
}

/// Full state of an interrupted [`Simulation`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalarCheckpoint {
    pub version: u32,
    pub lattice_fingerprint: String,
    pub disorder_fingerprint: String,
    pub schedule: Schedule,
    pub sweeps_done: u64,
    ladder: ReplicaLadder,
    exchange_rng: Xoshiro256PlusPlus,
    bins: LogBinnedSeries,
    series: Option<MeasurementSeries>,
}

impl ScalarCheckpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Parallel-tempering run of a single disorder sample.
pub struct Simulation {
    couplings: Couplings,
    basis: FourierBasis,
    schedule: Schedule,
    ladder: ReplicaLadder,
    exchange_rng: Xoshiro256PlusPlus,
    bins: LogBinnedSeries,
    series: Option<MeasurementSeries>,
    sweeps_done: u64,
    parallel: bool,
}

impl Simulation {
    pub fn new(lat: &Lattice, dis: &DisorderRealization, schedule: Schedule) -> Result<Self> {
        schedule.validate()?;
        let couplings = Couplings::new(lat, dis)?;
        let ladder = ReplicaLadder::new(&couplings, &schedule.temperatures, schedule.seed)?;
        let n_t = schedule.temperatures.len();
        Ok(Simulation {
            basis: FourierBasis::new(lat, schedule.wave_vectors),
            exchange_rng: Xoshiro256PlusPlus::from_seed(derive_key("exchange", &[schedule.seed])),
            bins: LogBinnedSeries::new(n_t),
            series: schedule.record_series.then(|| MeasurementSeries {
                values: vec![Vec::new(); n_t],
            }),
            couplings,
            ladder,
            schedule,
            sweeps_done: 0,
            parallel: false,
        })
    }

    /// Sweep replicas on the rayon pool. Results do not depend on this.
    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    pub fn sweeps_done(&self) -> u64 {
        self.sweeps_done
    }

    pub fn is_finished(&self) -> bool {
        self.sweeps_done >= self.schedule.n_sweeps
    }

    pub fn ladder(&self) -> &ReplicaLadder {
        &self.ladder
    }

    pub fn couplings(&self) -> &Couplings {
        &self.couplings
    }

    /// One sweep of every replica, one exchange phase, and a measurement
    /// when due.
    pub fn step(&mut self) {
        self.ladder.sweep(&self.couplings, self.parallel);
        attempt_exchanges(&mut self.ladder, &mut self.exchange_rng);
        self.sweeps_done += 1;
        if self.sweeps_done % self.schedule.measure_every == 0 {
            let t = self.sweeps_done / self.schedule.measure_every - 1;
            for slot in 0..self.ladder.len() {
                let m = measure(self.ladder.replica(0, slot), self.ladder.replica(1, slot), &self.basis);
                let values = m.values(&self.basis);
                self.bins.push(slot, t, &values);
                if let Some(series) = &mut self.series {
                    series.values[slot].push(values);
                }
            }
        }
    }

    /// Advances to `min(target, n_sweeps)` sweeps.
    pub fn run_until(&mut self, target: u64) {
        while self.sweeps_done < target.min(self.schedule.n_sweeps) {
            self.step();
        }
    }

    pub fn checkpoint(&self) -> ScalarCheckpoint {
        ScalarCheckpoint {
            version: CHECKPOINT_VERSION,
            lattice_fingerprint: self.couplings.lattice_fingerprint().to_string(),
            disorder_fingerprint: self.couplings.disorder_fingerprint().to_string(),
            schedule: self.schedule.clone(),
            sweeps_done: self.sweeps_done,
            ladder: self.ladder.clone(),
            exchange_rng: self.exchange_rng.clone(),
            bins: self.bins.clone(),
            series: self.series.clone(),
        }
    }

    /// Rebuilds a run from a checkpoint; the lattice and disorder must be the
    /// ones it was taken with.
    pub fn restore(lat: &Lattice, dis: &DisorderRealization, ckpt: ScalarCheckpoint) -> Result<Self> {
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Integrity(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        let couplings = Couplings::new(lat, dis)?;
        if couplings.lattice_fingerprint() != ckpt.lattice_fingerprint {
            return Err(Error::Integrity("checkpoint was taken on a different lattice".into()));
        }
        if couplings.disorder_fingerprint() != ckpt.disorder_fingerprint {
            return Err(Error::Integrity("checkpoint was taken with different disorder".into()));
        }
        ckpt.schedule.validate()?;
        Ok(Simulation {
            basis: FourierBasis::new(lat, ckpt.schedule.wave_vectors),
            couplings,
            schedule: ckpt.schedule,
            ladder: ckpt.ladder,
            exchange_rng: ckpt.exchange_rng,
            bins: ckpt.bins,
            series: ckpt.series,
            sweeps_done: ckpt.sweeps_done,
            parallel: false,
        })
    }

    pub fn finish(self) -> SimulationOutput {
        SimulationOutput {
            temperatures: self.schedule.temperatures,
            bins: self.bins,
            series: self.series,
            exchange: self.ladder.exchange_stats().clone(),
        }
    }
}

/// Runs a schedule to completion.
pub fn run_simulation(lat: &Lattice, dis: &DisorderRealization, schedule: Schedule) -> Result<SimulationOutput> {
    let mut sim = Simulation::new(lat, dis, schedule)?;
    let n = sim.schedule.n_sweeps;
    sim.run_until(n);
    Ok(sim.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disorder::sample_disorder;
    use crate::lattice::{build_triangular, build_union_jack};

    fn schedule(n_sweeps: u64, seed: u64) -> Schedule {
        let mut s = Schedule::new(vec![1.0, 1.6, 2.4], n_sweeps, seed);
        s.record_series = true;
        s
    }

    #[test]
    fn eight_sweeps_give_eight_measurements() {
        let lat = build_union_jack(4).unwrap();
        let dis = sample_disorder(&lat, 0.1, 1).unwrap();
        let out = run_simulation(&lat, &dis, schedule(8, 2)).unwrap();
        let series = out.series.unwrap();
        assert!(series.values.iter().all(|v| v.len() == 8));
        assert_eq!(out.bins.n_bins(), 3);
        let sizes: Vec<u64> = out.bins.bins(0).iter().map(|b| b.count).collect();
        assert_eq!(sizes, vec![1, 2, 4]);
    }

    #[test]
    fn schedule_validation() {
        let lat = build_union_jack(2).unwrap();
        let dis = DisorderRealization::uniform(lat.n_triangles());
        assert!(Simulation::new(&lat, &dis, schedule(12, 1)).is_err());
        let mut s = schedule(16, 1);
        s.measure_every = 3;
        assert!(Simulation::new(&lat, &dis, s).is_err());
        let mut s = schedule(16, 1);
        s.temperatures = vec![2.0, 1.0];
        assert!(Simulation::new(&lat, &dis, s).is_err());
    }

    #[test]
    fn deterministic_and_thread_independent() {
        let lat = build_triangular(6).unwrap();
        let dis = sample_disorder(&lat, 0.1, 7).unwrap();
        let a = run_simulation(&lat, &dis, schedule(64, 5)).unwrap();
        let mut sim = Simulation::new(&lat, &dis, schedule(64, 5)).unwrap().with_parallel(true);
        sim.run_until(64);
        let b = sim.finish();
        assert_eq!(a, b);
        let c = run_simulation(&lat, &dis, schedule(64, 6)).unwrap();
        assert_ne!(a.series, c.series);
    }

    #[test]
    fn resume_is_bit_identical() {
        let lat = build_union_jack(4).unwrap();
        let dis = sample_disorder(&lat, 0.2, 3).unwrap();
        let full = run_simulation(&lat, &dis, schedule(128, 9)).unwrap();

        let mut sim = Simulation::new(&lat, &dis, schedule(128, 9)).unwrap();
        sim.run_until(37);
        let json = sim.checkpoint().to_json().unwrap();
        drop(sim);
        let mut resumed = Simulation::restore(&lat, &dis, ScalarCheckpoint::from_json(&json).unwrap()).unwrap();
        assert_eq!(resumed.sweeps_done(), 37);
        resumed.run_until(u64::MAX);
        assert!(resumed.is_finished());
        assert_eq!(resumed.finish(), full);
    }

    #[test]
    fn restore_rejects_foreign_disorder() {
        let lat = build_union_jack(4).unwrap();
        let dis = sample_disorder(&lat, 0.2, 3).unwrap();
        let other = sample_disorder(&lat, 0.2, 4).unwrap();
        let mut sim = Simulation::new(&lat, &dis, schedule(16, 1)).unwrap();
        sim.run_until(4);
        let ckpt = sim.checkpoint();
        assert!(matches!(
            Simulation::restore(&lat, &other, ckpt.clone()),
            Err(Error::Integrity(_))
        ));
        let lat6 = build_union_jack(6).unwrap();
        let dis6 = sample_disorder(&lat6, 0.2, 3).unwrap();
        assert!(matches!(Simulation::restore(&lat6, &dis6, ckpt), Err(Error::Integrity(_))));
    }

    #[test]
    fn energies_stay_consistent_over_a_run() {
        let lat = build_triangular(6).unwrap();
        let dis = sample_disorder(&lat, 0.3, 2).unwrap();
        let mut sim = Simulation::new(&lat, &dis, schedule(256, 3)).unwrap();
        sim.run_until(256);
        for set in 0..2 {
            for slot in 0..3 {
                assert!(sim.ladder().replica(set, slot).is_consistent(sim.couplings()));
            }
        }
    }
}
