use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::LatticeKind;
use crate::observables::WaveVectors;

pub const SCHEMA_VERSION: u32 = 1;

/// Wall-clock cost of one single-spin update in the packed engine, per
/// disorder lane, measured on one core of a desktop machine.
pub const NANOS_PER_SPIN_UPDATE: f64 = 0.6;

/// A single number or a list, so that rows sharing all parameters can be
/// written once for several values of `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    pub fn values(&self) -> Vec<f64> {
        match self {
            OneOrMany::One(v) => vec![*v],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

/// One line of the simulation plan: every `p` and `L` listed shares the
/// sample count, run length and temperature grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRow {
    pub p: OneOrMany,
    pub sizes: Vec<usize>,
    pub samples: usize,
    /// The run lasts `2^b` sweeps.
    pub b: u32,
    pub t_min: f64,
    pub t_max: f64,
    pub n_t: usize,
}

impl SweepRow {
    /// `n_t` evenly spaced temperatures from `t_min` to `t_max`.
    pub fn temperatures(&self) -> Vec<f64> {
        if self.n_t < 2 {
            return vec![self.t_min; self.n_t];
        }
        let step = (self.t_max - self.t_min) / (self.n_t - 1) as f64;
        (0..self.n_t)
            .map(|i| if i + 1 == self.n_t { self.t_max } else { self.t_min + step * i as f64 })
            .collect()
    }
}

fn default_measure_every() -> u64 {
    4
}
fn default_n_boot() -> usize {
    1000
}
fn default_sigma() -> f64 {
    4.0
}
fn default_batch() -> usize {
    512
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Engine {
    /// Many disorder samples per machine word.
    #[default]
    Packed,
    /// One sample at a time with byte spins.
    Scalar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub schema_version: u32,
    pub lattice: LatticeKind,
    pub master_seed: u64,
    /// Worker threads; 0 uses every available core.
    #[serde(default)]
    pub workers: usize,
    pub output_dir: PathBuf,
    /// Sweeps between checkpoints of a running batch; 0 keeps only the
    /// final state.
    #[serde(default)]
    pub checkpoint_interval: u64,
    #[serde(default = "default_measure_every")]
    pub measure_every: u64,
    #[serde(default)]
    pub engine: Engine,
    #[serde(default)]
    pub wave_vectors: WaveVectors,
    /// Largest number of samples simulated together by the packed engine.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_n_boot")]
    pub n_boot: usize,
    #[serde(default)]
    pub analysis_seed: u64,
    #[serde(default = "default_sigma")]
    pub equilibration_sigma: f64,
    pub rows: Vec<SweepRow>,
}

/// One `(p, L)` point of the plan with its row parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanPoint {
    pub p: f64,
    pub size: usize,
    pub samples: usize,
    pub n_sweeps: u64,
    pub temperatures: Vec<f64>,
}

impl PlanPoint {
    /// Directory-safe label, e.g. `p0.08_L12`.
    pub fn label(&self) -> String {
        format!("p{}_L{}", self.p, self.size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEstimate {
    pub spin_updates: f64,
    pub core_hours: f64,
}

impl SweepConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Every problem found, not just the first.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            errors.push(format!(
                "schema_version: expected {SCHEMA_VERSION}, got {}",
                self.schema_version
            ));
        }
        if !self.measure_every.is_power_of_two() {
            errors.push(format!("measure_every: must be a power of two, got {}", self.measure_every));
        }
        if self.batch_size == 0 || self.batch_size > crate::mc::packed::MAX_LANES {
            errors.push(format!(
                "batch_size: must lie in 1..={}, got {}",
                crate::mc::packed::MAX_LANES,
                self.batch_size
            ));
        }
        if !(self.equilibration_sigma > 0.0) {
            errors.push(format!(
                "equilibration_sigma: must be positive, got {}",
                self.equilibration_sigma
            ));
        }
        if self.rows.is_empty() {
            errors.push("rows: at least one row is required".into());
        }
        let mut seen: Vec<(u64, usize)> = Vec::new();
        for (i, row) in self.rows.iter().enumerate() {
            let at = format!("rows[{i}]");
            let ps = row.p.values();
            if ps.is_empty() {
                errors.push(format!("{at}.p: no values given"));
            }
            for &p in &ps {
                if !(0.0..0.5).contains(&p) {
                    errors.push(format!("{at}.p: must lie in [0, 0.5), got {p}"));
                }
            }
            if row.sizes.is_empty() {
                errors.push(format!("{at}.sizes: no sizes given"));
            }
            for &l in &row.sizes {
                if let Err(e) = self.lattice.validate_size(l) {
                    errors.push(format!("{at}.sizes: {e}"));
                }
                for &p in &ps {
                    let key = (p.to_bits(), l);
                    if seen.contains(&key) {
                        errors.push(format!("{at}: p = {p}, L = {l} appears in more than one row"));
                    }
                    seen.push(key);
                }
            }
            if row.samples == 0 {
                errors.push(format!("{at}.samples: must be at least 1"));
            }
            if row.b < 4 || row.b > 40 {
                errors.push(format!("{at}.b: must lie in 4..=40, got {}", row.b));
            } else if self.measure_every.is_power_of_two() {
                let bins = row.b as i64 - self.measure_every.trailing_zeros() as i64;
                if bins < 4 {
                    errors.push(format!(
                        "{at}.b: 2^{} sweeps measured every {} give {bins} bins, the equilibration check needs 4",
                        row.b, self.measure_every
                    ));
                }
            }
            if row.n_t < 2 {
                errors.push(format!("{at}.n_t: need at least 2 temperatures, got {}", row.n_t));
            }
            if !(row.t_min > 0.0 && row.t_min.is_finite()) {
                errors.push(format!("{at}.t_min: must be positive, got {}", row.t_min));
            }
            if !(row.t_max > row.t_min && row.t_max.is_finite()) {
                errors.push(format!("{at}.t_max: must exceed t_min, got {}", row.t_max));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }

    /// All `(p, L)` points in row order.
    pub fn plan(&self) -> Vec<PlanPoint> {
        let mut out = Vec::new();
        for row in &self.rows {
            let temperatures = row.temperatures();
            for p in row.p.values() {
                for &size in &row.sizes {
                    out.push(PlanPoint {
                        p,
                        size,
                        samples: row.samples,
                        n_sweeps: 1u64 << row.b,
                        temperatures: temperatures.clone(),
                    });
                }
            }
        }
        out
    }

    /// Spin updates summed over samples, replicas and sweeps.
    pub fn estimate_cost(&self) -> CostEstimate {
        let updates: f64 = self
            .plan()
            .iter()
            .map(|pt| {
                let n_sites = match self.lattice {
                    LatticeKind::UnionJack => 2 * pt.size * pt.size,
                    LatticeKind::Triangular => pt.size * pt.size,
                };
                pt.samples as f64 * 2.0 * pt.temperatures.len() as f64 * n_sites as f64 * pt.n_sweeps as f64
            })
            .sum();
        CostEstimate {
            spin_updates: updates,
            core_hours: updates * NANOS_PER_SPIN_UPDATE * 1e-9 / 3600.0,
        }
    }

    /// Same physics: everything except scheduling and location.
    pub fn same_plan(&self, other: &SweepConfig) -> bool {
        let strip = |c: &SweepConfig| SweepConfig {
            workers: 0,
            output_dir: PathBuf::new(),
            checkpoint_interval: 0,
            n_boot: 0,
            analysis_seed: 0,
            ..c.clone()
        };
        strip(self) == strip(other)
    }
}
