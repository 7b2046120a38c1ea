use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observables::{FourierAccumulator, Observable, N_OBSERVABLES};

/// Mean and standard error of one observable in one bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinSummary {
    pub mean: f64,
    pub stderr: f64,
}

/// Bin summaries indexed `[temperature][observable][bin]`.
pub type BinTable = Vec<[Vec<BinSummary>; N_OBSERVABLES]>;

/// Measurements sorted into logarithmic bins, per temperature.
///
/// Measurement `t` (counted from zero) lands in bin `k` with
/// `2^k <= t < 2^(k+1)`. Measurement 0 belongs to no bin. A run of `2^b`
/// measurements therefore fills bins `0..b` exactly, and the last bin is the
/// second half of the run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LogBinnedSeries {
    bins: Vec<Vec<FourierAccumulator>>,
}

impl LogBinnedSeries {
    pub fn new(n_temperatures: usize) -> Self {
        LogBinnedSeries {
            bins: vec![Vec::new(); n_temperatures],
        }
    }

    pub fn bin_index(t: u64) -> Option<usize> {
        (t > 0).then(|| t.ilog2() as usize)
    }

    pub fn push(&mut self, slot: usize, t: u64, values: &[f64; N_OBSERVABLES]) {
        let Some(k) = Self::bin_index(t) else { return };
        let bins = &mut self.bins[slot];
        if bins.len() <= k {
            bins.resize_with(k + 1, FourierAccumulator::default);
        }
        bins[k].push(values);
    }

    pub fn n_temperatures(&self) -> usize {
        self.bins.len()
    }

    pub fn n_bins(&self) -> usize {
        self.bins.iter().map(Vec::len).min().unwrap_or(0)
    }

    pub fn bins(&self, slot: usize) -> &[FourierAccumulator] {
        &self.bins[slot]
    }

    /// Accumulator of the last bin, the second half of the run.
    pub fn production(&self, slot: usize) -> Option<&FourierAccumulator> {
        self.bins[slot].last()
    }

    /// Per-bin means with naive standard errors.
    pub fn table(&self) -> BinTable {
        let n = self.n_bins();
        self.bins
            .iter()
            .map(|bins| {
                Observable::ALL.map(|o| {
                    bins[..n]
                        .iter()
                        .map(|acc| BinSummary {
                            mean: acc.mean(o),
                            stderr: acc.stderr(o),
                        })
                        .collect()
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct MomentCell {
    n: u64,
    sum: [f64; N_OBSERVABLES],
    sum_sq: [f64; N_OBSERVABLES],
    first_stderr: [f64; N_OBSERVABLES],
}

/// Running first and second moments of per-sample bin means, indexed
/// `[temperature][bin]`. Additive across disjoint sets of samples.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BinMoments {
    cells: Vec<Vec<MomentCell>>,
}

impl BinMoments {
    pub fn new(n_temperatures: usize) -> Self {
        BinMoments {
            cells: vec![Vec::new(); n_temperatures],
        }
    }

    /// Adds one sample's completed bin.
    pub fn add(&mut self, slot: usize, bin: usize, acc: &FourierAccumulator) {
        let cells = &mut self.cells[slot];
        if cells.len() <= bin {
            cells.resize_with(bin + 1, MomentCell::default);
        }
        let cell = &mut cells[bin];
        if cell.n == 0 {
            cell.first_stderr = Observable::ALL.map(|o| acc.stderr(o));
        }
        cell.n += 1;
        for o in Observable::ALL {
            let v = acc.mean(o);
            cell.sum[o.index()] += v;
            cell.sum_sq[o.index()] += v * v;
        }
    }

    /// Adds every complete bin of one sample.
    pub fn add_series(&mut self, series: &LogBinnedSeries) {
        for slot in 0..series.n_temperatures() {
            for (k, acc) in series.bins(slot)[..series.n_bins()].iter().enumerate() {
                self.add(slot, k, acc);
            }
        }
    }

    pub fn merge(&mut self, other: &BinMoments) -> Result<()> {
        if self.cells.is_empty() {
            *self = other.clone();
            return Ok(());
        }
        if other.cells.len() != self.cells.len() {
            return Err(Error::Integrity("bin moments cover different temperature ladders".into()));
        }
        for (mine, theirs) in self.cells.iter_mut().zip(&other.cells) {
            if mine.len() < theirs.len() {
                mine.resize_with(theirs.len(), MomentCell::default);
            }
            for (a, b) in mine.iter_mut().zip(theirs) {
                if a.n == 0 {
                    a.first_stderr = b.first_stderr;
                }
                a.n += b.n;
                for i in 0..N_OBSERVABLES {
                    a.sum[i] += b.sum[i];
                    a.sum_sq[i] += b.sum_sq[i];
                }
            }
        }
        Ok(())
    }

    pub fn n_temperatures(&self) -> usize {
        self.cells.len()
    }

    /// Bins that every temperature has.
    pub fn n_bins(&self) -> usize {
        self.cells.iter().map(Vec::len).min().unwrap_or(0)
    }

    /// Samples contributing to the last common bin.
    pub fn n_samples(&self) -> u64 {
        let k = self.n_bins();
        if k == 0 {
            return 0;
        }
        self.cells.iter().map(|c| c[k - 1].n).min().unwrap_or(0)
    }

    /// Sample means with sample-to-sample standard errors. A bin holding a
    /// single sample keeps that sample's thermal error.
    pub fn table(&self) -> BinTable {
        let k = self.n_bins();
        self.cells
            .iter()
            .map(|cells| {
                Observable::ALL.map(|o| {
                    let i = o.index();
                    cells[..k]
                        .iter()
                        .map(|c| {
                            let n = c.n as f64;
                            let mean = c.sum[i] / n;
                            let stderr = if c.n < 2 {
                                c.first_stderr[i]
                            } else {
                                let var = ((c.sum_sq[i] - n * mean * mean) / (n - 1.0)).max(0.0);
                                (var / n).sqrt()
                            };
                            BinSummary { mean, stderr }
                        })
                        .collect()
                })
            })
            .collect()
    }
}

/// Disorder average of per-sample bin means. The error is the
/// sample-to-sample standard error; a single sample keeps its own thermal
/// error.
pub fn aggregate_bins(samples: &[&LogBinnedSeries]) -> Result<BinTable> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InsufficientData("no samples to aggregate".into()))?;
    let n_temps = first.n_temperatures();
    let n_bins = first.n_bins();
    if samples.iter().any(|s| s.n_temperatures() != n_temps || s.n_bins() != n_bins) {
        return Err(Error::Integrity("samples disagree on the shape of their bins".into()));
    }
    let mut moments = BinMoments::new(n_temps);
    for s in samples {
        moments.add_series(s);
    }
    Ok(moments.table())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquilibrationVerdict {
    pub passed: bool,
    /// First bin from which every later pair of bins agrees.
    pub agreement_from: usize,
    pub n_bins: usize,
}

fn agree(a: &BinSummary, b: &BinSummary, sigma: f64) -> bool {
    (a.mean - b.mean).abs() <= sigma * a.stderr.hypot(b.stderr)
}

/// Pass iff the last three bins agree pairwise within `sigma` times the
/// quadrature sum of their standard errors.
pub fn check_series(bins: &[BinSummary], sigma: f64) -> Result<EquilibrationVerdict> {
    let n = bins.len();
    if n < 4 {
        return Err(Error::InsufficientData(format!(
            "equilibration needs at least 4 bins, got {n}"
        )));
    }
    let mut from = n - 1;
    while from > 0 && bins[from..].iter().all(|b| agree(&bins[from - 1], b, sigma)) {
        from -= 1;
    }
    Ok(EquilibrationVerdict {
        passed: from + 3 <= n,
        agreement_from: from,
        n_bins: n,
    })
}

/// Verdicts indexed `[temperature][observable]`.
pub fn equilibration_check(table: &[[Vec<BinSummary>; N_OBSERVABLES]], sigma: f64) -> Result<Vec<[EquilibrationVerdict; N_OBSERVABLES]>> {
    table
        .iter()
        .map(|per_obs| {
            let mut out = [EquilibrationVerdict {
                passed: false,
                agreement_from: 0,
                n_bins: 0,
            }; N_OBSERVABLES];
            for (slot, bins) in out.iter_mut().zip(per_obs) {
                *slot = check_series(bins, sigma)?;
            }
            Ok(out)
        })
        .collect()
}
