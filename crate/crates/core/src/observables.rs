//! Per-measurement observables, thermal accumulators and disorder averages.
//!
//! The wave-vector susceptibility uses the unconnected correlator
//! `chi(k) = |sum_i S_i exp(i k.R_i)|^2 / L^2`, with the `1/L^2` prefactor kept
//! even though the Union Jack lattice has `2 L^2` sites. Only the ratio
//! `chi(0) / chi(k_min)` enters the correlation length, so the convention
//! does not affect `xi / L`. The spin-glass versions replace `S_i` by the
//! overlap `q_i = S_i^a S_i^b` of the two replica sets.

use std::fmt::Write as _;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::mc::SpinConfiguration;
use crate::rng::derive_key;

pub const N_OBSERVABLES: usize = 7;

/// Quantities recorded at every measurement. Ferromagnetic entries average
/// the two replica sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Observable {
    /// Energy of the configuration, `(E_a + E_b) / 2`.
    Energy,
    /// `|m(0)|^2 / L^2`.
    Chi0,
    /// `|m(k_min)|^2 / L^2`.
    ChiK,
    /// `(m(0) / N)^2`.
    M2,
    /// `(m(0) / N)^4`.
    M4,
    /// `|q(0)|^2 / L^2`.
    ChiSg0,
    /// `|q(k_min)|^2 / L^2`.
    ChiSgK,
}

impl Observable {
    pub const ALL: [Observable; N_OBSERVABLES] = [
        Observable::Energy,
        Observable::Chi0,
        Observable::ChiK,
        Observable::M2,
        Observable::M4,
        Observable::ChiSg0,
        Observable::ChiSgK,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Observable::Energy => "energy",
            Observable::Chi0 => "chi0",
            Observable::ChiK => "chikmin",
            Observable::M2 => "m2",
            Observable::M4 => "m4",
            Observable::ChiSg0 => "chi_sg0",
            Observable::ChiSgK => "chi_sgkmin",
        }
    }
}

/// Which smallest wave vectors enter `chi(k_min)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WaveVectors {
    /// `(2 pi / L, 0)` only.
    #[default]
    XOnly,
    /// Average of `(2 pi / L, 0)` and `(0, 2 pi / L)`.
    XAndY,
}

/// Phase factors `exp(i k_min . R_i)` for every site.
#[derive(Debug, Clone)]
pub struct FourierBasis {
    size: usize,
    n_sites: usize,
    phases_x: Vec<Complex64>,
    phases_y: Vec<Complex64>,
    wave_vectors: WaveVectors,
}

impl FourierBasis {
    pub fn new(lat: &Lattice, wave_vectors: WaveVectors) -> Self {
        let k = lat.k_min();
        let phase = |r: f64| Complex64::from_polar(1.0, k * r);
        FourierBasis {
            size: lat.size(),
            n_sites: lat.n_sites(),
            phases_x: lat.sites().iter().map(|s| phase(s.coords[0])).collect(),
            phases_y: lat.sites().iter().map(|s| phase(s.coords[1])).collect(),
            wave_vectors,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn wave_vectors(&self) -> WaveVectors {
        self.wave_vectors
    }

    pub fn phases_x(&self) -> &[Complex64] {
        &self.phases_x
    }

    pub fn phases_y(&self) -> &[Complex64] {
        &self.phases_y
    }

    /// `(sum_i s_i, sum_i s_i e^{i kx x_i}, sum_i s_i e^{i ky y_i})`.
    pub fn transform(&self, field: impl Iterator<Item = i8>) -> (f64, Complex64, Complex64) {
        let mut m0 = 0i64;
        let mut mx = Complex64::new(0.0, 0.0);
        let mut my = Complex64::new(0.0, 0.0);
        for ((s, px), py) in field.zip(&self.phases_x).zip(&self.phases_y) {
            m0 += s as i64;
            if s > 0 {
                mx += px;
                my += py;
            } else {
                mx -= px;
                my -= py;
            }
        }
        (m0 as f64, mx, my)
    }
}

/// Raw Fourier components of one measurement of a replica pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub energy: [f64; 2],
    pub m0: [f64; 2],
    pub mk: [Complex64; 2],
    pub mk_y: [Complex64; 2],
    pub q0: f64,
    pub qk: Complex64,
    pub qk_y: Complex64,
}

/// Measures both replica sets and their overlap.
pub fn measure(a: &SpinConfiguration, b: &SpinConfiguration, basis: &FourierBasis) -> Measurement {
    let (m0a, mka, mya) = basis.transform(a.spins().iter().copied());
    let (m0b, mkb, myb) = basis.transform(b.spins().iter().copied());
    let overlap = a.spins().iter().zip(b.spins()).map(|(x, y)| x * y);
    let (q0, qk, qk_y) = basis.transform(overlap);
    Measurement {
        energy: [a.energy() as f64, b.energy() as f64],
        m0: [m0a, m0b],
        mk: [mka, mkb],
        mk_y: [mya, myb],
        q0,
        qk,
        qk_y,
    }
}

impl Measurement {
    /// Observable values in [`Observable::ALL`] order.
    pub fn values(&self, basis: &FourierBasis) -> [f64; N_OBSERVABLES] {
        let area = (basis.size() * basis.size()) as f64;
        let n = basis.n_sites() as f64;
        let k2 = |x: Complex64, y: Complex64| match basis.wave_vectors() {
            WaveVectors::XOnly => x.norm_sqr(),
            WaveVectors::XAndY => 0.5 * (x.norm_sqr() + y.norm_sqr()),
        };
        let m_a = self.m0[0] / n;
        let m_b = self.m0[1] / n;
        [
            0.5 * (self.energy[0] + self.energy[1]),
            0.5 * (self.m0[0] * self.m0[0] + self.m0[1] * self.m0[1]) / area,
            0.5 * (k2(self.mk[0], self.mk_y[0]) + k2(self.mk[1], self.mk_y[1])) / area,
            0.5 * (m_a * m_a + m_b * m_b),
            0.5 * (m_a.powi(4) + m_b.powi(4)),
            self.q0 * self.q0 / area,
            k2(self.qk, self.qk_y) / area,
        ]
    }
}

/// Running sums of the observables at one temperature.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FourierAccumulator {
    pub count: u64,
    pub sum: [f64; N_OBSERVABLES],
    pub sum_sq: [f64; N_OBSERVABLES],
}

impl FourierAccumulator {
    pub fn push(&mut self, values: &[f64; N_OBSERVABLES]) {
        self.count += 1;
        for (i, &v) in values.iter().enumerate() {
            self.sum[i] += v;
            self.sum_sq[i] += v * v;
        }
    }

    pub fn merge(&mut self, other: &FourierAccumulator) {
        self.count += other.count;
        for i in 0..N_OBSERVABLES {
            self.sum[i] += other.sum[i];
            self.sum_sq[i] += other.sum_sq[i];
        }
    }

    pub fn mean(&self, obs: Observable) -> f64 {
        self.sum[obs.index()] / self.count as f64
    }

    /// Naive standard error, ignoring autocorrelation.
    pub fn stderr(&self, obs: Observable) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        let mean = self.mean(obs);
        let var = (self.sum_sq[obs.index()] / n - mean * mean).max(0.0) * n / (n - 1.0);
        (var / n).sqrt()
    }

    pub fn averages(&self) -> ThermalAverages {
        ThermalAverages(Observable::ALL.map(|o| self.mean(o)))
    }
}

/// Thermal averages of one disorder sample at one temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalAverages(pub [f64; N_OBSERVABLES]);

impl ThermalAverages {
    pub fn get(&self, obs: Observable) -> f64 {
        self.0[obs.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationLength {
    pub xi: f64,
    /// `chi0 < chik`; the square root argument was clamped to zero.
    pub clamped: bool,
}

/// Second-moment correlation length from `chi(0)` and `chi(k_min)`.
pub fn correlation_length(chi0: f64, chik: f64, size: usize) -> Result<CorrelationLength> {
    if !(chik > 0.0) {
        return Err(Error::Degenerate(format!("chi(k_min) must be positive, got {chik}")));
    }
    if !(chi0 >= 0.0) {
        return Err(Error::Domain(format!("chi(0) must be non-negative, got {chi0}")));
    }
    let k_min = 2.0 * std::f64::consts::PI / size as f64;
    let arg = chi0 / chik - 1.0;
    Ok(CorrelationLength {
        xi: arg.max(0.0).sqrt() / (2.0 * (0.5 * k_min).sin()),
        clamped: arg < 0.0,
    })
}

/// Binder ratio `g = (3 - <m^4> / <m^2>^2) / 2`.
pub fn binder_ratio(m2: f64, m4: f64) -> Result<f64> {
    if !(m2 > 0.0) {
        return Err(Error::Degenerate(format!("<m^2> must be positive, got {m2}")));
    }
    Ok(0.5 * (3.0 - m4 / (m2 * m2)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub err: f64,
}

impl Estimate {
    pub fn new(value: f64, err: f64) -> Self {
        Estimate { value, err }
    }
}

/// Disorder-averaged observables at one `(p, L, T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisorderAggregate {
    pub n_samples: usize,
    pub energy: Estimate,
    pub chi0: Estimate,
    pub chik: Estimate,
    pub chi_sg0: Estimate,
    pub chi_sgk: Estimate,
    pub xi_over_l: Estimate,
    pub xi_sg_over_l: Estimate,
    pub binder: Estimate,
    pub xi_clamped: bool,
    /// `chi_sg(k_min) = 0` in the averaged data; `xi_sg_over_l` is NaN.
    pub xi_sg_degenerate: bool,
    /// Fewer than two samples; error bars are set to zero and not meaningful.
    pub error_undefined: bool,
}

#[derive(Debug, Clone, Copy)]
struct Reduced {
    means: [f64; N_OBSERVABLES],
    xi: Option<CorrelationLength>,
    xi_sg: Option<CorrelationLength>,
    binder: Option<f64>,
}

fn reduce(samples: &[ThermalAverages], indices: impl Iterator<Item = usize>, size: usize) -> Reduced {
    let mut sums = [0.0; N_OBSERVABLES];
    let mut n = 0usize;
    for i in indices {
        for (s, v) in sums.iter_mut().zip(samples[i].0) {
            *s += v;
        }
        n += 1;
    }
    let means = sums.map(|s| s / n as f64);
    let get = |o: Observable| means[o.index()];
    Reduced {
        means,
        xi: correlation_length(get(Observable::Chi0), get(Observable::ChiK), size).ok(),
        xi_sg: correlation_length(get(Observable::ChiSg0), get(Observable::ChiSgK), size).ok(),
        binder: binder_ratio(get(Observable::M2), get(Observable::M4)).ok(),
    }
}

/// Half width of the central 68.27 % percentile interval.
fn percentile_halfwidth(mut values: Vec<f64>) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let q = |f: f64| {
        let pos = f * (values.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        values[lo] + (values[hi] - values[lo]) * (pos - lo as f64)
    };
    0.5 * (q(0.841_344_746) - q(0.158_655_254))
}

/// Averages per-sample thermal averages over disorder with bootstrap errors.
///
/// `xi / L` is computed from the averaged susceptibilities. Samples are put in
/// a canonical order before resampling, so the result does not depend on the
/// order in which they are supplied.
pub fn aggregate(samples: &[ThermalAverages], size: usize, n_boot: usize, seed: u64) -> Result<DisorderAggregate> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("no samples to aggregate".into()));
    }
    let mut ordered = samples.to_vec();
    ordered.sort_by(|a, b| {
        a.0.iter()
            .zip(&b.0)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let n = ordered.len();
    let central = reduce(&ordered, 0..n, size);
    let l = size as f64;

    let error_undefined = n < 2;
    let mut cols: [Vec<f64>; 8] = Default::default();
    if !error_undefined && n_boot > 0 {
        let mut rng = Xoshiro256PlusPlus::from_seed(derive_key("bootstrap", &[seed, n as u64]));
        for _ in 0..n_boot {
            let picks: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let r = reduce(&ordered, picks.into_iter(), size);
            cols[0].push(r.means[Observable::Energy.index()]);
            cols[1].push(r.means[Observable::Chi0.index()]);
            cols[2].push(r.means[Observable::ChiK.index()]);
            cols[3].push(r.means[Observable::ChiSg0.index()]);
            cols[4].push(r.means[Observable::ChiSgK.index()]);
            if let Some(x) = r.xi {
                cols[5].push(x.xi / l);
            }
            if let Some(x) = r.xi_sg {
                cols[6].push(x.xi / l);
            }
            if let Some(g) = r.binder {
                cols[7].push(g);
            }
        }
    }
    let err = |k: usize| percentile_halfwidth(cols[k].clone());
    let m = |o: Observable| central.means[o.index()];

    Ok(DisorderAggregate {
        n_samples: n,
        energy: Estimate::new(m(Observable::Energy), err(0)),
        chi0: Estimate::new(m(Observable::Chi0), err(1)),
        chik: Estimate::new(m(Observable::ChiK), err(2)),
        chi_sg0: Estimate::new(m(Observable::ChiSg0), err(3)),
        chi_sgk: Estimate::new(m(Observable::ChiSgK), err(4)),
        xi_over_l: Estimate::new(central.xi.map_or(f64::NAN, |x| x.xi / l), err(5)),
        xi_sg_over_l: Estimate::new(central.xi_sg.map_or(f64::NAN, |x| x.xi / l), err(6)),
        binder: Estimate::new(central.binder.unwrap_or(f64::NAN), err(7)),
        xi_clamped: central.xi.is_some_and(|x| x.clamped),
        xi_sg_degenerate: central.xi_sg.is_none(),
        error_undefined,
    })
}

/// One row of the per-point observables table.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservableRow {
    pub p: f64,
    pub size: usize,
    pub temperature: f64,
    pub n_samples: usize,
    pub chi0: f64,
    pub chi0_err: f64,
    pub chikmin: f64,
    pub chikmin_err: f64,
    pub xi_over_l: f64,
    pub xi_err: f64,
    pub xi_sg_over_l: f64,
    pub xi_sg_err: f64,
    pub binder: f64,
    pub binder_err: f64,
    pub equilibrated: bool,
}

pub const CSV_HEADER: &str = "p,L,T,n_samples,chi0,chi0_err,chikmin,chikmin_err,xi_over_L,xi_err,xi_sg_over_L,xi_sg_err,binder,binder_err,equilibrated";

/// 17 significant digits.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else {
        format!("{x:.16e}")
    }
}

impl ObservableRow {
    pub fn from_aggregate(p: f64, temperature: f64, size: usize, agg: &DisorderAggregate, equilibrated: bool) -> Self {
        ObservableRow {
            p,
            size,
            temperature,
            n_samples: agg.n_samples,
            chi0: agg.chi0.value,
            chi0_err: agg.chi0.err,
            chikmin: agg.chik.value,
            chikmin_err: agg.chik.err,
            xi_over_l: agg.xi_over_l.value,
            xi_err: agg.xi_over_l.err,
            xi_sg_over_l: agg.xi_sg_over_l.value,
            xi_sg_err: agg.xi_sg_over_l.err,
            binder: agg.binder.value,
            binder_err: agg.binder.err,
            equilibrated,
        }
    }

    pub fn to_csv_line(&self) -> String {
        let mut line = String::new();
        let f = format_float;
        write!(
            line,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            f(self.p),
            self.size,
            f(self.temperature),
            self.n_samples,
            f(self.chi0),
            f(self.chi0_err),
            f(self.chikmin),
            f(self.chikmin_err),
            f(self.xi_over_l),
            f(self.xi_err),
            f(self.xi_sg_over_l),
            f(self.xi_sg_err),
            f(self.binder),
            f(self.binder_err),
            self.equilibrated
        )
        .unwrap();
        line
    }

    pub fn parse_csv_line(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != 15 {
            return Err(Error::Parse(format!("expected 15 columns, found {}: {line}", fields.len())));
        }
        let float = |i: usize| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("column {i} ({}): {e}", fields[i])))
        };
        let int = |i: usize| -> Result<usize> {
            fields[i]
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("column {i} ({}): {e}", fields[i])))
        };
        Ok(ObservableRow {
            p: float(0)?,
            size: int(1)?,
            temperature: float(2)?,
            n_samples: int(3)?,
            chi0: float(4)?,
            chi0_err: float(5)?,
            chikmin: float(6)?,
            chikmin_err: float(7)?,
            xi_over_l: float(8)?,
            xi_err: float(9)?,
            xi_sg_over_l: float(10)?,
            xi_sg_err: float(11)?,
            binder: float(12)?,
            binder_err: float(13)?,
            equilibrated: fields[14]
                .parse::<bool>()
                .map_err(|e| Error::Parse(format!("equilibrated flag: {e}")))?,
        })
    }
}

pub fn write_rows(rows: &[ObservableRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv_line());
        out.push('\n');
    }
    out
}

pub fn parse_rows(text: &str) -> Result<Vec<ObservableRow>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        Some(h) => return Err(Error::Parse(format!("unexpected header: {h}"))),
        None => return Err(Error::Parse("empty observables table".into())),
    }
    lines.map(ObservableRow::parse_csv_line).collect()
}
