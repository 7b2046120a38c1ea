//! Multispin engine: many disorder samples advanced together, one bit each.
//!
//! Lane `l` of every word belongs to disorder sample `l`; a set bit is a down
//! spin, and for couplings a negative sign. A triangle is unsatisfied in a
//! lane when the XOR of its three spin bits and its sign bit is 1, so the
//! number `u` of unsatisfied triangles around a site is a bit-sliced popcount.
//! With `n` incident triangles a flip costs `dE = 2 (n - 2u)`: lanes with
//! `u >= n/2` flip outright and the rest flip with probability
//! `exp(-4 beta m)`, `m = n/2 - u`.
//!
//! That Bernoulli trial is exact per lane. Each lane compares its own uniform
//! 64-bit number against the fixed-point threshold of its level, most
//! significant bit first, and the random bits are drawn one word (one bit per
//! lane) at a time. The loop stops as soon as every lane has found a bit where
//! its random number and its threshold differ, which takes a handful of
//! words on average.
//!
//! Exchange decisions are taken per lane with the configurations' own
//! energies and applied as masked swaps, so every lane runs exactly the same
//! Markov chain as the scalar engine would, only with different random
//! numbers. Since lanes share random words, a lane's trajectory depends on
//! which batch it sits in; the thermal seed is therefore a property of the
//! batch.

use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use super::bins::BinMoments;
use super::ladder::{swap_probability, ExchangeStats};
use super::run::{Schedule, CHECKPOINT_VERSION};
use crate::disorder::DisorderRealization;
use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::observables::{FourierAccumulator, FourierBasis, Measurement, ThermalAverages, WaveVectors};
use crate::rng::{derive_key, probability_threshold};

/// Largest number of lanes one batch can hold.
pub const MAX_LANES: usize = 512;

/// Words per lane group for `n` samples: the smallest of 1, 2, 4, 8 that fits.
pub fn width_for(n_samples: usize) -> usize {
    n_samples.div_ceil(64).next_power_of_two().clamp(1, 8)
}

/// `W` independent xoshiro256++ generators stored lane-word-major, so one
/// call yields one random bit for each of `64 W` lanes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LaneRng<const W: usize> {
    s: [[u64; W]; 4],
}

impl<const W: usize> LaneRng<W> {
    /// Word `w` is keyed by `("lanes", seed, set, slot, w)`.
    pub fn new(seed: u64, set: usize, slot: usize) -> Self {
        let mut s = [[0u64; W]; 4];
        for w in 0..W {
            let key = derive_key("lanes", &[seed, set as u64, slot as u64, w as u64]);
            for (i, row) in s.iter_mut().enumerate() {
                row[w] = u64::from_le_bytes(key[8 * i..8 * i + 8].try_into().unwrap());
            }
        }
        LaneRng { s }
    }

    /// Word `w` uses the 32-byte seed `keys[w]`, read as four little-endian
    /// state words.
    pub fn from_keys(keys: [[u8; 32]; W]) -> Self {
        let mut s = [[0u64; W]; 4];
        for (w, key) in keys.iter().enumerate() {
            for (i, row) in s.iter_mut().enumerate() {
                row[w] = u64::from_le_bytes(key[8 * i..8 * i + 8].try_into().unwrap());
            }
        }
        LaneRng { s }
    }

    #[inline(always)]
    pub fn next_word(&mut self) -> [u64; W] {
        let [s0, s1, s2, s3] = &mut self.s;
        let mut out = [0u64; W];
        for w in 0..W {
            out[w] = s0[w].wrapping_add(s3[w]).rotate_left(23).wrapping_add(s0[w]);
            let t = s1[w] << 17;
            s2[w] ^= s0[w];
            s3[w] ^= s1[w];
            s1[w] ^= s2[w];
            s0[w] ^= s3[w];
            s2[w] ^= t;
            s3[w] = s3[w].rotate_left(45);
        }
        out
    }

    fn state(&self) -> impl Iterator<Item = u64> + '_ {
        self.s.iter().flat_map(|row| row.iter().copied())
    }

    fn from_state(words: &[u64]) -> Self {
        let mut s = [[0u64; W]; 4];
        for (i, row) in s.iter_mut().enumerate() {
            row.copy_from_slice(&words[i * W..(i + 1) * W]);
        }
        LaneRng { s }
    }
}

#[inline(always)]
fn is_zero<const W: usize>(x: &[u64; W]) -> bool {
    x.iter().all(|&v| v == 0)
}

/// Per-lane test `r < thresholds[level]`, drawing `r` most significant bit
/// first. `levels[h]` is the mask of lanes at level `h`; lanes in no level
/// are left undecided and rejected. Returns the mask of accepted lanes.
#[inline(always)]
fn bernoulli_lanes<const W: usize, const H: usize>(
    levels: &[[u64; W]; H],
    thresholds: &[u64; H],
    rng: &mut LaneRng<W>,
) -> [u64; W] {
    let mut undecided = [0u64; W];
    for level in levels {
        for w in 0..W {
            undecided[w] |= level[w];
        }
    }
    let mut accept = [0u64; W];
    if is_zero(&undecided) {
        return accept;
    }
    for bit in (0..64).rev() {
        let r = rng.next_word();
        let fill: [u64; H] = std::array::from_fn(|h| 0u64.wrapping_sub((thresholds[h] >> bit) & 1));
        let mut any = 0u64;
        for w in 0..W {
            let mut t = 0u64;
            for h in 0..H {
                t |= levels[h][w] & fill[h];
            }
            accept[w] |= undecided[w] & t & !r[w];
            undecided[w] &= !(t ^ r[w]);
            any |= undecided[w];
        }
        if any == 0 {
            break;
        }
    }
    accept
}

/// Lattice plus one coupling sign per lane, fused into per-site lists.
#[derive(Debug, Clone)]
struct PackedCouplings<const W: usize> {
    offsets: Vec<u32>,
    partners: Vec<[u32; 2]>,
    tau: Vec<[u64; W]>,
    triangles: Vec<[u32; 3]>,
    triangle_tau: Vec<[u64; W]>,
}

impl<const W: usize> PackedCouplings<W> {
    fn new(lat: &Lattice, disorders: &[DisorderRealization]) -> Self {
        let mut triangle_tau = vec![[0u64; W]; lat.n_triangles()];
        for (lane, dis) in disorders.iter().enumerate() {
            for (t, &sign) in dis.tau().iter().enumerate() {
                if sign < 0 {
                    triangle_tau[t][lane / 64] |= 1 << (lane % 64);
                }
            }
        }
        let mut offsets = vec![0u32];
        let mut partners = Vec::new();
        let mut tau = Vec::new();
        for site in 0..lat.n_sites() {
            for &t in lat.incidence(site) {
                let v = lat.triangles()[t].vertices;
                let mut others = v.iter().filter(|&&x| x != site).map(|&x| x as u32);
                partners.push([others.next().unwrap(), others.next().unwrap()]);
                tau.push(triangle_tau[t]);
            }
            offsets.push(partners.len() as u32);
        }
        PackedCouplings {
            offsets,
            partners,
            tau,
            triangles: lat.triangles().iter().map(|t| t.vertices.map(|v| v as u32)).collect(),
            triangle_tau,
        }
    }

    fn n_sites(&self) -> usize {
        self.offsets.len() - 1
    }

    /// One sequential Metropolis sweep. `thresholds[m]` is the fixed-point
    /// value of `exp(-4 beta m)`.
    fn sweep(&self, spins: &mut [[u64; W]], thresholds: &[u64; 5], rng: &mut LaneRng<W>) {
        for site in 0..self.n_sites() {
            let range = self.offsets[site] as usize..self.offsets[site + 1] as usize;
            let half = range.len() / 2;
            let s = spins[site];
            let mut count = [[0u64; W]; 4];
            for (&[j, k], tau) in self.partners[range.clone()].iter().zip(&self.tau[range]) {
                let sj = &spins[j as usize];
                let sk = &spins[k as usize];
                for w in 0..W {
                    let mut carry = s[w] ^ sj[w] ^ sk[w] ^ tau[w];
                    for plane in count.iter_mut() {
                        let next = plane[w] & carry;
                        plane[w] ^= carry;
                        carry = next;
                    }
                }
            }
            let flip = match half {
                4 => self.decide::<4>(&count, thresholds, rng),
                3 => self.decide::<3>(&count, thresholds, rng),
                2 => self.decide::<2>(&count, thresholds, rng),
                _ => panic!("unsupported coordination {}", 2 * half),
            };
            for w in 0..W {
                spins[site][w] ^= flip[w];
            }
        }
    }

    /// Flip mask for a site with `2H` incident triangles, given the
    /// bit-sliced count of unsatisfied ones. Lanes with `u = v < H` sit at
    /// level `m = H - v`; the rest flip outright.
    #[inline(always)]
    fn decide<const H: usize>(&self, count: &[[u64; W]; 4], thresholds: &[u64; 5], rng: &mut LaneRng<W>) -> [u64; W] {
        let mut levels = [[0u64; W]; H];
        for (v, level) in levels.iter_mut().enumerate() {
            for w in 0..W {
                let mut eq = !0u64;
                for (b, plane) in count.iter().enumerate() {
                    eq &= if v >> b & 1 == 1 { plane[w] } else { !plane[w] };
                }
                level[w] = eq;
            }
        }
        let q: [u64; H] = std::array::from_fn(|v| thresholds[H - v]);
        let mut flip = bernoulli_lanes(&levels, &q, rng);
        for w in 0..W {
            let mut uncertain = 0;
            for level in &levels {
                uncertain |= level[w];
            }
            flip[w] |= !uncertain;
        }
        flip
    }

    /// Per-lane energies `2 u - N_tri`.
    fn energies(&self, spins: &[[u64; W]], out: &mut [i64]) {
        let n_planes = (usize::BITS - self.triangles.len().leading_zeros()) as usize;
        let mut planes = vec![[0u64; W]; n_planes];
        for (&[a, b, c], tau) in self.triangles.iter().zip(&self.triangle_tau) {
            let mut carry = [0u64; W];
            for w in 0..W {
                carry[w] = spins[a as usize][w] ^ spins[b as usize][w] ^ spins[c as usize][w] ^ tau[w];
            }
            for plane in planes.iter_mut() {
                if is_zero(&carry) {
                    break;
                }
                for w in 0..W {
                    let next = plane[w] & carry[w];
                    plane[w] ^= carry[w];
                    carry[w] = next;
                }
            }
        }
        let n_tri = self.triangles.len() as i64;
        for (lane, e) in out.iter_mut().enumerate() {
            *e = 2 * extract(&planes, lane) as i64 - n_tri;
        }
    }
}

#[inline(always)]
fn extract<const W: usize>(planes: &[[u64; W]], lane: usize) -> u64 {
    let (w, bit) = (lane / 64, lane % 64);
    planes
        .iter()
        .enumerate()
        .map(|(b, plane)| (plane[w] >> bit & 1) << b)
        .sum()
}

/// `SPREAD[x]` puts bit `i` of `x` into byte `i`.
const SPREAD: [u64; 256] = {
    let mut table = [0u64; 256];
    let mut x = 0;
    while x < 256 {
        let mut i = 0;
        while i < 8 {
            table[x] |= ((x as u64 >> i) & 1) << (8 * i);
            i += 1;
        }
        x += 1;
    }
    table
};

/// Sites grouped by a shared Fourier phase.
#[derive(Debug, Clone)]
struct PhaseGroups {
    members: Vec<Vec<u32>>,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl PhaseGroups {
    fn new(phases: &[Complex64], coords: impl Iterator<Item = f64>) -> Self {
        let coords: Vec<f64> = coords.collect();
        let mut keys = coords.clone();
        keys.sort_by(f64::total_cmp);
        keys.dedup();
        let mut members = vec![Vec::new(); keys.len()];
        let mut phase = vec![Complex64::new(0.0, 0.0); keys.len()];
        for (site, x) in coords.iter().enumerate() {
            let g = keys.binary_search_by(|k| k.total_cmp(x)).unwrap();
            members[g].push(site as u32);
            phase[g] = phases[site];
        }
        assert!(members.iter().all(|m| m.len() < 256), "phase groups hold at most 255 sites");
        PhaseGroups {
            members,
            cos: phase.iter().map(|z| z.re).collect(),
            sin: phase.iter().map(|z| z.im).collect(),
        }
    }

    /// Per-lane `(sum_i s_i, sum_i s_i e^{i phi_i})` of a bit field.
    fn transform<const W: usize>(&self, field: impl Fn(usize) -> [u64; W], out: &mut FourierLanes) {
        out.clear();
        let n_lanes = out.m0.len();
        let mut counts = vec![0u8; 64 * W];
        for (g, sites) in self.members.iter().enumerate() {
            let n_planes = (usize::BITS - sites.len().leading_zeros()) as usize;
            let mut planes = [[0u64; W]; 8];
            for &site in sites {
                let mut carry = field(site as usize);
                for plane in planes[..n_planes].iter_mut() {
                    for w in 0..W {
                        let next = plane[w] & carry[w];
                        plane[w] ^= carry[w];
                        carry[w] = next;
                    }
                }
            }
            for w in 0..W {
                for byte in 0..8 {
                    let mut packed = 0u64;
                    for (b, plane) in planes[..n_planes].iter().enumerate() {
                        packed += SPREAD[(plane[w] >> (8 * byte) & 0xff) as usize] << b;
                    }
                    let at = 64 * w + 8 * byte;
                    counts[at..at + 8].copy_from_slice(&packed.to_le_bytes());
                }
            }
            let size = sites.len() as f64;
            let (c, s) = (self.cos[g], self.sin[g]);
            for lane in 0..n_lanes {
                let m = size - 2.0 * counts[lane] as f64;
                out.m0[lane] += m;
                out.re[lane] += c * m;
                out.im[lane] += s * m;
            }
        }
    }
}

/// Per-lane Fourier sums of one bit field.
#[derive(Debug, Clone)]
struct FourierLanes {
    m0: Vec<f64>,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl FourierLanes {
    fn new(n_lanes: usize) -> Self {
        FourierLanes {
            m0: vec![0.0; n_lanes],
            re: vec![0.0; n_lanes],
            im: vec![0.0; n_lanes],
        }
    }

    fn clear(&mut self) {
        self.m0.fill(0.0);
        self.re.fill(0.0);
        self.im.fill(0.0);
    }

    fn k(&self, lane: usize) -> Complex64 {
        Complex64::new(self.re[lane], self.im[lane])
    }
}

struct Scratch {
    x: [FourierLanes; 3],
    y: [FourierLanes; 3],
}

/// Everything a batch produces: per-lane production averages (second half
/// of the run) and the disorder moments of every bin.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedOutput {
    pub temperatures: Vec<f64>,
    /// `[lane][temperature]`.
    pub lane_averages: Vec<Vec<ThermalAverages>>,
    pub moments: BinMoments,
    pub exchange: ExchangeStats,
}

/// State of one batch, generic over the number of words per lane group.
#[derive(Debug, Clone)]
pub struct PackedBatch<const W: usize> {
    couplings: PackedCouplings<W>,
    groups_x: PhaseGroups,
    groups_y: Option<PhaseGroups>,
    basis: FourierBasis,
    schedule: Schedule,
    n_lanes: usize,
    lattice_fingerprint: String,
    disorder_fingerprints: Vec<String>,
    thresholds: Vec<[u64; 5]>,
    /// `[set * N_T + slot][site]`.
    spins: Vec<Vec<[u64; W]>>,
    rngs: Vec<LaneRng<W>>,
    /// `[set * N_T + slot][lane]`.
    energies: Vec<Vec<i64>>,
    exchange_rng: Xoshiro256PlusPlus,
    exchange: ExchangeStats,
    parity: usize,
    sweeps_done: u64,
    /// Open bin, `[lane][slot]`.
    current: Vec<Vec<FourierAccumulator>>,
    /// Closed production bin, `[lane][slot]`.
    last_closed: Vec<Vec<FourierAccumulator>>,
    moments: BinMoments,
}

impl<const W: usize> PackedBatch<W> {
    pub fn new(lat: &Lattice, disorders: &[DisorderRealization], schedule: Schedule) -> Result<Self> {
        schedule.validate()?;
        if disorders.is_empty() || disorders.len() > 64 * W {
            return Err(Error::Domain(format!(
                "a batch of width {W} holds 1 to {} samples, got {}",
                64 * W,
                disorders.len()
            )));
        }
        if let Some(d) = disorders.iter().find(|d| d.n_triangles() != lat.n_triangles()) {
            return Err(Error::Domain(format!(
                "disorder has {} signs but the lattice has {} triangles",
                d.n_triangles(),
                lat.n_triangles()
            )));
        }
        let n_t = schedule.temperatures.len();
        let couplings = PackedCouplings::<W>::new(lat, disorders);
        let basis = FourierBasis::new(lat, schedule.wave_vectors);
        let groups_x = PhaseGroups::new(basis.phases_x(), lat.sites().iter().map(|s| s.coords[0]));
        let groups_y = (schedule.wave_vectors == WaveVectors::XAndY)
            .then(|| PhaseGroups::new(basis.phases_y(), lat.sites().iter().map(|s| s.coords[1])));
        let thresholds = schedule
            .temperatures
            .iter()
            .map(|t| {
                let beta = 1.0 / t;
                [0, 1, 2, 3, 4].map(|m| probability_threshold((-4.0 * beta * m as f64).exp()))
            })
            .collect();

        let mut spins = Vec::with_capacity(2 * n_t);
        let mut rngs = Vec::with_capacity(2 * n_t);
        for set in 0..2 {
            for slot in 0..n_t {
                let mut rng = LaneRng::<W>::new(schedule.seed, set, slot);
                spins.push((0..lat.n_sites()).map(|_| rng.next_word()).collect::<Vec<_>>());
                rngs.push(rng);
            }
        }
        let n_lanes = disorders.len();
        let mut batch = PackedBatch {
            groups_x,
            groups_y,
            basis,
            n_lanes,
            lattice_fingerprint: lat.fingerprint(),
            disorder_fingerprints: disorders.iter().map(|d| d.fingerprint()).collect(),
            thresholds,
            energies: vec![vec![0; 64 * W]; 2 * n_t],
            exchange_rng: Xoshiro256PlusPlus::from_seed(derive_key("exchange", &[schedule.seed])),
            exchange: ExchangeStats {
                attempts: vec![0; n_t.saturating_sub(1)],
                accepts: vec![0; n_t.saturating_sub(1)],
            },
            parity: 0,
            sweeps_done: 0,
            current: vec![vec![FourierAccumulator::default(); n_t]; n_lanes],
            last_closed: vec![vec![FourierAccumulator::default(); n_t]; n_lanes],
            moments: BinMoments::new(n_t),
            couplings,
            spins,
            rngs,
            schedule,
        };
        batch.refresh_energies();
        Ok(batch)
    }

    pub fn n_lanes(&self) -> usize {
        self.n_lanes
    }

    pub fn sweeps_done(&self) -> u64 {
        self.sweeps_done
    }

    pub fn is_finished(&self) -> bool {
        self.sweeps_done >= self.schedule.n_sweeps
    }

    fn n_t(&self) -> usize {
        self.schedule.temperatures.len()
    }

    /// Spins of one lane as `+-1`.
    pub fn lane_spins(&self, set: usize, slot: usize, lane: usize) -> Vec<i8> {
        let (w, bit) = (lane / 64, lane % 64);
        self.spins[set * self.n_t() + slot]
            .iter()
            .map(|word| if word[w] >> bit & 1 == 1 { -1 } else { 1 })
            .collect()
    }

    pub fn lane_energy(&self, set: usize, slot: usize, lane: usize) -> i64 {
        self.energies[set * self.n_t() + slot][lane]
    }

    fn refresh_energies(&mut self) {
        for (spins, out) in self.spins.iter().zip(self.energies.iter_mut()) {
            self.couplings.energies(spins, out);
        }
    }

    fn exchange_phase(&mut self) {
        let n_t = self.n_t();
        if n_t < 2 {
            return;
        }
        let start = self.parity;
        self.parity ^= 1;
        for set in 0..2 {
            for i in (start..n_t - 1).step_by(2) {
                let (a, b) = (set * n_t + i, set * n_t + i + 1);
                let beta_i = 1.0 / self.schedule.temperatures[i];
                let beta_j = 1.0 / self.schedule.temperatures[i + 1];
                let mut mask = [0u64; W];
                let (lo, hi) = self.energies.split_at_mut(b);
                let (ea, eb) = (&mut lo[a], &mut hi[0]);
                for lane in 0..self.n_lanes {
                    let prob = swap_probability(beta_i, beta_j, ea[lane] as f64, eb[lane] as f64);
                    let r = self.exchange_rng.next_u64();
                    self.exchange.attempts[i] += 1;
                    if prob >= 1.0 || r < probability_threshold(prob) {
                        self.exchange.accepts[i] += 1;
                        mask[lane / 64] |= 1 << (lane % 64);
                        std::mem::swap(&mut ea[lane], &mut eb[lane]);
                    }
                }
                if is_zero(&mask) {
                    continue;
                }
                let (lo, hi) = self.spins.split_at_mut(b);
                for (x, y) in lo[a].iter_mut().zip(hi[0].iter_mut()) {
                    for w in 0..W {
                        let d = (x[w] ^ y[w]) & mask[w];
                        x[w] ^= d;
                        y[w] ^= d;
                    }
                }
            }
        }
    }

    fn measure(&mut self, t: u64, scratch: &mut Scratch) {
        let n_t = self.n_t();
        let n_lanes = self.n_lanes;
        for slot in 0..n_t {
            let sa = &self.spins[slot];
            let sb = &self.spins[n_t + slot];
            for f in 0..3 {
                let field = |site: usize| -> [u64; W] {
                    match f {
                        0 => sa[site],
                        1 => sb[site],
                        _ => std::array::from_fn(|w| sa[site][w] ^ sb[site][w]),
                    }
                };
                self.groups_x.transform(field, &mut scratch.x[f]);
                if let Some(gy) = &self.groups_y {
                    gy.transform(field, &mut scratch.y[f]);
                }
            }
            let [xa, xb, xq] = &scratch.x;
            let [ya, yb, yq] = &scratch.y;
            for lane in 0..n_lanes {
                let m = Measurement {
                    energy: [self.energies[slot][lane] as f64, self.energies[n_t + slot][lane] as f64],
                    m0: [xa.m0[lane], xb.m0[lane]],
                    mk: [xa.k(lane), xb.k(lane)],
                    mk_y: [ya.k(lane), yb.k(lane)],
                    q0: xq.m0[lane],
                    qk: xq.k(lane),
                    qk_y: yq.k(lane),
                };
                let values = m.values(&self.basis);
                if t > 0 {
                    self.current[lane][slot].push(&values);
                }
            }
        }
        if t > 0 && (t + 1).is_power_of_two() {
            let bin = t.ilog2() as usize;
            for lane in 0..n_lanes {
                for slot in 0..n_t {
                    self.moments.add(slot, bin, &self.current[lane][slot]);
                }
            }
            std::mem::swap(&mut self.current, &mut self.last_closed);
            for row in self.current.iter_mut() {
                row.fill(FourierAccumulator::default());
            }
        }
    }

    fn scratch(&self) -> Scratch {
        let n = self.n_lanes;
        Scratch {
            x: std::array::from_fn(|_| FourierLanes::new(n)),
            y: std::array::from_fn(|_| FourierLanes::new(n)),
        }
    }

    fn step_with(&mut self, scratch: &mut Scratch) {
        let n_t = self.n_t();
        for (r, (spins, rng)) in self.spins.iter_mut().zip(self.rngs.iter_mut()).enumerate() {
            self.couplings.sweep(spins, &self.thresholds[r % n_t], rng);
        }
        self.refresh_energies();
        self.exchange_phase();
        self.sweeps_done += 1;
        if self.sweeps_done % self.schedule.measure_every == 0 {
            let t = self.sweeps_done / self.schedule.measure_every - 1;
            self.measure(t, scratch);
        }
    }

    /// One sweep of every replica in every lane, one exchange phase, and a
    /// measurement when due.
    pub fn step(&mut self) {
        let mut scratch = self.scratch();
        self.step_with(&mut scratch);
    }

    pub fn run_until(&mut self, target: u64) {
        let mut scratch = self.scratch();
        while self.sweeps_done < target.min(self.schedule.n_sweeps) {
            self.step_with(&mut scratch);
        }
    }

    pub fn finish(self) -> Result<PackedOutput> {
        if !self.is_finished() {
            return Err(Error::InsufficientData(format!(
                "batch stopped after {} of {} sweeps",
                self.sweeps_done, self.schedule.n_sweeps
            )));
        }
        let lane_averages = self
            .last_closed
            .iter()
            .map(|row| row.iter().map(FourierAccumulator::averages).collect())
            .collect();
        Ok(PackedOutput {
            temperatures: self.schedule.temperatures,
            lane_averages,
            moments: self.moments,
            exchange: self.exchange,
        })
    }

    pub fn checkpoint(&self) -> PackedCheckpoint {
        PackedCheckpoint {
            version: CHECKPOINT_VERSION,
            width: W,
            lattice_fingerprint: self.lattice_fingerprint.clone(),
            disorder_fingerprints: self.disorder_fingerprints.clone(),
            schedule: self.schedule.clone(),
            sweeps_done: self.sweeps_done,
            parity: self.parity,
            spins: self.spins.iter().flat_map(|r| r.iter().flat_map(|w| w.iter().copied())).collect(),
            rng_state: self.rngs.iter().flat_map(LaneRng::state).collect(),
            energies: self.energies.clone(),
            exchange_rng: self.exchange_rng.clone(),
            exchange: self.exchange.clone(),
            current: self.current.clone(),
            last_closed: self.last_closed.clone(),
            moments: self.moments.clone(),
        }
    }

    pub fn restore(lat: &Lattice, disorders: &[DisorderRealization], ckpt: PackedCheckpoint) -> Result<Self> {
        if ckpt.version != CHECKPOINT_VERSION || ckpt.width != W {
            return Err(Error::Integrity(format!(
                "checkpoint version {} width {} does not match version {CHECKPOINT_VERSION} width {W}",
                ckpt.version, ckpt.width
            )));
        }
        if lat.fingerprint() != ckpt.lattice_fingerprint {
            return Err(Error::Integrity("checkpoint was taken on a different lattice".into()));
        }
        let prints: Vec<String> = disorders.iter().map(|d| d.fingerprint()).collect();
        if prints != ckpt.disorder_fingerprints {
            return Err(Error::Integrity("checkpoint was taken with different disorder".into()));
        }
        let mut batch = Self::new(lat, disorders, ckpt.schedule)?;
        let n_replicas = batch.spins.len();
        let n_sites = batch.basis.n_sites();
        if ckpt.spins.len() != n_replicas * n_sites * W || ckpt.rng_state.len() != n_replicas * 4 * W {
            return Err(Error::Integrity("checkpoint arrays have the wrong length".into()));
        }
        for (r, replica) in batch.spins.iter_mut().enumerate() {
            for (site, word) in replica.iter_mut().enumerate() {
                let at = (r * n_sites + site) * W;
                word.copy_from_slice(&ckpt.spins[at..at + W]);
            }
        }
        batch.rngs = ckpt.rng_state.chunks(4 * W).map(LaneRng::from_state).collect();
        batch.energies = ckpt.energies;
        batch.exchange_rng = ckpt.exchange_rng;
        batch.exchange = ckpt.exchange;
        batch.parity = ckpt.parity;
        batch.sweeps_done = ckpt.sweeps_done;
        batch.current = ckpt.current;
        batch.last_closed = ckpt.last_closed;
        batch.moments = ckpt.moments;
        Ok(batch)
    }
}

/// Serializable state of a [`PackedBatch`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackedCheckpoint {
    pub version: u32,
    pub width: usize,
    pub lattice_fingerprint: String,
    pub disorder_fingerprints: Vec<String>,
    pub schedule: Schedule,
    pub sweeps_done: u64,
    parity: usize,
    spins: Vec<u64>,
    rng_state: Vec<u64>,
    energies: Vec<Vec<i64>>,
    exchange_rng: Xoshiro256PlusPlus,
    exchange: ExchangeStats,
    current: Vec<Vec<FourierAccumulator>>,
    last_closed: Vec<Vec<FourierAccumulator>>,
    moments: BinMoments,
}

impl PackedCheckpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        bincode::serialize(self).map_err(|e| Error::Parse(format!("cannot encode checkpoint: {e}")))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        bincode::deserialize(bytes).map_err(|e| Error::Integrity(format!("unreadable checkpoint: {e}")))
    }
}

/// A [`PackedBatch`] of the width picked by [`width_for`].
#[derive(Debug, Clone)]
pub enum PackedRun {
    W1(PackedBatch<1>),
    W2(PackedBatch<2>),
    W4(PackedBatch<4>),
    W8(PackedBatch<8>),
}

macro_rules! dispatch {
    ($self:expr, $b:ident => $e:expr) => {
        match $self {
            PackedRun::W1($b) => $e,
            PackedRun::W2($b) => $e,
            PackedRun::W4($b) => $e,
            PackedRun::W8($b) => $e,
        }
    };
}

impl PackedRun {
    pub fn new(lat: &Lattice, disorders: &[DisorderRealization], schedule: Schedule) -> Result<Self> {
        Ok(match width_for(disorders.len()) {
            1 => PackedRun::W1(PackedBatch::new(lat, disorders, schedule)?),
            2 => PackedRun::W2(PackedBatch::new(lat, disorders, schedule)?),
            4 => PackedRun::W4(PackedBatch::new(lat, disorders, schedule)?),
            _ => PackedRun::W8(PackedBatch::new(lat, disorders, schedule)?),
        })
    }

    pub fn restore(lat: &Lattice, disorders: &[DisorderRealization], ckpt: PackedCheckpoint) -> Result<Self> {
        Ok(match ckpt.width {
            1 => PackedRun::W1(PackedBatch::restore(lat, disorders, ckpt)?),
            2 => PackedRun::W2(PackedBatch::restore(lat, disorders, ckpt)?),
            4 => PackedRun::W4(PackedBatch::restore(lat, disorders, ckpt)?),
            8 => PackedRun::W8(PackedBatch::restore(lat, disorders, ckpt)?),
            w => return Err(Error::Integrity(format!("unsupported lane width {w}"))),
        })
    }

    pub fn sweeps_done(&self) -> u64 {
        dispatch!(self, b => b.sweeps_done())
    }

    pub fn is_finished(&self) -> bool {
        dispatch!(self, b => b.is_finished())
    }

    pub fn run_until(&mut self, target: u64) {
        dispatch!(self, b => b.run_until(target))
    }

    pub fn checkpoint(&self) -> PackedCheckpoint {
        dispatch!(self, b => b.checkpoint())
    }

    pub fn lane_spins(&self, set: usize, slot: usize, lane: usize) -> Vec<i8> {
        dispatch!(self, b => b.lane_spins(set, slot, lane))
    }

    pub fn lane_energy(&self, set: usize, slot: usize, lane: usize) -> i64 {
        dispatch!(self, b => b.lane_energy(set, slot, lane))
    }

    pub fn finish(self) -> Result<PackedOutput> {
        dispatch!(self, b => b.finish())
    }
}

/// Runs one batch to completion.
pub fn run_packed(lat: &Lattice, disorders: &[DisorderRealization], schedule: Schedule) -> Result<PackedOutput> {
    let mut run = PackedRun::new(lat, disorders, schedule)?;
    run.run_until(u64::MAX);
    run.finish()
}
