//! Statistical tests of the Markov chain on the 8-site Union Jack lattice,
//! where every one of the 256 states can be tabulated.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use tribody::disorder::sample_disorder;
use tribody::lattice::build_union_jack;
use tribody::mc::{attempt_exchanges, metropolis_sweep, AcceptanceTable, Couplings, ReplicaLadder, SpinConfiguration};
use tribody::observables::{measure, FourierBasis, WaveVectors};

const THIN: usize = 8;

fn couplings() -> Couplings {
    let lat = build_union_jack(2).unwrap();
    let dis = sample_disorder(&lat, 0.2, 17).unwrap();
    Couplings::new(&lat, &dis).unwrap()
}

fn state_index(spins: &[i8]) -> usize {
    spins.iter().enumerate().filter(|(_, &s)| s < 0).map(|(i, _)| 1 << i).sum()
}

/// Boltzmann weights of all states by direct summation.
fn boltzmann(c: &Couplings, temperature: f64) -> Vec<f64> {
    let n = c.n_sites();
    let weights: Vec<f64> = (0..1usize << n)
        .map(|state| {
            let spins: Vec<i8> = (0..n).map(|i| if state >> i & 1 == 1 { -1 } else { 1 }).collect();
            (-(c.energy(&spins) as f64) / temperature).exp()
        })
        .collect();
    let z: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / z).collect()
}

/// Pearson goodness-of-fit p-value, pooling states with fewer than five
/// expected counts into one cell.
fn goodness_of_fit(counts: &[u64], probs: &[f64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let (mut chi2, mut cells) = (0.0, 0usize);
    let (mut pooled_obs, mut pooled_exp) = (0.0, 0.0);
    for (&o, &p) in counts.iter().zip(probs) {
        let e = p * total as f64;
        if e < 5.0 {
            pooled_obs += o as f64;
            pooled_exp += e;
        } else {
            chi2 += (o as f64 - e).powi(2) / e;
            cells += 1;
        }
    }
    if pooled_exp > 0.0 {
        chi2 += (pooled_obs - pooled_exp).powi(2) / pooled_exp.max(5.0);
        cells += 1;
    }
    let dist = ChiSquared::new((cells - 1) as f64).unwrap();
    1.0 - dist.cdf(chi2)
}

#[test]
fn single_temperature_chain_samples_boltzmann_distribution() {
    let c = couplings();
    let temperature = 2.5;
    let table = AcceptanceTable::new(1.0 / temperature, c.max_coordination());
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(3);
    let mut cfg = SpinConfiguration::random(&c, &mut rng);
    let mut counts = vec![0u64; 256];
    for sweep in 0..(1usize << 21) {
        metropolis_sweep(&mut cfg, &c, &table, &mut rng);
        if sweep % THIN == 0 {
            counts[state_index(cfg.spins())] += 1;
        }
    }
    let p = goodness_of_fit(&counts, &boltzmann(&c, temperature));
    assert!(p > 1e-3, "chi-square p-value {p}");
}

#[test]
fn exchanges_leave_every_marginal_unchanged() {
    let c = couplings();
    let temps = [1.5, 2.5, 4.0];
    let mut ladder = ReplicaLadder::new(&c, &temps, 11).unwrap();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(12);
    let mut counts = vec![vec![0u64; 256]; temps.len()];
    for sweep in 0..(1usize << 20) {
        ladder.sweep(&c, false);
        attempt_exchanges(&mut ladder, &mut rng);
        if sweep % THIN == 0 {
            for (slot, hist) in counts.iter_mut().enumerate() {
                hist[state_index(ladder.replica(0, slot).spins())] += 1;
            }
        }
    }
    let rates = ladder.exchange_stats().acceptance_rates();
    assert!(rates.iter().all(|&r| r > 0.05), "exchanges rarely accepted: {rates:?}");
    for (slot, &t) in temps.iter().enumerate() {
        let p = goodness_of_fit(&counts[slot], &boltzmann(&c, t));
        assert!(p > 1e-3, "T = {t}: chi-square p-value {p}");
    }
}

#[test]
fn replica_sets_are_interchangeable() {
    let c = couplings();
    let lat = build_union_jack(2).unwrap();
    let basis = FourierBasis::new(&lat, WaveVectors::XAndY);
    let temps = [2.0, 3.0];
    let mut ladder = ReplicaLadder::new(&c, &temps, 5).unwrap();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(6);
    let mut energy_sums = [[0.0f64; 2]; 2];
    let mut n = 0.0;
    for sweep in 0..(1usize << 17) {
        ladder.sweep(&c, false);
        attempt_exchanges(&mut ladder, &mut rng);
        if sweep % THIN != 0 {
            continue;
        }
        n += 1.0;
        for slot in 0..temps.len() {
            let (a, b) = (ladder.replica(0, slot), ladder.replica(1, slot));
            let ab = measure(a, b, &basis).values(&basis);
            let ba = measure(b, a, &basis).values(&basis);
            assert_eq!(ab, ba);
            energy_sums[slot][0] += a.energy() as f64;
            energy_sums[slot][1] += b.energy() as f64;
        }
    }
    for (slot, sums) in energy_sums.iter().enumerate() {
        let (e0, e1) = (sums[0] / n, sums[1] / n);
        assert!((e0 - e1).abs() < 0.05 * e0.abs().max(1.0), "T = {}: {e0} vs {e1}", temps[slot]);
    }
}
