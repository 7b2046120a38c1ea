use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use super::fit::{roots_in, weighted_polyfit, PolyFit};
use super::{Curve, CurvePoint};
use crate::error::{Error, Result};
use crate::rng::derive_key;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrossingStatus {
    Crossing,
    NoCrossing,
    Uncertain,
}

impl CrossingStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CrossingStatus::Crossing => "crossing",
            CrossingStatus::NoCrossing => "no-crossing",
            CrossingStatus::Uncertain => "uncertain",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossingOptions {
    pub degree: usize,
    pub min_points: usize,
    /// Largest acceptable `chi^2/dof` of either fit in a window.
    pub max_reduced_chi2: f64,
    /// A difference counts as resolved beyond this many combined errors.
    pub significance: f64,
    pub n_boot: usize,
    pub seed: u64,
}

impl Default for CrossingOptions {
    fn default() -> Self {
        CrossingOptions {
            degree: 3,
            min_points: 5,
            max_reduced_chi2: 2.0,
            significance: 2.0,
            n_boot: 200,
            seed: 0,
        }
    }
}

/// Crossing temperature of one pair of sizes. `t_cross` and `err` are NaN
/// when the status is [`CrossingStatus::NoCrossing`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingEstimate {
    pub pair: (usize, usize),
    pub status: CrossingStatus,
    pub t_cross: f64,
    pub err: f64,
    pub window: (f64, f64),
    /// Larger `chi^2/dof` of the two fits in the chosen window.
    pub residual: f64,
    pub order: usize,
    pub n_points: usize,
}

struct Common {
    t: Vec<f64>,
    a: Vec<CurvePoint>,
    b: Vec<CurvePoint>,
}

fn common_points(a: &Curve, b: &Curve) -> Common {
    let usable = |p: &&CurvePoint| p.y.is_finite() && p.err.is_finite() && p.err >= 0.0;
    let pa: Vec<&CurvePoint> = a.points.iter().filter(usable).collect();
    let pb: Vec<&CurvePoint> = b.points.iter().filter(usable).collect();
    let (mut i, mut j) = (0, 0);
    let mut out = Common {
        t: Vec::new(),
        a: Vec::new(),
        b: Vec::new(),
    };
    while i < pa.len() && j < pb.len() {
        let (ta, tb) = (pa[i].t, pb[j].t);
        if (ta - tb).abs() <= 1e-9 * ta.abs().max(1.0) {
            out.t.push(ta);
            out.a.push(*pa[i]);
            out.b.push(*pb[j]);
            i += 1;
            j += 1;
        } else if ta < tb {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

fn ordered<'c>(a: &'c Curve, b: &'c Curve) -> (&'c Curve, &'c Curve) {
    let key = |c: &Curve| (c.size, c.points.iter().map(|p| p.y.to_bits()).collect::<Vec<_>>());
    if key(a) <= key(b) {
        (a, b)
    } else {
        (b, a)
    }
}

fn fit_pair(
    t: &[f64],
    a: &[CurvePoint],
    b: &[CurvePoint],
    ya: &[f64],
    yb: &[f64],
    degree: usize,
) -> Option<(PolyFit, PolyFit)> {
    let ea: Vec<f64> = a.iter().map(|p| p.err).collect();
    let eb: Vec<f64> = b.iter().map(|p| p.err).collect();
    let fa = weighted_polyfit(t, ya, &ea, degree).ok()?;
    let fb = weighted_polyfit(t, yb, &eb, degree).ok()?;
    Some((fa, fb))
}

fn nearest_root(fa: &PolyFit, fb: &PolyFit, lo: f64, hi: f64, target: f64) -> Option<f64> {
    roots_in(|t| fa.eval(t) - fb.eval(t), lo, hi, 400)
        .into_iter()
        .min_by(|x, y| (x - target).abs().total_cmp(&(y - target).abs()))
}

/// Locates where two `xi/L` curves intersect.
///
/// The points shared by both curves are scanned for sign changes of their
/// difference. A crossing is accepted when exactly one change separates
/// resolved differences of opposite sign. Cubic fits are then tried on every
/// contiguous window around that change, widest first, and the first window
/// whose fits satisfy the residual bound gives the estimate. Its error comes
/// from a parametric bootstrap of the points in that window.
pub fn find_crossing(a: &Curve, b: &Curve, opts: &CrossingOptions) -> Result<CrossingEstimate> {
    if a.size == b.size {
        return Err(Error::Domain(format!("both curves have size {}", a.size)));
    }
    let (a, b) = ordered(a, b);
    let common = common_points(a, b);
    let n = common.t.len();
    if n < opts.min_points.max(opts.degree + 2) {
        return Err(Error::InsufficientData(format!(
            "sizes {} and {} share {n} temperatures, need {}",
            a.size,
            b.size,
            opts.min_points.max(opts.degree + 2)
        )));
    }
    let t = &common.t;
    let ya: Vec<f64> = common.a.iter().map(|p| p.y).collect();
    let yb: Vec<f64> = common.b.iter().map(|p| p.y).collect();
    let d: Vec<f64> = ya.iter().zip(&yb).map(|(x, y)| x - y).collect();
    let full = (t[0], t[n - 1]);
    let mut estimate = CrossingEstimate {
        pair: (a.size, b.size),
        status: CrossingStatus::NoCrossing,
        t_cross: f64::NAN,
        err: f64::NAN,
        window: full,
        residual: f64::NAN,
        order: opts.degree,
        n_points: n,
    };

    let raw: Vec<usize> = (0..n - 1).filter(|&i| d[i] == 0.0 || d[i] * d[i + 1] < 0.0).collect();
    if raw.is_empty() && d[n - 1] != 0.0 {
        return Ok(estimate);
    }

    let resolved: Vec<(usize, f64)> = (0..n)
        .filter(|&i| d[i].abs() > opts.significance * common.a[i].err.hypot(common.b[i].err))
        .map(|i| (i, d[i].signum()))
        .collect();
    let flips: Vec<usize> = resolved
        .windows(2)
        .filter(|w| w[0].1 != w[1].1)
        .map(|w| w[0].0)
        .collect();
    let mut status = CrossingStatus::Crossing;
    let zone = if flips.len() == 1 {
        let lo = flips[0];
        let hi = resolved.iter().find(|(i, _)| *i > lo).unwrap().0;
        (lo, hi)
    } else {
        status = CrossingStatus::Uncertain;
        let mid = 0.5 * (n - 1) as f64;
        let i = raw
            .iter()
            .copied()
            .min_by(|x, y| (*x as f64 - mid).abs().total_cmp(&(*y as f64 - mid).abs()))
            .unwrap_or(n - 2);
        (i, i + 1)
    };
    let target = 0.5 * (t[zone.0] + t[zone.1]);

    let min_len = opts.min_points.max(opts.degree + 2);
    let mut windows: Vec<(usize, usize)> = Vec::new();
    for i0 in 0..=zone.0 {
        for i1 in zone.1..n {
            if i1 + 1 - i0 >= min_len {
                windows.push((i0, i1));
            }
        }
    }
    windows.sort_by(|x, y| {
        let len = |w: &(usize, usize)| w.1 - w.0;
        let off = |w: &(usize, usize)| ((w.0 + w.1) as f64 * 0.5 - target).abs();
        len(y).cmp(&len(x)).then(off(x).total_cmp(&off(y))).then(x.0.cmp(&y.0))
    });

    let mut chosen = None;
    let mut fallback = None;
    for &(i0, i1) in &windows {
        let Some((fa, fb)) = fit_pair(
            &t[i0..=i1],
            &common.a[i0..=i1],
            &common.b[i0..=i1],
            &ya[i0..=i1],
            &yb[i0..=i1],
            opts.degree,
        ) else {
            continue;
        };
        let Some(root) = nearest_root(&fa, &fb, t[zone.0], t[zone.1], target) else {
            continue;
        };
        let residual = fa.reduced_chi2().max(fb.reduced_chi2());
        if residual <= opts.max_reduced_chi2 {
            chosen = Some((i0, i1, root, residual));
            break;
        }
        fallback = Some((i0, i1, root, residual));
    }
    let (i0, i1, root, residual) = match chosen {
        Some(c) => c,
        None => {
            status = CrossingStatus::Uncertain;
            match fallback {
                Some(f) => f,
                None => {
                    // no fitted root at all; fall back to linear interpolation
                    let i = zone.0;
                    let j = zone.1;
                    let root = if d[i] == d[j] {
                        target
                    } else {
                        t[i] + (t[j] - t[i]) * d[i] / (d[i] - d[j])
                    };
                    estimate.status = status;
                    estimate.t_cross = root;
                    estimate.err = (t[j] - t[i]).max(f64::EPSILON);
                    estimate.window = (t[i], t[j]);
                    return Ok(estimate);
                }
            }
        }
    };

    let (err, failures) = bootstrap_error(&common, (i0, i1), root, opts, (a.size, b.size));
    if failures * 10 > opts.n_boot {
        status = CrossingStatus::Uncertain;
    }
    estimate.status = status;
    estimate.t_cross = root;
    estimate.err = err;
    estimate.window = (t[i0], t[i1]);
    estimate.residual = residual;
    estimate.n_points = i1 + 1 - i0;
    Ok(estimate)
}

fn bootstrap_error(
    common: &Common,
    (i0, i1): (usize, usize),
    root: f64,
    opts: &CrossingOptions,
    pair: (usize, usize),
) -> (f64, usize) {
    let mut rng = Xoshiro256PlusPlus::from_seed(derive_key(
        "bootstrap",
        &[opts.seed, pair.0 as u64, pair.1 as u64, i0 as u64, i1 as u64],
    ));
    let t = &common.t[i0..=i1];
    let (a, b) = (&common.a[i0..=i1], &common.b[i0..=i1]);
    let (lo, hi) = (t[0], t[t.len() - 1]);
    let mut roots = Vec::with_capacity(opts.n_boot);
    let mut failures = 0;
    for _ in 0..opts.n_boot {
        let mut draw = |p: &CurvePoint| {
            let z: f64 = StandardNormal.sample(&mut rng);
            p.y + p.err * z
        };
        let ya: Vec<f64> = a.iter().map(&mut draw).collect();
        let yb: Vec<f64> = b.iter().map(&mut draw).collect();
        match fit_pair(t, a, b, &ya, &yb, opts.degree).and_then(|(fa, fb)| nearest_root(&fa, &fb, lo, hi, root)) {
            Some(r) => roots.push(r),
            None => failures += 1,
        }
    }
    let err = if roots.len() >= 2 {
        let mean = roots.iter().sum::<f64>() / roots.len() as f64;
        (roots.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (roots.len() - 1) as f64).sqrt()
    } else {
        f64::NAN
    };
    // keep the error strictly positive even for noiseless input
    (err.max(1e-12 * root.abs().max(1.0)), failures)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_curve(size: usize, t_star: f64, nu: f64, temps: &[f64], err: f64) -> Curve {
        Curve {
            size,
            points: temps
                .iter()
                .map(|&t| CurvePoint {
                    t,
                    y: 0.6 - 0.05 * (size as f64).powf(1.0 / nu) * (t - t_star),
                    err,
                })
                .collect(),
        }
    }

    fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn planted_crossing_is_recovered() {
        let temps = grid(2.2, 2.35, 31);
        let a = linear_curve(12, 2.2692, 1.0, &temps, 1e-3);
        let b = linear_curve(24, 2.2692, 1.0, &temps, 1e-3);
        let est = find_crossing(&a, &b, &CrossingOptions::default()).unwrap();
        assert_eq!(est.status, CrossingStatus::Crossing);
        assert!((est.t_cross - 2.2692).abs() < 1e-9);
        assert!(est.err > 0.0);
        assert!(est.window.0 <= est.t_cross && est.t_cross <= est.window.1);
        assert_eq!(est.pair, (12, 24));
    }

    #[test]
    fn parallel_curves_do_not_cross() {
        let temps = grid(1.0, 2.0, 11);
        let mut a = linear_curve(6, 1.5, 1.0, &temps, 1e-3);
        let b = linear_curve(12, 1.5, 1.0, &temps, 1e-3);
        for (p, q) in a.points.iter_mut().zip(&b.points) {
            p.y = q.y + 0.1;
        }
        let est = find_crossing(&a, &b, &CrossingOptions::default()).unwrap();
        assert_eq!(est.status, CrossingStatus::NoCrossing);
        assert!(est.t_cross.is_nan());
    }

    #[test]
    fn unresolved_curves_are_uncertain() {
        let temps = grid(1.0, 2.0, 11);
        let a = linear_curve(6, 1.5, 1.0, &temps, 1.0);
        let mut b = a.clone();
        b.size = 12;
        for (i, p) in b.points.iter_mut().enumerate() {
            p.y += if i % 2 == 0 { 0.01 } else { -0.01 };
        }
        let est = find_crossing(&a, &b, &CrossingOptions::default()).unwrap();
        assert_eq!(est.status, CrossingStatus::Uncertain);
    }

    #[test]
    fn too_few_common_points() {
        let a = linear_curve(6, 1.5, 1.0, &grid(1.0, 2.0, 4), 1e-3);
        let b = linear_curve(12, 1.5, 1.0, &grid(1.0, 2.0, 4), 1e-3);
        assert!(matches!(
            find_crossing(&a, &b, &CrossingOptions::default()),
            Err(Error::InsufficientData(_))
        ));
        assert!(find_crossing(&a, &a, &CrossingOptions::default()).is_err());
    }
}
