use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use super::crossing::{CrossingEstimate, CrossingStatus};
use super::fit::{roots_in, Pchip};
use crate::disorder::nishimori_temperature;
use crate::error::{Error, Result};
use crate::rng::derive_key;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub p: f64,
    pub tc: f64,
    pub tc_err: f64,
    pub status: CrossingStatus,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuEstimate {
    pub p: f64,
    pub nu: f64,
    pub err: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PcMethod {
    /// Monotone interpolation of the boundary meets the Nishimori line.
    Intersection,
    /// The boundary ends above the Nishimori line between a crossing and a
    /// non-crossing value of `p`.
    Bracket,
    /// Every simulated `p` shows a crossing above the Nishimori line.
    LowerBound,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcEstimate {
    pub p_c: f64,
    pub err: f64,
    pub bracket: (f64, f64),
    pub method: PcMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseBoundary {
    pub points: Vec<BoundaryPoint>,
    pub p_c: PcEstimate,
    pub nu_estimates: Vec<NuEstimate>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryOptions {
    /// Extrapolate pair crossings linearly in `1/(L1 + L2)`.
    pub extrapolate: bool,
    pub n_boot: usize,
    pub seed: u64,
}

impl Default for BoundaryOptions {
    fn default() -> Self {
        BoundaryOptions {
            extrapolate: false,
            n_boot: 400,
            seed: 0,
        }
    }
}

/// `T_N(p)`, continued to zero at `p = 0`.
fn nishimori_curve(p: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else {
        nishimori_temperature(p.min(0.5 - 1e-15)).unwrap_or(f64::INFINITY)
    }
}

/// Merges the pair crossings found at one `p`.
///
/// The point counts as a crossing when every pair crosses, and as
/// no-crossing when no pair does or when the largest pair does not.
/// Anything else is uncertain.
pub fn combine_crossings(p: f64, crossings: &[CrossingEstimate], extrapolate: bool) -> BoundaryPoint {
    let n_pairs = crossings.len();
    let all = |s| !crossings.is_empty() && crossings.iter().all(|c| c.status == s);
    let largest = crossings.iter().max_by_key(|c| (c.pair.1, c.pair.0));
    let status = if all(CrossingStatus::Crossing) {
        CrossingStatus::Crossing
    } else if crossings.is_empty()
        || all(CrossingStatus::NoCrossing)
        || largest.is_some_and(|c| c.status == CrossingStatus::NoCrossing)
    {
        CrossingStatus::NoCrossing
    } else {
        CrossingStatus::Uncertain
    };
    let usable: Vec<&CrossingEstimate> = crossings
        .iter()
        .filter(|c| c.t_cross.is_finite() && c.err.is_finite() && c.err > 0.0)
        .collect();
    let (tc, tc_err) = if usable.is_empty() {
        (f64::NAN, f64::NAN)
    } else if extrapolate {
        extrapolated(&usable).unwrap_or_else(|| weighted_mean(&usable))
    } else {
        weighted_mean(&usable)
    };
    BoundaryPoint {
        p,
        tc,
        tc_err,
        status,
        n_pairs,
    }
}

fn weighted_mean(c: &[&CrossingEstimate]) -> (f64, f64) {
    let w: f64 = c.iter().map(|e| e.err.powi(-2)).sum();
    let m: f64 = c.iter().map(|e| e.t_cross * e.err.powi(-2)).sum::<f64>() / w;
    (m, w.sqrt().recip())
}

/// Weighted straight line in `u = 1/(L1 + L2)`, returning the intercept.
fn extrapolated(c: &[&CrossingEstimate]) -> Option<(f64, f64)> {
    let u: Vec<f64> = c.iter().map(|e| 1.0 / (e.pair.0 + e.pair.1) as f64).collect();
    if u.iter().all(|&v| v == u[0]) {
        return None;
    }
    let (mut s, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (e, &x) in c.iter().zip(&u) {
        let w = e.err.powi(-2);
        s += w;
        sx += w * x;
        sy += w * e.t_cross;
        sxx += w * x * x;
        sxy += w * x * e.t_cross;
    }
    let det = s * sxx - sx * sx;
    if !(det > 0.0) {
        return None;
    }
    Some(((sxx * sy - sx * sxy) / det, (sxx / det).sqrt()))
}

/// Per-`p` boundary points, sorted by `p`.
pub fn boundary_points(per_p: &[(f64, Vec<CrossingEstimate>)], opts: &BoundaryOptions) -> Vec<BoundaryPoint> {
    let mut points: Vec<BoundaryPoint> = per_p
        .iter()
        .map(|(p, c)| combine_crossings(*p, c, opts.extrapolate))
        .collect();
    points.sort_by(|a, b| a.p.total_cmp(&b.p));
    points
}

fn intersection(p: &[f64], tc: &[f64]) -> Option<(f64, usize)> {
    if p.len() < 2 {
        return None;
    }
    let interp = Pchip::new(p, tc).ok()?;
    let gap = |x: f64| interp.eval(x) - nishimori_curve(x);
    let i = (0..p.len() - 1).find(|&i| gap(p[i]) > 0.0 && gap(p[i + 1]) <= 0.0)?;
    let root = roots_in(gap, p[i], p[i + 1], 64).into_iter().next().unwrap_or(p[i + 1]);
    Some((root, i))
}

/// Assembles the phase boundary and estimates where it meets the
/// Nishimori line. Uncertain points are left out of the interpolation.
pub fn build_phase_boundary(per_p: &[(f64, Vec<CrossingEstimate>)], opts: &BoundaryOptions) -> Result<PhaseBoundary> {
    let points = boundary_points(per_p, opts);
    let crossing: Vec<&BoundaryPoint> = points
        .iter()
        .filter(|b| b.status == CrossingStatus::Crossing && b.tc.is_finite())
        .collect();
    if crossing.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "a phase boundary needs at least 2 values of p with a crossing, got {}",
            crossing.len()
        )));
    }
    let mut warnings = Vec::new();
    for w in crossing.windows(2) {
        let excess = w[1].tc - w[0].tc;
        if excess > 2.0 * w[0].tc_err.hypot(w[1].tc_err) {
            warnings.push(format!(
                "T_c rises from {:.5} at p = {} to {:.5} at p = {} beyond its errors",
                w[0].tc, w[0].p, w[1].tc, w[1].p
            ));
        }
    }
    let p: Vec<f64> = crossing.iter().map(|b| b.p).collect();
    let tc: Vec<f64> = crossing.iter().map(|b| b.tc).collect();
    let p_max = *p.last().unwrap();
    if let Some(b) = points.iter().find(|b| b.status != CrossingStatus::Crossing && b.p < p_max) {
        warnings.push(format!(
            "p = {} has status {} below the largest crossing p = {p_max}",
            b.p,
            b.status.as_str()
        ));
    }

    let p_c = if let Some((root, i)) = intersection(&p, &tc) {
        let mut rng = Xoshiro256PlusPlus::from_seed(derive_key("bootstrap", &[opts.seed, p.len() as u64]));
        let mut roots = Vec::with_capacity(opts.n_boot);
        for _ in 0..opts.n_boot {
            let noisy: Vec<f64> = crossing
                .iter()
                .map(|b| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    b.tc + b.tc_err * z
                })
                .collect();
            if let Some((r, _)) = intersection(&p, &noisy) {
                roots.push(r);
            }
        }
        let err = if roots.len() >= 2 {
            let m = roots.iter().sum::<f64>() / roots.len() as f64;
            (roots.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (roots.len() - 1) as f64).sqrt()
        } else {
            f64::NAN
        };
        PcEstimate {
            p_c: root,
            err,
            bracket: (p[i], p[i + 1]),
            method: PcMethod::Intersection,
        }
    } else if nishimori_curve(p[0]) >= tc[0] {
        return Err(Error::Analysis(format!(
            "the boundary already lies below the Nishimori line at p = {}",
            p[0]
        )));
    } else {
        match points.iter().find(|b| b.p > p_max && b.status != CrossingStatus::Crossing) {
            Some(next) => PcEstimate {
                p_c: 0.5 * (p_max + next.p),
                err: 0.5 * (next.p - p_max),
                bracket: (p_max, next.p),
                method: PcMethod::Bracket,
            },
            None => PcEstimate {
                p_c: p_max,
                err: f64::NAN,
                bracket: (p_max, 0.5),
                method: PcMethod::LowerBound,
            },
        }
    };
    Ok(PhaseBoundary {
        points,
        p_c,
        nu_estimates: Vec::new(),
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub p: f64,
    pub relative: f64,
    pub err: f64,
}

/// `(Tc_a - Tc_b) / Tc_b` at every crossing point of `a` inside the range
/// covered by `b`, with `b` interpolated monotonically.
pub fn compare_boundaries(a: &PhaseBoundary, b: &PhaseBoundary) -> Result<Vec<Deviation>> {
    let pick = |pb: &PhaseBoundary| -> Vec<BoundaryPoint> {
        pb.points
            .iter()
            .filter(|x| x.status == CrossingStatus::Crossing && x.tc.is_finite())
            .copied()
            .collect()
    };
    let (pa, pb) = (pick(a), pick(b));
    if pb.is_empty() || pa.is_empty() {
        return Err(Error::InsufficientData("boundary without crossing points".into()));
    }
    let bx: Vec<f64> = pb.iter().map(|x| x.p).collect();
    let by: Vec<f64> = pb.iter().map(|x| x.tc).collect();
    let be: Vec<f64> = pb.iter().map(|x| x.tc_err).collect();
    let interp = Pchip::new(&bx, &by).ok();
    let (lo, hi) = (bx[0], *bx.last().unwrap());
    let mut out = Vec::new();
    for x in &pa {
        if x.p < lo || x.p > hi {
            continue;
        }
        let (tb, eb) = match bx.iter().position(|&v| v == x.p) {
            Some(i) => (by[i], be[i]),
            None => {
                let Some(f) = &interp else { continue };
                let j = bx.partition_point(|&v| v < x.p);
                let s = (x.p - bx[j - 1]) / (bx[j] - bx[j - 1]);
                (f.eval(x.p), be[j - 1] + s * (be[j] - be[j - 1]))
            }
        };
        let relative = (x.tc - tb) / tb;
        let err = (x.tc / tb).abs() * (x.tc_err / x.tc).hypot(eb / tb);
        out.push(Deviation { p: x.p, relative, err });
    }
    if out.is_empty() {
        return Err(Error::Analysis("the two boundaries cover disjoint ranges of p".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn crossing(pair: (usize, usize), t: f64, err: f64) -> CrossingEstimate {
        CrossingEstimate {
            pair,
            status: CrossingStatus::Crossing,
            t_cross: t,
            err,
            window: (t - 0.1, t + 0.1),
            residual: 1.0,
            order: 3,
            n_points: 10,
        }
    }

    fn none(pair: (usize, usize)) -> CrossingEstimate {
        CrossingEstimate {
            status: CrossingStatus::NoCrossing,
            t_cross: f64::NAN,
            err: f64::NAN,
            ..crossing(pair, 1.0, 1.0)
        }
    }

    #[test]
    fn inverse_variance_average() {
        let b = combine_crossings(0.0, &[crossing((12, 18), 2.0, 0.1), crossing((18, 24), 2.3, 0.2)], false);
        assert!((b.tc - (2.0 / 0.01 + 2.3 / 0.04) / (100.0 + 25.0)).abs() < 1e-12);
        assert!((b.tc_err - 125f64.sqrt().recip()).abs() < 1e-12);
        assert_eq!(b.status, CrossingStatus::Crossing);
    }

    #[test]
    fn extrapolation_removes_linear_drift() {
        let c: Vec<CrossingEstimate> = [(6, 12), (12, 18), (18, 24)]
            .iter()
            .map(|&(a, b)| crossing((a, b), 2.0 + 3.0 / (a + b) as f64, 0.01))
            .collect();
        let b = combine_crossings(0.0, &c, true);
        assert!((b.tc - 2.0).abs() < 1e-10);
    }

    #[test]
    fn status_rules() {
        let mixed = combine_crossings(0.1, &[crossing((6, 12), 1.0, 0.1), none((12, 18))], false);
        assert_eq!(mixed.status, CrossingStatus::NoCrossing);
        let lower_fails = combine_crossings(0.1, &[none((6, 12)), crossing((12, 18), 1.0, 0.1)], false);
        assert_eq!(lower_fails.status, CrossingStatus::Uncertain);
    }

    #[test]
    fn linear_boundary_meets_the_nishimori_line() {
        let c = 8.0;
        let tc = |p: f64| 2.2692 * (1.0 - c * p);
        let per_p: Vec<(f64, Vec<CrossingEstimate>)> = (0..=12)
            .map(|i| {
                let p = 0.01 * i as f64;
                (p, vec![crossing((12, 24), tc(p), 0.001)])
            })
            .collect();
        let b = build_phase_boundary(&per_p, &BoundaryOptions::default()).unwrap();
        assert_eq!(b.p_c.method, PcMethod::Intersection);
        // independent bisection on the closed forms
        let (mut lo, mut hi) = (0.01, 0.12);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if tc(mid) - 2.0 / ((1.0 - mid) / mid).ln() > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((b.p_c.p_c - lo).abs() < 1e-4, "{} vs {lo}", b.p_c.p_c);
        assert!(b.p_c.bracket.0 <= b.p_c.p_c && b.p_c.p_c <= b.p_c.bracket.1);
        assert!(b.p_c.err > 0.0);
        assert!(b.warnings.is_empty());
    }

    #[test]
    fn terminated_boundary_gives_a_bracket() {
        let per_p = vec![
            (0.0, vec![crossing((12, 24), 2.2692, 0.002)]),
            (0.08, vec![crossing((12, 24), 1.62, 0.01)]),
            (0.12, vec![none((12, 24))]),
        ];
        let b = build_phase_boundary(&per_p, &BoundaryOptions::default()).unwrap();
        assert_eq!(b.p_c.method, PcMethod::Bracket);
        assert_eq!(b.p_c.bracket, (0.08, 0.12));
        assert!(b.p_c.bracket.0 <= 0.109 && 0.109 <= b.p_c.bracket.1);
    }

    #[test]
    fn single_p_is_insufficient() {
        let per_p = vec![(0.0, vec![crossing((12, 24), 2.2692, 0.002)])];
        assert!(matches!(
            build_phase_boundary(&per_p, &BoundaryOptions::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn non_monotone_boundary_warns() {
        let per_p = vec![
            (0.0, vec![crossing((12, 24), 2.0, 0.01)]),
            (0.05, vec![crossing((12, 24), 2.2, 0.01)]),
        ];
        let b = build_phase_boundary(&per_p, &BoundaryOptions::default()).unwrap();
        assert_eq!(b.warnings.len(), 1);
    }

    #[test]
    fn comparison_with_itself_is_zero() {
        let per_p: Vec<_> = (0..5)
            .map(|i| (0.02 * i as f64, vec![crossing((12, 24), 2.2 - i as f64 * 0.1, 0.01)]))
            .collect();
        let b = build_phase_boundary(&per_p, &BoundaryOptions::default()).unwrap();
        let d = compare_boundaries(&b, &b).unwrap();
        assert_eq!(d.len(), 5);
        assert!(d.iter().all(|x| x.relative == 0.0));

        let shifted: Vec<_> = (0..3)
            .map(|i| (0.5 + 0.01 * i as f64, vec![crossing((12, 24), 0.9 - 0.01 * i as f64, 0.01)]))
            .collect();
        let far = PhaseBoundary {
            points: boundary_points(&shifted, &BoundaryOptions::default()),
            ..b.clone()
        };
        assert!(compare_boundaries(&b, &far).is_err());
    }
}
