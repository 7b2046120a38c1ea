use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use super::fit::PSpline;
use super::Curve;
use crate::error::{Error, Result};
use crate::rng::derive_key;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseOptions {
    /// Spline segments; `None` picks one per six points, between 4 and 30.
    pub segments: Option<usize>,
    /// Roughness penalty relative to the total data weight.
    pub lambda: f64,
    pub max_evaluations: usize,
    pub n_boot: usize,
    pub seed: u64,
}

impl Default for CollapseOptions {
    fn default() -> Self {
        CollapseOptions {
            segments: None,
            lambda: 1e-6,
            max_evaluations: 2000,
            n_boot: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandscapePoint {
    pub tc: f64,
    pub nu: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseResult {
    pub tc: f64,
    pub nu: f64,
    pub tc_err: f64,
    pub nu_err: f64,
    pub cost: f64,
    pub initial_cost: f64,
    pub converged: bool,
    pub evaluations: usize,
    pub n_points: usize,
    /// Cost on a 3x3 grid around the optimum, one step of the final simplex apart.
    pub landscape: Vec<LandscapePoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RescaledPoint {
    pub size: usize,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub err: f64,
}

/// Points mapped to `x = L^(1/nu) (T - Tc)`.
pub fn rescale(curves: &[Curve], tc: f64, nu: f64) -> Vec<RescaledPoint> {
    curves
        .iter()
        .flat_map(|c| {
            let factor = (c.size as f64).powf(1.0 / nu);
            c.points
                .iter()
                .filter(|p| p.y.is_finite() && p.err.is_finite())
                .map(move |p| RescaledPoint {
                    size: c.size,
                    t: p.t,
                    x: factor * (p.t - tc),
                    y: p.y,
                    err: p.err,
                })
        })
        .collect()
}

/// Collapse quality: mean squared deviation, in units of the point errors,
/// from a smoothing spline through all rescaled points. Only points inside
/// the rescaled range of some other size are counted.
pub fn collapse_cost(curves: &[Curve], tc: f64, nu: f64, opts: &CollapseOptions) -> f64 {
    if !(nu > 0.0) || !tc.is_finite() {
        return f64::INFINITY;
    }
    let pts = rescale(curves, tc, nu);
    let n = pts.len();
    let unit = pts.iter().any(|p| !(p.err > 0.0));
    let w: Vec<f64> = pts.iter().map(|p| if unit { 1.0 } else { 1.0 / (p.err * p.err) }).collect();
    let w_mean = w.iter().sum::<f64>() / n as f64;
    let w_norm: Vec<f64> = w.iter().map(|v| v / w_mean).collect();

    let mut ranges: Vec<(usize, f64, f64)> = Vec::new();
    for p in &pts {
        match ranges.iter_mut().find(|r| r.0 == p.size) {
            Some(r) => {
                r.1 = r.1.min(p.x);
                r.2 = r.2.max(p.x);
            }
            None => ranges.push((p.size, p.x, p.x)),
        }
    }
    let overlap: Vec<usize> = (0..n)
        .filter(|&i| {
            ranges
                .iter()
                .any(|&(s, lo, hi)| s != pts[i].size && lo <= pts[i].x && pts[i].x <= hi)
        })
        .collect();
    if overlap.len() < 3 {
        return f64::INFINITY;
    }
    let segments = opts.segments.unwrap_or((n / 6).clamp(4, 30));
    let x: Vec<f64> = pts.iter().map(|p| p.x).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.y).collect();
    let Ok(spline) = PSpline::fit(&x, &y, &w_norm, segments, opts.lambda * n as f64) else {
        return f64::INFINITY;
    };
    overlap
        .iter()
        .map(|&i| w[i] * (y[i] - spline.eval(x[i])).powi(2))
        .sum::<f64>()
        / overlap.len() as f64
}

#[derive(Clone, Copy)]
struct Minimum {
    at: [f64; 2],
    value: f64,
    step: [f64; 2],
    evaluations: usize,
    converged: bool,
}

/// Nelder-Mead on a two-parameter function.
fn nelder_mead(f: &dyn Fn([f64; 2]) -> f64, start: [f64; 2], step: [f64; 2], budget: usize) -> Minimum {
    let mut simplex = [start, [start[0] + step[0], start[1]], [start[0], start[1] + step[1]]];
    let mut values = simplex.map(f);
    let mut evaluations = 3;
    let mut converged = false;
    let add = |a: [f64; 2], b: [f64; 2], s: f64| [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
    while evaluations < budget {
        let mut order = [0, 1, 2];
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
        simplex = order.map(|i| simplex[i]);
        values = order.map(|i| values[i]);

        let spread = (values[2] - values[0]).abs();
        let size = (0..2)
            .map(|k| {
                let scale = step[k].abs().max(1e-300);
                ((simplex[1][k] - simplex[0][k]).abs().max((simplex[2][k] - simplex[0][k]).abs())) / scale
            })
            .fold(0.0, f64::max);
        if size < 1e-7 || (values[0].is_finite() && spread <= 1e-14 * values[0].abs().max(1e-300) && size < 1e-4) {
            converged = true;
            break;
        }

        let centroid = add(simplex[0], simplex[1], 0.5);
        let reflected = add(centroid, simplex[2], -1.0);
        let fr = f(reflected);
        evaluations += 1;
        if fr < values[0] {
            let expanded = add(centroid, simplex[2], -2.0);
            let fe = f(expanded);
            evaluations += 1;
            if fe < fr {
                simplex[2] = expanded;
                values[2] = fe;
            } else {
                simplex[2] = reflected;
                values[2] = fr;
            }
        } else if fr < values[1] {
            simplex[2] = reflected;
            values[2] = fr;
        } else {
            let (contracted, fc) = if fr < values[2] {
                let c = add(centroid, reflected, 0.5);
                (c, f(c))
            } else {
                let c = add(centroid, simplex[2], 0.5);
                (c, f(c))
            };
            evaluations += 1;
            if fc < values[2].min(fr) {
                simplex[2] = contracted;
                values[2] = fc;
            } else {
                for i in 1..3 {
                    simplex[i] = add(simplex[0], simplex[i], 0.5);
                    values[i] = f(simplex[i]);
                }
                evaluations += 2;
            }
        }
    }
    let best = (0..3).min_by(|&i, &j| values[i].total_cmp(&values[j])).unwrap();
    let final_step = [
        (0..3).map(|i| (simplex[i][0] - simplex[best][0]).abs()).fold(0.0, f64::max),
        (0..3).map(|i| (simplex[i][1] - simplex[best][1]).abs()).fold(0.0, f64::max),
    ];
    Minimum {
        at: simplex[best],
        value: values[best],
        step: final_step,
        evaluations,
        converged,
    }
}

fn optimize(curves: &[Curve], tc_init: f64, nu_init: f64, opts: &CollapseOptions) -> Minimum {
    let (t_lo, t_hi) = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.t))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| (lo.min(t), hi.max(t)));
    let dt = 0.05 * (t_hi - t_lo).max(1e-3);
    let cost = |v: [f64; 2]| collapse_cost(curves, v[0], v[1].exp(), opts);
    let budget = opts.max_evaluations / 2;
    let first = nelder_mead(&cost, [tc_init, nu_init.ln()], [dt, 0.1], budget);
    // restart once from the optimum to escape a collapsed simplex
    let second = nelder_mead(&cost, first.at, [dt * 0.2, 0.02], budget);
    let best = if second.value <= first.value { second } else { first };
    Minimum {
        evaluations: first.evaluations + second.evaluations,
        ..best
    }
}

/// Finds `(Tc, nu)` that best collapse `xi/L` onto a single curve of
/// `L^(1/nu) (T - Tc)`, starting from the given guesses.
pub fn scaling_collapse(curves: &[Curve], tc_init: f64, nu_init: f64, opts: &CollapseOptions) -> Result<CollapseResult> {
    let mut sizes: Vec<usize> = curves.iter().map(|c| c.size).collect();
    sizes.sort_unstable();
    sizes.dedup();
    if sizes.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "a scaling collapse needs at least 3 sizes, got {}",
            sizes.len()
        )));
    }
    if !(nu_init > 0.0) || !tc_init.is_finite() {
        return Err(Error::Domain(format!("bad initial guess Tc = {tc_init}, nu = {nu_init}")));
    }
    let initial_cost = collapse_cost(curves, tc_init, nu_init, opts);
    let best = optimize(curves, tc_init, nu_init, opts);
    let (tc, nu) = (best.at[0], best.at[1].exp());
    let (mut cost, mut tc_out, mut nu_out) = (best.value, tc, nu);
    if !(cost <= initial_cost) {
        (cost, tc_out, nu_out) = (initial_cost, tc_init, nu_init);
    }

    let step = [best.step[0].max(1e-6), best.step[1].max(1e-6)];
    let mut landscape = Vec::with_capacity(9);
    for i in -1..=1 {
        for j in -1..=1 {
            let t = tc_out + i as f64 * step[0];
            let n = (nu_out.ln() + j as f64 * step[1]).exp();
            landscape.push(LandscapePoint {
                tc: t,
                nu: n,
                cost: collapse_cost(curves, t, n, opts),
            });
        }
    }

    let (tc_err, nu_err) = bootstrap(curves, tc_out, nu_out, opts);
    Ok(CollapseResult {
        tc: tc_out,
        nu: nu_out,
        tc_err,
        nu_err,
        cost,
        initial_cost,
        converged: best.converged,
        evaluations: best.evaluations,
        n_points: rescale(curves, tc_out, nu_out).len(),
        landscape,
    })
}

fn bootstrap(curves: &[Curve], tc: f64, nu: f64, opts: &CollapseOptions) -> (f64, f64) {
    if opts.n_boot < 2 {
        return (f64::NAN, f64::NAN);
    }
    let mut rng = Xoshiro256PlusPlus::from_seed(derive_key("bootstrap", &[opts.seed, curves.len() as u64]));
    let inner = CollapseOptions { n_boot: 0, ..*opts };
    let mut samples = Vec::with_capacity(opts.n_boot);
    for _ in 0..opts.n_boot {
        let noisy: Vec<Curve> = curves
            .iter()
            .map(|c| Curve {
                size: c.size,
                points: c
                    .points
                    .iter()
                    .map(|p| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        super::CurvePoint { y: p.y + p.err * z, ..*p }
                    })
                    .collect(),
            })
            .collect();
        let m = optimize(&noisy, tc, nu, &inner);
        samples.push((m.at[0], m.at[1].exp()));
    }
    let sd = |f: &dyn Fn(&(f64, f64)) -> f64| {
        let mean = samples.iter().map(f).sum::<f64>() / samples.len() as f64;
        (samples.iter().map(|s| (f(s) - mean).powi(2)).sum::<f64>() / (samples.len() - 1) as f64).sqrt()
    };
    (sd(&|s| s.0), sd(&|s| s.1))
}
