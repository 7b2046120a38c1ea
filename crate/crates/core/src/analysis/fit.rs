//! Small numerical helpers shared by the analysis routines.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Polynomial fitted in the scaled variable `u = (x - center) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyFit {
    pub coeffs: Vec<f64>,
    pub center: f64,
    pub scale: f64,
    pub chi2: f64,
    pub dof: usize,
}

impl PolyFit {
    pub fn eval(&self, x: f64) -> f64 {
        let u = (x - self.center) / self.scale;
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * u + c)
    }

    /// `chi^2 / dof`, or zero when the fit interpolates.
    pub fn reduced_chi2(&self) -> f64 {
        if self.dof == 0 {
            0.0
        } else {
            self.chi2 / self.dof as f64
        }
    }
}

/// Least-squares polynomial of the given degree, weighted by `1/err^2`.
/// Non-positive errors switch the fit to unit weights.
pub fn weighted_polyfit(x: &[f64], y: &[f64], err: &[f64], degree: usize) -> Result<PolyFit> {
    let n = x.len();
    if n <= degree || y.len() != n || err.len() != n {
        return Err(Error::InsufficientData(format!(
            "a degree-{degree} fit needs more than {degree} points, got {n}"
        )));
    }
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let center = 0.5 * (lo + hi);
    let scale = if hi > lo { 0.5 * (hi - lo) } else { 1.0 };
    let unit = err.iter().any(|&e| !(e > 0.0));
    let w: Vec<f64> = err.iter().map(|&e| if unit { 1.0 } else { 1.0 / e }).collect();

    let a = DMatrix::from_fn(n, degree + 1, |i, j| w[i] * ((x[i] - center) / scale).powi(j as i32));
    let b = DVector::from_fn(n, |i, _| w[i] * y[i]);
    let svd = a.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let min_sv = svd.singular_values.min();
    if !(min_sv > 1e-12 * max_sv) {
        return Err(Error::Degenerate("polynomial fit is ill-conditioned".into()));
    }
    let coeffs = svd.solve(&b, 0.0).map_err(|e| Error::Degenerate(e.to_string()))?;
    let residual = &a * &coeffs - b;
    let fit = PolyFit {
        coeffs: coeffs.iter().copied().collect(),
        center,
        scale,
        chi2: residual.norm_squared(),
        dof: n - degree - 1,
    };
    Ok(fit)
}

/// Roots of `f` in `[lo, hi]`, bracketed on a uniform scan and refined by
/// bisection.
pub fn roots_in(f: impl Fn(f64) -> f64, lo: f64, hi: f64, scan: usize) -> Vec<f64> {
    let mut roots = Vec::new();
    let step = (hi - lo) / scan as f64;
    let mut a = lo;
    let mut fa = f(a);
    for i in 1..=scan {
        let b = if i == scan { hi } else { lo + step * i as f64 };
        let fb = f(b);
        if fa == 0.0 {
            roots.push(a);
        } else if fa * fb < 0.0 {
            roots.push(bisect(&f, a, b, fa));
        }
        a = b;
        fa = fb;
    }
    if fa == 0.0 {
        roots.push(hi);
    }
    roots
}

fn bisect(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, mut fa: f64) -> f64 {
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if fa * fm < 0.0 {
            b = m;
        } else {
            a = m;
            fa = fm;
        }
    }
    0.5 * (a + b)
}

/// Monotone piecewise-cubic Hermite interpolant (Fritsch and Carlson).
#[derive(Debug, Clone)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return Err(Error::InsufficientData("interpolation needs at least two nodes".into()));
        }
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("interpolation nodes must be strictly increasing".into()));
        }
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d.fill(delta[0]);
        } else {
            for i in 1..n - 1 {
                if delta[i - 1] * delta[i] > 0.0 {
                    let w1 = 2.0 * h[i] + h[i - 1];
                    let w2 = h[i] + 2.0 * h[i - 1];
                    d[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
                }
            }
            d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
            d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Ok(Pchip {
            x: x.to_vec(),
            y: y.to_vec(),
            d,
        })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x[0], *self.x.last().unwrap())
    }

    /// Evaluates inside the node range; nodes are reproduced exactly.
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let i = match self.x.binary_search_by(|v| v.total_cmp(&t)) {
            Ok(i) => return self.y[i],
            Err(0) => 0,
            Err(i) if i >= n => n - 2,
            Err(i) => i - 1,
        };
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s).powi(2);
        let h10 = s * (1.0 - s).powi(2);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        h00 * self.y[i] + h10 * h * self.d[i] + h01 * self.y[i + 1] + h11 * h * self.d[i + 1]
    }
}

fn end_slope(h0: f64, h1: f64, del0: f64, del1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * del0 - h0 * del1) / (h0 + h1);
    if d.signum() != del0.signum() {
        0.0
    } else if del0.signum() != del1.signum() && d.abs() > 3.0 * del0.abs() {
        3.0 * del0
    } else {
        d
    }
}

/// Penalized cubic B-spline smoother with a second-difference penalty.
#[derive(Debug, Clone)]
pub struct PSpline {
    lo: f64,
    width: f64,
    segments: usize,
    coeffs: Vec<f64>,
}

impl PSpline {
    pub fn fit(x: &[f64], y: &[f64], w: &[f64], segments: usize, lambda: f64) -> Result<Self> {
        let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) || segments == 0 {
            return Err(Error::Degenerate("smoothing spline needs a non-empty range".into()));
        }
        let width = (hi - lo) / segments as f64;
        let nb = segments + 3;
        let mut lhs = DMatrix::<f64>::zeros(nb, nb);
        let mut rhs = DVector::<f64>::zeros(nb);
        for ((&xi, &yi), &wi) in x.iter().zip(y).zip(w) {
            let (first, b) = basis(lo, width, segments, xi);
            for a in 0..4 {
                rhs[first + a] += wi * b[a] * yi;
                for c in 0..4 {
                    lhs[(first + a, first + c)] += wi * b[a] * b[c];
                }
            }
        }
        // D^T D for second differences
        for k in 0..nb - 2 {
            let stencil = [1.0, -2.0, 1.0];
            for a in 0..3 {
                for c in 0..3 {
                    lhs[(k + a, k + c)] += lambda * stencil[a] * stencil[c];
                }
            }
        }
        let coeffs = lhs
            .cholesky()
            .ok_or_else(|| Error::Degenerate("smoothing spline system is singular".into()))?
            .solve(&rhs);
        Ok(PSpline {
            lo,
            width,
            segments,
            coeffs: coeffs.iter().copied().collect(),
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let (first, b) = basis(self.lo, self.width, self.segments, x);
        (0..4).map(|a| b[a] * self.coeffs[first + a]).sum()
    }
}

/// Index of the first non-zero uniform cubic B-spline at `x` and the four
/// non-zero values.
fn basis(lo: f64, width: f64, segments: usize, x: f64) -> (usize, [f64; 4]) {
    let u = (x - lo) / width;
    let seg = (u.floor().max(0.0) as usize).min(segments - 1);
    let t = u - seg as f64;
    let s = 1.0 - t;
    (
        seg,
        [
            s * s * s / 6.0,
            (3.0 * t * t * t - 6.0 * t * t + 4.0) / 6.0,
            (-3.0 * t * t * t + 3.0 * t * t + 3.0 * t + 1.0) / 6.0,
            t * t * t / 6.0,
        ],
    )
}
