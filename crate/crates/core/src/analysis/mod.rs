//! Finite-size analysis of `xi/L` curves: pairwise crossings, scaling
//! collapse, the phase boundary and its end point on the Nishimori line.

mod boundary;
mod collapse;
mod crossing;
pub mod fit;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use boundary::{
    boundary_points, build_phase_boundary, combine_crossings, compare_boundaries, BoundaryOptions, BoundaryPoint,
    Deviation, NuEstimate, PcEstimate, PcMethod, PhaseBoundary,
};
pub use collapse::{collapse_cost, rescale, scaling_collapse, CollapseOptions, CollapseResult, LandscapePoint, RescaledPoint};
pub use crossing::{find_crossing, CrossingEstimate, CrossingOptions, CrossingStatus};

use crate::error::{Error, Result};
use crate::observables::{format_float, ObservableRow};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: f64,
    pub y: f64,
    pub err: f64,
}

/// One system size, points sorted by temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub size: usize,
    pub points: Vec<CurvePoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    /// `xi_m / L` from the spin susceptibilities.
    Magnetic,
    /// `xi_SG / L` from the replica overlaps.
    SpinGlass,
}

/// Distinct values of `p` in the rows, ascending.
pub fn distinct_p(rows: &[ObservableRow]) -> Vec<f64> {
    let mut ps: Vec<f64> = rows.iter().map(|r| r.p).collect();
    ps.sort_by(f64::total_cmp);
    ps.dedup();
    ps
}

/// Curves of one quantity at error probability `p`, one per size.
pub fn curves_from_rows(rows: &[ObservableRow], p: f64, quantity: Quantity) -> Vec<Curve> {
    let mut by_size: BTreeMap<usize, Vec<CurvePoint>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.p == p) {
        let (y, err) = match quantity {
            Quantity::Magnetic => (r.xi_over_l, r.xi_err),
            Quantity::SpinGlass => (r.xi_sg_over_l, r.xi_sg_err),
        };
        by_size.entry(r.size).or_default().push(CurvePoint { t: r.temperature, y, err });
    }
    by_size
        .into_iter()
        .map(|(size, mut points)| {
            points.sort_by(|a, b| a.t.total_cmp(&b.t));
            Curve { size, points }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub crossing: CrossingOptions,
    pub collapse: CollapseOptions,
    pub boundary: BoundaryOptions,
    /// Starting exponent for every collapse.
    pub nu_init: f64,
}

impl AnalysisOptions {
    /// Defaults with every bootstrap keyed by `seed`.
    pub fn with_seed(seed: u64) -> Self {
        AnalysisOptions {
            crossing: CrossingOptions {
                seed,
                ..Default::default()
            },
            collapse: CollapseOptions {
                seed,
                ..Default::default()
            },
            boundary: BoundaryOptions {
                seed,
                ..Default::default()
            },
            nu_init: 1.0,
        }
    }
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self::with_seed(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PCollapse {
    pub p: f64,
    pub result: CollapseResult,
    pub points: Vec<RescaledPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub crossings: Vec<(f64, Vec<CrossingEstimate>)>,
    pub points: Vec<BoundaryPoint>,
    /// Present once at least two values of `p` show a crossing.
    pub boundary: Option<PhaseBoundary>,
    pub collapses: Vec<PCollapse>,
    /// Rows or pairs left out, with the reason.
    pub excluded: Vec<String>,
    pub warnings: Vec<String>,
}

/// Runs crossings, collapses and the boundary on a result table.
/// Unequilibrated rows and rows without a finite `xi/L` are excluded.
pub fn analyze_rows(rows: &[ObservableRow], opts: &AnalysisOptions) -> Result<AnalysisReport> {
    if rows.is_empty() {
        return Err(Error::InsufficientData("no result rows to analyze".into()));
    }
    let mut excluded = Vec::new();
    let mut warnings = Vec::new();
    let kept: Vec<ObservableRow> = rows
        .iter()
        .filter(|r| {
            let reason = if !r.equilibrated {
                Some("failed the equilibration check")
            } else if !(r.xi_over_l.is_finite() && r.xi_err.is_finite()) {
                Some("has no finite xi/L")
            } else {
                None
            };
            if let Some(why) = reason {
                excluded.push(format!("p = {}, L = {}, T = {}: {why}", r.p, r.size, format_float(r.temperature)));
            }
            reason.is_none()
        })
        .cloned()
        .collect();

    let mut crossings = Vec::new();
    let mut collapses = Vec::new();
    for p in distinct_p(&kept) {
        let curves = curves_from_rows(&kept, p, Quantity::Magnetic);
        let mut found = Vec::new();
        for i in 0..curves.len() {
            for j in i + 1..curves.len() {
                match find_crossing(&curves[i], &curves[j], &opts.crossing) {
                    Ok(c) => found.push(c),
                    Err(e) => excluded.push(format!(
                        "p = {p}, pair ({}, {}): {e}",
                        curves[i].size, curves[j].size
                    )),
                }
            }
        }
        let point = combine_crossings(p, &found, opts.boundary.extrapolate);
        if point.status == CrossingStatus::Crossing && curves.len() >= 3 {
            let (lo, hi) = found
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| (lo.min(c.window.0), hi.max(c.window.1)));
            let windowed: Vec<Curve> = curves
                .iter()
                .map(|c| Curve {
                    size: c.size,
                    points: c.points.iter().filter(|q| q.t >= lo && q.t <= hi).copied().collect(),
                })
                .collect();
            let input = if windowed.iter().all(|c| c.points.len() >= 5) { &windowed } else { &curves };
            match scaling_collapse(input, point.tc, opts.nu_init, &opts.collapse) {
                Ok(result) => {
                    if !result.converged {
                        warnings.push(format!("collapse at p = {p} did not converge"));
                    }
                    let points = rescale(input, result.tc, result.nu);
                    collapses.push(PCollapse { p, result, points });
                }
                Err(e) => warnings.push(format!("collapse at p = {p}: {e}")),
            }
        }
        crossings.push((p, found));
    }

    let points = boundary_points(&crossings, &opts.boundary);
    let boundary = match build_phase_boundary(&crossings, &opts.boundary) {
        Ok(mut b) => {
            b.nu_estimates = collapses
                .iter()
                .map(|c| NuEstimate {
                    p: c.p,
                    nu: c.result.nu,
                    err: c.result.nu_err,
                })
                .collect();
            warnings.extend(b.warnings.iter().cloned());
            Some(b)
        }
        Err(Error::InsufficientData(msg)) => {
            warnings.push(msg);
            None
        }
        Err(e) => return Err(e),
    };
    Ok(AnalysisReport {
        crossings,
        points,
        boundary,
        collapses,
        excluded,
        warnings,
    })
}

pub const BOUNDARY_HEADER: &str = "p,T_c,err,status";
pub const COLLAPSE_HEADER: &str = "p,L,T,x,y,err";

pub fn boundary_csv(points: &[BoundaryPoint]) -> String {
    let mut out = String::from(BOUNDARY_HEADER);
    out.push('\n');
    for b in points {
        out.push_str(&format!(
            "{},{},{},{}\n",
            format_float(b.p),
            format_float(b.tc),
            format_float(b.tc_err),
            b.status.as_str()
        ));
    }
    out
}

pub fn collapse_csv(collapses: &[PCollapse]) -> String {
    let mut out = String::from(COLLAPSE_HEADER);
    out.push('\n');
    for c in collapses {
        for q in &c.points {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                format_float(c.p),
                q.size,
                format_float(q.t),
                format_float(q.x),
                format_float(q.y),
                format_float(q.err)
            ));
        }
    }
    out
}

/// `{p_c, err_or_bracket, method}`; `p_c` is null without a boundary.
pub fn pc_json(boundary: Option<&PhaseBoundary>) -> serde_json::Value {
    let finite = |x: f64| if x.is_finite() { serde_json::json!(x) } else { serde_json::Value::Null };
    match boundary.map(|b| b.p_c) {
        Some(pc) => {
            let err_or_bracket = match pc.method {
                PcMethod::Intersection => finite(pc.err),
                PcMethod::Bracket | PcMethod::LowerBound => serde_json::json!([pc.bracket.0, pc.bracket.1]),
            };
            serde_json::json!({
                "p_c": finite(pc.p_c),
                "err_or_bracket": err_or_bracket,
                "method": pc.method,
                "bracket": [pc.bracket.0, pc.bracket.1],
            })
        }
        None => serde_json::json!({
            "p_c": null,
            "err_or_bracket": null,
            "method": "insufficient-boundary",
        }),
    }
}
