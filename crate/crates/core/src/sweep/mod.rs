//! Orchestration of a full simulation plan and of the analysis of its
//! results directory.
//!
//! Work is split into tasks, one per batch of disorder samples at a given
//! `(p, L)`. Tasks share nothing, so they run on a thread pool in any order;
//! results are merged in plan order and batch order afterwards, which makes
//! every output file independent of the worker count. Each task writes its
//! state to `checkpoints/<p,L>/batchNNNNN.*` at the configured interval and
//! once more when it finishes, so an interrupted sweep resumes where it
//! stopped and a finished task is never recomputed.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;

pub use config::{CostEstimate, Engine, OneOrMany, PlanPoint, SweepConfig, SweepRow, NANOS_PER_SPIN_UPDATE, SCHEMA_VERSION};

use crate::analysis::{analyze_rows, boundary_csv, collapse_csv, pc_json, AnalysisOptions, AnalysisReport};
use crate::disorder::{sample_disorder, DisorderRealization};
use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::mc::packed::{PackedCheckpoint, PackedRun};
use crate::mc::{equilibration_check, BinMoments, ExchangeStats, ScalarCheckpoint, Schedule, Simulation};
use crate::observables::{aggregate, format_float, parse_rows, write_rows, Observable, ObservableRow, ThermalAverages};
use crate::rng::{batch_seed, derive_seed, sample_seed};

pub const OBSERVABLES_FILE: &str = "observables.csv";
pub const EQUILIBRATION_FILE: &str = "equilibration.csv";
pub const EXCHANGE_FILE: &str = "exchange.csv";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Thread count; 0 defers to the config, whose 0 means all cores.
    pub workers: usize,
    pub resume: bool,
    /// Stop every task at this sweep after checkpointing it. Used to
    /// exercise interruption.
    pub halt_at_sweep: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibrationRecord {
    pub p: f64,
    pub size: usize,
    pub temperature: f64,
    pub passed: bool,
    pub n_bins: usize,
    /// Latest bin from which all observables agree.
    pub agreement_from: usize,
    pub failing: Vec<Observable>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub rows: Vec<ObservableRow>,
    pub equilibration: Vec<EquilibrationRecord>,
    /// `(p, L)` points with at least one temperature failing the check.
    pub failed_points: Vec<(f64, usize)>,
    /// False when tasks were halted before the end.
    pub complete: bool,
}

#[derive(Debug, Clone)]
struct Task {
    point: usize,
    batch: usize,
    samples: std::ops::Range<usize>,
    cost: f64,
}

/// Per-sample production averages and bin moments of one task.
#[derive(Debug, Clone)]
struct TaskResult {
    averages: Vec<Vec<ThermalAverages>>,
    moments: BinMoments,
    exchange: ExchangeStats,
}

fn effective_workers(cfg: &SweepConfig, opts: &RunOptions) -> usize {
    let w = if opts.workers > 0 { opts.workers } else { cfg.workers };
    if w > 0 {
        w
    } else {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    }
}

fn tasks_for(cfg: &SweepConfig, plan: &[PlanPoint]) -> Vec<Task> {
    let per_batch = match cfg.engine {
        Engine::Packed => cfg.batch_size,
        Engine::Scalar => 1,
    };
    let mut tasks = Vec::new();
    for (i, pt) in plan.iter().enumerate() {
        let n_sites = 2 * pt.size * pt.size;
        for (batch, start) in (0..pt.samples).step_by(per_batch).enumerate() {
            let end = (start + per_batch).min(pt.samples);
            tasks.push(Task {
                point: i,
                batch,
                samples: start..end,
                cost: (end - start) as f64 * (pt.temperatures.len() * n_sites) as f64 * pt.n_sweeps as f64,
            });
        }
    }
    tasks
}

fn checkpoint_path(dir: &Path, pt: &PlanPoint, task: &Task, engine: Engine) -> PathBuf {
    let ext = match engine {
        Engine::Packed => "bin",
        Engine::Scalar => "json",
    };
    dir.join("checkpoints").join(pt.label()).join(format!("batch{:05}.{ext}", task.batch))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn schedule_for(cfg: &SweepConfig, pt: &PlanPoint, seed: u64) -> Schedule {
    Schedule {
        measure_every: cfg.measure_every,
        wave_vectors: cfg.wave_vectors,
        ..Schedule::new(pt.temperatures.clone(), pt.n_sweeps, seed)
    }
}

/// Sweep targets at which a task stops to checkpoint.
fn stops(cfg: &SweepConfig, n_sweeps: u64, halt: Option<u64>) -> Vec<u64> {
    let end = halt.map_or(n_sweeps, |h| h.min(n_sweeps));
    let mut out = Vec::new();
    if cfg.checkpoint_interval > 0 {
        let mut s = cfg.checkpoint_interval;
        while s < end {
            out.push(s);
            s += cfg.checkpoint_interval;
        }
    }
    out.push(end);
    out
}

fn run_task(
    cfg: &SweepConfig,
    dir: &Path,
    lat: &Lattice,
    pt: &PlanPoint,
    task: &Task,
    opts: &RunOptions,
) -> Result<Option<TaskResult>> {
    let disorders: Vec<DisorderRealization> = task
        .samples
        .clone()
        .map(|s| sample_disorder(lat, pt.p, sample_seed(cfg.master_seed, pt.p, pt.size, s)))
        .collect::<Result<_>>()?;
    let path = checkpoint_path(dir, pt, task, cfg.engine);
    let targets = stops(cfg, pt.n_sweeps, opts.halt_at_sweep);
    match cfg.engine {
        Engine::Packed => {
            let mut run = match (opts.resume, path.exists()) {
                (true, true) => PackedRun::restore(lat, &disorders, PackedCheckpoint::from_bytes(&fs::read(&path)?)?)?,
                _ => PackedRun::new(
                    lat,
                    &disorders,
                    schedule_for(cfg, pt, batch_seed(cfg.master_seed, pt.p, pt.size, task.batch)),
                )?,
            };
            for &t in &targets {
                if run.sweeps_done() < t {
                    run.run_until(t);
                    write_atomic(&path, &run.checkpoint().to_bytes()?)?;
                }
            }
            if !run.is_finished() {
                return Ok(None);
            }
            let out = run.finish()?;
            Ok(Some(TaskResult {
                averages: out.lane_averages,
                moments: out.moments,
                exchange: out.exchange,
            }))
        }
        Engine::Scalar => {
            let dis = &disorders[0];
            let mut sim = match (opts.resume, path.exists()) {
                (true, true) => Simulation::restore(lat, dis, ScalarCheckpoint::from_json(&fs::read_to_string(&path)?)?)?,
                _ => Simulation::new(
                    lat,
                    dis,
                    schedule_for(cfg, pt, sample_seed(cfg.master_seed, pt.p, pt.size, task.samples.start)),
                )?,
            };
            for &t in &targets {
                if sim.sweeps_done() < t {
                    sim.run_until(t);
                    write_atomic(&path, sim.checkpoint().to_json()?.as_bytes())?;
                }
            }
            if !sim.is_finished() {
                return Ok(None);
            }
            let out = sim.finish();
            let n_t = out.temperatures.len();
            let averages = vec![(0..n_t)
                .map(|slot| {
                    out.bins
                        .production(slot)
                        .map(|acc| acc.averages())
                        .ok_or_else(|| Error::InsufficientData("run produced no measurements".into()))
                })
                .collect::<Result<Vec<_>>>()?];
            let mut moments = BinMoments::new(n_t);
            moments.add_series(&out.bins);
            Ok(Some(TaskResult {
                averages,
                moments,
                exchange: out.exchange,
            }))
        }
    }
}

fn merge_point(
    cfg: &SweepConfig,
    pt: &PlanPoint,
    results: &[&TaskResult],
) -> Result<(Vec<ObservableRow>, Vec<EquilibrationRecord>, ExchangeStats)> {
    let n_t = pt.temperatures.len();
    let mut moments = BinMoments::new(n_t);
    let mut exchange = ExchangeStats {
        attempts: vec![0; n_t.saturating_sub(1)],
        accepts: vec![0; n_t.saturating_sub(1)],
    };
    let mut per_sample: Vec<&Vec<ThermalAverages>> = Vec::new();
    for r in results {
        moments.merge(&r.moments)?;
        per_sample.extend(r.averages.iter());
        for i in 0..exchange.attempts.len() {
            exchange.attempts[i] += r.exchange.attempts[i];
            exchange.accepts[i] += r.exchange.accepts[i];
        }
    }
    let verdicts = equilibration_check(&moments.table(), cfg.equilibration_sigma)?;
    let mut rows = Vec::with_capacity(n_t);
    let mut records = Vec::with_capacity(n_t);
    for (slot, &t) in pt.temperatures.iter().enumerate() {
        let samples: Vec<ThermalAverages> = per_sample.iter().map(|s| s[slot]).collect();
        let seed = derive_seed("bootstrap", &[cfg.master_seed, pt.p.to_bits(), pt.size as u64, slot as u64]);
        let agg = aggregate(&samples, pt.size, cfg.n_boot, seed)?;
        let v = &verdicts[slot];
        let failing: Vec<Observable> = Observable::ALL.into_iter().filter(|o| !v[o.index()].passed).collect();
        let passed = failing.is_empty();
        rows.push(ObservableRow::from_aggregate(pt.p, t, pt.size, &agg, passed));
        records.push(EquilibrationRecord {
            p: pt.p,
            size: pt.size,
            temperature: t,
            passed,
            n_bins: v[0].n_bins,
            agreement_from: v.iter().map(|x| x.agreement_from).max().unwrap_or(0),
            failing,
        });
    }
    Ok((rows, records, exchange))
}

pub fn equilibration_csv(records: &[EquilibrationRecord]) -> String {
    let mut out = String::from("p,L,T,passed,n_bins,agreement_from,failing\n");
    for r in records {
        let failing: Vec<&str> = r.failing.iter().map(|o| o.name()).collect();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            format_float(r.p),
            r.size,
            format_float(r.temperature),
            r.passed,
            r.n_bins,
            r.agreement_from,
            failing.join(";")
        ));
    }
    out
}

fn exchange_csv(entries: &[(PlanPoint, ExchangeStats)]) -> String {
    let mut out = String::from("p,L,T_low,T_high,attempts,acceptance\n");
    for (pt, ex) in entries {
        for (i, rate) in ex.acceptance_rates().iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                format_float(pt.p),
                pt.size,
                format_float(pt.temperatures[i]),
                format_float(pt.temperatures[i + 1]),
                ex.attempts[i],
                format_float(*rate)
            ));
        }
    }
    out
}

/// Runs every point of the plan and writes the results into the output
/// directory.
pub fn run_sweep(cfg: &SweepConfig, opts: &RunOptions) -> Result<SweepOutcome> {
    cfg.validate()?;
    let dir = &cfg.output_dir;
    let stored = dir.join(CONFIG_FILE);
    if stored.exists() {
        let previous = SweepConfig::load(&stored)?;
        if !opts.resume {
            return Err(Error::Domain(format!(
                "{} already holds a sweep; pass resume to continue it",
                dir.display()
            )));
        }
        if !previous.same_plan(cfg) {
            return Err(Error::Integrity(format!(
                "{} holds a sweep with a different plan",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir)?;
    write_atomic(&stored, cfg.to_toml()?.as_bytes())?;

    let plan = cfg.plan();
    let lattices: Vec<Lattice> = plan.iter().map(|pt| cfg.lattice.build(pt.size)).collect::<Result<_>>()?;
    let mut tasks = tasks_for(cfg, &plan);
    // longest first for better load balance; results are re-sorted below
    tasks.sort_by(|a, b| b.cost.total_cmp(&a.cost));
    let workers = effective_workers(cfg, opts);
    let estimate = cfg.estimate_cost();
    info!(
        "{} points, {} tasks, {:.3e} spin updates (about {:.1} core-hours) on {workers} workers",
        plan.len(),
        tasks.len(),
        estimate.spin_updates,
        estimate.core_hours
    );

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Domain(format!("cannot start {workers} workers: {e}")))?;
    let started = Instant::now();
    let results: Vec<Result<Option<TaskResult>>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|task| {
                let pt = &plan[task.point];
                let t0 = Instant::now();
                let r = run_task(cfg, dir, &lattices[task.point], pt, task, opts);
                info!(
                    "p = {}, L = {}, batch {} ({} samples) done in {:.1} s",
                    pt.p,
                    pt.size,
                    task.batch,
                    task.samples.len(),
                    t0.elapsed().as_secs_f64()
                );
                r
            })
            .collect()
    });
    info!("all tasks finished after {:.1} s", started.elapsed().as_secs_f64());

    let mut by_point: Vec<Vec<(usize, TaskResult)>> = vec![Vec::new(); plan.len()];
    let mut complete = true;
    for (task, r) in tasks.iter().zip(results) {
        match r? {
            Some(res) => by_point[task.point].push((task.batch, res)),
            None => complete = false,
        }
    }
    if !complete {
        return Ok(SweepOutcome {
            rows: Vec::new(),
            equilibration: Vec::new(),
            failed_points: Vec::new(),
            complete: false,
        });
    }

    let mut rows = Vec::new();
    let mut equilibration = Vec::new();
    let mut failed_points = Vec::new();
    let mut exchange = Vec::new();
    for (pt, mut parts) in plan.iter().zip(by_point) {
        parts.sort_by_key(|(b, _)| *b);
        let refs: Vec<&TaskResult> = parts.iter().map(|(_, r)| r).collect();
        let (pt_rows, pt_eq, ex) = merge_point(cfg, pt, &refs)?;
        if pt_eq.iter().any(|r| !r.passed) {
            warn!(
                "p = {}, L = {}: {} temperatures failed the equilibration check",
                pt.p,
                pt.size,
                pt_eq.iter().filter(|r| !r.passed).count()
            );
            failed_points.push((pt.p, pt.size));
        }
        let shard = dir.join("points").join(format!("{}.csv", pt.label()));
        write_atomic(&shard, write_rows(&pt_rows).as_bytes())?;
        rows.extend(pt_rows);
        equilibration.extend(pt_eq);
        exchange.push((pt.clone(), ex));
    }
    write_atomic(&dir.join(OBSERVABLES_FILE), write_rows(&rows).as_bytes())?;
    write_atomic(&dir.join(EQUILIBRATION_FILE), equilibration_csv(&equilibration).as_bytes())?;
    write_atomic(&dir.join(EXCHANGE_FILE), exchange_csv(&exchange).as_bytes())?;
    Ok(SweepOutcome {
        rows,
        equilibration,
        failed_points,
        complete: true,
    })
}

/// Points of the plan with no row in the results.
fn missing_points(cfg: &SweepConfig, rows: &[ObservableRow]) -> Vec<String> {
    let mut missing = Vec::new();
    for pt in cfg.plan() {
        for &t in &pt.temperatures {
            let found = rows.iter().any(|r| r.p == pt.p && r.size == pt.size && r.temperature == t);
            if !found {
                missing.push(format!("p = {}, L = {}, T = {}: missing from the results", pt.p, pt.size, format_float(t)));
            }
        }
    }
    missing
}

/// Analyzes `dir/observables.csv` and writes `boundary.csv`, `pc.json`,
/// `collapse.csv` and `analysis.json` next to it.
pub fn analyze_dir(dir: &Path) -> Result<AnalysisReport> {
    let path = dir.join(OBSERVABLES_FILE);
    if !path.exists() {
        return Err(Error::InsufficientData(format!("{} does not exist", path.display())));
    }
    let rows = parse_rows(&fs::read_to_string(&path)?)?;
    let cfg = match dir.join(CONFIG_FILE) {
        p if p.exists() => Some(SweepConfig::load(&p)?),
        _ => None,
    };
    let seed = cfg.as_ref().map_or(0, |c| c.analysis_seed);
    let mut report = analyze_rows(&rows, &AnalysisOptions::with_seed(seed))?;
    if let Some(c) = &cfg {
        report.excluded.extend(missing_points(c, &rows));
    }
    write_atomic(&dir.join("boundary.csv"), boundary_csv(&report.points).as_bytes())?;
    write_atomic(&dir.join("collapse.csv"), collapse_csv(&report.collapses).as_bytes())?;
    let pc = serde_json::to_string_pretty(&pc_json(report.boundary.as_ref()))? + "\n";
    write_atomic(&dir.join("pc.json"), pc.as_bytes())?;
    let full = serde_json::to_string_pretty(&report)? + "\n";
    write_atomic(&dir.join("analysis.json"), full.as_bytes())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dir: &Path, engine: Engine) -> SweepConfig {
        SweepConfig {
            schema_version: SCHEMA_VERSION,
            lattice: crate::lattice::LatticeKind::UnionJack,
            master_seed: 11,
            workers: 2,
            output_dir: dir.to_path_buf(),
            checkpoint_interval: 32,
            measure_every: 1,
            engine,
            wave_vectors: Default::default(),
            batch_size: 3,
            n_boot: 50,
            analysis_seed: 1,
            equilibration_sigma: 4.0,
            rows: vec![SweepRow {
                p: OneOrMany::One(0.05),
                sizes: vec![4, 6],
                samples: 5,
                b: 7,
                t_min: 1.5,
                t_max: 3.0,
                n_t: 4,
            }],
        }
    }

    #[test]
    fn worker_count_and_interruption_do_not_change_outputs() {
        for engine in [Engine::Packed, Engine::Scalar] {
            let a = tempfile::tempdir().unwrap();
            let b = tempfile::tempdir().unwrap();
            let ca = tiny(a.path(), engine);
            let cb = tiny(b.path(), engine);
            let full = run_sweep(&ca, &RunOptions { workers: 1, ..Default::default() }).unwrap();
            assert!(full.complete);
            assert_eq!(full.rows.len(), 8);

            let halted = run_sweep(
                &cb,
                &RunOptions {
                    workers: 3,
                    resume: false,
                    halt_at_sweep: Some(40),
                },
            )
            .unwrap();
            assert!(!halted.complete);
            assert!(!b.path().join(OBSERVABLES_FILE).exists());
            let resumed = run_sweep(&cb, &RunOptions { workers: 3, resume: true, ..Default::default() }).unwrap();
            assert!(resumed.complete);
            for f in [OBSERVABLES_FILE, EQUILIBRATION_FILE, EXCHANGE_FILE] {
                assert_eq!(
                    fs::read(a.path().join(f)).unwrap(),
                    fs::read(b.path().join(f)).unwrap(),
                    "{f} differs for {engine:?}"
                );
            }
        }
    }

    #[test]
    fn existing_results_need_resume() {
        let d = tempfile::tempdir().unwrap();
        let c = tiny(d.path(), Engine::Packed);
        run_sweep(&c, &RunOptions::default()).unwrap();
        assert!(run_sweep(&c, &RunOptions::default()).is_err());
        let mut other = c.clone();
        other.master_seed = 12;
        assert!(matches!(
            run_sweep(&other, &RunOptions { resume: true, ..Default::default() }),
            Err(Error::Integrity(_))
        ));
        // a finished sweep resumes from its final checkpoints
        let again = run_sweep(&c, &RunOptions { resume: true, ..Default::default() }).unwrap();
        assert_eq!(
            write_rows(&again.rows),
            fs::read_to_string(d.path().join(OBSERVABLES_FILE)).unwrap()
        );
    }

    #[test]
    fn analyzing_an_empty_directory_fails() {
        let d = tempfile::tempdir().unwrap();
        assert!(analyze_dir(d.path()).is_err());
    }
}
