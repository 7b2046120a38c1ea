use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use tribody::lattice::LatticeKind;
use tribody::observables::write_rows;
use tribody::oracle::exact_rows;
use tribody::sweep::{analyze_dir, run_sweep, RunOptions, SweepConfig};

/// Parallel-tempering simulations of the random three-body Ising model.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LatticeArg {
    /// Union Jack
    Uj,
    /// Triangular
    Tr,
}

impl From<LatticeArg> for LatticeKind {
    fn from(l: LatticeArg) -> Self {
        match l {
            LatticeArg::Uj => LatticeKind::UnionJack,
            LatticeArg::Tr => LatticeKind::Triangular,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run every point of a sweep configuration.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Continue from the checkpoints in the output directory.
        #[arg(long)]
        resume: bool,
        /// Worker threads, overriding the configuration.
        #[arg(long, env = "TRIBODY_WORKERS")]
        workers: Option<usize>,
    },
    /// Extract crossings, the phase boundary and p_c from a results directory.
    Analyze { dir: PathBuf },
    /// Exact disorder averages on a tiny lattice, in the observables CSV schema.
    Oracle {
        #[arg(long, value_enum, default_value = "uj")]
        lattice: LatticeArg,
        #[arg(long = "L", default_value_t = 2)]
        size: usize,
        #[arg(long)]
        p: f64,
        /// One or more temperatures, comma separated.
        #[arg(long = "T", value_delimiter = ',', required = true)]
        temperatures: Vec<f64>,
        /// Write here instead of standard output.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check a configuration and print the plan with its estimated cost.
    ValidateConfig { file: PathBuf },
}

fn load(path: &PathBuf) -> Result<SweepConfig> {
    let cfg = SweepConfig::load(path).with_context(|| format!("reading {}", path.display()))?;
    cfg.validate().with_context(|| format!("validating {}", path.display()))?;
    Ok(cfg)
}

fn print_estimate(cfg: &SweepConfig) {
    let est = cfg.estimate_cost();
    println!(
        "{} points, {:.3e} spin updates, about {:.1} core-hours",
        cfg.plan().len(),
        est.spin_updates,
        est.core_hours
    );
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate { config, resume, workers } => {
            let cfg = load(&config)?;
            print_estimate(&cfg);
            let opts = RunOptions {
                workers: workers.unwrap_or(0),
                resume,
                halt_at_sweep: None,
            };
            let outcome = run_sweep(&cfg, &opts)?;
            println!("wrote {} rows to {}", outcome.rows.len(), cfg.output_dir.display());
            if !outcome.failed_points.is_empty() {
                for (p, l) in &outcome.failed_points {
                    eprintln!("equilibration check failed at p = {p}, L = {l}");
                }
                return Ok(ExitCode::from(2));
            }
        }
        Command::Analyze { dir } => {
            let report = analyze_dir(&dir).with_context(|| format!("analyzing {}", dir.display()))?;
            for b in &report.points {
                println!("p = {:<8} T_c = {:.5} +- {:.5} ({})", b.p, b.tc, b.tc_err, b.status.as_str());
            }
            if let Some(b) = &report.boundary {
                let pc = b.p_c;
                println!(
                    "p_c = {:.4} (+- {:.4}, bracket [{}, {}], {:?})",
                    pc.p_c, pc.err, pc.bracket.0, pc.bracket.1, pc.method
                );
            }
            for c in &report.collapses {
                println!(
                    "collapse at p = {}: T_c = {:.5} +- {:.5}, nu = {:.3} +- {:.3}",
                    c.p, c.result.tc, c.result.tc_err, c.result.nu, c.result.nu_err
                );
            }
            for line in report.excluded.iter().chain(&report.warnings) {
                eprintln!("{line}");
            }
        }
        Command::Oracle {
            lattice,
            size,
            p,
            temperatures,
            output,
        } => {
            let lat = LatticeKind::from(lattice).build(size)?;
            let text = write_rows(&exact_rows(&lat, p, &temperatures)?);
            match output {
                Some(path) => std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?,
                None => std::io::stdout().write_all(text.as_bytes())?,
            }
        }
        Command::ValidateConfig { file } => {
            let cfg = load(&file)?;
            for pt in cfg.plan() {
                println!(
                    "p = {:<6} L = {:<3} samples = {:<6} sweeps = 2^{} temperatures = {}",
                    pt.p,
                    pt.size,
                    pt.samples,
                    pt.n_sweeps.trailing_zeros(),
                    pt.temperatures.len()
                );
            }
            print_estimate(&cfg);
            if cfg.plan().is_empty() {
                bail!("the configuration has no points");
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
