//! `zo-bilevel` command-line driver.
//!
//! Exit codes: 0 success, 1 a verification check failed (or an I/O error),
//! 2 usage or configuration error, 3 divergence.

pub mod config;
pub mod demo;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use zo_bilevel::output::{bundles_csv, fits_csv, keyed_run_records_csv, rates_csv, run_record_csv, table_csv, write_atomic};
use zo_bilevel::rng::child_seed;
use zo_bilevel::stats::Moments;
use zo_bilevel::verify::{self, CheckReport, RatesConfig, RatesOutcome};
use zo_bilevel::{Error, Regime, RunRecord};

use config::{ConfigError, ExperimentConfig, Loaded};

pub const SEED_ENV: &str = "ZO_BILEVEL_SEED";

#[derive(Debug, Parser)]
#[command(name = "zo-bilevel", version, about = "Zeroth-order stochastic bilevel optimization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment config (TOML, or JSON by extension).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Comma-separated seeds; the first is the master seed of `verify`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Stein,
    Smoothing,
    Moments,
    Szhia,
    Inner,
    Hypergrad,
    Rates,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepTarget {
    Run,
    SzhiaDemo,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run statistical verification suites.
    Verify {
        suite: Suite,
        /// Rates only: one regime instead of all three.
        #[arg(long, value_parser = parse_regime)]
        regime: Option<Regime>,
        /// Rates only: upper-level dimension.
        #[arg(long = "n")]
        n: Option<usize>,
        /// Rates only: lower-level dimension.
        #[arg(long = "m")]
        m: Option<usize>,
        /// Rates only: outer-iteration grid.
        #[arg(long, value_delimiter = ',')]
        grid: Vec<usize>,
    },
    /// Run the bilevel solver once per seed.
    Run,
    /// One run (or demo) per axis value, merged into a long-format CSV.
    Sweep {
        #[arg(value_enum, default_value = "run")]
        target: SweepTarget,
        /// Config key to vary (N, gamma, alpha, sigma, n, m, ...) or, for the
        /// demo, gamma, iterations or batch.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[command(flatten)]
        demo: demo::DemoArgs,
    },
    /// Hessian-inverse SGD on a closed-form fixture: per-step error trace.
    SzhiaDemo {
        #[command(flatten)]
        demo: demo::DemoArgs,
    },
}

fn parse_regime(s: &str) -> Result<Regime, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// A failure mapped to its exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Config(ConfigError),
    Divergence(String),
    Other(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) | Failure::Config(_) => 2,
            Failure::Divergence(_) => 3,
            Failure::Other(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Config(e) => write!(f, "config error: {e}"),
            Failure::Divergence(m) => write!(f, "divergence: {m}"),
            Failure::Other(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Divergence(m) => Failure::Divergence(m),
            Error::Config(_) | Error::InvalidParameter(_) | Error::Dimension { .. } => Failure::Usage(e.to_string()),
            e => Failure::Other(e.to_string()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

/// Parse arguments, run, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(all_passed) => i32::from(!all_passed),
        Err(f) => {
            eprintln!("{f}");
            f.code()
        }
    }
}

fn env_seed() -> Result<Option<u64>, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| Failure::Usage(format!("{SEED_ENV}='{v}' is not a 64-bit seed"))),
        Err(_) => Ok(None),
    }
}

/// `--seeds` first, then the environment.
fn master_seed(cli: &Cli) -> Result<Option<u64>, Failure> {
    match cli.seeds.first() {
        Some(&s) => Ok(Some(s)),
        None => env_seed(),
    }
}

fn out_dir(cli: &Cli, config_out: Option<&Path>) -> PathBuf {
    cli.out.clone().or_else(|| config_out.map(Path::to_path_buf)).unwrap_or_else(|| PathBuf::from("zo-bilevel-out"))
}

/// `Ok(true)` iff every check that ran passed.
pub fn execute(cli: &Cli) -> Result<bool, Failure> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Failure::Other(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Verify { suite, regime, n, m, grid } => cmd_verify(cli, *suite, *regime, *n, *m, grid),
        Command::Run => cmd_run(cli),
        Command::Sweep { target: SweepTarget::Run, axis, values, .. } => cmd_sweep(cli, axis, values),
        Command::Sweep { target: SweepTarget::SzhiaDemo, axis, values, demo } => {
            demo::sweep(demo, axis, values, master_seed(cli)?, &out_dir(cli, None))
        }
        Command::SzhiaDemo { demo } => demo::run(demo, master_seed(cli)?, &out_dir(cli, None)),
    })
}

fn write(path: &Path, bytes: zo_bilevel::Result<Vec<u8>>) -> Result<(), Failure> {
    write_atomic(path, &bytes?)?;
    Ok(())
}

fn emit_report(out: &Path, file: &str, reports: &[&CheckReport]) -> Result<bool, Failure> {
    write(&out.join(format!("{file}.csv")), bundles_csv(reports))?;
    if reports.iter().any(|r| !r.fits.is_empty()) {
        write(&out.join(format!("{file}_fits.csv")), fits_csv(reports))?;
    }
    for r in reports {
        println!("{}", r.verdict());
    }
    Ok(reports.iter().all(|r| r.passed()))
}

fn cmd_verify(
    cli: &Cli,
    suite: Suite,
    regime: Option<Regime>,
    n: Option<usize>,
    m: Option<usize>,
    grid: &[usize],
) -> Result<bool, Failure> {
    let master = master_seed(cli)?;
    let seed_for = |default: u64, salt: u64| master.map_or(default, |s| child_seed(s, salt));
    let out = out_dir(cli, None);
    let want = |s: Suite| suite == s || suite == Suite::All;
    let mut ok = true;

    if want(Suite::Stein) {
        let r = verify::check_stein_suite(2_000_000, seed_for(1, 1))?;
        ok &= emit_report(&out, "stein", &[&r])?;
    }
    if want(Suite::Smoothing) {
        let mut est = verify::UnbiasednessConfig::default();
        est.seed = seed_for(est.seed, 2);
        let mut sb = verify::SmoothingBoundsConfig::default();
        sb.seed = seed_for(sb.seed, 3);
        let a = verify::check_unbiasedness(&est)?;
        let b = verify::check_smoothing_bounds(&sb)?;
        ok &= emit_report(&out, "smoothing", &[&a, &b])?;
    }
    if want(Suite::Moments) {
        let mut c = verify::MomentConfig::default();
        c.seed = seed_for(c.seed, 4);
        ok &= emit_report(&out, "moments", &[&verify::check_moment_bounds(&c)?])?;
    }
    if want(Suite::Szhia) {
        let mut c = verify::SzhiaCheckConfig::default();
        c.seed = seed_for(c.seed, 5);
        ok &= emit_report(&out, "szhia", &[&verify::check_szhia(&c)?])?;
    }
    if want(Suite::Inner) {
        let mut c = verify::InnerConfig::default();
        c.seed = seed_for(c.seed, 6);
        ok &= emit_report(&out, "inner", &[&verify::check_inner_sgd(&c)?])?;
    }
    if want(Suite::Hypergrad) {
        let mut c = verify::HypergradConfig::default();
        c.seed = seed_for(c.seed, 7);
        ok &= emit_report(&out, "hypergrad", &[&verify::check_hypergradient(&c)?])?;
    }
    if want(Suite::Rates) {
        let regimes = regime.map_or(Regime::ALL.to_vec(), |r| vec![r]);
        let mut outcomes: Vec<RatesOutcome> = Vec::new();
        for r in regimes {
            let mut c = RatesConfig::new(r);
            c.n = n.unwrap_or(c.n);
            c.m = m.unwrap_or(c.m);
            if !grid.is_empty() {
                c.outer = grid.to_vec();
            }
            if cli.seeds.len() > 1 {
                c.seeds = cli.seeds.clone();
            } else if let Some(s) = master {
                c.seeds = (0..c.seeds.len() as u64).map(|i| child_seed(s, i)).collect();
            }
            let o = verify::check_rates(&c)?;
            println!("{}", o.report().verdict());
            ok &= o.fit.pass;
            write(&out.join(format!("rates_{r}.csv")), rates_csv(&[&o]))?;
            outcomes.push(o);
        }
    }
    Ok(ok)
}

fn load_config(cli: &Cli) -> Result<Loaded, Failure> {
    let path = cli.config.as_ref().ok_or_else(|| Failure::Usage("--config PATH is required".into()))?;
    Ok(config::load(path)?)
}

fn run_seeds(cli: &Cli, cfg: &ExperimentConfig) -> Result<Vec<u64>, Failure> {
    if !cli.seeds.is_empty() {
        return Ok(cli.seeds.clone());
    }
    if let Some(s) = &cfg.seeds {
        return Ok(s.clone());
    }
    Ok(vec![env_seed()?.unwrap_or(0)])
}

fn run_all(resolved: &config::Resolved, seeds: &[u64]) -> Result<Vec<RunRecord>, Failure> {
    let runs: Vec<zo_bilevel::Result<RunRecord>> =
        seeds.par_iter().map(|&s| zo_bilevel::zdsba::run_zdsba(&resolved.problem, &resolved.run, s)).collect();
    runs.into_iter().map(|r| r.map_err(Failure::from)).collect()
}

fn summarize(resolved: &config::Resolved, records: &[RunRecord]) {
    let p = &resolved.problem;
    let line = |name: &str, vals: Vec<f64>| {
        let m: Moments = vals.into_iter().collect();
        println!("{name}: {:e} ± {:e} (mean ± std over {} seeds)", m.mean, m.variance().max(0.0).sqrt(), m.count);
    };
    if let Some(xs) = records.first().and_then(|r| r.x_star.clone()) {
        line("final dist_sq", records.iter().map(|r| (r.final_x() - &xs).norm_squared()).collect());
    }
    line("psi(x_hat)", records.iter().map(|r| p.psi(&r.x_hat)).collect());
    line("grad_norm_sq(x_R)", records.iter().map(|r| p.hypergradient(r.x_r().unwrap_or(&r.x0)).norm_squared()).collect());
}

fn cmd_run(cli: &Cli) -> Result<bool, Failure> {
    let loaded = load_config(cli)?;
    let resolved = loaded.resolve()?;
    let seeds = run_seeds(cli, &loaded.config)?;
    let out = out_dir(cli, loaded.config.out.as_deref());
    let records = run_all(&resolved, &seeds)?;
    for (&seed, rec) in seeds.iter().zip(&records) {
        write(&out.join(format!("run_seed{seed}.csv")), run_record_csv(rec))?;
        let replay = ExperimentConfig::replay(&resolved, seed);
        let json = serde_json::to_string_pretty(&replay).map_err(|e| Failure::Other(e.to_string()))? + "\n";
        write(&out.join(format!("run_seed{seed}.json")), Ok(json.into_bytes()))?;
    }
    println!(
        "{} run, N = {}, {} seed(s) -> {}",
        resolved.regime,
        resolved.run.schedule.outer_iterations,
        seeds.len(),
        out.display()
    );
    summarize(&resolved, &records);
    Ok(true)
}

fn cmd_sweep(cli: &Cli, axis: &str, values: &[String]) -> Result<bool, Failure> {
    let loaded = load_config(cli)?;
    let seeds = run_seeds(cli, &loaded.config)?;
    let out = out_dir(cli, loaded.config.out.as_deref());
    let mut runs: Vec<(String, u64, RunRecord)> = Vec::new();
    for v in values {
        let mut cfg = loaded.config.clone();
        cfg.set_axis(axis, v).map_err(Failure::Usage)?;
        let resolved = Loaded { config: cfg, ..loaded.clone() }.resolve()?;
        for (&s, rec) in seeds.iter().zip(run_all(&resolved, &seeds)?) {
            runs.push((v.clone(), s, rec));
        }
        println!("{axis} = {v}: {} seed(s) done", seeds.len());
    }
    let refs: Vec<(String, u64, &RunRecord)> = runs.iter().map(|(v, s, r)| (v.clone(), *s, r)).collect();
    write(&out.join("sweep.csv"), keyed_run_records_csv(axis, &refs))?;
    Ok(true)
}

/// Write a numeric table atomically.
pub(crate) fn write_table(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<(), Failure> {
    write(path, table_csv(header, rows))
}
