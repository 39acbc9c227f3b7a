//! Command-line front end for the spde-lab experiments: resolves a config,
//! runs one experiment on a sized thread pool and writes a CSV whose
//! `#`-prefixed header records the resolved config, its hash, the crate
//! versions and the seeds.

pub mod config;
pub mod error;
pub mod experiments;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Parser;

use crate::config::{resolve, ConfigFile, Experiment, Overrides, ResolvedConfig, SeedRange};
use crate::error::CliError;
use crate::experiments::Report;

pub const THREADS_ENV: &str = "SPDE_LAB_THREADS";

#[derive(Debug, Clone, Parser)]
#[command(
    name = "spde-lab",
    version,
    about = "Run a named spde-lab experiment and write its CSV"
)]
pub struct Args {
    /// TOML config file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Base seed; keeps the configured seed count.
    #[arg(long, value_name = "N", conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Half-open seed range N..M.
    #[arg(long, value_name = "N..M")]
    pub seeds: Option<SeedRange>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads; falls back to SPDE_LAB_THREADS.
    #[arg(long, value_name = "K")]
    pub threads: Option<usize>,
    /// Experiment name, overriding the config.
    #[arg(long, value_name = "NAME")]
    pub experiment: Option<Experiment>,
}

/// Outcome of a run that got far enough to write output.
#[derive(Debug)]
pub struct RunOutput {
    pub csv: PathBuf,
    pub error: Option<CliError>,
}

pub fn load_config(args: &Args) -> Result<ResolvedConfig, CliError> {
    let file = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            ConfigFile::parse(&text).map_err(|e| match e {
                CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
                other => other,
            })?
        }
        None => ConfigFile::default(),
    };
    let env_threads =
        match std::env::var(THREADS_ENV) {
            Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| {
                CliError::Config(format!("{THREADS_ENV}={v} is not a thread count"))
            })?),
            Err(_) => None,
        };
    let overrides = Overrides {
        experiment: args.experiment,
        seed: args.seed,
        seeds: args.seeds,
        out: args.out.clone(),
        threads: args.threads,
    };
    let mut cfg = resolve(file, overrides)?;
    if args.threads.is_none() && cfg.threads.is_none() {
        cfg.threads = env_threads;
    }
    if cfg.threads == Some(0) {
        return Err(CliError::Config("thread count must be at least 1".into()));
    }
    Ok(cfg)
}

fn header(cfg: &ResolvedConfig) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "# spde-lab-cli {} / spde-lab {}\n",
        env!("CARGO_PKG_VERSION"),
        spde_lab::VERSION
    ));
    out.push_str(&format!("# experiment: {}\n", cfg.experiment));
    out.push_str(&format!("# config-sha256: {}\n", cfg.hash()));
    let seeds = cfg
        .seeds
        .as_ref()
        .map(|s| s.describe())
        .unwrap_or_else(|| "none".into());
    out.push_str(&format!("# seeds: {seeds}\n"));
    out.push_str("# config:\n");
    for line in cfg.to_toml().lines() {
        out.push_str(&format!("#   {line}\n"));
    }
    out
}

fn write_report(
    dir: &Path,
    cfg: &ResolvedConfig,
    report: &Report,
    error: Option<&CliError>,
) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}.csv", cfg.experiment));
    let mut file = fs::File::create(&path)?;
    file.write_all(header(cfg).as_bytes())?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(&report.columns)?;
    for row in &report.rows {
        w.write_record(row)?;
    }
    w.flush()?;
    let mut file = w.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
    for (key, value) in &report.summary {
        writeln!(file, "# {key}: {value}")?;
    }
    if let Some(e) = error {
        writeln!(file, "# error: {e}")?;
    }
    for (name, text) in &report.files {
        fs::write(dir.join(name), text)?;
    }
    Ok(path)
}

/// Run the configured experiment and write its artifacts. Numerical failures
/// are returned inside [`RunOutput`] after the partial CSV is flushed.
pub fn execute(cfg: &ResolvedConfig) -> Result<RunOutput, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(k) = cfg.threads {
        builder = builder.num_threads(k);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let mut report = Report::default();
    let outcome = pool.install(|| experiments::run(cfg, &mut report));
    let error = outcome.err().map(CliError::from);
    let csv = write_report(&cfg.out, cfg, &report, error.as_ref())?;
    Ok(RunOutput { csv, error })
}

/// Full command-line entry point; returns the process exit code.
pub fn main_with(args: Args) -> u8 {
    let cfg = match load_config(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("spde-lab: {e}");
            return e.exit_code();
        }
    };
    match execute(&cfg) {
        Ok(RunOutput { csv, error: None }) => {
            println!("{}", csv.display());
            0
        }
        Ok(RunOutput {
            csv,
            error: Some(e),
        }) => {
            eprintln!("spde-lab: {e}; partial results in {}", csv.display());
            e.exit_code()
        }
        Err(e) => {
            eprintln!("spde-lab: {e}");
            e.exit_code()
        }
    }
}
