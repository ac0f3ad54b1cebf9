//! `cdntrace` — subcommand front end for the log-analytics pipeline:
//! clean, classify, enrich, report, plus the cache simulator and the
//! workload generator.
//!
//! Conventions: machine-readable summaries go to stdout, human diagnostics
//! to stderr. Exit code 0 on success, 1 on input errors, 2 on config
//! errors. Inputs ending in `.gz` are decompressed transparently.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod lineio;
mod recordio;

/// Error classified for the exit-code contract.
#[derive(Debug)]
pub enum CliError {
    /// Bad or inconsistent configuration: exit 2.
    Config(anyhow::Error),
    /// Unreadable, missing, or malformed input: exit 1.
    Input(anyhow::Error),
}

pub type CmdResult = Result<(), CliError>;

pub trait ErrorClass<T> {
    fn or_config(self) -> Result<T, CliError>;
    fn or_input(self) -> Result<T, CliError>;
}

impl<T, E: Into<anyhow::Error>> ErrorClass<T> for Result<T, E> {
    fn or_config(self) -> Result<T, CliError> {
        self.map_err(|e| CliError::Config(e.into()))
    }

    fn or_input(self) -> Result<T, CliError> {
        self.map_err(|e| CliError::Input(e.into()))
    }
}

#[derive(Parser)]
#[command(name = "cdntrace", version, about = "CDN access-log analytics and cache simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct CommonArgs {
    /// JSON config file; omitted sections use defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, short, default_value = "out")]
    out: PathBuf,
    /// Seed for anything random; overrides the config value.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for file-level parallelism. Outputs do not depend on
    /// the thread count.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Validate raw log lines, reject malformed ones, and write the
    /// canonical log plus rejection statistics.
    Clean {
        #[command(flatten)]
        common: CommonArgs,
        /// Input log files (`.gz` accepted).
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Label records with service and packaging classes.
    Classify {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Join records with ISP/location data through the persistent geo
    /// cache.
    Enrich {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// On-disk geo cache file; created when missing, updated on exit.
        #[arg(long)]
        cache: PathBuf,
        /// Offline CIDR resolver table (cidr,isp,province,country).
        /// Without it the HTTP resolver from the config is used.
        #[arg(long)]
        geo_table: Option<PathBuf>,
        /// Synonym table (variant,canonical).
        #[arg(long)]
        synonyms: Option<PathBuf>,
    },
    /// Compute hit-rate, latency, time-series, MIME, and size reports.
    Report {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Input format: `log` (raw or cleaned lines) or `classified`
        /// (output of the classify subcommand).
        #[arg(long, default_value = "log")]
        input_format: String,
        /// Grouping keys: comma-separated subset of
        /// all,service,isp,province,hour.
        #[arg(long, default_value = "all,service,hour")]
        by: String,
        /// Report selection: comma-separated subset of
        /// hit-rates,latency,time-series,mime,sizes.
        #[arg(long, default_value = "hit-rates,latency,time-series,mime,sizes")]
        reports: String,
        /// Geo cache file for isp/province grouping (cache-only, no
        /// resolver calls).
        #[arg(long)]
        geo_cache: Option<PathBuf>,
        /// Also write per-figure CSVs under `plots/`.
        #[arg(long)]
        plot_data: bool,
        /// Count `-` records as system-level hits.
        #[arg(long)]
        include_local: bool,
    },
    /// Replay a trace through the two-layer cache hierarchy.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Event CSV (from `generate`) or a log file.
        input: PathBuf,
        /// Input format: `events`, `log`, or `auto` (by extension).
        #[arg(long, default_value = "auto")]
        input_format: String,
        /// Stable-sort events by time instead of rejecting out-of-order
        /// input.
        #[arg(long)]
        sort: bool,
        /// Re-check cache capacity invariants after every event.
        #[arg(long)]
        verify: bool,
        /// UTC offset (minutes) for timestamps in the simulated log when
        /// replaying event files.
        #[arg(long, default_value_t = 420)]
        log_offset_min: i32,
    },
    /// Produce a synthetic trace plus its ground-truth ledger.
    Generate {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn run() -> CmdResult {
    let cli = Cli::parse();
    match cli.command {
        Command::Clean { common, inputs } => commands::clean(&common, &inputs),
        Command::Classify { common, inputs } => commands::classify(&common, &inputs),
        Command::Enrich {
            common,
            inputs,
            cache,
            geo_table,
            synonyms,
        } => commands::enrich(&common, &inputs, &cache, geo_table.as_deref(), synonyms.as_deref()),
        Command::Report {
            common,
            inputs,
            input_format,
            by,
            reports,
            geo_cache,
            plot_data,
            include_local,
        } => commands::report(
            &common,
            &inputs,
            &input_format,
            &by,
            &reports,
            geo_cache.as_deref(),
            plot_data,
            include_local,
        ),
        Command::Simulate {
            common,
            input,
            input_format,
            sort,
            verify,
            log_offset_min,
        } => commands::simulate(&common, &input, &input_format, sort, verify, log_offset_min),
        Command::Generate { common } => commands::generate(&common),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Input(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
        Err(CliError::Config(err)) => {
            eprintln!("config error: {err:#}");
            ExitCode::from(2)
        }
    }
}
