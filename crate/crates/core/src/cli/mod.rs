//! Command-line front end: `run`, `sweep` and `compare`.

pub mod config;
pub mod output;
pub mod runner;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::chain::MiningProfile;
use crate::netmodel::{DatasetError, UniformOverride};
use crate::sim::SimError;
use config::{parse_mining, parse_uniform_network, ConfigLayer, PolicyKind, Preset, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("region dataset: {0}")]
    Dataset(#[from] DatasetError),
    #[error("simulation: {0}")]
    Sim(#[from] SimError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("sweep cell P={p} K={k} seed={seed}: {source}")]
    Cell {
        p: f64,
        k: usize,
        seed: u64,
        source: Box<CliError>,
    },
}

#[derive(Debug, Parser)]
#[command(name = "pnsim", version, about = "Block propagation simulator with proximity neighbor selection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one simulation and write its metrics.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Also write a dispatch trace to <out>/trace.tsv.
        #[arg(long)]
        trace: bool,
    },
    /// Grid over the proximity weight and random slot count.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5")]
        p_list: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        k_list: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
    },
    /// Paired run of the proximity policy against the fixed random baseline.
    Compare {
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long, value_enum)]
    pub policy: Option<PolicyKind>,
    /// Weight of the newest sample in the latency score.
    #[arg(long)]
    pub p: Option<f64>,
    /// Outbound slots refilled at random on each reselection.
    #[arg(long)]
    pub k: Option<usize>,
    /// Blocks received between reselections.
    #[arg(long)]
    pub reselect_every: Option<u32>,
    #[arg(long)]
    pub outbound: Option<usize>,
    #[arg(long)]
    pub inbound_cap: Option<usize>,
    #[arg(long)]
    pub blocks: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub interval_ms: Option<u64>,
    #[arg(long)]
    pub block_size: Option<u64>,
    /// Region dataset TOML; defaults to the shipped six-region set.
    #[arg(long)]
    pub region_dataset: Option<PathBuf>,
    /// Replace regional links with one latency and bandwidth (`inf` allowed).
    #[arg(long, value_name = "LATENCY_MS,BW_BPS", value_parser = parse_uniform_network)]
    pub uniform_network: Option<UniformOverride>,
    /// Hash power profile: `uniform` or `pareto:<shape>`.
    #[arg(long, value_parser = parse_mining)]
    pub mining: Option<MiningProfile>,
    /// Shorthand for `--mining uniform`.
    #[arg(long, conflicts_with = "mining")]
    pub uniform_mining: bool,
    /// Blocks per rolling-average window.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub bin_width_ms: Option<u64>,
    /// Leading blocks left out of the mean and histogram.
    #[arg(long)]
    pub warmup_blocks: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

impl CommonArgs {
    pub fn layer(&self) -> ConfigLayer {
        ConfigLayer {
            preset: self.preset,
            nodes: self.nodes,
            interval_ms: self.interval_ms,
            block_size: self.block_size,
            blocks: self.blocks,
            seed: self.seed,
            policy: self.policy,
            p: self.p,
            k: self.k,
            reselect_every: self.reselect_every,
            outbound: self.outbound,
            inbound_cap: self.inbound_cap,
            region_dataset: self.region_dataset.clone(),
            uniform_network: self.uniform_network,
            mining: if self.uniform_mining {
                Some(MiningProfile::Uniform)
            } else {
                self.mining.clone()
            },
            window: self.window,
            bin_width_ms: self.bin_width_ms,
            warmup_blocks: self.warmup_blocks,
        }
    }

    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut layers = Vec::new();
        if let Some(path) = &self.config {
            layers.push(ConfigLayer::from_file(path)?);
        }
        layers.push(self.layer());
        RunConfig::resolve(&layers)
    }
}

/// Execute a parsed command line, returning a short report for stdout.
pub fn execute(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Run { common, trace } => {
            let cfg = common.resolve()?;
            let summary = runner::run_to_dir(&cfg, &common.out, trace)?;
            Ok(format!(
                "{} blocks, mean of medians {}, forks {}, written to {}",
                summary.generated_blocks,
                fmt_ms(summary.mean_of_medians_ms),
                summary.forks.fork_count,
                common.out.display()
            ))
        }
        Command::Sweep {
            common,
            p_list,
            k_list,
            seeds,
        } => {
            let cfg = common.resolve()?;
            let cells = runner::sweep_to_dir(&cfg, &p_list, &k_list, &seeds, &common.out)?;
            let mut report = String::from("P\tK\tmean_median_ms\tstd_ms\n");
            for row in runner::aggregate(&cells) {
                report.push_str(&format!(
                    "{}\t{}\t{}\t{}\n",
                    row.p,
                    row.k,
                    fmt_ms(row.mean_ms),
                    fmt_ms(row.std_ms)
                ));
            }
            Ok(report)
        }
        Command::Compare { common } => {
            let cfg = common.resolve()?;
            let outcome = runner::compare_to_dir(&cfg, &common.out)?;
            Ok(format!(
                "proposed {}, fixed {}, improvement {}",
                fmt_ms(outcome.proposed.mean_of_medians_ms),
                fmt_ms(outcome.fixed.mean_of_medians_ms),
                outcome
                    .improvement
                    .map(|g| format!("{:.2}%", g * 100.0))
                    .unwrap_or_else(|| "undefined".into())
            ))
        }
    }
}

fn fmt_ms(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.1} ms")).unwrap_or_else(|| "undefined".into())
}
