//! Run configuration: chain presets, the TOML config file, and command-line
//! overrides, resolved in that order.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::chain::MiningProfile;
use crate::metrics::SummaryOptions;
use crate::netmodel::{NetModel, RegionDataset, UniformOverride};
use crate::pns::{ProposedParams, SelectionPolicy};
use crate::sim::SimSetup;

/// Chain parameter presets: node count, mean block interval, block size.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Bitcoin,
    Litecoin,
    Dogecoin,
    Custom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChainParams {
    pub nodes: usize,
    pub interval_ms: u64,
    pub block_size: u64,
}

impl Preset {
    pub fn params(self) -> Option<ChainParams> {
        match self {
            Preset::Bitcoin => Some(ChainParams {
                nodes: 6000,
                interval_ms: 10 * 60 * 1000,
                block_size: 534 * 1024,
            }),
            Preset::Litecoin => Some(ChainParams {
                nodes: 800,
                interval_ms: 150 * 1000,
                // 6.11 KiB
                block_size: 6257,
            }),
            Preset::Dogecoin => Some(ChainParams {
                nodes: 600,
                interval_ms: 60 * 1000,
                block_size: 8 * 1024,
            }),
            Preset::Custom => None,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Preset::Bitcoin => "bitcoin",
            Preset::Litecoin => "litecoin",
            Preset::Dogecoin => "dogecoin",
            Preset::Custom => "custom",
        };
        f.write_str(name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Proposed,
    #[value(alias = "fixed")]
    #[serde(alias = "fixed")]
    FixedRandom,
}

/// Parse `latency_ms,bandwidth_bps`; the bandwidth may be `inf`.
pub fn parse_uniform_network(text: &str) -> Result<UniformOverride, String> {
    let (latency, bandwidth) = text
        .split_once(',')
        .ok_or_else(|| format!("expected <latency_ms,bandwidth_bps>, got {text:?}"))?;
    let latency_ms = latency
        .trim()
        .parse::<u64>()
        .map_err(|e| format!("uniform latency {latency:?}: {e}"))?;
    let bandwidth_bps = match bandwidth.trim() {
        "inf" | "infinity" => f64::INFINITY,
        b => b.parse::<f64>().map_err(|e| format!("uniform bandwidth {b:?}: {e}"))?,
    };
    if bandwidth_bps.is_nan() || bandwidth_bps <= 0.0 {
        return Err(format!("uniform bandwidth must be positive, got {bandwidth_bps}"));
    }
    Ok(UniformOverride {
        latency_ms,
        bandwidth_bps,
    })
}

/// Parse `uniform` or `pareto:<shape>`.
pub fn parse_mining(text: &str) -> Result<MiningProfile, String> {
    match text.trim() {
        "uniform" => Ok(MiningProfile::Uniform),
        other => match other.strip_prefix("pareto:") {
            Some(shape) => {
                let shape = shape
                    .parse::<f64>()
                    .map_err(|e| format!("pareto shape {shape:?}: {e}"))?;
                if shape.is_nan() || shape <= 0.0 {
                    return Err(format!("pareto shape must be positive, got {shape}"));
                }
                Ok(MiningProfile::Pareto { shape })
            }
            None => Err(format!("unknown mining profile {other:?}; use uniform or pareto:<shape>")),
        },
    }
}

/// One source of settings. Unset fields defer to earlier layers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigLayer {
    pub preset: Option<Preset>,
    pub nodes: Option<usize>,
    pub interval_ms: Option<u64>,
    pub block_size: Option<u64>,
    pub blocks: Option<u64>,
    pub seed: Option<u64>,
    pub policy: Option<PolicyKind>,
    pub p: Option<f64>,
    pub k: Option<usize>,
    pub reselect_every: Option<u32>,
    pub outbound: Option<usize>,
    pub inbound_cap: Option<usize>,
    pub region_dataset: Option<PathBuf>,
    pub uniform_network: Option<UniformOverride>,
    pub mining: Option<MiningProfile>,
    pub window: Option<usize>,
    pub bin_width_ms: Option<u64>,
    pub warmup_blocks: Option<usize>,
}

impl ConfigLayer {
    fn overlay(mut self, top: &ConfigLayer) -> ConfigLayer {
        macro_rules! take {
            ($($field:ident),*) => {
                $(if top.$field.is_some() { self.$field = top.$field.clone(); })*
            };
        }
        take!(
            preset, nodes, interval_ms, block_size, blocks, seed, policy, p, k, reselect_every,
            outbound, inbound_cap, region_dataset, uniform_network, mining, window, bin_width_ms,
            warmup_blocks
        );
        self
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    run: RunSection,
    #[serde(default)]
    netmodel: NetSection,
    #[serde(default)]
    chain: ChainSection,
    #[serde(default)]
    pns: PnsSection,
    #[serde(default)]
    metrics: MetricsSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    preset: Option<Preset>,
    nodes: Option<usize>,
    interval_ms: Option<u64>,
    block_size: Option<u64>,
    blocks: Option<u64>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetSection {
    dataset: Option<PathBuf>,
    uniform: Option<UniformSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct UniformSection {
    latency_ms: u64,
    /// Bits per second, or the string "inf".
    bandwidth_bps: toml::Value,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainSection {
    mining: Option<String>,
    powers: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PnsSection {
    policy: Option<PolicyKind>,
    p: Option<f64>,
    k: Option<usize>,
    reselect_every: Option<u32>,
    outbound: Option<usize>,
    inbound_cap: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetricsSection {
    window: Option<usize>,
    bin_width_ms: Option<u64>,
    warmup_blocks: Option<usize>,
}

impl ConfigLayer {
    /// Parse a TOML config file. A relative dataset path is taken relative
    /// to the file's directory.
    pub fn from_toml(text: &str, base_dir: Option<&Path>) -> Result<ConfigLayer, CliError> {
        let file: FileConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let uniform_network = match file.netmodel.uniform {
            Some(u) => {
                let bw = match &u.bandwidth_bps {
                    toml::Value::Integer(i) => i.to_string(),
                    toml::Value::Float(f) => f.to_string(),
                    toml::Value::String(s) => s.clone(),
                    other => return Err(CliError::Config(format!("uniform bandwidth_bps: unexpected {other}"))),
                };
                Some(parse_uniform_network(&format!("{},{bw}", u.latency_ms)).map_err(CliError::Config)?)
            }
            None => None,
        };
        let mining = match (file.chain.mining, file.chain.powers) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config("[chain] sets both mining and powers".into()));
            }
            (Some(m), None) => Some(parse_mining(&m).map_err(CliError::Config)?),
            (None, Some(powers)) => Some(MiningProfile::Explicit { powers }),
            (None, None) => None,
        };
        let region_dataset = file.netmodel.dataset.map(|p| match base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p,
        });
        Ok(ConfigLayer {
            preset: file.run.preset,
            nodes: file.run.nodes,
            interval_ms: file.run.interval_ms,
            block_size: file.run.block_size,
            blocks: file.run.blocks,
            seed: file.run.seed,
            policy: file.pns.policy,
            p: file.pns.p,
            k: file.pns.k,
            reselect_every: file.pns.reselect_every,
            outbound: file.pns.outbound,
            inbound_cap: file.pns.inbound_cap,
            region_dataset,
            uniform_network,
            mining,
            window: file.metrics.window,
            bin_width_ms: file.metrics.bin_width_ms,
            warmup_blocks: file.metrics.warmup_blocks,
        })
    }

    pub fn from_file(path: &Path) -> Result<ConfigLayer, CliError> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path.parent())
    }
}

/// A fully resolved run configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub preset: Preset,
    pub nodes: usize,
    pub interval_ms: u64,
    pub block_size: u64,
    pub blocks: u64,
    pub seed: u64,
    pub policy: SelectionPolicy,
    /// `None` selects the shipped default dataset.
    pub region_dataset: Option<PathBuf>,
    pub uniform_network: Option<UniformOverride>,
    pub mining: MiningProfile,
    pub summary: SummaryOptions,
}

pub const DEFAULT_BLOCKS: u64 = 5000;
pub const DEFAULT_SEED: u64 = 42;

impl RunConfig {
    pub fn preset(preset: Preset) -> RunConfig {
        Self::resolve(&[ConfigLayer {
            preset: Some(preset),
            ..Default::default()
        }])
        .expect("presets resolve")
    }

    /// Merge layers (later wins) over the preset defaults.
    pub fn resolve(layers: &[ConfigLayer]) -> Result<RunConfig, CliError> {
        let merged = layers
            .iter()
            .fold(ConfigLayer::default(), |acc, layer| acc.overlay(layer));
        let preset = merged.preset.unwrap_or_default();
        let base = preset.params();
        let need = |field: &str| {
            CliError::Config(format!("preset custom requires {field} to be set"))
        };
        let nodes = merged.nodes.or(base.map(|b| b.nodes)).ok_or_else(|| need("nodes"))?;
        let interval_ms = merged
            .interval_ms
            .or(base.map(|b| b.interval_ms))
            .ok_or_else(|| need("interval_ms"))?;
        let block_size = merged
            .block_size
            .or(base.map(|b| b.block_size))
            .ok_or_else(|| need("block_size"))?;
        if nodes == 0 || interval_ms == 0 || block_size == 0 {
            return Err(CliError::Config(
                "nodes, interval_ms and block_size must be positive".into(),
            ));
        }
        let policy = match merged.policy.unwrap_or(PolicyKind::Proposed) {
            PolicyKind::Proposed => {
                let d = ProposedParams::default();
                SelectionPolicy::Proposed(ProposedParams {
                    p: merged.p.unwrap_or(d.p),
                    k: merged.k.unwrap_or(d.k),
                    reselect_every: merged.reselect_every.unwrap_or(d.reselect_every),
                    outbound_slots: merged.outbound.unwrap_or(d.outbound_slots),
                    inbound_cap: merged.inbound_cap.unwrap_or(d.inbound_cap),
                })
            }
            PolicyKind::FixedRandom => {
                let d = SelectionPolicy::fixed_random_default();
                SelectionPolicy::FixedRandom {
                    outbound_slots: merged.outbound.unwrap_or(d.outbound_slots()),
                    inbound_cap: merged.inbound_cap.unwrap_or(d.inbound_cap()),
                }
            }
        };
        policy.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let summary = {
            let d = SummaryOptions::default();
            SummaryOptions {
                window: merged.window.unwrap_or(d.window),
                bin_width_ms: merged.bin_width_ms.unwrap_or(d.bin_width_ms),
                warmup_blocks: merged.warmup_blocks.unwrap_or(d.warmup_blocks),
            }
        };
        if summary.window == 0 || summary.bin_width_ms == 0 {
            return Err(CliError::Config("window and bin width must be positive".into()));
        }
        Ok(RunConfig {
            preset,
            nodes,
            interval_ms,
            block_size,
            blocks: merged.blocks.unwrap_or(DEFAULT_BLOCKS),
            seed: merged.seed.unwrap_or(DEFAULT_SEED),
            policy,
            region_dataset: merged.region_dataset,
            uniform_network: merged.uniform_network,
            mining: merged.mining.unwrap_or(MiningProfile::Uniform),
            summary,
        })
    }

    pub fn dataset(&self) -> Result<RegionDataset, CliError> {
        match &self.region_dataset {
            Some(path) => Ok(RegionDataset::load(path)?),
            None => Ok(RegionDataset::builtin_default()),
        }
    }

    pub fn to_setup(&self) -> Result<SimSetup, CliError> {
        Ok(SimSetup {
            nodes: self.nodes,
            mean_interval_ms: self.interval_ms as f64,
            block_size: self.block_size,
            blocks: self.blocks,
            seed: self.seed,
            net: NetModel::new(self.dataset()?, self.uniform_network),
            policy: self.policy,
            mining: self.mining.clone(),
        })
    }

    /// The same run with the proximity policy at weight `p` and `k` random
    /// slots; other proposed parameters carry over.
    pub fn with_proposed(&self, p: f64, k: usize) -> RunConfig {
        let base = match self.policy {
            SelectionPolicy::Proposed(params) => params,
            SelectionPolicy::FixedRandom { outbound_slots, .. } => ProposedParams {
                outbound_slots,
                ..ProposedParams::default()
            },
        };
        RunConfig {
            policy: SelectionPolicy::Proposed(ProposedParams { p, k, ..base }),
            ..self.clone()
        }
    }

    /// The same run under the fixed random baseline.
    pub fn with_fixed_random(&self) -> RunConfig {
        RunConfig {
            policy: SelectionPolicy::FixedRandom {
                outbound_slots: self.policy.outbound_slots(),
                inbound_cap: SelectionPolicy::fixed_random_default().inbound_cap(),
            },
            ..self.clone()
        }
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        <Preset as clap::ValueEnum>::from_str(s, true)
    }
}
