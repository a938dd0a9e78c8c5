//! Region placement and message delay.
//!
//! INV and GETDATA are latency-only control messages. A BLOCK pays the
//! link latency plus its serialization time over the bottleneck bandwidth
//! `min(upload[src], download[dst])`. There is no jitter, loss or queueing.

use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The dataset shipped in `presets/regions-default.toml`.
pub const DEFAULT_DATASET_TOML: &str = include_str!("../../../presets/regions-default.toml");

const WEIGHT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("reading region dataset {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing region dataset: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("region dataset has no regions")]
    Empty,
    #[error("{field} has {found} entries, expected {expected} (one per region)")]
    Dimension {
        field: &'static str,
        found: usize,
        expected: usize,
    },
    #[error("region weights sum to {0}, expected 1")]
    WeightSum(f64),
    #[error("{field} contains a non-positive or non-finite value")]
    NonPositive { field: &'static str },
    #[error("region weight must be finite and non-negative")]
    BadWeight,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RegionId(pub u8);

impl RegionId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionDataset {
    pub regions: Vec<String>,
    pub weights: Vec<f64>,
    pub latency_ms: Vec<Vec<u64>>,
    pub upload_bps: Vec<f64>,
    pub download_bps: Vec<f64>,
}

impl RegionDataset {
    pub fn builtin_default() -> Self {
        Self::from_toml_str(DEFAULT_DATASET_TOML).expect("shipped dataset is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, DatasetError> {
        let dataset: RegionDataset = toml::from_str(text)?;
        dataset.validate()?;
        Ok(dataset)
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let n = self.regions.len();
        if n == 0 {
            return Err(DatasetError::Empty);
        }
        if n > u8::MAX as usize {
            return Err(DatasetError::Dimension {
                field: "regions",
                found: n,
                expected: u8::MAX as usize,
            });
        }
        let check_len = |field, found| {
            if found == n {
                Ok(())
            } else {
                Err(DatasetError::Dimension {
                    field,
                    found,
                    expected: n,
                })
            }
        };
        check_len("weights", self.weights.len())?;
        check_len("latency_ms", self.latency_ms.len())?;
        for row in &self.latency_ms {
            check_len("latency_ms row", row.len())?;
        }
        check_len("upload_bps", self.upload_bps.len())?;
        check_len("download_bps", self.download_bps.len())?;

        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(DatasetError::BadWeight);
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(DatasetError::WeightSum(sum));
        }
        if self.latency_ms.iter().flatten().any(|&l| l == 0) {
            return Err(DatasetError::NonPositive { field: "latency_ms" });
        }
        let positive = |v: &[f64]| v.iter().all(|b| b.is_finite() && *b > 0.0);
        if !positive(&self.upload_bps) {
            return Err(DatasetError::NonPositive { field: "upload_bps" });
        }
        if !positive(&self.download_bps) {
            return Err(DatasetError::NonPositive {
                field: "download_bps",
            });
        }
        Ok(())
    }
}

/// Replace every pairwise latency and bandwidth with one constant.
/// `bandwidth_bps` may be `f64::INFINITY`, which makes block transfer free.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformOverride {
    pub latency_ms: u64,
    pub bandwidth_bps: f64,
}

/// Sample a region with probability equal to its weight.
pub fn assign_region<R: Rng + ?Sized>(rng: &mut R, dataset: &RegionDataset) -> RegionId {
    let dist = WeightedIndex::new(&dataset.weights).expect("validated weights");
    RegionId(dist.sample(rng) as u8)
}

/// Sample regions for `count` nodes in node order.
pub fn assign_regions<R: Rng + ?Sized>(
    rng: &mut R,
    dataset: &RegionDataset,
    count: usize,
) -> Vec<RegionId> {
    let dist = WeightedIndex::new(&dataset.weights).expect("validated weights");
    (0..count).map(|_| RegionId(dist.sample(rng) as u8)).collect()
}

/// Bits serialized per millisecond are `bandwidth_bps / 1000`; round up so
/// any positive transfer over a finite link costs at least 1 ms.
pub fn transfer_ms(size_bytes: u64, bandwidth_bps: f64) -> u64 {
    if bandwidth_bps.is_infinite() {
        return 0;
    }
    let bits = (size_bytes * 8) as f64;
    (bits * 1000.0 / bandwidth_bps).ceil() as u64
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetModel {
    dataset: RegionDataset,
    uniform: Option<UniformOverride>,
}

impl NetModel {
    pub fn new(dataset: RegionDataset, uniform: Option<UniformOverride>) -> Self {
        NetModel { dataset, uniform }
    }

    pub fn dataset(&self) -> &RegionDataset {
        &self.dataset
    }

    pub fn uniform(&self) -> Option<UniformOverride> {
        self.uniform
    }

    /// One-way delay of an INV or GETDATA.
    pub fn control_delay(&self, src: RegionId, dst: RegionId) -> u64 {
        match self.uniform {
            Some(u) => u.latency_ms,
            None => self.dataset.latency_ms[src.index()][dst.index()],
        }
    }

    pub fn effective_bandwidth(&self, src: RegionId, dst: RegionId) -> f64 {
        match self.uniform {
            Some(u) => u.bandwidth_bps,
            None => self.dataset.upload_bps[src.index()].min(self.dataset.download_bps[dst.index()]),
        }
    }

    /// Delay of a BLOCK message of `size_bytes` sent from `src` to `dst`.
    pub fn block_transfer_delay(&self, src: RegionId, dst: RegionId, size_bytes: u64) -> u64 {
        debug_assert!(size_bytes > 0);
        self.control_delay(src, dst) + transfer_ms(size_bytes, self.effective_bandwidth(src, dst))
    }
}
