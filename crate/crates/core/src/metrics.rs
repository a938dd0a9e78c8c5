//! Propagation-time measurement and aggregation.
//!
//! A block's propagation time is the q-quantile, over every node in the
//! network, of `first arrival - creation`. The creator counts with offset 0.
//! Quantiles use linear interpolation between closest ranks at position
//! `(n - 1) * q`, which for the median of an even count is the midpoint of
//! the two central values. Nodes the block never reached count as +inf, so
//! a quantile that lands on one is undefined.

use std::ops::RangeInclusive;

use serde::Serialize;

use crate::chain::{self, Block, ForkStats};
use crate::engine::{BlockId, NodeId, SimTime};
use crate::p2p::ProtocolStats;

#[derive(Clone, Debug, PartialEq)]
pub struct BlockPropagationRecord {
    pub block: BlockId,
    pub created_at: SimTime,
    pub creator: Option<NodeId>,
    pub node_count: usize,
    /// First arrival per node that received the block.
    pub arrivals: Vec<(NodeId, SimTime)>,
}

impl BlockPropagationRecord {
    pub fn coverage(&self) -> f64 {
        if self.node_count == 0 {
            return 0.0;
        }
        self.arrivals.len() as f64 / self.node_count as f64
    }

    /// Arrival offsets in ascending order.
    pub fn offsets_ms(&self) -> Vec<u64> {
        let mut offsets: Vec<u64> = self
            .arrivals
            .iter()
            .map(|&(_, t)| t - self.created_at)
            .collect();
        offsets.sort_unstable();
        offsets
    }
}

/// q-quantile of the arrival offsets over all nodes, or `None` if too few
/// nodes received the block.
pub fn propagation_percentile(record: &BlockPropagationRecord, q: f64) -> Option<f64> {
    assert!(q > 0.0 && q <= 1.0, "quantile must lie in (0, 1], got {q}");
    if record.node_count == 0 || record.coverage() < q {
        return None;
    }
    let offsets = record.offsets_ms();
    let pos = (record.node_count - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if hi >= offsets.len() {
        return None;
    }
    let frac = pos - lo as f64;
    Some(offsets[lo] as f64 + frac * (offsets[hi] as f64 - offsets[lo] as f64))
}

pub fn median_ms(record: &BlockPropagationRecord) -> Option<f64> {
    propagation_percentile(record, 0.5)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WindowMean {
    /// Index of the window's first element in the input series.
    pub start: usize,
    /// Elements covered; shorter than the window only for the last one.
    pub len: usize,
    /// Defined elements that contributed to the mean.
    pub defined: usize,
    pub mean: Option<f64>,
}

/// Means over consecutive non-overlapping windows. Undefined entries are
/// skipped inside their window.
pub fn rolling_average(series: &[Option<f64>], window: usize) -> Vec<WindowMean> {
    assert!(window >= 1, "window must be at least 1");
    series
        .chunks(window)
        .enumerate()
        .map(|(i, chunk)| {
            let defined: Vec<f64> = chunk.iter().flatten().copied().collect();
            WindowMean {
                start: i * window,
                len: chunk.len(),
                defined: defined.len(),
                mean: mean(&defined),
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct HistogramBin {
    pub start_ms: u64,
    pub count: u64,
}

/// Counts per half-open bin `[k * w, (k + 1) * w)`, dense from the lowest
/// to the highest occupied bin.
pub fn histogram(values: &[f64], bin_width_ms: u64) -> Vec<HistogramBin> {
    assert!(bin_width_ms > 0, "bin width must be positive");
    if values.is_empty() {
        return Vec::new();
    }
    let w = bin_width_ms as f64;
    let bins: Vec<u64> = values.iter().map(|v| (v / w).floor() as u64).collect();
    let lo = *bins.iter().min().unwrap();
    let hi = *bins.iter().max().unwrap();
    let mut counts = vec![0u64; (hi - lo + 1) as usize];
    for b in bins {
        counts[(b - lo) as usize] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            start_ms: (lo + i as u64) * bin_width_ms,
            count,
        })
        .collect()
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Sample standard deviation; zero for fewer than two values.
pub fn std_dev(values: &[f64]) -> f64 {
    let Some(m) = mean(values) else { return 0.0 };
    if values.len() < 2 {
        return 0.0;
    }
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    var.sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SummaryOptions {
    pub window: usize,
    pub bin_width_ms: u64,
    /// Leading blocks left out of the mean of medians and the histogram.
    pub warmup_blocks: usize,
}

impl Default for SummaryOptions {
    fn default() -> Self {
        SummaryOptions {
            window: 100,
            bin_width_ms: 50,
            warmup_blocks: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BlockRow {
    pub block_id: BlockId,
    pub parent: Option<BlockId>,
    pub miner: Option<NodeId>,
    pub height: u64,
    pub created_at: SimTime,
    pub median_ms: Option<f64>,
    pub coverage: f64,
    pub on_main_chain: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub config: serde_json::Value,
    pub options: SummaryOptions,
    pub generated_blocks: usize,
    /// Mean of the defined per-block medians after the warm-up.
    pub mean_of_medians_ms: Option<f64>,
    pub undefined_medians: usize,
    pub forks: ForkStats,
    pub protocol: ProtocolStats,
    pub events_dispatched: u64,
    pub final_time_ms: u64,
    pub rolling: Vec<WindowMean>,
    pub histogram: Vec<HistogramBin>,
    /// One row per generated block, in generation order.
    pub blocks: Vec<BlockRow>,
}

impl RunSummary {
    pub fn median_series(&self) -> Vec<Option<f64>> {
        self.blocks.iter().map(|r| r.median_ms).collect()
    }

    /// Mean of the defined medians of blocks whose id lies in `ids`.
    pub fn mean_of_medians_over(&self, ids: RangeInclusive<u32>) -> Option<f64> {
        let values: Vec<f64> = self
            .blocks
            .iter()
            .filter(|r| ids.contains(&r.block_id.0))
            .filter_map(|r| r.median_ms)
            .collect();
        mean(&values)
    }
}

/// Aggregate one finished run. `blocks` is the full block log indexed by
/// id (genesis first); `records` yields one record per generated block.
pub fn summarize<I>(records: I, blocks: &[Block], opts: &SummaryOptions) -> RunSummary
where
    I: IntoIterator<Item = BlockPropagationRecord>,
{
    let on_chain = chain::main_chain(blocks);
    let rows: Vec<BlockRow> = records
        .into_iter()
        .map(|record| {
            let b = &blocks[record.block.index()];
            BlockRow {
                block_id: b.id,
                parent: b.parent,
                miner: b.miner,
                height: b.height,
                created_at: b.created_at,
                median_ms: median_ms(&record),
                coverage: record.coverage(),
                on_main_chain: on_chain[b.id.index()],
            }
        })
        .collect();
    let measured = rows.get(opts.warmup_blocks.min(rows.len())..).unwrap_or(&[]);
    let defined: Vec<f64> = measured.iter().filter_map(|r| r.median_ms).collect();
    let series: Vec<Option<f64>> = rows.iter().map(|r| r.median_ms).collect();
    RunSummary {
        seed: 0,
        config: serde_json::Value::Null,
        options: *opts,
        generated_blocks: rows.len(),
        mean_of_medians_ms: mean(&defined),
        undefined_medians: measured.len() - defined.len(),
        forks: chain::fork_stats(blocks),
        protocol: ProtocolStats::default(),
        events_dispatched: 0,
        final_time_ms: 0,
        rolling: rolling_average(&series, opts.window),
        histogram: histogram(&defined, opts.bin_width_ms),
        blocks: rows,
    }
}
