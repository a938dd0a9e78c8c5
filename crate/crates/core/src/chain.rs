//! Blocks, per-node chain views and the proof-of-work block process.
//!
//! Mining is one global Poisson process: inter-block gaps are exponential
//! with the configured mean, and the winner is drawn with probability
//! proportional to its power. The winner extends its own current tip, so
//! forks arise only from propagation delay.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::{Exp, Pareto};
use serde::{Deserialize, Serialize};

use crate::engine::{BlockId, NodeId, SimTime};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub id: BlockId,
    /// `None` only for genesis.
    pub parent: Option<BlockId>,
    pub height: u64,
    pub miner: Option<NodeId>,
    pub created_at: SimTime,
    pub size: u64,
}

impl Block {
    pub fn genesis() -> Self {
        Block {
            id: BlockId::GENESIS,
            parent: None,
            height: 0,
            miner: None,
            created_at: SimTime::ZERO,
            size: 0,
        }
    }

    pub fn child_of(parent: &Block, id: BlockId, miner: NodeId, created_at: SimTime, size: u64) -> Self {
        assert!(
            created_at > parent.created_at,
            "block {id} created at {created_at} not after parent {} at {}",
            parent.id,
            parent.created_at
        );
        Block {
            id,
            parent: Some(parent.id),
            height: parent.height + 1,
            miner: Some(miner),
            created_at,
            size,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AcceptOutcome {
    Accepted { tip_changed: bool },
    Duplicate,
}

const UNKNOWN: u64 = u64::MAX;

/// One node's view of the chain: which blocks it holds, when each first
/// arrived, and its current tip. Block ids are dense, so arrivals are a
/// vector indexed by id.
#[derive(Clone, Debug)]
pub struct ChainView {
    arrivals: Vec<u64>,
    tip: BlockId,
    tip_height: u64,
}

impl Default for ChainView {
    fn default() -> Self {
        Self::new()
    }
}

impl ChainView {
    /// A view holding only genesis, received at time zero.
    pub fn new() -> Self {
        ChainView {
            arrivals: vec![0],
            tip: BlockId::GENESIS,
            tip_height: 0,
        }
    }

    pub fn tip(&self) -> BlockId {
        self.tip
    }

    pub fn tip_height(&self) -> u64 {
        self.tip_height
    }

    pub fn knows(&self, id: BlockId) -> bool {
        self.arrival(id).is_some()
    }

    pub fn arrival(&self, id: BlockId) -> Option<SimTime> {
        match self.arrivals.get(id.index()) {
            Some(&t) if t != UNKNOWN => Some(SimTime(t)),
            _ => None,
        }
    }

    /// Record `block` as arrived at `arrived_at`. The tip moves only to a
    /// strictly higher block, so the first-seen block wins height ties.
    pub fn accept(&mut self, block: &Block, arrived_at: SimTime) -> AcceptOutcome {
        if self.knows(block.id) {
            return AcceptOutcome::Duplicate;
        }
        let idx = block.id.index();
        if idx >= self.arrivals.len() {
            self.arrivals.resize(idx + 1, UNKNOWN);
        }
        self.arrivals[idx] = arrived_at.0;
        let tip_changed = block.height > self.tip_height;
        if tip_changed {
            self.tip = block.id;
            self.tip_height = block.height;
        }
        AcceptOutcome::Accepted { tip_changed }
    }
}

/// Relative mining power per node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MiningProfile {
    /// Every node has equal power.
    Uniform,
    /// Powers drawn i.i.d. from a Pareto distribution (scale 1) with this
    /// shape. Smaller shapes give a heavier tail.
    Pareto { shape: f64 },
    /// Explicit per-node powers; the length must equal the node count.
    Explicit { powers: Vec<f64> },
}

impl MiningProfile {
    /// Materialize per-node powers. Only `Pareto` consumes randomness.
    pub fn powers<R: Rng + ?Sized>(&self, nodes: usize, rng: &mut R) -> Result<Vec<f64>, String> {
        let powers = match self {
            MiningProfile::Uniform => vec![1.0; nodes],
            MiningProfile::Pareto { shape } => {
                let dist = Pareto::new(1.0, *shape).map_err(|e| format!("pareto shape {shape}: {e}"))?;
                (0..nodes).map(|_| dist.sample(rng)).collect()
            }
            MiningProfile::Explicit { powers } => {
                if powers.len() != nodes {
                    return Err(format!(
                        "explicit mining profile has {} powers for {nodes} nodes",
                        powers.len()
                    ));
                }
                powers.clone()
            }
        };
        if powers.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err("mining powers must be positive and finite".into());
        }
        Ok(powers)
    }
}

/// Samples successive `(gap, winner)` pairs of the block process.
#[derive(Clone, Debug)]
pub struct BlockProcess {
    gap: Exp<f64>,
    winner: WeightedIndex<f64>,
}

impl BlockProcess {
    pub fn new(mean_interval_ms: f64, powers: &[f64]) -> Self {
        assert!(mean_interval_ms > 0.0, "mean block interval must be positive");
        assert!(!powers.is_empty(), "at least one node is required");
        BlockProcess {
            gap: Exp::new(1.0 / mean_interval_ms).expect("positive rate"),
            winner: WeightedIndex::new(powers).expect("positive powers"),
        }
    }

    /// Gap to the next block and its miner. Gaps are rounded up to whole
    /// milliseconds and are never zero, so every block is strictly newer
    /// than the one before it.
    pub fn next_generation<R: Rng + ?Sized>(&self, rng: &mut R) -> (u64, NodeId) {
        let gap = (self.gap.sample(rng).ceil() as u64).max(1);
        let miner = NodeId(self.winner.sample(rng) as u32);
        (gap, miner)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForkStats {
    /// Heights holding two or more generated blocks.
    pub fork_count: u64,
    /// Generated blocks that are not on the final longest chain.
    pub orphan_count: u64,
}

/// Ids on the final longest chain, as a membership mask indexed by id.
/// The tip is the highest block; among equals, the earliest generated.
pub fn main_chain(blocks: &[Block]) -> Vec<bool> {
    let mut on_chain = vec![false; blocks.len()];
    let Some(tip) = blocks
        .iter()
        .max_by(|a, b| a.height.cmp(&b.height).then(b.id.cmp(&a.id)))
    else {
        return on_chain;
    };
    let mut cursor = Some(tip.id);
    while let Some(id) = cursor {
        on_chain[id.index()] = true;
        cursor = blocks[id.index()].parent;
    }
    on_chain
}

/// Fork accounting over the complete block log. `blocks` is indexed by
/// id and includes genesis at index 0, which is never counted.
pub fn fork_stats(blocks: &[Block]) -> ForkStats {
    let mut per_height: BTreeMap<u64, u64> = BTreeMap::new();
    for b in blocks.iter().filter(|b| b.id != BlockId::GENESIS) {
        *per_height.entry(b.height).or_default() += 1;
    }
    let fork_count = per_height.values().filter(|&&c| c >= 2).count() as u64;
    let on_chain = main_chain(blocks);
    let orphan_count = blocks
        .iter()
        .filter(|b| b.id != BlockId::GENESIS && !on_chain[b.id.index()])
        .count() as u64;
    ForkStats {
        fork_count,
        orphan_count,
    }
}
