//! Proximity neighbor selection.
//!
//! Every INV a node receives is a latency sample for its sender: the gap
//! between the block's creation and the INV's arrival. The first sample
//! initializes the sender's score; later samples fold in as an EWMA with
//! weight `P` on the newest one. Every `reselect_every` newly received
//! blocks, a node replaces its outbound peers with the lowest-scoring
//! senders it knows plus `K` peers drawn uniformly from the whole network.
//!
//! The `FixedRandom` policy is the baseline: a random initial topology that
//! never changes.

use std::collections::{HashMap, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{NodeId, SimTime};

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("weight P must lie in [0, 1], got {0}")]
    Weight(f64),
    #[error("K = {random_slots} random slots exceeds {outbound_slots} outbound slots")]
    RandomSlots {
        random_slots: usize,
        outbound_slots: usize,
    },
    #[error("reselect_every must be at least 1")]
    ReselectEvery,
    #[error("outbound_slots must be at least 1")]
    NoOutbound,
    #[error("{nodes} nodes cannot each open {outbound_slots} distinct outbound connections")]
    TooFewNodes { nodes: usize, outbound_slots: usize },
    #[error("no connected topology found after {attempts} attempts; inbound caps may be too tight")]
    Disconnected { attempts: usize },
}

/// One INV observation: sender, INV arrival time, block creation time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScoreSample {
    pub sender: NodeId,
    pub t_inv: SimTime,
    pub t_block: SimTime,
}

impl ScoreSample {
    pub fn delay_ms(&self) -> f64 {
        assert!(
            self.t_inv >= self.t_block,
            "INV from {} arrived at {} before block creation at {}",
            self.sender,
            self.t_inv,
            self.t_block
        );
        (self.t_inv - self.t_block) as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScoreEntry {
    pub score: f64,
    pub samples: u64,
}

/// Per-sender scores held by one node. Entries are never evicted.
#[derive(Clone, Debug, Default)]
pub struct ScoreTable {
    entries: HashMap<NodeId, ScoreEntry>,
}

impl ScoreTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, sender: NodeId) -> Option<ScoreEntry> {
        self.entries.get(&sender).copied()
    }

    pub fn score(&self, sender: NodeId) -> Option<f64> {
        self.get(sender).map(|e| e.score)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Fold in one sample with EWMA weight `weight`.
    pub fn update(&mut self, sample: ScoreSample, weight: f64) {
        let delay = sample.delay_ms();
        self.entries
            .entry(sample.sender)
            .and_modify(|e| {
                e.score = (1.0 - weight) * e.score + weight * delay;
                e.samples += 1;
            })
            .or_insert(ScoreEntry {
                score: delay,
                samples: 1,
            });
    }

    /// Scored senders, best (lowest) first; ties by ascending node id.
    pub fn ranked(&self) -> Vec<(NodeId, f64)> {
        let mut ranked: Vec<_> = self.entries.iter().map(|(n, e)| (*n, e.score)).collect();
        ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        ranked
    }
}

/// Parameters of the proximity selection policy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposedParams {
    /// EWMA weight on the newest sample.
    pub p: f64,
    /// Outbound slots filled uniformly at random at each reselection.
    pub k: usize,
    pub reselect_every: u32,
    pub outbound_slots: usize,
    pub inbound_cap: usize,
}

impl Default for ProposedParams {
    fn default() -> Self {
        ProposedParams {
            p: 0.3,
            k: 1,
            reselect_every: 10,
            outbound_slots: 8,
            inbound_cap: 30,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum SelectionPolicy {
    Proposed(ProposedParams),
    FixedRandom {
        outbound_slots: usize,
        inbound_cap: usize,
    },
}

impl SelectionPolicy {
    pub fn fixed_random_default() -> Self {
        SelectionPolicy::FixedRandom {
            outbound_slots: 8,
            inbound_cap: 125,
        }
    }

    pub fn outbound_slots(&self) -> usize {
        match self {
            SelectionPolicy::Proposed(p) => p.outbound_slots,
            SelectionPolicy::FixedRandom { outbound_slots, .. } => *outbound_slots,
        }
    }

    pub fn inbound_cap(&self) -> usize {
        match self {
            SelectionPolicy::Proposed(p) => p.inbound_cap,
            SelectionPolicy::FixedRandom { inbound_cap, .. } => *inbound_cap,
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.outbound_slots() == 0 {
            return Err(PolicyError::NoOutbound);
        }
        if let SelectionPolicy::Proposed(p) = self {
            if !(0.0..=1.0).contains(&p.p) {
                return Err(PolicyError::Weight(p.p));
            }
            if p.k > p.outbound_slots {
                return Err(PolicyError::RandomSlots {
                    random_slots: p.k,
                    outbound_slots: p.outbound_slots,
                });
            }
            if p.reselect_every == 0 {
                return Err(PolicyError::ReselectEvery);
            }
        }
        Ok(())
    }
}

pub fn should_reselect(blocks_since_reselect: u32, policy: &SelectionPolicy) -> bool {
    match policy {
        SelectionPolicy::Proposed(p) => blocks_since_reselect >= p.reselect_every,
        SelectionPolicy::FixedRandom { .. } => false,
    }
}

/// Retries before a uniform draw falls back to scanning the remaining
/// eligible nodes.
const RANDOM_DRAW_ATTEMPTS: usize = 64;

/// Pick one node uniformly from `0..node_count` that is not `me`, not in
/// `taken`, and accepted by `accept`. Returns `None` when no node qualifies.
pub fn random_peer<R: Rng + ?Sized>(
    me: NodeId,
    node_count: usize,
    taken: &[NodeId],
    rng: &mut R,
    accept: &mut impl FnMut(NodeId) -> bool,
) -> Option<NodeId> {
    for _ in 0..RANDOM_DRAW_ATTEMPTS {
        let candidate = NodeId(rng.random_range(0..node_count as u32));
        if candidate != me && !taken.contains(&candidate) && accept(candidate) {
            return Some(candidate);
        }
    }
    let mut rest: Vec<NodeId> = (0..node_count as u32)
        .map(NodeId)
        .filter(|&c| c != me && !taken.contains(&c))
        .collect();
    rest.shuffle(rng);
    rest.into_iter().find(|&c| accept(c))
}

/// Choose a node's new outbound peer list.
///
/// The first `outbound_slots - K` slots take scored senders in ascending
/// score order; the rest are uniform picks from all nodes. `accept` models
/// the connection attempt: a candidate it rejects (inbound full) is skipped
/// and the next candidate tried. If scored senders run out, the remaining
/// slots are filled at random as well.
pub fn reselect<R: Rng + ?Sized>(
    me: NodeId,
    table: &ScoreTable,
    node_count: usize,
    rng: &mut R,
    params: &ProposedParams,
    mut accept: impl FnMut(NodeId) -> bool,
) -> Vec<NodeId> {
    assert!(
        node_count > params.outbound_slots,
        "{node_count} nodes cannot fill {} outbound slots",
        params.outbound_slots
    );
    let scored_slots = params.outbound_slots - params.k;
    let mut chosen = Vec::with_capacity(params.outbound_slots);
    for (candidate, _) in table.ranked() {
        if chosen.len() == scored_slots {
            break;
        }
        if candidate != me && !chosen.contains(&candidate) && accept(candidate) {
            chosen.push(candidate);
        }
    }
    while chosen.len() < params.outbound_slots {
        match random_peer(me, node_count, &chosen, rng, &mut accept) {
            Some(peer) => chosen.push(peer),
            None => break,
        }
    }
    chosen
}

/// Build the starting topology: every node, in id order, opens
/// `outbound_slots` connections to uniformly random distinct peers,
/// skipping peers whose inbound is full. Topologies whose undirected
/// union is disconnected are redrawn.
pub fn initial_topology<R: Rng + ?Sized>(
    node_count: usize,
    rng: &mut R,
    policy: &SelectionPolicy,
) -> Result<Vec<Vec<NodeId>>, PolicyError> {
    const ATTEMPTS: usize = 16;
    let outbound_slots = policy.outbound_slots();
    let inbound_cap = policy.inbound_cap();
    if node_count <= outbound_slots {
        return Err(PolicyError::TooFewNodes {
            nodes: node_count,
            outbound_slots,
        });
    }
    for _ in 0..ATTEMPTS {
        let mut inbound = vec![0usize; node_count];
        let mut outbound = Vec::with_capacity(node_count);
        for me in 0..node_count {
            let me = NodeId(me as u32);
            let mut peers = Vec::with_capacity(outbound_slots);
            while peers.len() < outbound_slots {
                let mut accept = |c: NodeId| inbound[c.index()] < inbound_cap;
                match random_peer(me, node_count, &peers, rng, &mut accept) {
                    Some(peer) => {
                        inbound[peer.index()] += 1;
                        peers.push(peer);
                    }
                    None => break,
                }
            }
            outbound.push(peers);
        }
        if is_connected(&outbound) {
            return Ok(outbound);
        }
    }
    Err(PolicyError::Disconnected { attempts: ATTEMPTS })
}

/// Whether the undirected union of the outbound lists is one component.
pub fn is_connected(outbound: &[Vec<NodeId>]) -> bool {
    let n = outbound.len();
    if n == 0 {
        return true;
    }
    let mut adjacency = vec![Vec::new(); n];
    for (a, peers) in outbound.iter().enumerate() {
        for b in peers {
            adjacency[a].push(b.index());
            adjacency[b.index()].push(a);
        }
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut reached = 1;
    while let Some(a) = queue.pop_front() {
        for &b in &adjacency[a] {
            if !seen[b] {
                seen[b] = true;
                reached += 1;
                queue.push_back(b);
            }
        }
    }
    reached == n
}
