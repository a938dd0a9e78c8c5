//! Per-node protocol: connection slots and the INV / GETDATA / BLOCK
//! handshake.
//!
//! A node that obtains a block announces it with an INV to every peer on
//! either side of a connection (minus the peer that supplied it). A node
//! hearing an INV for a block it neither holds nor has requested answers
//! with a GETDATA to that sender, and the sender ships the block. Messages
//! already in flight are delivered even if the connection they were sent
//! over has since been dropped.

use rand::Rng;
use thiserror::Error;

use crate::chain::{AcceptOutcome, Block, ChainView};
use crate::engine::{Action, BlockId, NodeId, SimTime};
use crate::metrics::BlockPropagationRecord;
use crate::netmodel::{NetModel, RegionId};
use crate::pns::{self, ScoreSample, ScoreTable, SelectionPolicy};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum P2pError {
    #[error("node {0} cannot connect to itself")]
    SelfConnection(NodeId),
    #[error("node {from} already has an outbound connection to {to}")]
    AlreadyConnected { from: NodeId, to: NodeId },
    #[error("node {0} has no free outbound slot")]
    OutboundFull(NodeId),
    #[error("{regions} regions given for {nodes} nodes")]
    RegionCount { regions: usize, nodes: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConnectOutcome {
    Accepted,
    /// The target's inbound slots are full; nothing changed.
    Rejected,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PeerSet {
    outbound: Vec<NodeId>,
    inbound: Vec<NodeId>,
    outbound_slots: usize,
    inbound_cap: usize,
}

impl PeerSet {
    pub fn new(outbound_slots: usize, inbound_cap: usize) -> Self {
        PeerSet {
            outbound: Vec::with_capacity(outbound_slots),
            inbound: Vec::new(),
            outbound_slots,
            inbound_cap,
        }
    }

    pub fn outbound(&self) -> &[NodeId] {
        &self.outbound
    }

    pub fn inbound(&self) -> &[NodeId] {
        &self.inbound
    }

    pub fn inbound_full(&self) -> bool {
        self.inbound.len() >= self.inbound_cap
    }

    /// Every neighbor once: outbound peers first, then inbound peers that
    /// are not also outbound.
    pub fn neighbors(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.outbound.iter().copied().chain(
            self.inbound
                .iter()
                .copied()
                .filter(|p| !self.outbound.contains(p)),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MessageKind {
    Inv,
    GetData,
    Block,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WireMessage {
    pub kind: MessageKind,
    pub block: BlockId,
    pub from: NodeId,
    pub to: NodeId,
}

impl WireMessage {
    pub fn into_action(self) -> Action {
        let WireMessage { kind, block, from, to } = self;
        match kind {
            MessageKind::Inv => Action::DeliverInv { to, from, block },
            MessageKind::GetData => Action::DeliverGetData { to, from, block },
            MessageKind::Block => Action::DeliverBlock { to, from, block },
        }
    }
}

/// Follow-up work produced by a handler.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Effect {
    Send { delay_ms: u64, msg: WireMessage },
    Reselect { node: NodeId },
}

impl Effect {
    pub fn into_scheduled(self) -> (u64, Action) {
        match self {
            Effect::Send { delay_ms, msg } => (delay_ms, msg.into_action()),
            Effect::Reselect { node } => (0, Action::MaybeReselect { node }),
        }
    }
}

#[derive(Clone, Debug)]
pub struct NodeState {
    pub id: NodeId,
    pub region: RegionId,
    pub peers: PeerSet,
    pub view: ChainView,
    /// Blocks with an outstanding GETDATA.
    pub requested: Vec<BlockId>,
    pub blocks_since_reselect: u32,
    pub scores: ScoreTable,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize)]
pub struct ProtocolStats {
    pub inv_sent: u64,
    pub getdata_sent: u64,
    pub blocks_sent: u64,
    pub duplicate_blocks: u64,
    pub reselections: u64,
    pub connections_replaced: u64,
}

/// The whole simulated population: node state, the global block log and
/// the delay model.
pub struct Network {
    nodes: Vec<NodeState>,
    blocks: Vec<Block>,
    net: NetModel,
    policy: SelectionPolicy,
    stats: ProtocolStats,
}

impl Network {
    /// Create nodes with the given regions and wire the outbound lists of
    /// `topology` through [`Network::connect`].
    pub fn new(
        regions: Vec<RegionId>,
        topology: &[Vec<NodeId>],
        net: NetModel,
        policy: SelectionPolicy,
    ) -> Result<Self, P2pError> {
        if regions.len() != topology.len() {
            return Err(P2pError::RegionCount {
                regions: regions.len(),
                nodes: topology.len(),
            });
        }
        let nodes = regions
            .into_iter()
            .enumerate()
            .map(|(i, region)| NodeState {
                id: NodeId(i as u32),
                region,
                peers: PeerSet::new(policy.outbound_slots(), policy.inbound_cap()),
                view: ChainView::new(),
                requested: Vec::new(),
                blocks_since_reselect: 0,
                scores: ScoreTable::new(),
            })
            .collect();
        let mut network = Network {
            nodes,
            blocks: vec![Block::genesis()],
            net,
            policy,
            stats: ProtocolStats::default(),
        };
        for (from, peers) in topology.iter().enumerate() {
            for &to in peers {
                network.connect(NodeId(from as u32), to)?;
            }
        }
        Ok(network)
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &NodeState {
        &self.nodes[id.index()]
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, id: BlockId) -> &Block {
        self.blocks
            .get(id.index())
            .unwrap_or_else(|| panic!("block {id} was never generated"))
    }

    pub fn policy(&self) -> &SelectionPolicy {
        &self.policy
    }

    pub fn net(&self) -> &NetModel {
        &self.net
    }

    pub fn stats(&self) -> ProtocolStats {
        self.stats
    }

    /// Outbound lists of every node, in node order.
    pub fn outbound_lists(&self) -> Vec<Vec<NodeId>> {
        self.nodes.iter().map(|n| n.peers.outbound.clone()).collect()
    }

    /// Open an outbound connection. Rejection (target inbound full) is a
    /// normal outcome and leaves both peer sets untouched.
    pub fn connect(&mut self, from: NodeId, to: NodeId) -> Result<ConnectOutcome, P2pError> {
        if from == to {
            return Err(P2pError::SelfConnection(from));
        }
        let source = &self.nodes[from.index()].peers;
        if source.outbound.contains(&to) {
            return Err(P2pError::AlreadyConnected { from, to });
        }
        if source.outbound.len() >= source.outbound_slots {
            return Err(P2pError::OutboundFull(from));
        }
        if self.nodes[to.index()].peers.inbound_full() {
            return Ok(ConnectOutcome::Rejected);
        }
        self.nodes[from.index()].peers.outbound.push(to);
        self.nodes[to.index()].peers.inbound.push(from);
        Ok(ConnectOutcome::Accepted)
    }

    /// Close `from`'s outbound connection to `to`, freeing `to`'s inbound
    /// slot immediately. Returns whether a connection existed.
    pub fn disconnect(&mut self, from: NodeId, to: NodeId) -> bool {
        let outbound = &mut self.nodes[from.index()].peers.outbound;
        let before = outbound.len();
        outbound.retain(|&p| p != to);
        if outbound.len() == before {
            return false;
        }
        self.nodes[to.index()].peers.inbound.retain(|&p| p != from);
        true
    }

    fn inv_to_neighbors(&mut self, node: NodeId, block: BlockId, except: Option<NodeId>) -> Vec<Effect> {
        let state = &self.nodes[node.index()];
        let effects: Vec<Effect> = state
            .peers
            .neighbors()
            .filter(|&p| Some(p) != except)
            .map(|p| Effect::Send {
                delay_ms: self.net.control_delay(state.region, self.nodes[p.index()].region),
                msg: WireMessage {
                    kind: MessageKind::Inv,
                    block,
                    from: node,
                    to: p,
                },
            })
            .collect();
        self.stats.inv_sent += effects.len() as u64;
        effects
    }

    /// `miner` finds a block at `now` on top of its current tip.
    pub fn mine_block(&mut self, miner: NodeId, now: SimTime, size: u64) -> (BlockId, Vec<Effect>) {
        let parent = self.blocks[self.nodes[miner.index()].view.tip().index()];
        let id = BlockId(self.blocks.len() as u32);
        self.blocks.push(Block::child_of(&parent, id, miner, now, size));
        (id, self.on_block_generated(miner, id))
    }

    /// The creator holds its block from `created_at` and announces it to
    /// every neighbor.
    pub fn on_block_generated(&mut self, node: NodeId, block: BlockId) -> Vec<Effect> {
        let b = *self.block(block);
        let outcome = self.nodes[node.index()].view.accept(&b, b.created_at);
        assert_ne!(outcome, AcceptOutcome::Duplicate, "creator already held block {block}");
        self.inv_to_neighbors(node, block, None)
    }

    pub fn on_inv(&mut self, node: NodeId, sender: NodeId, block: BlockId, now: SimTime) -> Vec<Effect> {
        let created_at = self.block(block).created_at;
        let policy = self.policy;
        let sender_region = self.nodes[sender.index()].region;
        let state = &mut self.nodes[node.index()];
        if let SelectionPolicy::Proposed(params) = policy {
            state.scores.update(
                ScoreSample {
                    sender,
                    t_inv: now,
                    t_block: created_at,
                },
                params.p,
            );
        }
        if state.view.knows(block) || state.requested.contains(&block) {
            return Vec::new();
        }
        state.requested.push(block);
        self.stats.getdata_sent += 1;
        let delay_ms = self.net.control_delay(state.region, sender_region);
        vec![Effect::Send {
            delay_ms,
            msg: WireMessage {
                kind: MessageKind::GetData,
                block,
                from: node,
                to: sender,
            },
        }]
    }

    pub fn on_getdata(&mut self, node: NodeId, requester: NodeId, block: BlockId, _now: SimTime) -> Vec<Effect> {
        let state = &self.nodes[node.index()];
        assert!(
            state.view.knows(block),
            "node {node} got GETDATA for block {block} it does not hold"
        );
        let size = self.block(block).size;
        let delay_ms = self
            .net
            .block_transfer_delay(state.region, self.nodes[requester.index()].region, size);
        self.stats.blocks_sent += 1;
        vec![Effect::Send {
            delay_ms,
            msg: WireMessage {
                kind: MessageKind::Block,
                block,
                from: node,
                to: requester,
            },
        }]
    }

    pub fn on_block(&mut self, node: NodeId, provider: NodeId, block: BlockId, now: SimTime) -> Vec<Effect> {
        let b = *self.block(block);
        let policy = self.policy;
        let state = &mut self.nodes[node.index()];
        state.requested.retain(|&r| r != block);
        if state.view.accept(&b, now) == AcceptOutcome::Duplicate {
            self.stats.duplicate_blocks += 1;
            return Vec::new();
        }
        state.blocks_since_reselect += 1;
        let reselect = pns::should_reselect(state.blocks_since_reselect, &policy);
        let mut effects = self.inv_to_neighbors(node, block, Some(provider));
        if reselect {
            effects.push(Effect::Reselect { node });
        }
        effects
    }

    /// Handle a `MaybeReselect` event: replace the outbound list if the
    /// policy still calls for it. Returns whether a reselection ran.
    pub fn maybe_reselect<R: Rng + ?Sized>(&mut self, node: NodeId, rng: &mut R) -> bool {
        let state = &self.nodes[node.index()];
        if !pns::should_reselect(state.blocks_since_reselect, &self.policy) {
            return false;
        }
        let SelectionPolicy::Proposed(params) = self.policy else {
            unreachable!("only the proposed policy reselects");
        };
        let old = state.peers.outbound.clone();
        let nodes = &self.nodes;
        let new = pns::reselect(node, &state.scores, nodes.len(), rng, &params, |c| {
            old.contains(&c) || !nodes[c.index()].peers.inbound_full()
        });
        for &dropped in old.iter().filter(|p| !new.contains(p)) {
            self.nodes[dropped.index()].peers.inbound.retain(|&p| p != node);
            self.stats.connections_replaced += 1;
        }
        for &added in new.iter().filter(|p| !old.contains(p)) {
            self.nodes[added.index()].peers.inbound.push(node);
        }
        let state = &mut self.nodes[node.index()];
        state.peers.outbound = new;
        state.blocks_since_reselect = 0;
        self.stats.reselections += 1;
        true
    }

    /// First-arrival record of one block across all nodes.
    pub fn propagation_record(&self, block: BlockId) -> BlockPropagationRecord {
        let b = self.block(block);
        let arrivals = self
            .nodes
            .iter()
            .filter_map(|n| n.view.arrival(block).map(|t| (n.id, t)))
            .collect();
        BlockPropagationRecord {
            block,
            created_at: b.created_at,
            creator: b.miner,
            node_count: self.nodes.len(),
            arrivals,
        }
    }

    /// Check every structural invariant; returns the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        for state in &self.nodes {
            let peers = &state.peers;
            let me = state.id;
            if peers.outbound.len() > peers.outbound_slots {
                return Err(format!("node {me}: {} outbound > {}", peers.outbound.len(), peers.outbound_slots));
            }
            if peers.inbound.len() > peers.inbound_cap {
                return Err(format!("node {me}: {} inbound > {}", peers.inbound.len(), peers.inbound_cap));
            }
            if peers.outbound.contains(&me) || peers.inbound.contains(&me) {
                return Err(format!("node {me} is connected to itself"));
            }
            for (i, p) in peers.outbound.iter().enumerate() {
                if peers.outbound[..i].contains(p) {
                    return Err(format!("node {me}: duplicate outbound peer {p}"));
                }
                if !self.nodes[p.index()].peers.inbound.contains(&me) {
                    return Err(format!("node {me} -> {p} missing from {p}'s inbound"));
                }
            }
            for p in &peers.inbound {
                if !self.nodes[p.index()].peers.outbound.contains(&me) {
                    return Err(format!("node {me} lists inbound {p} without a matching outbound"));
                }
            }
            if let Some(b) = state.requested.iter().find(|b| state.view.knows(**b)) {
                return Err(format!("node {me}: block {b} both requested and known"));
            }
        }
        for block in &self.blocks {
            for state in &self.nodes {
                if let Some(t) = state.view.arrival(block.id) {
                    if t < block.created_at {
                        return Err(format!("node {} got block {} before creation", state.id, block.id));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{random_stream, StreamPurpose};
    use crate::netmodel::{RegionDataset, UniformOverride};
    use crate::pns::ProposedParams;

    fn uniform_net(latency_ms: u64, bandwidth_bps: f64) -> NetModel {
        NetModel::new(
            RegionDataset::builtin_default(),
            Some(UniformOverride {
                latency_ms,
                bandwidth_bps,
            }),
        )
    }

    fn empty_network(n: usize, policy: SelectionPolicy) -> Network {
        let topo = vec![Vec::new(); n];
        Network::new(vec![RegionId(0); n], &topo, uniform_net(100, 8e6), policy).unwrap()
    }

    fn proposed() -> SelectionPolicy {
        SelectionPolicy::Proposed(ProposedParams::default())
    }

    fn sends(effects: &[Effect], kind: MessageKind) -> Vec<WireMessage> {
        effects
            .iter()
            .filter_map(|e| match e {
                Effect::Send { msg, .. } if msg.kind == kind => Some(*msg),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn connect_on_empty_sets_is_accepted() {
        let mut net = empty_network(3, proposed());
        assert_eq!(net.connect(NodeId(0), NodeId(1)), Ok(ConnectOutcome::Accepted));
        assert_eq!(net.node(NodeId(0)).peers.outbound(), &[NodeId(1)]);
        assert_eq!(net.node(NodeId(1)).peers.inbound(), &[NodeId(0)]);
    }

    #[test]
    fn connect_rejects_when_inbound_is_full() {
        let mut net = empty_network(40, proposed());
        for i in 1..=30 {
            assert_eq!(net.connect(NodeId(i), NodeId(0)), Ok(ConnectOutcome::Accepted));
        }
        assert_eq!(net.connect(NodeId(31), NodeId(0)), Ok(ConnectOutcome::Rejected));
        assert!(net.node(NodeId(31)).peers.outbound().is_empty());
        assert_eq!(net.node(NodeId(0)).peers.inbound().len(), 30);
    }

    #[test]
    fn connect_to_self_is_an_error() {
        let mut net = empty_network(2, proposed());
        assert_eq!(net.connect(NodeId(1), NodeId(1)), Err(P2pError::SelfConnection(NodeId(1))));
        net.connect(NodeId(1), NodeId(0)).unwrap();
        assert!(matches!(net.connect(NodeId(1), NodeId(0)), Err(P2pError::AlreadyConnected { .. })));
    }

    #[test]
    fn disconnect_frees_inbound_slot() {
        let mut net = empty_network(3, proposed());
        net.connect(NodeId(0), NodeId(1)).unwrap();
        assert!(net.disconnect(NodeId(0), NodeId(1)));
        assert!(net.node(NodeId(1)).peers.inbound().is_empty());
        assert!(!net.disconnect(NodeId(0), NodeId(1)));
    }

    #[test]
    fn generated_block_announced_to_all_neighbors() {
        let mut net = empty_network(12, proposed());
        for p in 1..=8 {
            net.connect(NodeId(0), NodeId(p)).unwrap();
        }
        net.connect(NodeId(9), NodeId(0)).unwrap();
        net.connect(NodeId(10), NodeId(0)).unwrap();
        let (id, effects) = net.mine_block(NodeId(0), SimTime(50), 1000);
        assert_eq!(sends(&effects, MessageKind::Inv).len(), 10);
        assert_eq!(net.node(NodeId(0)).view.arrival(id), Some(SimTime(50)));
        assert_eq!(net.propagation_record(id).offsets_ms(), vec![0]);
    }

    #[test]
    fn peers_on_both_sides_get_one_inv() {
        let mut net = empty_network(3, proposed());
        net.connect(NodeId(0), NodeId(1)).unwrap();
        net.connect(NodeId(1), NodeId(0)).unwrap();
        let (_, effects) = net.mine_block(NodeId(0), SimTime(1), 10);
        assert_eq!(effects.len(), 1);
    }

    #[test]
    fn isolated_miner_keeps_block() {
        let mut net = empty_network(3, proposed());
        let (id, effects) = net.mine_block(NodeId(2), SimTime(9), 10);
        assert!(effects.is_empty());
        assert!(net.node(NodeId(2)).view.knows(id));
        assert_eq!(net.node(NodeId(2)).view.tip(), id);
    }

    #[test]
    fn inv_handshake_rules() {
        let mut net = empty_network(3, proposed());
        net.connect(NodeId(0), NodeId(1)).unwrap();
        net.connect(NodeId(2), NodeId(1)).unwrap();
        let (b, _) = net.mine_block(NodeId(0), SimTime(10), 10);

        // Unknown, unrequested: one GETDATA back to the sender.
        let first = net.on_inv(NodeId(1), NodeId(0), b, SimTime(110));
        assert_eq!(
            sends(&first, MessageKind::GetData),
            vec![WireMessage { kind: MessageKind::GetData, block: b, from: NodeId(1), to: NodeId(0) }]
        );
        assert_eq!(first.len(), 1);

        // In flight: no second GETDATA, but the sender is still scored.
        assert!(net.on_inv(NodeId(1), NodeId(2), b, SimTime(130)).is_empty());
        assert_eq!(net.node(NodeId(1)).scores.score(NodeId(2)), Some(120.0));
        assert_eq!(net.node(NodeId(1)).scores.score(NodeId(0)), Some(100.0));

        // Known block: still no GETDATA, score still updated.
        net.on_block(NodeId(1), NodeId(0), b, SimTime(400));
        assert!(net.on_inv(NodeId(1), NodeId(2), b, SimTime(500)).is_empty());
        assert_eq!(net.node(NodeId(1)).scores.get(NodeId(2)).unwrap().samples, 2);
        assert_eq!(net.stats().getdata_sent, 1);
    }

    #[test]
    fn fixed_random_keeps_no_scores() {
        let mut net = empty_network(3, SelectionPolicy::fixed_random_default());
        net.connect(NodeId(0), NodeId(1)).unwrap();
        let (b, _) = net.mine_block(NodeId(0), SimTime(10), 10);
        net.on_inv(NodeId(1), NodeId(0), b, SimTime(20));
        assert!(net.node(NodeId(1)).scores.is_empty());
    }

    #[test]
    #[should_panic(expected = "never generated")]
    fn inv_for_unknown_block_id_is_fatal() {
        let mut net = empty_network(2, proposed());
        net.on_inv(NodeId(1), NodeId(0), BlockId(7), SimTime(1));
    }

    #[test]
    #[should_panic(expected = "does not hold")]
    fn getdata_for_missing_block_is_fatal() {
        let mut net = empty_network(3, proposed());
        let (b, _) = net.mine_block(NodeId(0), SimTime(10), 10);
        net.on_getdata(NodeId(1), NodeId(2), b, SimTime(11));
    }

    #[test]
    fn getdata_ships_block_with_transfer_delay() {
        let mut net = empty_network(3, proposed());
        let (b, _) = net.mine_block(NodeId(0), SimTime(10), 534 * 1024);
        // Latency 100 ms + ceil(546,816 * 8 / 8e6 s) = 647 ms.
        let reply = net.on_getdata(NodeId(0), NodeId(1), b, SimTime(200));
        assert_eq!(
            reply,
            vec![Effect::Send {
                delay_ms: 647,
                msg: WireMessage { kind: MessageKind::Block, block: b, from: NodeId(0), to: NodeId(1) }
            }]
        );
        // Concurrent requesters are served independently.
        assert_eq!(net.on_getdata(NodeId(0), NodeId(2), b, SimTime(200)).len(), 1);
    }

    #[test]
    fn tiny_block_on_zero_latency_link_costs_only_transfer() {
        let topo = vec![Vec::new(); 2];
        let mut net = Network::new(vec![RegionId(0); 2], &topo, uniform_net(0, 8e6), proposed()).unwrap();
        let (b, _) = net.mine_block(NodeId(0), SimTime(1), 1000);
        match net.on_getdata(NodeId(0), NodeId(1), b, SimTime(1))[0] {
            Effect::Send { delay_ms, .. } => assert_eq!(delay_ms, 1),
            _ => unreachable!(),
        }
    }

    #[test]
    fn block_receipt_relays_except_provider() {
        let mut net = empty_network(12, proposed());
        for p in 1..=8 {
            net.connect(NodeId(0), NodeId(p)).unwrap();
        }
        net.connect(NodeId(9), NodeId(0)).unwrap();
        net.connect(NodeId(10), NodeId(0)).unwrap();
        let (b, _) = net.mine_block(NodeId(11), SimTime(5), 10);
        net.on_inv(NodeId(0), NodeId(3), b, SimTime(6));
        let effects = net.on_block(NodeId(0), NodeId(3), b, SimTime(7));
        let invs = sends(&effects, MessageKind::Inv);
        assert_eq!(invs.len(), 9);
        assert!(invs.iter().all(|m| m.to != NodeId(3)));
        assert!(net.node(NodeId(0)).requested.is_empty());
        assert_eq!(net.node(NodeId(0)).blocks_since_reselect, 1);

        // Duplicate delivery changes nothing.
        let before = net.node(NodeId(0)).view.arrival(b);
        assert!(net.on_block(NodeId(0), NodeId(4), b, SimTime(90)).is_empty());
        assert_eq!(net.node(NodeId(0)).view.arrival(b), before);
        assert_eq!(net.node(NodeId(0)).blocks_since_reselect, 1);
    }

    #[test]
    fn tenth_block_triggers_reselection() {
        let mut net = empty_network(20, proposed());
        for p in 1..=8 {
            net.connect(NodeId(0), NodeId(p)).unwrap();
        }
        let mut rng = random_stream(1, StreamPurpose::Reselection);
        for i in 0..10u64 {
            let (b, _) = net.mine_block(NodeId(19), SimTime(100 * (i + 1)), 10);
            // Node 12 announces every block 5 ms after creation.
            net.on_inv(NodeId(0), NodeId(12), b, SimTime(100 * (i + 1) + 5));
            let effects = net.on_block(NodeId(0), NodeId(12), b, SimTime(100 * (i + 1) + 20));
            let asked = effects.iter().any(|e| matches!(e, Effect::Reselect { .. }));
            assert_eq!(asked, i == 9, "block {i}");
        }
        assert!(net.maybe_reselect(NodeId(0), &mut rng));
        let state = net.node(NodeId(0));
        assert_eq!(state.blocks_since_reselect, 0);
        assert_eq!(state.peers.outbound().len(), 8);
        // The only scored sender takes the first slot.
        assert_eq!(state.peers.outbound()[0], NodeId(12));
        net.check_invariants().unwrap();
        // A second trigger at the same instant is a no-op.
        assert!(!net.maybe_reselect(NodeId(0), &mut rng));
    }

    #[test]
    fn reselection_keeps_rechosen_peers_and_frees_dropped_slots() {
        let mut net = empty_network(30, proposed());
        for p in 1..=8 {
            net.connect(NodeId(0), NodeId(p)).unwrap();
        }
        // Peers 1..=7 are fast; peer 8 is slow. K = 1 fills the last slot.
        for s in 1..=8u32 {
            let delay = if s == 8 { 900 } else { 10 * s as u64 };
            net.nodes[0].scores.update(
                ScoreSample { sender: NodeId(s), t_inv: SimTime(delay), t_block: SimTime(0) },
                0.3,
            );
        }
        net.nodes[0].blocks_since_reselect = 10;
        let mut rng = random_stream(9, StreamPurpose::Reselection);
        net.maybe_reselect(NodeId(0), &mut rng);
        let out = net.node(NodeId(0)).peers.outbound().to_vec();
        assert_eq!(&out[..7], &(1..=7).map(NodeId).collect::<Vec<_>>()[..]);
        net.check_invariants().unwrap();
        if out[7] != NodeId(8) {
            assert!(net.node(NodeId(8)).peers.inbound().is_empty());
        }
    }

    #[test]
    fn fixed_policy_never_reselects() {
        let mut net = empty_network(10, SelectionPolicy::fixed_random_default());
        net.nodes[3].blocks_since_reselect = 1000;
        let mut rng = random_stream(0, StreamPurpose::Reselection);
        assert!(!net.maybe_reselect(NodeId(3), &mut rng));
    }
}
