//! The event loop: mining, message delivery and reselection dispatched
//! from one [`Scheduler`].

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::chain::{BlockProcess, MiningProfile};
use crate::engine::{random_stream, Action, BlockId, NodeId, Scheduler, StreamPurpose, TraceSink};
use crate::metrics::{self, RunSummary, SummaryOptions};
use crate::netmodel::{self, NetModel, RegionId};
use crate::p2p::{Effect, Network, P2pError};
use crate::pns::{self, PolicyError, SelectionPolicy};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid policy: {0}")]
    Policy(#[from] PolicyError),
    #[error("building network: {0}")]
    Network(#[from] P2pError),
    #[error("mining profile: {0}")]
    Mining(String),
    #[error("{0}")]
    Invalid(String),
}

/// Everything needed to build one simulation.
#[derive(Clone, Debug)]
pub struct SimSetup {
    pub nodes: usize,
    pub mean_interval_ms: f64,
    pub block_size: u64,
    /// Mining stops after this many blocks; propagation then drains.
    pub blocks: u64,
    pub seed: u64,
    pub net: NetModel,
    pub policy: SelectionPolicy,
    pub mining: MiningProfile,
}

/// Where each node lives, which node mines when, and how much power each
/// has. Both arms of a paired comparison draw identical environments.
#[derive(Clone, Debug)]
pub struct Environment {
    pub regions: Vec<RegionId>,
    pub powers: Vec<f64>,
}

impl Environment {
    pub fn draw(setup: &SimSetup) -> Result<Self, SimError> {
        let mut region_rng = random_stream(setup.seed, StreamPurpose::Region);
        let regions = netmodel::assign_regions(&mut region_rng, setup.net.dataset(), setup.nodes);
        // Powers come from their own stream so the block schedule stream
        // is untouched by the profile choice.
        let mut power_rng = random_stream(setup.seed ^ 0x9e37_79b9_7f4a_7c15, StreamPurpose::Mining);
        let powers = setup
            .mining
            .powers(setup.nodes, &mut power_rng)
            .map_err(SimError::Mining)?;
        Ok(Environment { regions, powers })
    }
}

pub struct Simulation {
    scheduler: Scheduler,
    network: Network,
    process: BlockProcess,
    mining_rng: ChaCha8Rng,
    reselect_rng: ChaCha8Rng,
    block_size: u64,
    target_blocks: u64,
    generated: u64,
    seed: u64,
    check_invariants: bool,
    mining: bool,
}

impl Simulation {
    pub fn new(setup: &SimSetup) -> Result<Self, SimError> {
        if setup.nodes == 0 {
            return Err(SimError::Invalid("node count must be positive".into()));
        }
        if setup.mean_interval_ms.is_nan() || setup.mean_interval_ms <= 0.0 {
            return Err(SimError::Invalid("mean block interval must be positive".into()));
        }
        if setup.block_size == 0 {
            return Err(SimError::Invalid("block size must be positive".into()));
        }
        setup.policy.validate()?;
        let env = Environment::draw(setup)?;
        let mut topo_rng = random_stream(setup.seed, StreamPurpose::Topology);
        let topology = pns::initial_topology(setup.nodes, &mut topo_rng, &setup.policy)?;
        let network = Network::new(env.regions, &topology, setup.net.clone(), setup.policy)?;
        Ok(Self::from_parts(setup, network, &env.powers))
    }

    /// Start from a hand-built network, for small protocol tests.
    pub fn with_network(setup: &SimSetup, network: Network, powers: &[f64]) -> Self {
        Self::from_parts(setup, network, powers)
    }

    fn from_parts(setup: &SimSetup, network: Network, powers: &[f64]) -> Self {
        Simulation {
            scheduler: Scheduler::new(),
            network,
            process: BlockProcess::new(setup.mean_interval_ms, powers),
            mining_rng: random_stream(setup.seed, StreamPurpose::Mining),
            reselect_rng: random_stream(setup.seed, StreamPurpose::Reselection),
            block_size: setup.block_size,
            target_blocks: setup.blocks,
            generated: 0,
            seed: setup.seed,
            check_invariants: false,
            mining: false,
        }
    }

    pub fn set_trace(&mut self, sink: TraceSink) {
        self.scheduler.set_trace(sink);
    }

    /// Verify the network's structural invariants after every dispatch.
    /// Quadratic; meant for small test networks.
    pub fn set_invariant_checks(&mut self, on: bool) {
        self.check_invariants = on;
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn scheduler(&self) -> &Scheduler {
        &self.scheduler
    }

    pub fn generated(&self) -> u64 {
        self.generated
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Schedule a block to be mined by `miner` at `at_ms`, bypassing the
    /// random process.
    pub fn schedule_block(&mut self, miner: NodeId, at_ms: u64) {
        self.scheduler
            .schedule(crate::engine::SimTime(at_ms), Action::GenerateBlock { miner })
            .expect("scheduling ahead of the clock");
    }

    /// Mine until the block target is reached, then let every in-flight
    /// message drain.
    pub fn run(&mut self) {
        if self.target_blocks > 0 && !self.mining {
            self.mining = true;
            self.schedule_next_block();
        }
        self.run_scheduled();
    }

    /// Dispatch whatever is queued without starting the random block
    /// process, e.g. blocks placed with [`Simulation::schedule_block`].
    pub fn run_scheduled(&mut self) {
        while let Some(event) = self.scheduler.pop() {
            self.dispatch(event.action);
            if self.check_invariants {
                if let Err(violation) = self.network.check_invariants() {
                    panic!("invariant broken after {:?} at t={}: {violation}", event.action, event.fire_at);
                }
            }
        }
        let _ = self.scheduler.flush_trace();
    }

    fn schedule_next_block(&mut self) {
        let (gap, miner) = self.process.next_generation(&mut self.mining_rng);
        self.scheduler.schedule_after(gap, Action::GenerateBlock { miner });
    }

    fn dispatch(&mut self, action: Action) {
        let now = self.scheduler.now();
        let effects = match action {
            Action::GenerateBlock { miner } => {
                self.generated += 1;
                let (_, effects) = self.network.mine_block(miner, now, self.block_size);
                if self.mining && self.generated < self.target_blocks {
                    self.schedule_next_block();
                }
                effects
            }
            Action::DeliverInv { to, from, block } => self.network.on_inv(to, from, block, now),
            Action::DeliverGetData { to, from, block } => self.network.on_getdata(to, from, block, now),
            Action::DeliverBlock { to, from, block } => self.network.on_block(to, from, block, now),
            Action::MaybeReselect { node } => {
                self.network.maybe_reselect(node, &mut self.reselect_rng);
                Vec::new()
            }
        };
        for effect in effects {
            let (delay, action) = Effect::into_scheduled(effect);
            self.scheduler.schedule_after(delay, action);
        }
    }

    pub fn summarize(&self, opts: &SummaryOptions) -> RunSummary {
        let network = &self.network;
        let records = (1..network.blocks().len()).map(|i| network.propagation_record(BlockId(i as u32)));
        let mut summary = metrics::summarize(records, network.blocks(), opts);
        summary.seed = self.seed;
        summary.protocol = network.stats();
        summary.events_dispatched = self.scheduler.dispatched();
        summary.final_time_ms = self.scheduler.now().as_millis();
        summary
    }
}
