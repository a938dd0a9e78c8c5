//! Discrete-event simulation of block propagation over a peer-to-peer
//! overlay, comparing proximity neighbor selection against a fixed random
//! topology.

pub mod chain;
pub mod cli;
pub mod engine;
pub mod metrics;
pub mod netmodel;
pub mod p2p;
pub mod pns;
pub mod sim;

pub use cli::config::{Preset, RunConfig};
pub use metrics::RunSummary;
pub use sim::{SimSetup, Simulation};
