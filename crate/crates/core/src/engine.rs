//! Deterministic discrete-event core.
//!
//! Events are dispatched in `(fire_at, seq)` order where `seq` is a
//! per-queue insertion counter, so equal-time events keep FIFO order and a
//! run is fully reproducible from its configuration and seed.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::io::{self, Write};
use std::ops::{Add, Sub};
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulated time in integer milliseconds since simulation start.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn as_millis(self) -> u64 {
        self.0
    }
}

impl Add<u64> for SimTime {
    type Output = SimTime;

    fn add(self, delta_ms: u64) -> SimTime {
        SimTime(self.0 + delta_ms)
    }
}

impl Sub for SimTime {
    type Output = u64;

    fn sub(self, earlier: SimTime) -> u64 {
        self.0
            .checked_sub(earlier.0)
            .expect("time subtraction underflow")
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Block identifier. `BlockId::GENESIS` is 0; mined blocks are numbered
/// from 1 in generation order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BlockId(pub u32);

impl BlockId {
    pub const GENESIS: BlockId = BlockId(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// What happens when an event fires. The node named by [`Action::target`]
/// is the one whose handler runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    GenerateBlock { miner: NodeId },
    DeliverInv { to: NodeId, from: NodeId, block: BlockId },
    DeliverGetData { to: NodeId, from: NodeId, block: BlockId },
    DeliverBlock { to: NodeId, from: NodeId, block: BlockId },
    MaybeReselect { node: NodeId },
}

impl Action {
    pub fn target(&self) -> NodeId {
        match *self {
            Action::GenerateBlock { miner } => miner,
            Action::DeliverInv { to, .. }
            | Action::DeliverGetData { to, .. }
            | Action::DeliverBlock { to, .. } => to,
            Action::MaybeReselect { node } => node,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Action::GenerateBlock { .. } => "GenerateBlock",
            Action::DeliverInv { .. } => "DeliverInv",
            Action::DeliverGetData { .. } => "DeliverGetData",
            Action::DeliverBlock { .. } => "DeliverBlock",
            Action::MaybeReselect { .. } => "MaybeReselect",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Event {
    pub fire_at: SimTime,
    pub seq: u64,
    pub action: Action,
}

impl Ord for Event {
    // Reversed so that `BinaryHeap` pops the earliest `(fire_at, seq)`.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.fire_at, other.seq).cmp(&(self.fire_at, self.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("cannot schedule {action} at t={fire_at} ms: clock is already at t={now} ms")]
    ScheduleInPast {
        action: &'static str,
        fire_at: SimTime,
        now: SimTime,
    },
}

/// Destination for the per-dispatch trace log.
pub type TraceSink = Box<dyn Write + Send>;

/// In-memory trace sink that can be cloned and inspected after a run.
#[derive(Clone, Default)]
pub struct SharedTrace(Arc<Mutex<Vec<u8>>>);

impl SharedTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contents(&self) -> Vec<u8> {
        self.0.lock().expect("trace lock poisoned").clone()
    }
}

impl Write for SharedTrace {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.lock().expect("trace lock poisoned").extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Priority event queue plus the simulation clock.
pub struct Scheduler {
    clock: SimTime,
    next_seq: u64,
    dispatched: u64,
    queue: BinaryHeap<Event>,
    trace: Option<TraceSink>,
}

impl Default for Scheduler {
    fn default() -> Self {
        Self::new()
    }
}

impl Scheduler {
    pub fn new() -> Self {
        Scheduler {
            clock: SimTime::ZERO,
            next_seq: 0,
            dispatched: 0,
            queue: BinaryHeap::new(),
            trace: None,
        }
    }

    /// Write one line per dispatched event: `time seq action target detail`.
    pub fn set_trace(&mut self, sink: TraceSink) {
        self.trace = Some(sink);
    }

    pub fn now(&self) -> SimTime {
        self.clock
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    /// Enqueue `action` to fire at the absolute time `fire_at`.
    pub fn schedule(&mut self, fire_at: SimTime, action: Action) -> Result<u64, EngineError> {
        if fire_at < self.clock {
            return Err(EngineError::ScheduleInPast {
                action: action.name(),
                fire_at,
                now: self.clock,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Event {
            fire_at,
            seq,
            action,
        });
        Ok(seq)
    }

    /// Enqueue `action` to fire `delay_ms` after the current clock.
    pub fn schedule_after(&mut self, delay_ms: u64, action: Action) -> u64 {
        let at = self.clock + delay_ms;
        self.schedule(at, action)
            .expect("relative schedule is never in the past")
    }

    /// Remove the next event and advance the clock to its firing time.
    pub fn pop(&mut self) -> Option<Event> {
        let event = self.queue.pop()?;
        debug_assert!(event.fire_at >= self.clock);
        self.clock = event.fire_at;
        self.dispatched += 1;
        if let Some(sink) = self.trace.as_mut() {
            // A failing debug sink must not change simulation results.
            let _ = write_trace_line(sink, &event);
        }
        Some(event)
    }

    pub fn flush_trace(&mut self) -> io::Result<()> {
        match self.trace.as_mut() {
            Some(sink) => sink.flush(),
            None => Ok(()),
        }
    }
}

fn write_trace_line(sink: &mut TraceSink, event: &Event) -> io::Result<()> {
    let action = &event.action;
    write!(
        sink,
        "{}\t{}\t{}\t{}",
        event.fire_at,
        event.seq,
        action.name(),
        action.target()
    )?;
    match *action {
        Action::DeliverInv { from, block, .. }
        | Action::DeliverGetData { from, block, .. }
        | Action::DeliverBlock { from, block, .. } => writeln!(sink, "\t{from}\t{block}"),
        _ => writeln!(sink),
    }
}

/// Independent random streams, one per concern, so that changing how many
/// draws one policy makes never shifts another's sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StreamPurpose {
    Mining,
    Topology,
    Region,
    Reselection,
}

impl StreamPurpose {
    fn stream_id(self) -> u64 {
        match self {
            StreamPurpose::Mining => 1,
            StreamPurpose::Topology => 2,
            StreamPurpose::Region => 3,
            StreamPurpose::Reselection => 4,
        }
    }
}

/// Seeded generator for one [`StreamPurpose`]. ChaCha output is defined
/// bit-for-bit, so identical `(seed, purpose)` pairs reproduce across
/// platforms.
pub fn random_stream(seed: u64, purpose: StreamPurpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose.stream_id());
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn mine(n: u32) -> Action {
        Action::GenerateBlock { miner: NodeId(n) }
    }

    #[test]
    fn dispatches_in_time_order() {
        let mut s = Scheduler::new();
        s.schedule(SimTime(5), mine(5)).unwrap();
        s.schedule(SimTime(3), mine(3)).unwrap();
        assert_eq!(s.pop().unwrap().fire_at, SimTime(3));
        assert_eq!(s.pop().unwrap().fire_at, SimTime(5));
        assert!(s.pop().is_none());
    }

    #[test]
    fn equal_times_are_fifo() {
        let mut s = Scheduler::new();
        for n in 0..4 {
            s.schedule(SimTime(7), mine(n)).unwrap();
        }
        let order: Vec<_> = std::iter::from_fn(|| s.pop()).map(|e| e.action).collect();
        assert_eq!(order, vec![mine(0), mine(1), mine(2), mine(3)]);
    }

    #[test]
    fn scheduling_in_the_past_is_rejected() {
        let mut s = Scheduler::new();
        s.schedule(SimTime(10), mine(0)).unwrap();
        s.pop().unwrap();
        assert_eq!(s.now(), SimTime(10));
        let err = s.schedule(SimTime(2), mine(1)).unwrap_err();
        assert!(matches!(err, EngineError::ScheduleInPast { .. }));
        // Same instant is allowed.
        s.schedule(SimTime(10), mine(1)).unwrap();
    }

    #[test]
    fn empty_queue_leaves_clock_at_zero() {
        let mut s = Scheduler::new();
        assert!(s.pop().is_none());
        assert_eq!(s.now(), SimTime::ZERO);
        assert_eq!(s.dispatched(), 0);
    }

    #[test]
    fn trace_has_one_line_per_dispatch() {
        let trace = SharedTrace::new();
        let mut s = Scheduler::new();
        s.set_trace(Box::new(trace.clone()));
        s.schedule(SimTime(1), mine(2)).unwrap();
        s.schedule(
            SimTime(4),
            Action::DeliverInv {
                to: NodeId(1),
                from: NodeId(2),
                block: BlockId(9),
            },
        )
        .unwrap();
        while s.pop().is_some() {}
        let text = String::from_utf8(trace.contents()).unwrap();
        assert_eq!(text, "1\t0\tGenerateBlock\t2\n4\t1\tDeliverInv\t1\t2\t9\n");
    }

    #[test]
    fn streams_are_reproducible_and_independent() {
        let draw = |purpose| {
            let mut rng = random_stream(42, purpose);
            (0..8).map(|_| rng.random::<u64>()).collect::<Vec<_>>()
        };
        assert_eq!(draw(StreamPurpose::Mining), draw(StreamPurpose::Mining));
        assert_ne!(draw(StreamPurpose::Mining), draw(StreamPurpose::Topology));
        assert_ne!(draw(StreamPurpose::Region), draw(StreamPurpose::Reselection));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn dispatch_times_never_decrease(times in proptest::collection::vec(0u64..1_000, 1..200)) {
                let mut s = Scheduler::new();
                for (i, t) in times.iter().enumerate() {
                    s.schedule(SimTime(*t), mine(i as u32)).unwrap();
                }
                let mut last = (SimTime::ZERO, 0u64);
                let mut first = true;
                while let Some(e) = s.pop() {
                    if !first {
                        prop_assert!((e.fire_at, e.seq) > last);
                    }
                    prop_assert_eq!(s.now(), e.fire_at);
                    last = (e.fire_at, e.seq);
                    first = false;
                }
                prop_assert_eq!(s.dispatched(), times.len() as u64);
            }
        }
    }
}
