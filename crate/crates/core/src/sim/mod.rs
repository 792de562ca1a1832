//! Discrete-event execution of workloads across simulated replicas.
//!
//! Time is virtual (microseconds) and the event loop is single-threaded, so a
//! configuration and seed fully determine the resulting [`Metrics`].
//! Independent runs can execute in parallel.

mod commit;
mod free;
mod locking;
mod metrics;
pub mod network;

pub use commit::{model_commit_throughput, CommitEstimate, CommitProtocol};
pub use free::run_coordination_free;
pub use locking::run_coordinated;
pub use metrics::{LatencySummary, Metrics};
pub use network::{load_samples, Jitter, Micros, NetworkModel, Partition};

use crate::error::{Error, Result};
use crate::replica::{Catalog, ReplicaState};
use crate::state::DatabaseState;
use crate::txn::Transaction;
use crate::value::ItemId;
use crate::workload::Workload;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Local validation and commit; asynchronous anti-entropy merges.
    CoordinationFree,
    /// Two-phase locking over items homed at replicas.
    Coordinated2pl,
    /// Two-phase locking plus a two-phase-commit round for multi-site
    /// transactions.
    Coordinated2pcModel,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coordination-free" | "coordination-avoiding" => Ok(Strategy::CoordinationFree),
            "coordinated-2pl" | "2pl" => Ok(Strategy::Coordinated2pl),
            "coordinated-2pc-model" | "2pc" => Ok(Strategy::Coordinated2pcModel),
            _ => Err(Error::ConfigInvalid(format!("unknown strategy `{s}`"))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::CoordinationFree => "coordination-free",
            Strategy::Coordinated2pl => "coordinated-2pl",
            Strategy::Coordinated2pcModel => "coordinated-2pc-model",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SimConfig {
    pub replicas: usize,
    pub clients: usize,
    pub duration_ms: f64,
    pub strategy: Strategy,
    pub anti_entropy_interval_ms: f64,
    pub seed: u64,
    pub network: NetworkModel,
    /// Simulated cost of executing one transaction.
    pub exec_cost_us: Micros,
    /// Pause between a client's transactions.
    pub think_time_us: Micros,
    /// Anti-entropy rounds after the run, with partitions healed.
    pub drain_rounds: usize,
    /// Replica of each client; empty assigns clients round-robin.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub client_replicas: Vec<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            replicas: 2,
            clients: 4,
            duration_ms: 1000.0,
            strategy: Strategy::CoordinationFree,
            anti_entropy_interval_ms: 10.0,
            seed: 0,
            network: NetworkModel::default(),
            exec_cost_us: 0,
            think_time_us: 100,
            drain_rounds: 2,
            client_replicas: Vec::new(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.to_string()));
        if self.replicas == 0 || self.clients == 0 {
            return bad("replicas and clients must be at least 1");
        }
        if !(self.duration_ms > 0.0) {
            return bad("duration must be positive");
        }
        if !(self.anti_entropy_interval_ms > 0.0) {
            return bad("anti-entropy interval must be positive");
        }
        if self.exec_cost_us == 0 && self.think_time_us == 0 {
            return bad("execution cost and think time cannot both be zero");
        }
        if !self.client_replicas.is_empty() && self.client_replicas.len() != self.clients {
            return bad("client-replicas must list one replica per client");
        }
        if self.client_replicas.iter().any(|&r| r >= self.replicas) {
            return bad("client-replicas names a replica out of range");
        }
        for p in &self.network.partitions {
            if p.a >= self.replicas || p.b >= self.replicas {
                return bad("partition names a replica out of range");
            }
        }
        self.network.validate()
    }

    pub fn client_replica(&self, client: usize) -> usize {
        self.client_replicas
            .get(client)
            .copied()
            .unwrap_or(client % self.replicas)
    }

    pub fn duration(&self) -> Micros {
        network::micros(self.duration_ms)
    }
}

/// Adds a partition between `pair` over `interval` (milliseconds).
pub fn inject_partition(cfg: &SimConfig, pair: (usize, usize), interval: (f64, f64)) -> Result<SimConfig> {
    let (start_ms, end_ms) = interval;
    if !(0.0 <= start_ms && start_ms <= end_ms && end_ms <= cfg.duration_ms) {
        return Err(Error::ConfigInvalid(format!(
            "partition interval [{start_ms}, {end_ms}) is not within the run"
        )));
    }
    let mut out = cfg.clone();
    out.network.partitions.push(Partition {
        a: pair.0,
        b: pair.1,
        start_ms,
        end_ms,
    });
    out.validate()?;
    Ok(out)
}

/// Who is asking for the next transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClientCtx {
    pub client: usize,
    pub replica: usize,
    pub replicas: usize,
}

/// Anything that can feed transactions to the simulator.
pub trait TxnSource: Sync {
    fn catalog(&self) -> &Arc<Catalog>;

    fn initial(&self) -> &DatabaseState;

    /// The next transaction for a client, given its replica's current
    /// state; `None` idles the client for one think time.
    fn next_txn(&self, ctx: &ClientCtx, state: &ReplicaState, rng: &mut ChaCha8Rng) -> Option<Transaction>;

    /// Home replica of an item (its lock manager and sequence allocator);
    /// `None` for read-only reference data that needs no coordination.
    fn home(&self, item: &ItemId, replicas: usize) -> Option<usize> {
        Some(hashed_home(item, replicas))
    }
}

/// Deterministic hash placement.
pub fn hashed_home(item: &ItemId, replicas: usize) -> usize {
    let mut h = DefaultHasher::new();
    item.hash(&mut h);
    (h.finish() % replicas as u64) as usize
}

impl TxnSource for Workload {
    fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    fn initial(&self) -> &DatabaseState {
        &self.initial
    }

    fn next_txn(&self, _: &ClientCtx, _: &ReplicaState, rng: &mut ChaCha8Rng) -> Option<Transaction> {
        self.sample(rng)
    }
}

/// Metrics of a run plus its final states: one per replica for
/// coordination-free runs, the single locked store otherwise.
#[derive(Debug, Clone)]
pub struct SimRun {
    pub metrics: Metrics,
    pub states: Vec<DatabaseState>,
}

/// Runs the strategy selected by `cfg`.
pub fn simulate(source: &dyn TxnSource, cfg: &SimConfig) -> Result<Metrics> {
    execute(source, cfg).map(|r| r.metrics)
}

/// Runs the strategy selected by `cfg`, keeping the final states.
pub fn execute(source: &dyn TxnSource, cfg: &SimConfig) -> Result<SimRun> {
    match cfg.strategy {
        Strategy::CoordinationFree => free::run(source, cfg),
        Strategy::Coordinated2pl | Strategy::Coordinated2pcModel => locking::run(source, cfg),
    }
}

/// Event queue ordered by time, then insertion order.
struct Queue<E> {
    heap: BinaryHeap<Reverse<(Micros, u64, Slot<E>)>>,
    seq: u64,
}

/// Wrapper that keeps event payloads out of the ordering.
struct Slot<E>(E);

impl<E> PartialEq for Slot<E> {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl<E> Eq for Slot<E> {}

impl<E> PartialOrd for Slot<E> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Slot<E> {
    fn cmp(&self, _: &Self) -> std::cmp::Ordering {
        std::cmp::Ordering::Equal
    }
}

impl<E> Queue<E> {
    fn new() -> Self {
        Queue {
            heap: BinaryHeap::new(),
            seq: 0,
        }
    }

    fn push(&mut self, at: Micros, e: E) {
        self.seq += 1;
        self.heap.push(Reverse((at, self.seq, Slot(e))));
    }

    fn pop(&mut self) -> Option<(Micros, E)> {
        self.heap.pop().map(|Reverse((t, _, Slot(e)))| (t, e))
    }
}
