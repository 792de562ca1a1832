//! Coordinated execution with two-phase locking.
//!
//! The database is one logical copy whose items are homed at replicas.
//! A transaction first learns its access set by a reconnaissance run, then
//! requests exclusive locks one at a time in global item order (so no
//! deadlock is possible), executes once all are held and releases them at
//! commit. Granting a lock homed away from the client's replica costs one
//! sampled message delay, paid while the lock is held: for a contended item
//! the next holder cannot start until that delay elapses, which bounds the
//! item's throughput by the inverse of the delay. In the two-phase-commit
//! variant, transactions spanning several sites also hold their locks for
//! one commit round trip to the slowest participant.

use super::metrics::{LatencySummary, Metrics};
use super::network::{millis, Micros};
use super::{ClientCtx, Queue, SimConfig, SimRun, Strategy, TxnSource};
use crate::error::Result;
use crate::replica::ReplicaState;
use crate::txn::{ExecState, Step, Transaction};
use crate::value::{ItemId, ReplicaId, TxnId};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet, VecDeque};

enum Event {
    Client(usize),
    /// The lock a client is waiting on is usable.
    Granted(usize),
    /// A client with all locks held executes and commits.
    Commit(usize),
}

struct Pending {
    txn: Transaction,
    /// Transaction number, in start order.
    id: u64,
    started: Micros,
    locks: Vec<(ItemId, usize)>,
    next: usize,
    requested: Micros,
}

#[derive(Default)]
struct Lock {
    holder: Option<usize>,
    waiting: VecDeque<usize>,
}

struct Engine<'a> {
    source: &'a dyn TxnSource,
    cfg: &'a SimConfig,
    rng: ChaCha8Rng,
    queue: Queue<Event>,
    store: ReplicaState,
    locks: BTreeMap<ItemId, Lock>,
    pending: Vec<Option<Pending>>,
    next_id: u64,
    /// Per item, transactions in the order they were granted its lock.
    grants: BTreeMap<ItemId, Vec<u64>>,
    /// Transaction numbers in completion (commit or abort) order.
    completed: Vec<u64>,
    latencies: Vec<Micros>,
    committed_in_window: u64,
    stall: Micros,
    m: Metrics,
}

/// Runs `source` under two-phase locking (optionally with a two-phase
/// commit round), checking conflict serializability of the result.
pub fn run_coordinated(source: &dyn TxnSource, cfg: &SimConfig) -> Result<Metrics> {
    run(source, cfg).map(|r| r.metrics)
}

pub(super) fn run(source: &dyn TxnSource, cfg: &SimConfig) -> Result<SimRun> {
    cfg.validate()?;
    let mut e = Engine {
        source,
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        queue: Queue::new(),
        store: ReplicaState::new(ReplicaId(1), source.catalog().clone(), source.initial()),
        locks: BTreeMap::new(),
        pending: (0..cfg.clients).map(|_| None).collect(),
        next_id: 0,
        grants: BTreeMap::new(),
        completed: Vec::new(),
        latencies: Vec::new(),
        committed_in_window: 0,
        stall: 0,
        m: Metrics::new(cfg.strategy, cfg.replicas),
    };
    if !e.store.is_valid() {
        e.m.violations += 1;
    }
    for c in 0..cfg.clients {
        e.queue.push(0, Event::Client(c));
    }
    let mut last = 0;
    while let Some((now, ev)) = e.queue.pop() {
        e.m.events += 1;
        last = now;
        match ev {
            Event::Client(c) => e.start(c, now),
            Event::Granted(c) => {
                let p = e.pending[c].as_mut().expect("granted to a pending transaction");
                e.stall += now - p.requested;
                p.next += 1;
                e.acquire(c, now);
            }
            Event::Commit(c) => e.commit(c, now),
        }
    }
    e.m.serializable = Some(e.serializable());
    e.m.latency = LatencySummary::from_samples(std::mem::take(&mut e.latencies));
    e.m.throughput = e.committed_in_window as f64 / (cfg.duration_ms / 1000.0);
    e.m.coordination_stall_ms = millis(e.stall);
    e.m.simulated_ms = millis(last.max(cfg.duration()));
    Ok(SimRun {
        metrics: e.m,
        states: vec![e.store.local().clone()],
    })
}

impl Engine<'_> {
    fn client_replica(&self, c: usize) -> usize {
        self.cfg.client_replica(c)
    }

    /// Items `txn` accesses against the current store, sorted in global
    /// order with their homes; `None` if the transaction aborts.
    fn access_set(&mut self, txn: &Transaction, id: u64) -> Option<Vec<(ItemId, usize)>> {
        let (step, st) = self.run(txn, id);
        match step {
            Ok(Step::Done) => {}
            _ => return None,
        }
        Some(
            st.accessed
                .keys()
                .filter_map(|item| {
                    self.source
                        .home(item, self.cfg.replicas)
                        .map(|h| (item.clone(), h))
                })
                .collect(),
        )
    }

    /// Executes `txn` against the store without committing. Transaction
    /// `id` owns the nonce block `id << 32..`, so every run of the same
    /// transaction creates the same new keys.
    fn run(&self, txn: &Transaction, id: u64) -> (Result<Step>, ExecState) {
        let base = id << 32;
        let mut st = ExecState::new(
            TxnId {
                replica: self.store.id,
                counter: base,
            },
            txn,
        );
        let mut nonce = base + 1;
        let step = self.store.execute_with_nonce(txn, &mut st, &mut nonce);
        (step, st)
    }

    fn start(&mut self, c: usize, now: Micros) {
        if now >= self.cfg.duration() {
            return;
        }
        let r = self.client_replica(c);
        let ctx = ClientCtx {
            client: c,
            replica: r,
            replicas: self.cfg.replicas,
        };
        let Some(txn) = self.source.next_txn(&ctx, &self.store, &mut self.rng) else {
            self.queue.push(now + self.cfg.think_time_us.max(1), Event::Client(c));
            return;
        };
        self.m.attempts += 1;
        let id = self.next_id;
        self.next_id += 1;
        let Some(locks) = self.access_set(&txn, id) else {
            self.m.aborted += 1;
            self.completed.push(id);
            self.queue.push(now + self.cfg.exec_cost_us + self.cfg.think_time_us, Event::Client(c));
            return;
        };
        self.pending[c] = Some(Pending {
            txn,
            id,
            started: now,
            locks,
            next: 0,
            requested: now,
        });
        self.acquire(c, now);
    }

    /// Requests the client's next lock, or schedules the commit once all
    /// locks are held.
    fn acquire(&mut self, c: usize, now: Micros) {
        let r = self.client_replica(c);
        let p = self.pending[c].as_mut().expect("acquiring for a pending transaction");
        if p.next == p.locks.len() {
            let homes: BTreeSet<usize> = p.locks.iter().map(|(_, h)| *h).collect();
            let mut at = now + self.cfg.exec_cost_us;
            if self.cfg.strategy == Strategy::Coordinated2pcModel && homes.iter().any(|&h| h != r) {
                // One prepare/commit round trip to the slowest participant.
                let rtt = homes
                    .iter()
                    .filter(|&&h| h != r)
                    .map(|_| self.cfg.network.sample(&mut self.rng) + self.cfg.network.sample(&mut self.rng))
                    .max()
                    .unwrap_or(0);
                self.m.messages_sent += 2 * homes.iter().filter(|&&h| h != r).count() as u64;
                self.stall += rtt;
                at += rtt;
            }
            self.queue.push(at, Event::Commit(c));
            return;
        }
        p.requested = now;
        let item = p.locks[p.next].0.clone();
        let lock = self.locks.entry(item.clone()).or_default();
        if lock.holder.is_none() {
            lock.holder = Some(c);
            self.grant(c, &item, now);
        } else {
            lock.waiting.push_back(c);
        }
    }

    /// Grants `item` to `c` at its home at time `now`.
    fn grant(&mut self, c: usize, item: &ItemId, now: Micros) {
        let r = self.client_replica(c);
        let p = self.pending[c].as_ref().expect("granting to a pending transaction");
        let home = p.locks[p.next].1;
        self.grants.entry(item.clone()).or_default().push(p.id);
        let at = if home == r {
            now
        } else {
            self.m.messages_sent += 1;
            // Unreachable homes stall the request until the link heals.
            let send = self.cfg.network.partitioned(r, home, now).unwrap_or(now);
            send + self.cfg.network.sample(&mut self.rng)
        };
        self.queue.push(at, Event::Granted(c));
    }

    /// Releases every lock `c` holds. A `discard`ed attempt wrote nothing,
    /// so its grants are dropped from the conflict history.
    fn release(&mut self, c: usize, now: Micros, discard: bool) {
        let p = self.pending[c].take().expect("releasing a pending transaction");
        for (item, _) in &p.locks[..p.next] {
            if discard {
                let g = self.grants.get_mut(item).expect("granted item recorded");
                if let Some(i) = g.iter().rposition(|&id| id == p.id) {
                    g.remove(i);
                }
            }
            let lock = self.locks.get_mut(item).expect("held lock exists");
            debug_assert_eq!(lock.holder, Some(c));
            lock.holder = lock.waiting.pop_front();
            if let Some(next) = lock.holder {
                self.grant(next, item, now);
            }
        }
    }

    fn commit(&mut self, c: usize, now: Micros) {
        let p = self.pending[c].as_ref().expect("committing a pending transaction");
        let txn = p.txn.clone();
        let (id, started) = (p.id, p.started);
        let held: BTreeSet<&ItemId> = p.locks.iter().map(|(i, _)| i).collect();
        let (step, st) = self.run(&txn, id);
        let covered = st
            .accessed
            .keys()
            .all(|i| held.contains(i) || self.source.home(i, self.cfg.replicas).is_none());
        if matches!(step, Ok(Step::Done)) && !covered {
            // The access set changed since reconnaissance: release and retry
            // with the new set.
            let fresh = self.access_set(&txn, id);
            self.release(c, now, true);
            match fresh {
                Some(locks) => {
                    self.pending[c] = Some(Pending {
                        txn,
                        id,
                        started,
                        locks,
                        next: 0,
                        requested: now,
                    });
                    self.acquire(c, now);
                }
                None => self.finish(c, id, started, now, false),
            }
            return;
        }
        let ok = match step {
            Ok(Step::Done) => self.store.commit(st).committed(),
            _ => false,
        };
        if !self.store.is_valid() {
            self.m.violations += 1;
        }
        self.release(c, now, false);
        self.finish(c, id, started, now, ok);
    }

    fn finish(&mut self, c: usize, id: u64, started: Micros, now: Micros, ok: bool) {
        self.completed.push(id);
        if ok {
            self.m.committed += 1;
            self.latencies.push(now - started);
            if now <= self.cfg.duration() {
                self.committed_in_window += 1;
            }
        } else {
            self.m.aborted += 1;
        }
        self.queue.push(now + self.cfg.think_time_us, Event::Client(c));
    }

    /// Every item's lock grants must follow completion order: then the
    /// conflict order of every pair of transactions agrees with a single
    /// serial order.
    fn serializable(&self) -> bool {
        let position: BTreeMap<u64, usize> = self
            .completed
            .iter()
            .enumerate()
            .map(|(i, id)| (*id, i))
            .collect();
        self.grants.values().all(|ids| {
            ids.iter()
                .map(|id| position.get(id).copied().unwrap_or(usize::MAX))
                .collect::<Vec<_>>()
                .windows(2)
                .all(|w| w[0] < w[1])
        })
    }
}
