//! Coordination-free execution: every transaction validates and commits
//! against its replica's local state; replicas exchange versions by
//! anti-entropy. The only cross-site step is allocating the next value of a
//! sequence record, which goes to that record's home replica.

use super::metrics::{LatencySummary, Metrics};
use super::network::{millis, Micros};
use super::{ClientCtx, Queue, SimConfig, SimRun, TxnSource};
use crate::error::Result;
use crate::replica::ReplicaState;
use crate::state::Version;
use crate::txn::{ExecState, SequenceRequest, Step, Transaction};
use crate::value::ReplicaId;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

enum Event {
    /// A client starts its next transaction.
    Client(usize),
    /// A sequence allocation request reaches the sequence's home.
    SeqRequest { client: usize, home: usize },
    /// The allocated value reaches the waiting client.
    SeqReply { client: usize, value: i64 },
    /// Every replica ships its new versions to every peer.
    AntiEntropy,
    Deliver {
        from: usize,
        to: usize,
        upto: usize,
        versions: Vec<Arc<Version>>,
    },
}

struct Pending {
    txn: Transaction,
    st: ExecState,
    started: Micros,
    request: Option<(SequenceRequest, Micros)>,
}

struct Engine<'a> {
    source: &'a dyn TxnSource,
    cfg: &'a SimConfig,
    rng: ChaCha8Rng,
    queue: Queue<Event>,
    replicas: Vec<ReplicaState>,
    /// `acked[i][j]`: prefix of replica i's arrival log known delivered to j.
    acked: Vec<Vec<usize>>,
    pending: Vec<Option<Pending>>,
    latencies: Vec<Micros>,
    committed_in_window: u64,
    m: Metrics,
    stall: Micros,
}

/// Runs `source` with local commits and asynchronous merging. Every replica
/// state is checked against the catalog after every event; violations are
/// counted in the metrics rather than aborting the run.
pub fn run_coordination_free(source: &dyn TxnSource, cfg: &SimConfig) -> Result<Metrics> {
    run(source, cfg).map(|r| r.metrics)
}

pub(super) fn run(source: &dyn TxnSource, cfg: &SimConfig) -> Result<SimRun> {
    cfg.validate()?;
    let n = cfg.replicas;
    let replicas = (0..n)
        .map(|i| ReplicaState::new(ReplicaId(i as u32 + 1), source.catalog().clone(), source.initial()))
        .collect();
    let mut e = Engine {
        source,
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        queue: Queue::new(),
        replicas,
        acked: vec![vec![0; n]; n],
        pending: (0..cfg.clients).map(|_| None).collect(),
        latencies: Vec::new(),
        committed_in_window: 0,
        m: Metrics::new(cfg.strategy, n),
        stall: 0,
    };
    for r in 0..n {
        e.check(r);
    }
    for c in 0..cfg.clients {
        e.queue.push(0, Event::Client(c));
    }
    if n > 1 {
        e.queue.push(super::network::micros(cfg.anti_entropy_interval_ms), Event::AntiEntropy);
    }
    let mut last = 0;
    while let Some((now, ev)) = e.queue.pop() {
        e.m.events += 1;
        last = now;
        e.handle(now, ev)?;
    }
    e.m.converged_at_end = e.replicas.windows(2).all(|w| w[0].local() == w[1].local());
    e.drain();
    let states: Vec<_> = e.replicas.iter().map(|r| r.local()).collect();
    e.m.converged = states
        .iter()
        .map(|s| states.iter().all(|o| *o == *s))
        .collect();
    e.m.latency = LatencySummary::from_samples(std::mem::take(&mut e.latencies));
    e.m.throughput = e.committed_in_window as f64 / (cfg.duration_ms / 1000.0);
    e.m.coordination_stall_ms = millis(e.stall);
    e.m.simulated_ms = millis(last.max(cfg.duration()));
    Ok(SimRun {
        metrics: e.m,
        states: e.replicas.iter().map(|r| r.local().clone()).collect(),
    })
}

impl Engine<'_> {
    fn client_replica(&self, c: usize) -> usize {
        self.cfg.client_replica(c)
    }

    fn check(&mut self, r: usize) {
        let rep = &self.replicas[r];
        if rep.violation_count() > 0 {
            self.m.violations += 1;
            if self.m.first_violation.is_none() {
                let w = rep.verdict().witness.map(|w| w.to_string()).unwrap_or_default();
                self.m.first_violation = Some(format!("replica {r}: {w}"));
            }
        }
    }

    /// Arrival time of a reliable message sent at `now`; a partition holds it
    /// until the link heals.
    fn reliable(&mut self, from: usize, to: usize, now: Micros) -> Micros {
        self.m.messages_sent += 1;
        let send = self.cfg.network.partitioned(from, to, now).unwrap_or(now);
        send + self.cfg.network.sample(&mut self.rng)
    }

    fn handle(&mut self, now: Micros, ev: Event) -> Result<()> {
        match ev {
            Event::Client(c) => {
                if now >= self.cfg.duration() {
                    return Ok(());
                }
                let r = self.client_replica(c);
                let ctx = ClientCtx {
                    client: c,
                    replica: r,
                    replicas: self.cfg.replicas,
                };
                let Some(txn) = self.source.next_txn(&ctx, &self.replicas[r], &mut self.rng) else {
                    self.queue.push(now + self.cfg.think_time_us.max(1), Event::Client(c));
                    return Ok(());
                };
                self.m.attempts += 1;
                let st = self.replicas[r].begin(&txn);
                self.pending[c] = Some(Pending {
                    txn,
                    st,
                    started: now,
                    request: None,
                });
                self.advance(c, now)
            }
            Event::SeqRequest { client, home } => {
                let p = self.pending[client].as_mut().expect("request has a pending transaction");
                let (req, _) = p.request.as_ref().expect("request recorded");
                let value = self.replicas[home].allocate_sequence(req);
                self.check(home);
                let r = self.client_replica(client);
                let at = self.reliable(home, r, now);
                self.queue.push(at, Event::SeqReply { client, value });
                Ok(())
            }
            Event::SeqReply { client, value } => {
                let p = self.pending[client].as_mut().expect("reply has a pending transaction");
                let (_, sent) = p.request.take().expect("request recorded");
                self.stall += now - sent;
                p.st.resume(&p.txn, value);
                self.advance(client, now)
            }
            Event::AntiEntropy => {
                let n = self.cfg.replicas;
                for from in 0..n {
                    let log = self.replicas[from].local().arrivals_since(0);
                    let upto = log.len();
                    for to in (0..n).filter(|&to| to != from) {
                        let since = self.acked[from][to];
                        if since >= upto {
                            continue;
                        }
                        self.m.messages_sent += 1;
                        if self.cfg.network.partitioned(from, to, now).is_some() {
                            self.m.messages_dropped += 1;
                            continue;
                        }
                        let versions = log[since..upto].to_vec();
                        let at = now + self.cfg.network.sample(&mut self.rng);
                        self.queue.push(
                            at,
                            Event::Deliver {
                                from,
                                to,
                                upto,
                                versions,
                            },
                        );
                    }
                }
                let next = now + super::network::micros(self.cfg.anti_entropy_interval_ms);
                if next < self.cfg.duration() {
                    self.queue.push(next, Event::AntiEntropy);
                }
                Ok(())
            }
            Event::Deliver {
                from,
                to,
                upto,
                versions,
            } => {
                if self.cfg.network.partitioned(from, to, now).is_some() {
                    self.m.messages_dropped += 1;
                    return Ok(());
                }
                self.replicas[to].merge_versions(versions.iter());
                self.acked[from][to] = self.acked[from][to].max(upto);
                self.check(to);
                Ok(())
            }
        }
    }

    /// Runs a client's transaction until it finishes or waits on a remote
    /// sequence allocation.
    fn advance(&mut self, c: usize, now: Micros) -> Result<()> {
        let r = self.client_replica(c);
        loop {
            let p = self.pending[c].as_mut().expect("advancing a pending transaction");
            let step = match self.replicas[r].execute(&p.txn, &mut p.st, true) {
                Ok(s) => s,
                Err(_) => Step::Aborted,
            };
            match step {
                Step::Suspended(req) => {
                    let home = self.source.home(&req.item, self.cfg.replicas).unwrap_or(r);
                    if home == r {
                        let v = self.replicas[r].allocate_sequence(&req);
                        self.check(r);
                        let p = self.pending[c].as_mut().expect("pending");
                        p.st.resume(&p.txn, v);
                        continue;
                    }
                    let p = self.pending[c].as_mut().expect("pending");
                    p.request = Some((req, now));
                    let at = self.reliable(r, home, now);
                    self.queue.push(at, Event::SeqRequest { client: c, home });
                    return Ok(());
                }
                Step::Aborted => {
                    self.pending[c] = None;
                    self.m.aborted += 1;
                }
                Step::Done => {
                    let p = self.pending[c].take().expect("pending");
                    let out = self.replicas[r].commit(p.st);
                    self.check(r);
                    let done = now + self.cfg.exec_cost_us;
                    if out.committed() {
                        self.m.committed += 1;
                        self.latencies.push(done - p.started);
                        if done <= self.cfg.duration() {
                            self.committed_in_window += 1;
                        }
                    } else {
                        self.m.aborted += 1;
                    }
                }
            }
            let next = now + self.cfg.exec_cost_us + self.cfg.think_time_us;
            self.queue.push(next, Event::Client(c));
            return Ok(());
        }
    }

    /// Heals all partitions and runs all-to-all exchange rounds.
    fn drain(&mut self) {
        let n = self.cfg.replicas;
        for _ in 0..self.cfg.drain_rounds {
            let snapshot: Vec<_> = self.replicas.iter().map(|r| r.local().clone()).collect();
            for to in 0..n {
                for (from, s) in snapshot.iter().enumerate() {
                    if from != to {
                        self.m.messages_sent += 1;
                        self.replicas[to].merge(s);
                        self.check(to);
                    }
                }
            }
        }
    }
}
