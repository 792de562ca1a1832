//! Dynamic confluence checking: random diamond executions.
//!
//! Each trial builds a valid ancestor state by a random prefix history, grows
//! two independent branch histories from it (possibly forking and merging
//! sub-branches along the way, keeping only valid intermediate states), and
//! merges the branch end states. A merged state that violates the invariants
//! while both branches are valid is a counterexample to confluence. Finding
//! none is evidence, not proof.

use crate::error::{Error, Result};
use crate::replica::{Catalog, ReplicaState};
use crate::state::{DatabaseState, Witness};
use crate::txn::Transaction;
use crate::value::ReplicaId;
use crate::workload::Workload;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

/// Where a history node takes its input state from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Input {
    Ancestor,
    Node(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Node {
    /// Executes `txn` on a fresh replica holding the input state.
    Transaction {
        input: Input,
        replica: ReplicaId,
        txn: Transaction,
    },
    /// Merges two earlier states on a fresh replica.
    Merge {
        left: Input,
        right: Input,
        replica: ReplicaId,
    },
}

/// A partially ordered sequence of transaction and merge invocations from
/// an ancestor state. Node inputs always refer to earlier nodes, so the
/// vector order is a topological order. The last node (or the ancestor, if
/// there are none) is the history's end.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct History {
    pub ancestor: DatabaseState,
    pub nodes: Vec<Node>,
    pub seed: u64,
    /// End state recorded by the generator.
    pub end_state: DatabaseState,
}

impl History {
    pub fn end(&self) -> Input {
        match self.nodes.len() {
            0 => Input::Ancestor,
            n => Input::Node(n - 1),
        }
    }

    /// Number of transaction invocations.
    pub fn transactions(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Transaction { .. }))
            .count()
    }
}

impl fmt::Display for Input {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Input::Ancestor => write!(f, "ancestor"),
            Input::Node(i) => write!(f, "s{i}"),
        }
    }
}

fn describe_txn(t: &Transaction) -> String {
    let params: Vec<String> = t.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!("{}({})", t.name, params.join(", "))
}

impl History {
    /// Step-by-step rendering, one line per node.
    pub fn narrative(&self, label: &str) -> Vec<String> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| match n {
                Node::Transaction {
                    input,
                    replica,
                    txn,
                } => format!("{label} s{i}: {replica} runs {} on {input}", describe_txn(txn)),
                Node::Merge {
                    left,
                    right,
                    replica,
                } => format!("{label} s{i}: {replica} merges {left} and {right}"),
            })
            .collect()
    }
}

/// Re-executes a history node by node on isolated replicas, checking every
/// intermediate state, and returns the end state.
pub fn replay(h: &History, catalog: &Arc<Catalog>) -> Result<DatabaseState> {
    let mut states: Vec<DatabaseState> = Vec::with_capacity(h.nodes.len());
    let get = |states: &Vec<DatabaseState>, i: Input| -> Result<DatabaseState> {
        match i {
            Input::Ancestor => Ok(h.ancestor.clone()),
            Input::Node(j) if j < states.len() => Ok(states[j].clone()),
            Input::Node(j) => Err(Error::ReplayInvalid(format!("node input s{j} is not earlier"))),
        }
    };
    let start = ReplicaState::new(ReplicaId(u32::MAX), catalog.clone(), &h.ancestor);
    if let Some(w) = start.verdict().witness {
        return Err(Error::ReplayInvalid(format!("ancestor: {w}")));
    }
    for (i, node) in h.nodes.iter().enumerate() {
        let r = match node {
            Node::Transaction {
                input,
                replica,
                txn,
            } => {
                let mut r = ReplicaState::new(*replica, catalog.clone(), &get(&states, *input)?);
                let out = r.apply_transaction(txn)?;
                if !out.committed() {
                    return Err(Error::ReplayInvalid(format!(
                        "s{i}: {} aborted: {:?}",
                        describe_txn(txn),
                        out.abort_reason
                    )));
                }
                r
            }
            Node::Merge {
                left,
                right,
                replica,
            } => {
                let mut r = ReplicaState::new(*replica, catalog.clone(), &get(&states, *left)?);
                r.merge(&get(&states, *right)?);
                r
            }
        };
        if let Some(w) = r.verdict().witness {
            return Err(Error::ReplayInvalid(format!("s{i}: {w}")));
        }
        states.push(r.local().clone());
    }
    get(&states, h.end())
}

/// Tuning of the history generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    /// Maximum transactions per branch.
    pub depth: usize,
    /// Maximum transactions in the ancestor prefix.
    pub prefix: usize,
    /// Probability that a step forks a sub-branch and merges it back.
    pub fork_probability: f64,
    /// Parameter bindings tried per step before giving up on the step.
    pub retries: usize,
}

impl GenConfig {
    pub fn new(depth: usize) -> Self {
        GenConfig {
            depth,
            prefix: 3,
            fork_probability: 0.25,
            retries: 8,
        }
    }
}

struct Generator<'a> {
    w: &'a Workload,
    rng: ChaCha8Rng,
    next_replica: u32,
    cfg: GenConfig,
}

/// Length drawn from a geometric distribution biased toward short runs,
/// capped at `max`.
fn geometric(rng: &mut ChaCha8Rng, min: usize, max: usize) -> usize {
    let mut n = min;
    while n < max && rng.random_bool(0.5) {
        n += 1;
    }
    n
}

impl Generator<'_> {
    fn fresh(&mut self) -> ReplicaId {
        self.next_replica += 1;
        ReplicaId(self.next_replica)
    }

    /// Runs one random committed transaction on a fork of `from`.
    fn step(&mut self, from: &ReplicaState) -> Option<(ReplicaState, Transaction)> {
        for _ in 0..self.cfg.retries {
            let t = self.w.sample(&mut self.rng)?;
            let mut r = from.fork(self.fresh());
            match r.apply_transaction(&t) {
                Ok(out) if out.committed() && r.is_valid() => return Some((r, t)),
                _ => {}
            }
        }
        None
    }

    /// Grows a history of up to `len` transactions from `ancestor`.
    fn history(&mut self, ancestor: &ReplicaState, len: usize, seed: u64) -> History {
        let mut nodes = Vec::new();
        let mut states: Vec<ReplicaState> = Vec::new();
        let mut head = (Input::Ancestor, ancestor.clone());
        let mut done = 0;
        while done < len {
            let fork = done + 2 <= len && self.rng.random_bool(self.cfg.fork_probability);
            if fork {
                // A sub-branch from an earlier state, merged back into head.
                let k = self.rng.random_range(0..=states.len());
                let (base_in, base) = if k == states.len() {
                    (Input::Ancestor, ancestor.clone())
                } else {
                    (Input::Node(k), states[k].clone())
                };
                let Some((side, t)) = self.step(&base) else {
                    done += 1;
                    continue;
                };
                let mut merged = head.1.fork(self.fresh());
                merged.merge(side.local());
                done += 1;
                if !merged.is_valid() {
                    continue;
                }
                nodes.push(Node::Transaction {
                    input: base_in,
                    replica: side.id,
                    txn: t,
                });
                states.push(side);
                let side_in = Input::Node(nodes.len() - 1);
                nodes.push(Node::Merge {
                    left: head.0,
                    right: side_in,
                    replica: merged.id,
                });
                states.push(merged.clone());
                head = (Input::Node(nodes.len() - 1), merged);
            } else {
                done += 1;
                if let Some((r, t)) = self.step(&head.1) {
                    nodes.push(Node::Transaction {
                        input: head.0,
                        replica: r.id,
                        txn: t,
                    });
                    states.push(r.clone());
                    head = (Input::Node(nodes.len() - 1), r);
                }
            }
        }
        History {
            ancestor: ancestor.local().clone(),
            nodes,
            seed,
            end_state: head.1.local().clone(),
        }
    }
}

/// A random valid ancestor and two independent branch histories from it.
#[derive(Debug, Clone)]
pub struct DivergentPair {
    pub ancestor: DatabaseState,
    /// History that produced the ancestor from the initial state.
    pub prefix: History,
    pub left: History,
    pub right: History,
}

fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Attempts (bounded) before concluding no transaction can ever commit.
const GENERATION_ATTEMPTS: u64 = 16;

/// Generates a valid ancestor and two valid divergent branches.
pub fn generate_divergent_pair(w: &Workload, cfg: GenConfig, seed: u64) -> Result<DivergentPair> {
    if cfg.depth == 0 {
        return Err(Error::ConfigInvalid("depth must be at least 1".into()));
    }
    let d0 = ReplicaState::new(ReplicaId(1), w.catalog.clone(), &w.initial);
    if let Some(wit) = d0.verdict().witness {
        return Err(Error::GenerationExhausted(format!("initial state is invalid: {wit}")));
    }
    for attempt in 0..GENERATION_ATTEMPTS {
        let mut g = Generator {
            w,
            rng: trial_rng(seed, attempt),
            next_replica: 1,
            cfg,
        };
        let prefix_len = geometric(&mut g.rng, 0, cfg.prefix);
        let prefix = g.history(&d0, prefix_len, seed);
        let ancestor = ReplicaState::new(g.fresh(), w.catalog.clone(), &prefix.end_state);
        let l1 = geometric(&mut g.rng, 1, cfg.depth);
        let l2 = geometric(&mut g.rng, 1, cfg.depth);
        let left = g.history(&ancestor, l1, seed);
        let right = g.history(&ancestor, l2, seed);
        let pair = DivergentPair {
            ancestor: ancestor.local().clone(),
            prefix,
            left,
            right,
        };
        let empty = w.templates.is_empty();
        if empty || pair.left.transactions() + pair.right.transactions() > 0 {
            return Ok(pair);
        }
    }
    Err(Error::GenerationExhausted(format!(
        "no transaction of `{}` committed in {GENERATION_ATTEMPTS} attempts",
        w.name
    )))
}

/// A validated counterexample: two valid branches whose merge is invalid.
#[derive(Debug, Clone)]
pub struct Counterexample {
    pub trial: usize,
    pub ancestor: DatabaseState,
    pub left: History,
    pub right: History,
    pub merged: DatabaseState,
    pub witness: Witness,
}

impl Counterexample {
    /// Human-readable diamond: ancestor, both branches, merge and violation.
    pub fn narrative(&self) -> String {
        let mut lines = vec![format!(
            "trial {}: ancestor with {} versions",
            self.trial,
            self.ancestor.len()
        )];
        lines.extend(self.left.narrative("  branch 1"));
        lines.push("  branch 1 end state is valid".into());
        lines.extend(self.right.narrative("  branch 2"));
        lines.push("  branch 2 end state is valid".into());
        lines.push(format!(
            "  merge of both end states ({} versions) violates {}",
            self.merged.len(),
            self.witness
        ));
        lines.join("\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    CounterexampleFound,
    NoCounterexampleFound,
}

#[derive(Debug, Clone)]
pub struct ConfluenceVerdict {
    pub outcome: Outcome,
    /// Trials run (up to and including the one that found a counterexample).
    pub trials: usize,
    pub counterexample: Option<Counterexample>,
}

/// Merges two branch end states on a fresh replica, including view repair.
pub fn merge_branches(catalog: &Arc<Catalog>, a: &DatabaseState, b: &DatabaseState) -> ReplicaState {
    let mut r = ReplicaState::new(ReplicaId(u32::MAX), catalog.clone(), a);
    r.merge(b);
    r
}

/// Independently re-validates a diamond: both branches valid under full
/// evaluation and the merge invalid. Returns the merge's witness.
pub fn validate_diamond(catalog: &Arc<Catalog>, a: &DatabaseState, b: &DatabaseState) -> Option<(DatabaseState, Witness)> {
    if !catalog.is_valid(a).valid || !catalog.is_valid(b).valid {
        return None;
    }
    let merged = merge_branches(catalog, a, b);
    let verdict = catalog.is_valid(merged.local());
    verdict.witness.map(|w| (merged.local().clone(), w))
}

/// Runs up to `trials` random diamonds; stops at the first counterexample
/// by trial index. Trials run in parallel with per-trial derived seeds, so
/// the result depends only on the arguments.
pub fn check_dynamic(w: &Workload, trials: usize, depth: usize, seed: u64) -> Result<ConfluenceVerdict> {
    check_dynamic_with(w, trials, GenConfig::new(depth), seed)
}

pub fn check_dynamic_with(w: &Workload, trials: usize, cfg: GenConfig, seed: u64) -> Result<ConfluenceVerdict> {
    if trials == 0 {
        return Err(Error::ConfigInvalid("trials must be at least 1".into()));
    }
    let found = (0..trials).into_par_iter().find_map_first(|i| {
        let trial_seed = seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        match generate_divergent_pair(w, cfg, trial_seed) {
            Err(e) => Some(Err(e)),
            Ok(pair) => {
                let (merged, witness) =
                    validate_diamond(&w.catalog, &pair.left.end_state, &pair.right.end_state)?;
                Some(Ok(Counterexample {
                    trial: i,
                    ancestor: pair.ancestor,
                    left: pair.left,
                    right: pair.right,
                    merged,
                    witness,
                }))
            }
        }
    });
    match found {
        None => Ok(ConfluenceVerdict {
            outcome: Outcome::NoCounterexampleFound,
            trials,
            counterexample: None,
        }),
        Some(Err(e)) => Err(e),
        Some(Ok(cx)) => Ok(ConfluenceVerdict {
            outcome: Outcome::CounterexampleFound,
            trials: cx.trial + 1,
            counterexample: Some(cx),
        }),
    }
}
