//! Replicas: a local state, its resolved view, a nonce counter and the
//! invariant catalog the replica enforces.
//!
//! A replica commits a transaction only if the resulting local state is valid
//! under its catalog, and merges incoming versions unconditionally (merges
//! cannot abort). Validity is tracked incrementally: the replica keeps the set
//! of currently violated invariant groups and re-checks only groups touched by
//! a commit or merge.

use crate::adt::NonceValue;
use crate::error::Result;
use crate::invariants::{
    maintain_view, maintainable, Group, InvariantSpec, MaintainMode, NamedInvariant, ViewWrite,
};
use crate::schema::Schema;
use crate::state::{
    AbortReason, CounterKind, Decision, DatabaseState, Payload, TransactionOutcome,
    ValidityVerdict, Version, Witness,
};
use crate::txn::{next_sequence, ExecState, Executor, SequenceRequest, Step, Transaction, Write};
use crate::value::{ItemId, ReplicaId, TxnId, Value};
use crate::view::{Change, Undo, View};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

/// Schema, enforced invariants and extra indexes shared by replicas.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    pub schema: Arc<Schema>,
    pub invariants: Vec<NamedInvariant>,
    /// Additional (table, fields) indexes for workload lookups.
    pub indexes: Vec<(String, Vec<String>)>,
}

impl Catalog {
    pub fn new(schema: Schema, invariants: Vec<NamedInvariant>) -> Self {
        Catalog {
            schema: Arc::new(schema),
            invariants,
            indexes: Vec::new(),
        }
    }

    pub fn with_index(mut self, table: &str, fields: &[&str]) -> Self {
        self.indexes
            .push((table.to_string(), fields.iter().map(|s| s.to_string()).collect()));
        self
    }

    /// A catalog with the same schema and indexes but other invariants.
    pub fn restricted(&self, invariants: Vec<NamedInvariant>) -> Self {
        Catalog {
            schema: self.schema.clone(),
            invariants,
            indexes: self.indexes.clone(),
        }
    }

    /// A view of `s` carrying every index the catalog needs.
    pub fn view(&self, s: &DatabaseState) -> View {
        let mut view = View::new(self.schema.clone());
        self.index(&mut view);
        for v in s.iter() {
            view.apply(v);
        }
        view
    }

    fn index(&self, view: &mut View) {
        for inv in &self.invariants {
            for (t, f) in inv.spec.indexes() {
                view.ensure_index(&t, &f);
            }
        }
        for (t, f) in &self.indexes {
            view.ensure_index(t, f);
        }
    }

    /// Full evaluation of the catalog over a state.
    pub fn is_valid(&self, s: &DatabaseState) -> ValidityVerdict {
        crate::invariants::evaluate_view(&self.invariants, &self.view(s))
    }
}

type GroupId = (usize, Group);

/// One replica.
#[derive(Clone)]
pub struct ReplicaState {
    pub id: ReplicaId,
    local: DatabaseState,
    nonce: u64,
    catalog: Arc<Catalog>,
    view: View,
    violations: BTreeMap<GroupId, Witness>,
}

/// Outcome of a tentative commit that has not been validated yet.
struct Tentative {
    log_len: usize,
    max_ts: u64,
    undos: Vec<Undo>,
    changes: Vec<Change>,
    produced: Vec<Arc<Version>>,
}

impl ReplicaState {
    pub fn new(id: ReplicaId, catalog: Arc<Catalog>, initial: &DatabaseState) -> Self {
        let view = catalog.view(initial);
        let mut r = ReplicaState {
            id,
            local: initial.clone(),
            nonce: 0,
            catalog,
            view,
            violations: BTreeMap::new(),
        };
        r.violations = r.full_check();
        r
    }

    /// A new replica with identity `id` holding a copy of this one's state.
    pub fn fork(&self, id: ReplicaId) -> Self {
        ReplicaState {
            id,
            local: self.local.clone(),
            nonce: 0,
            catalog: self.catalog.clone(),
            view: self.view.clone(),
            violations: self.violations.clone(),
        }
    }

    pub fn local(&self) -> &DatabaseState {
        &self.local
    }

    pub fn view(&self) -> &View {
        &self.view
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    pub fn nonce_counter(&self) -> u64 {
        self.nonce
    }

    /// Whether the local state satisfies every enforced invariant.
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn verdict(&self) -> ValidityVerdict {
        match self.violations.values().next() {
            Some(w) => ValidityVerdict::invalid(w.clone()),
            None => ValidityVerdict::valid(),
        }
    }

    pub fn violation_count(&self) -> usize {
        self.violations.len()
    }

    fn full_check(&self) -> BTreeMap<GroupId, Witness> {
        let mut out = BTreeMap::new();
        for (i, inv) in self.catalog.invariants.iter().enumerate() {
            for g in inv.spec.all_groups(&self.view) {
                if let Some(w) = inv.spec.check(&inv.name, &self.view, &g) {
                    out.insert((i, g), w);
                }
            }
        }
        out
    }

    /// Draws a fresh nonce.
    pub fn next_nonce(&mut self) -> NonceValue {
        let n = NonceValue {
            replica: self.id,
            counter: self.nonce,
        };
        self.nonce += 1;
        n
    }

    /// Starts executing `t` under a fresh transaction identity.
    pub fn begin(&mut self, t: &Transaction) -> ExecState {
        let n = self.next_nonce();
        ExecState::new(
            TxnId {
                replica: self.id,
                counter: n.counter,
            },
            t,
        )
    }

    /// Runs `t` forward from its current position against the local view.
    pub fn execute(&mut self, t: &Transaction, st: &mut ExecState, split: bool) -> Result<Step> {
        let exec = Executor::new(&self.catalog.schema, &self.view, self.id);
        exec.run(t, st, &mut self.nonce, split)
    }

    /// Runs `t` drawing nonces from an explicit counter instead of the
    /// replica's, so that re-running a transaction reproduces its keys.
    pub fn execute_with_nonce(&self, t: &Transaction, st: &mut ExecState, nonce: &mut u64) -> Result<Step> {
        let exec = Executor::new(&self.catalog.schema, &self.view, self.id);
        exec.run(t, st, nonce, false)
    }

    /// Executes and, if valid, commits `t` locally.
    pub fn apply_transaction(&mut self, t: &Transaction) -> Result<TransactionOutcome> {
        let mut st = self.begin(t);
        match self.execute(t, &mut st, false)? {
            Step::Done => Ok(self.commit(st)),
            Step::Aborted => Ok(aborted(st.txn, AbortReason::ExplicitAbort)),
            Step::Suspended(_) => unreachable!("local execution never suspends"),
        }
    }

    /// Validates and commits the writes of a finished execution. The local
    /// state is unchanged if the result would be invalid.
    pub fn commit(&mut self, st: ExecState) -> TransactionOutcome {
        let txn = st.txn;
        let writes = st.into_writes();
        self.commit_writes(txn, writes, true)
    }

    /// Commits writes, optionally without validation (used for writes whose
    /// validity is established elsewhere, such as a lock-protected store).
    pub fn commit_writes(&mut self, txn: TxnId, writes: Vec<Write>, validate: bool) -> TransactionOutcome {
        let mut tent = Tentative {
            log_len: self.local.arrivals_since(0).len(),
            max_ts: self.local.max_timestamp(),
            undos: Vec::new(),
            changes: Vec::new(),
            produced: Vec::new(),
        };
        let ts = self.local.max_timestamp() + 1;
        self.apply_writes(txn, ts, writes, &mut tent);
        self.maintain(txn, ts, MaintainMode::Delta, &mut tent);
        let updates = self.recheck(&tent.changes);
        if validate {
            let mut remaining = self.violations.len() as i64;
            let mut first_new = None;
            for (k, w) in &updates {
                match (self.violations.contains_key(k), w) {
                    (true, None) => remaining -= 1,
                    (false, Some(w)) => {
                        remaining += 1;
                        first_new.get_or_insert_with(|| w.clone());
                    }
                    _ => {}
                }
            }
            if remaining > 0 {
                let witness = first_new
                    .or_else(|| {
                        let fixed: BTreeSet<&GroupId> = updates
                            .iter()
                            .filter(|(_, w)| w.is_none())
                            .map(|(k, _)| k)
                            .collect();
                        self.violations
                            .iter()
                            .find(|(k, _)| !fixed.contains(k))
                            .map(|(_, w)| w.clone())
                    })
                    .expect("a violation remains");
                for u in tent.undos.into_iter().rev() {
                    self.view.undo(u);
                }
                self.local.truncate(tent.log_len, tent.max_ts);
                return aborted(txn, AbortReason::InvariantViolation { witness });
            }
        }
        self.store(updates);
        TransactionOutcome {
            txn,
            decision: Decision::Commit,
            produced: tent.produced,
            abort_reason: None,
        }
    }

    fn apply_writes(&mut self, txn: TxnId, ts: u64, writes: Vec<Write>, tent: &mut Tentative) {
        for w in writes {
            let v = Arc::new(Version {
                item: w.item,
                writer: txn,
                seq: tent.produced.len() as u32,
                origin: self.id,
                timestamp: ts,
                payload: w.payload,
            });
            self.local.insert(v.clone());
            let (change, undo) = self.view.apply(&v);
            tent.changes.extend(change);
            tent.undos.push(undo);
            tent.produced.push(v);
        }
    }

    /// Brings maintainable views in line with the groups touched so far,
    /// repeating for views defined over other views.
    fn maintain(&mut self, txn: TxnId, ts: u64, mode: MaintainMode, tent: &mut Tentative) {
        let mut start = 0;
        for _ in 0..4 {
            let changes = &tent.changes[start..];
            if changes.is_empty() {
                return;
            }
            let mut writes = Vec::new();
            for inv in &self.catalog.invariants {
                let InvariantSpec::MaterializedView { view: vf } = &inv.spec else {
                    continue;
                };
                if !maintainable(vf, &self.catalog.schema) {
                    continue;
                }
                let mut groups = BTreeSet::new();
                for ch in changes {
                    inv.spec.groups_for(ch, &mut groups);
                }
                if groups.is_empty() {
                    continue;
                }
                for vw in maintain_view(vf, &self.view, Some(&groups), mode) {
                    writes.push(self.view_write(vw));
                }
            }
            start = tent.changes.len();
            if writes.is_empty() {
                return;
            }
            self.apply_writes(txn, ts, writes, tent);
        }
    }

    fn view_write(&self, vw: ViewWrite) -> Write {
        match vw {
            ViewWrite::Counter { item, delta } => Write {
                item,
                payload: Payload::Counter {
                    kind: if delta >= 0 {
                        CounterKind::Increment
                    } else {
                        CounterKind::Decrement
                    },
                    amount: delta.abs(),
                },
            },
            ViewWrite::CounterAssign { item, value } => Write {
                item,
                payload: Payload::Counter {
                    kind: CounterKind::Assign,
                    amount: value,
                },
            },
            ViewWrite::Field { item, field, value } => {
                let mut row = self.view.get(&item).map(|r| (**r).clone()).unwrap_or_default();
                row.insert(field, Value::Int(value));
                Write {
                    item,
                    payload: Payload::Record(row),
                }
            }
        }
    }

    fn recheck(&self, changes: &[Change]) -> Vec<(GroupId, Option<Witness>)> {
        let mut out = Vec::new();
        for (i, inv) in self.catalog.invariants.iter().enumerate() {
            let mut groups = BTreeSet::new();
            for ch in changes {
                inv.spec.groups_for(ch, &mut groups);
            }
            for g in groups {
                let w = inv.spec.check(&inv.name, &self.view, &g);
                out.push(((i, g), w));
            }
        }
        out
    }

    fn store(&mut self, updates: Vec<(GroupId, Option<Witness>)>) {
        for (k, w) in updates {
            match w {
                Some(w) => {
                    self.violations.insert(k, w);
                }
                None => {
                    self.violations.remove(&k);
                }
            }
        }
    }

    /// Merges versions into the local state, then repairs materialized views
    /// whose groups the merge touched. Returns the number of new versions.
    pub fn merge_versions<'v>(&mut self, versions: impl IntoIterator<Item = &'v Arc<Version>>) -> usize {
        let mut tent = Tentative {
            log_len: 0,
            max_ts: 0,
            undos: Vec::new(),
            changes: Vec::new(),
            produced: Vec::new(),
        };
        let mut added = 0;
        for v in versions {
            if self.local.insert(v.clone()) {
                added += 1;
                let (change, _) = self.view.apply(v);
                tent.changes.extend(change);
            }
        }
        if added == 0 {
            return 0;
        }
        let n = self.next_nonce();
        let txn = TxnId {
            replica: self.id,
            counter: n.counter,
        };
        let ts = self.local.max_timestamp() + 1;
        self.maintain(txn, ts, MaintainMode::Reset, &mut tent);
        let updates = self.recheck(&tent.changes);
        self.store(updates);
        added
    }

    /// Merges another state into this replica.
    pub fn merge(&mut self, other: &DatabaseState) -> usize {
        self.merge_versions(other.iter())
    }

    /// Allocates the next value of a sequence record homed at this replica,
    /// committing the increment locally.
    pub fn allocate_sequence(&mut self, req: &SequenceRequest) -> i64 {
        let row = self.view.get(&req.item).map(|r| (**r).clone());
        let (v, row) = next_sequence(row, &req.item, &self.catalog.schema, &req.field);
        let n = self.next_nonce();
        let txn = TxnId {
            replica: self.id,
            counter: n.counter,
        };
        self.commit_writes(
            txn,
            vec![Write {
                item: req.item.clone(),
                payload: Payload::Record(row),
            }],
            false,
        );
        v
    }

    /// Live fields of one record.
    pub fn read(&self, item: &ItemId) -> Option<&crate::view::Row> {
        self.view.get(item)
    }
}

impl std::fmt::Debug for ReplicaState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReplicaState")
            .field("id", &self.id)
            .field("nonce", &self.nonce)
            .field("local", &self.local)
            .finish()
    }
}

fn aborted(txn: TxnId, reason: AbortReason) -> TransactionOutcome {
    TransactionOutcome {
        txn,
        decision: Decision::Abort,
        produced: Vec::new(),
        abort_reason: Some(reason),
    }
}

/// Functional form: executes `t` on a copy of `r`.
pub fn apply_transaction(t: &Transaction, r: &ReplicaState) -> Result<(TransactionOutcome, ReplicaState)> {
    let mut next = r.clone();
    let out = next.apply_transaction(t)?;
    Ok((out, next))
}

/// Functional form of nonce generation.
pub fn nonce(r: &ReplicaState) -> (NonceValue, ReplicaState) {
    let mut next = r.clone();
    let n = next.next_nonce();
    (n, next)
}

/// Tombstones every record of `table` whose `field` equals `value` (and the
/// records of each referencing `(table, field)`), plus a cascade marker.
pub fn cascade_delete(
    catalog: &Arc<Catalog>,
    s: &DatabaseState,
    table: &str,
    field: &str,
    value: Value,
    referencing: &[(&str, &str)],
    replica: ReplicaId,
) -> Result<Vec<Arc<Version>>> {
    use crate::txn::{Expr, Operation, Reference};
    let t = Transaction::new(
        "cascade",
        vec![Operation::CascadeDelete {
            table: table.to_string(),
            field: field.to_string(),
            value: Expr::Lit(value),
            referencing: referencing
                .iter()
                .map(|(t, f)| Reference {
                    table: t.to_string(),
                    field: f.to_string(),
                })
                .collect(),
        }],
    );
    let mut r = ReplicaState::new(replica, catalog.restricted(Vec::new()).into(), s);
    Ok(r.apply_transaction(&t)?.produced)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::invariants::InvariantSpec;
    use crate::schema::TableSchema;
    use crate::txn::{Cond, Expr, Operation};

    fn catalog() -> Arc<Catalog> {
        let schema = Schema::new().with("c", TableSchema::counter(&["k"]));
        let inv = InvariantSpec::CounterGreaterThan {
            table: "c".into(),
            key: Some(vec![Value::Int(0)]),
            bound: -1,
        };
        Arc::new(Catalog::new(schema, vec![NamedInvariant::new("nonnegative", inv)]))
    }

    fn step(op: fn(String, Vec<Expr>, Expr) -> Operation) -> Transaction {
        Transaction::new("step", vec![op("c".into(), vec![Expr::int(0)], Expr::int(1))])
    }

    fn inc(table: String, key: Vec<Expr>, by: Expr) -> Operation {
        Operation::Increment { table, key, by }
    }

    fn dec(table: String, key: Vec<Expr>, by: Expr) -> Operation {
        Operation::Decrement { table, key, by }
    }

    #[test]
    fn invalid_results_abort_and_leave_the_state_unchanged() {
        let mut r = ReplicaState::new(ReplicaId(1), catalog(), &DatabaseState::new());
        assert!(r.apply_transaction(&step(inc)).unwrap().committed());
        assert!(r.apply_transaction(&step(dec)).unwrap().committed());
        let before = r.local().clone();
        let out = r.apply_transaction(&step(dec)).unwrap();
        assert!(matches!(out.abort_reason, Some(AbortReason::InvariantViolation { .. })));
        assert_eq!(r.local(), &before);
        assert!(r.is_valid());
    }

    #[test]
    fn explicit_aborts_write_nothing() {
        let mut r = ReplicaState::new(ReplicaId(1), catalog(), &DatabaseState::new());
        let t = Transaction::new(
            "never",
            vec![
                Operation::AbortIf { cond: Cond::Const(true) },
                inc("c".into(), vec![Expr::int(0)], Expr::int(1)),
            ],
        );
        let out = r.apply_transaction(&t).unwrap();
        assert_eq!(out.abort_reason, Some(AbortReason::ExplicitAbort));
        assert!(r.local().is_empty());
    }

    #[test]
    fn merging_counts_new_versions_and_keeps_timestamps_ahead() {
        let mut a = ReplicaState::new(ReplicaId(1), catalog(), &DatabaseState::new());
        let mut b = a.fork(ReplicaId(2));
        a.apply_transaction(&step(inc)).unwrap();
        b.apply_transaction(&step(inc)).unwrap();
        b.apply_transaction(&step(inc)).unwrap();
        assert_eq!(a.merge(b.local()), 2);
        assert_eq!(a.merge(b.local()), 0);
        assert_eq!(a.view().counter(&ItemId::new("c", vec![Value::Int(0)])), 3);
        let out = a.apply_transaction(&step(inc)).unwrap();
        assert!(out.produced.iter().all(|v| v.timestamp > b.local().max_timestamp()));
    }
}
