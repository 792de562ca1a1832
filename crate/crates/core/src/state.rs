//! Versions, database states and the set-union merge.

use crate::value::{Fields, ItemId, ReplicaId, TxnId, Value};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

/// Pseudo-table holding cascade markers.
pub const CASCADE_TABLE: &str = "#cascade";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CounterKind {
    Increment,
    Decrement,
    Assign,
}

/// Identity of one event (writer transaction plus sequence number). Events
/// are versions, so their identity is the version identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EventId {
    pub writer: TxnId,
    pub seq: u32,
}

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.writer, self.seq)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Payload {
    /// Full record image; key fields included.
    Record(Fields),
    /// Deletion marker for a record.
    Tombstone,
    /// Counter event; `amount` is the step for increments and decrements and
    /// the new base for assignments.
    Counter { kind: CounterKind, amount: i64 },
    /// Collection insertion; the event's own identity is its tag.
    Add(Value),
    /// Collection removal of one specific earlier insertion.
    Remove { value: Value, target: EventId },
    /// Records that a cascading delete of `table.field = value` happened.
    Cascade {
        table: String,
        field: String,
        value: Value,
    },
}

/// One immutable write of one item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Version {
    pub item: ItemId,
    pub writer: TxnId,
    pub seq: u32,
    pub origin: ReplicaId,
    /// Lamport timestamp shared by all versions of one transaction.
    pub timestamp: u64,
    pub payload: Payload,
}

impl Version {
    pub fn key(&self) -> VersionKey {
        VersionKey {
            writer: self.writer,
            seq: self.seq,
            item: self.item.clone(),
        }
    }

    pub fn event_id(&self) -> EventId {
        EventId {
            writer: self.writer,
            seq: self.seq,
        }
    }

    /// Total order used for last-writer-wins resolution. The writer's
    /// transaction counter precedes the sequence number so that one
    /// transaction wins or loses consistently across all items it wrote.
    pub fn order(&self) -> OrderKey {
        OrderKey {
            timestamp: self.timestamp,
            replica: self.origin,
            txn: self.writer.counter,
            seq: self.seq,
        }
    }
}

/// Unique identity of a version within any state.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VersionKey {
    pub writer: TxnId,
    pub seq: u32,
    pub item: ItemId,
}

/// Last-writer-wins order key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OrderKey {
    pub timestamp: u64,
    pub replica: ReplicaId,
    pub txn: u64,
    pub seq: u32,
}

/// A set of versions. Equality compares the version sets only.
///
/// Besides the set itself the state keeps the arrival order of its versions,
/// which lets a simulator ship "everything since the last exchange" while
/// preserving full-state merge semantics.
#[derive(Clone, Default)]
pub struct DatabaseState {
    versions: BTreeMap<VersionKey, Arc<Version>>,
    log: Vec<Arc<Version>>,
    max_ts: u64,
}

impl DatabaseState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_versions(versions: impl IntoIterator<Item = Version>) -> Self {
        let mut s = Self::new();
        for v in versions {
            s.insert(Arc::new(v));
        }
        s
    }

    pub fn len(&self) -> usize {
        self.versions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.versions.is_empty()
    }

    pub fn contains(&self, key: &VersionKey) -> bool {
        self.versions.contains_key(key)
    }

    pub fn get(&self, key: &VersionKey) -> Option<&Arc<Version>> {
        self.versions.get(key)
    }

    /// Largest timestamp of any contained version (the Lamport clock).
    pub fn max_timestamp(&self) -> u64 {
        self.max_ts
    }

    /// Versions in identity order.
    pub fn iter(&self) -> impl Iterator<Item = &Arc<Version>> {
        self.versions.values()
    }

    /// Versions in arrival order starting at position `from`.
    pub fn arrivals_since(&self, from: usize) -> &[Arc<Version>] {
        &self.log[from.min(self.log.len())..]
    }

    /// Inserts a version; returns false if it was already present.
    pub fn insert(&mut self, v: Arc<Version>) -> bool {
        let key = v.key();
        if self.versions.contains_key(&key) {
            return false;
        }
        self.max_ts = self.max_ts.max(v.timestamp);
        self.versions.insert(key, v.clone());
        self.log.push(v);
        true
    }

    /// Removes the most recently inserted versions until `len` remain. Used
    /// to roll back a tentative local commit before anyone observed it.
    pub(crate) fn truncate(&mut self, len: usize, max_ts: u64) {
        while self.log.len() > len {
            let v = self.log.pop().expect("log longer than len");
            self.versions.remove(&v.key());
        }
        self.max_ts = max_ts;
    }

    pub fn is_subset(&self, other: &DatabaseState) -> bool {
        self.versions.keys().all(|k| other.versions.contains_key(k))
    }
}

/// The merge operator: set union of versions.
pub fn merge(a: &DatabaseState, b: &DatabaseState) -> DatabaseState {
    let (big, small) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let mut out = big.clone();
    for v in small.iter() {
        out.insert(v.clone());
    }
    out
}

impl PartialEq for DatabaseState {
    fn eq(&self, other: &Self) -> bool {
        self.versions.len() == other.versions.len()
            && self.versions.keys().eq(other.versions.keys())
            && self
                .versions
                .values()
                .zip(other.versions.values())
                .all(|(a, b)| a == b)
    }
}

impl Eq for DatabaseState {}

impl fmt::Debug for DatabaseState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.versions.values()).finish()
    }
}

impl Serialize for DatabaseState {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.versions.values().map(|v| v.as_ref()))
    }
}

impl<'de> Deserialize<'de> for DatabaseState {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let versions = Vec::<Version>::deserialize(d)?;
        Ok(DatabaseState::from_versions(versions))
    }
}

/// Why an invariant failed, with the items involved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    pub invariant: String,
    pub items: Vec<ItemId>,
    pub detail: String,
}

impl fmt::Display for Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.invariant, self.detail)?;
        if !self.items.is_empty() {
            write!(f, " (")?;
            for (i, item) in self.items.iter().enumerate() {
                if i > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{item}")?;
            }
            write!(f, ")")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityVerdict {
    pub valid: bool,
    pub witness: Option<Witness>,
}

impl ValidityVerdict {
    pub fn valid() -> Self {
        ValidityVerdict {
            valid: true,
            witness: None,
        }
    }

    pub fn invalid(w: Witness) -> Self {
        ValidityVerdict {
            valid: false,
            witness: Some(w),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    Commit,
    Abort,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "reason")]
pub enum AbortReason {
    ExplicitAbort,
    InvariantViolation { witness: Witness },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransactionOutcome {
    pub txn: TxnId,
    pub decision: Decision,
    pub produced: Vec<Arc<Version>>,
    pub abort_reason: Option<AbortReason>,
}

impl TransactionOutcome {
    pub fn committed(&self) -> bool {
        self.decision == Decision::Commit
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn version(counter: u64, ts: u64, item: i64) -> Version {
        Version {
            item: ItemId::new("t", vec![Value::Int(item)]),
            writer: TxnId {
                replica: ReplicaId(1),
                counter,
            },
            seq: 0,
            origin: ReplicaId(1),
            timestamp: ts,
            payload: Payload::Counter {
                kind: CounterKind::Increment,
                amount: 1,
            },
        }
    }

    /// A state drawn from a shared pool, so equal identities carry equal
    /// versions.
    fn state() -> impl Strategy<Value = DatabaseState> {
        proptest::collection::vec((0u64..16, 0u64..4, 0i64..3), 0..12).prop_map(|vs| {
            DatabaseState::from_versions(vs.into_iter().map(|(c, _, i)| version(c * 3 + i as u64, c % 4, i)))
        })
    }

    #[test]
    fn insert_reports_duplicates_and_tracks_the_clock() {
        let mut s = DatabaseState::new();
        assert!(s.insert(Arc::new(version(1, 5, 0))));
        assert!(!s.insert(Arc::new(version(1, 5, 0))));
        assert!(s.insert(Arc::new(version(2, 3, 0))));
        assert_eq!((s.len(), s.max_timestamp()), (2, 5));
        assert_eq!(s.arrivals_since(1).len(), 1);
        assert!(s.arrivals_since(9).is_empty());
    }

    #[test]
    fn truncate_rolls_back_recent_arrivals() {
        let mut s = DatabaseState::from_versions([version(1, 1, 0)]);
        s.insert(Arc::new(version(2, 7, 0)));
        s.truncate(1, 1);
        assert_eq!(s, DatabaseState::from_versions([version(1, 1, 0)]));
        assert_eq!(s.max_timestamp(), 1);
    }

    #[test]
    fn version_order_ranks_timestamp_before_replica() {
        let mut a = version(9, 1, 0);
        a.origin = ReplicaId(7);
        let b = version(1, 2, 0);
        assert!(a.order() < b.order());
    }

    proptest! {
        #[test]
        fn merge_is_a_semilattice_join(a in state(), b in state(), c in state()) {
            let ab = merge(&a, &b);
            prop_assert_eq!(&ab, &merge(&b, &a));
            prop_assert_eq!(merge(&ab, &c), merge(&a, &merge(&b, &c)));
            prop_assert_eq!(&merge(&a, &a), &a);
            prop_assert_eq!(&merge(&a, &DatabaseState::new()), &a);
            prop_assert!(a.is_subset(&ab) && b.is_subset(&ab));
            prop_assert_eq!(ab.max_timestamp(), a.max_timestamp().max(b.max_timestamp()));
        }
    }
}
