//! Merge-friendly abstract data types: counters, collections and nonces.
//!
//! ADT values are pure functions of the event versions in a state, so their
//! merge is inherited from set union. The free functions here scan a state
//! directly; [`CounterState`] and [`CollectionState`] are the incremental
//! forms maintained by the logical view.

use crate::state::{CounterKind, DatabaseState, EventId, OrderKey, Payload};
use crate::value::{ItemId, ReplicaId, Value};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

/// Value of counter `c`: increments minus decrements, relative to the base
/// set by the last-writer-wins assignment if any assignment exists.
pub fn counter_value(s: &DatabaseState, c: &ItemId) -> i64 {
    let mut st = CounterState::default();
    for v in s.iter().filter(|v| &v.item == c) {
        if let Payload::Counter { kind, amount } = v.payload {
            st.insert(v.order(), kind, amount);
        }
    }
    st.value()
}

fn collection_of(s: &DatabaseState, l: &ItemId) -> CollectionState {
    let mut st = CollectionState::default();
    for v in s.iter().filter(|v| &v.item == l) {
        match &v.payload {
            Payload::Add(value) => st.add(v.event_id(), value.clone()),
            Payload::Remove { target, .. } => st.remove(v.event_id(), *target),
            _ => {}
        }
    }
    st
}

/// Number of insertions not removed. Removals name the insertion they undo,
/// so two concurrent removals of the same insertion count once.
pub fn collection_size(s: &DatabaseState, l: &ItemId) -> i64 {
    collection_of(s, l).size()
}

/// True iff `v` has more insertions than removals of those insertions.
pub fn collection_contains(s: &DatabaseState, l: &ItemId, v: &Value) -> bool {
    collection_of(s, l).contains(v)
}

/// Contained values in ascending order.
pub fn list_order(s: &DatabaseState, l: &ItemId) -> Vec<Value> {
    collection_of(s, l).values()
}

/// Replica-scoped unique value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NonceValue {
    pub replica: ReplicaId,
    pub counter: u64,
}

impl NonceValue {
    pub fn to_value(self) -> Value {
        Value::Str(self.to_string())
    }
}

impl fmt::Display for NonceValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}.{}", self.replica.0, self.counter)
    }
}

/// Incrementally maintained counter.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CounterState {
    events: BTreeMap<OrderKey, (CounterKind, i64)>,
    base: Option<OrderKey>,
    value: i64,
}

impl CounterState {
    pub fn value(&self) -> i64 {
        self.value
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn insert(&mut self, at: OrderKey, kind: CounterKind, amount: i64) {
        if self.events.insert(at, (kind, amount)).is_some() {
            return;
        }
        match kind {
            CounterKind::Assign => {
                if self.base.is_none_or(|b| at > b) {
                    self.recompute();
                }
            }
            CounterKind::Increment | CounterKind::Decrement => {
                if self.base.is_none_or(|b| at > b) {
                    self.value += signed(kind, amount);
                }
            }
        }
    }

    pub fn remove(&mut self, at: &OrderKey) {
        if self.events.remove(at).is_some() {
            self.recompute();
        }
    }

    fn recompute(&mut self) {
        self.base = self
            .events
            .iter()
            .rev()
            .find(|(_, (k, _))| *k == CounterKind::Assign)
            .map(|(at, _)| *at);
        let (start, mut value) = match self.base {
            Some(b) => (Some(b), self.events[&b].1),
            None => (None, 0),
        };
        let tail: Box<dyn Iterator<Item = (&OrderKey, &(CounterKind, i64))>> = match start {
            Some(b) => Box::new(
                self.events
                    .range((std::ops::Bound::Excluded(b), std::ops::Bound::Unbounded)),
            ),
            None => Box::new(self.events.iter()),
        };
        for (_, (k, a)) in tail {
            if *k != CounterKind::Assign {
                value += signed(*k, *a);
            }
        }
        self.value = value;
    }
}

fn signed(kind: CounterKind, amount: i64) -> i64 {
    match kind {
        CounterKind::Increment => amount,
        CounterKind::Decrement => -amount,
        CounterKind::Assign => 0,
    }
}

/// Incrementally maintained observed-remove collection.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CollectionState {
    adds: BTreeMap<EventId, Value>,
    /// Removal events, keyed by their own identity, naming their target.
    removals: BTreeMap<EventId, EventId>,
    /// Targets with at least one removal, with the number of removals.
    removed: BTreeMap<EventId, usize>,
    live: BTreeMap<Value, BTreeSet<EventId>>,
}

impl CollectionState {
    pub fn add(&mut self, id: EventId, value: Value) {
        if self.adds.insert(id, value.clone()).is_some() {
            return;
        }
        if !self.removed.contains_key(&id) {
            self.live.entry(value).or_default().insert(id);
        }
    }

    pub fn remove(&mut self, id: EventId, target: EventId) {
        if self.removals.insert(id, target).is_some() {
            return;
        }
        let n = self.removed.entry(target).or_insert(0);
        *n += 1;
        if *n == 1 {
            if let Some(value) = self.adds.get(&target) {
                let tags = self.live.get_mut(value).expect("live tag indexed");
                tags.remove(&target);
                if tags.is_empty() {
                    self.live.remove(value);
                }
            }
        }
    }

    /// Undoes an event inserted with [`add`](Self::add) or
    /// [`remove`](Self::remove).
    pub fn forget(&mut self, id: &EventId) {
        if let Some(value) = self.adds.remove(id) {
            if let Some(tags) = self.live.get_mut(&value) {
                tags.remove(id);
                if tags.is_empty() {
                    self.live.remove(&value);
                }
            }
        }
        if let Some(target) = self.removals.remove(id) {
            let n = self.removed.get_mut(&target).expect("removal counted");
            *n -= 1;
            if *n == 0 {
                self.removed.remove(&target);
                if let Some(value) = self.adds.get(&target) {
                    self.live.entry(value.clone()).or_default().insert(target);
                }
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.adds.is_empty() && self.removals.is_empty()
    }

    pub fn size(&self) -> i64 {
        self.live.values().map(|t| t.len() as i64).sum()
    }

    pub fn contains(&self, v: &Value) -> bool {
        self.live.contains_key(v)
    }

    pub fn values(&self) -> Vec<Value> {
        self.live.keys().cloned().collect()
    }

    /// Oldest live insertion of `v`, if any.
    pub fn live_tag(&self, v: &Value) -> Option<EventId> {
        self.live.get(v).and_then(|t| t.iter().next().copied())
    }

    pub fn live_tags(&self, v: &Value) -> impl Iterator<Item = EventId> + '_ {
        self.live.get(v).into_iter().flat_map(|t| t.iter().copied())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::TxnId;
    use proptest::prelude::*;

    fn at(ts: u64, txn: u64) -> OrderKey {
        OrderKey {
            timestamp: ts,
            replica: ReplicaId(1),
            txn,
            seq: 0,
        }
    }

    fn id(n: u64) -> EventId {
        EventId {
            writer: TxnId {
                replica: ReplicaId(1),
                counter: n,
            },
            seq: 0,
        }
    }

    fn kind() -> impl Strategy<Value = CounterKind> {
        prop_oneof![
            Just(CounterKind::Increment),
            Just(CounterKind::Decrement),
            Just(CounterKind::Assign)
        ]
    }

    #[test]
    fn assignment_resets_the_base() {
        let mut c = CounterState::default();
        c.insert(at(1, 1), CounterKind::Increment, 4);
        c.insert(at(2, 2), CounterKind::Assign, 10);
        c.insert(at(3, 3), CounterKind::Decrement, 3);
        assert_eq!(c.value(), 7);
        // An increment ordered before the assignment is overwritten.
        c.insert(at(0, 4), CounterKind::Increment, 100);
        assert_eq!(c.value(), 7);
        c.remove(&at(2, 2));
        assert_eq!(c.value(), 101);
    }

    #[test]
    fn removals_name_one_insertion() {
        let mut l = CollectionState::default();
        l.add(id(1), Value::Int(5));
        l.add(id(2), Value::Int(5));
        l.remove(id(3), id(1));
        l.remove(id(4), id(1));
        assert_eq!(l.size(), 1);
        assert!(l.contains(&Value::Int(5)));
        assert_eq!(l.live_tag(&Value::Int(5)), Some(id(2)));
        // A removal that arrives before its insertion still cancels it.
        l.remove(id(5), id(6));
        l.add(id(6), Value::Int(7));
        assert!(!l.contains(&Value::Int(7)));
        l.forget(&id(5));
        assert!(l.contains(&Value::Int(7)));
    }

    #[test]
    fn nonces_render_with_their_replica() {
        let n = NonceValue {
            replica: ReplicaId(3),
            counter: 9,
        };
        assert_eq!(n.to_value(), Value::str("n3.9"));
    }

    proptest! {
        #[test]
        fn counter_is_independent_of_arrival_order(
            events in proptest::collection::vec((0u64..5, kind(), 0i64..10), 0..20),
            seed in any::<u64>(),
        ) {
            let events: Vec<_> = events.into_iter().enumerate().map(|(i, (ts, k, a))| (at(ts, i as u64), k, a)).collect();
            let mut forward = CounterState::default();
            for (o, k, a) in &events {
                forward.insert(*o, *k, *a);
            }
            let mut shuffled = events.clone();
            let n = shuffled.len().max(1);
            shuffled.rotate_left(seed as usize % n);
            shuffled.reverse();
            let mut backward = CounterState::default();
            for (o, k, a) in &shuffled {
                backward.insert(*o, *k, *a);
            }
            prop_assert_eq!(forward.value(), backward.value());
            // Removing everything returns to zero.
            for (o, _, _) in &events {
                backward.remove(o);
            }
            prop_assert_eq!(backward.value(), 0);
            prop_assert!(backward.is_empty());
        }

        #[test]
        fn forgetting_undoes_collection_events(
            ops in proptest::collection::vec((any::<bool>(), 0u64..24, 0i64..3), 0..24),
        ) {
            // Every event has its own identity; removals may name
            // insertions that arrive later or never.
            let mut l = CollectionState::default();
            let mut applied = Vec::new();
            for (n, (is_add, target, v)) in ops.into_iter().enumerate() {
                let me = id(n as u64);
                if is_add {
                    l.add(me, Value::Int(v));
                } else {
                    l.remove(me, id(target));
                }
                applied.push(me);
            }
            for e in applied.iter().rev() {
                l.forget(e);
            }
            prop_assert_eq!(l.size(), 0);
            prop_assert!(l.values().is_empty());
        }
    }
}
