//! The logical view: versions resolved into live records, counter values and
//! collection contents, maintained incrementally with secondary indexes.

use crate::adt::{CollectionState, CounterState};
use crate::schema::{Schema, TableKind, COLLECTION_SIZE_FIELD, COUNTER_VALUE_FIELD};
use crate::state::{DatabaseState, EventId, OrderKey, Payload, Version};
use crate::value::{Fields, ItemId, Key, Value};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

/// A live logical record. Counters and collections appear as rows too, with
/// their key fields plus `value` or `size`.
pub type Row = Arc<Fields>;

type IndexKey = Vec<Option<Value>>;
type Index = HashMap<IndexKey, BTreeSet<Key>>;

/// A change to one logical row, or a newly recorded cascade marker.
#[derive(Debug, Clone)]
pub enum Change {
    Row {
        table: String,
        key: Key,
        before: Option<Row>,
        after: Option<Row>,
    },
    Marker {
        table: String,
        field: String,
        value: Value,
    },
}

/// How to revert one applied version.
#[derive(Debug, Clone)]
pub enum Undo {
    Nothing,
    Plain {
        item: ItemId,
        prev: Option<Arc<Version>>,
    },
    Counter {
        item: ItemId,
        at: OrderKey,
    },
    Collection {
        item: ItemId,
        id: EventId,
    },
    Marker(String, String, Value),
}

#[derive(Clone)]
pub struct View {
    schema: Arc<Schema>,
    rows: BTreeMap<String, BTreeMap<Key, Row>>,
    plain: HashMap<ItemId, Arc<Version>>,
    counters: HashMap<ItemId, CounterState>,
    collections: HashMap<ItemId, CollectionState>,
    markers: BTreeSet<(String, String, Value)>,
    indexes: HashMap<(String, Vec<String>), Index>,
}

/// Resolves a state into its logical view.
pub fn visible_state(schema: &Arc<Schema>, s: &DatabaseState) -> View {
    View::build(schema.clone(), s)
}

fn project(row: &Fields, fields: &[String]) -> IndexKey {
    fields.iter().map(|f| row.get(f).cloned()).collect()
}

impl View {
    pub fn new(schema: Arc<Schema>) -> Self {
        View {
            schema,
            rows: BTreeMap::new(),
            plain: HashMap::new(),
            counters: HashMap::new(),
            collections: HashMap::new(),
            markers: BTreeSet::new(),
            indexes: HashMap::new(),
        }
    }

    pub fn build(schema: Arc<Schema>, s: &DatabaseState) -> Self {
        let mut view = View::new(schema);
        for v in s.iter() {
            view.apply(v);
        }
        view
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    fn key_fields(&self, table: &str, len: usize) -> Vec<String> {
        match self.schema.table(table) {
            Some(t) if t.key.len() == len => t.key.clone(),
            _ => (0..len).map(|i| format!("k{i}")).collect(),
        }
    }

    fn pseudo_row(&self, item: &ItemId, field: &str, value: i64) -> Row {
        let mut fields: Fields = self
            .key_fields(&item.table, item.key.len())
            .into_iter()
            .zip(item.key.iter().cloned())
            .collect();
        fields.insert(field.to_string(), Value::Int(value));
        Arc::new(fields)
    }

    /// Applies one version, returning the logical change (if any) and how to
    /// revert it.
    pub fn apply(&mut self, v: &Arc<Version>) -> (Option<Change>, Undo) {
        match &v.payload {
            Payload::Record(_) | Payload::Tombstone => {
                let prev = self.plain.get(&v.item).cloned();
                if prev.as_ref().is_some_and(|p| p.order() >= v.order()) {
                    return (None, Undo::Nothing);
                }
                self.plain.insert(v.item.clone(), v.clone());
                let after = match &v.payload {
                    Payload::Record(f) => Some(Arc::new(f.clone())),
                    _ => None,
                };
                let change = self.set_row(&v.item, after);
                (
                    change,
                    Undo::Plain {
                        item: v.item.clone(),
                        prev,
                    },
                )
            }
            Payload::Counter { kind, amount } => {
                let st = self.counters.entry(v.item.clone()).or_default();
                st.insert(v.order(), *kind, *amount);
                let value = st.value();
                let row = self.pseudo_row(&v.item, COUNTER_VALUE_FIELD, value);
                let change = self.set_row(&v.item, Some(row));
                (
                    change,
                    Undo::Counter {
                        item: v.item.clone(),
                        at: v.order(),
                    },
                )
            }
            Payload::Add(_) | Payload::Remove { .. } => {
                let st = self.collections.entry(v.item.clone()).or_default();
                match &v.payload {
                    Payload::Add(value) => st.add(v.event_id(), value.clone()),
                    Payload::Remove { target, .. } => st.remove(v.event_id(), *target),
                    _ => unreachable!(),
                }
                let size = st.size();
                let row = self.pseudo_row(&v.item, COLLECTION_SIZE_FIELD, size);
                let change = self.set_row(&v.item, Some(row));
                (
                    change,
                    Undo::Collection {
                        item: v.item.clone(),
                        id: v.event_id(),
                    },
                )
            }
            Payload::Cascade {
                table,
                field,
                value,
            } => {
                let m = (table.clone(), field.clone(), value.clone());
                if self.markers.insert(m) {
                    (
                        Some(Change::Marker {
                            table: table.clone(),
                            field: field.clone(),
                            value: value.clone(),
                        }),
                        Undo::Marker(table.clone(), field.clone(), value.clone()),
                    )
                } else {
                    (None, Undo::Nothing)
                }
            }
        }
    }

    pub fn undo(&mut self, u: Undo) {
        match u {
            Undo::Nothing => {}
            Undo::Plain { item, prev } => {
                let after = match prev.as_ref().map(|p| &p.payload) {
                    Some(Payload::Record(f)) => Some(Arc::new(f.clone())),
                    _ => None,
                };
                match prev {
                    Some(p) => self.plain.insert(item.clone(), p),
                    None => self.plain.remove(&item),
                };
                self.set_row(&item, after);
            }
            Undo::Counter { item, at } => {
                let st = self.counters.get_mut(&item).expect("counter exists");
                st.remove(&at);
                let row = if st.is_empty() {
                    self.counters.remove(&item);
                    None
                } else {
                    let value = st.value();
                    Some(self.pseudo_row(&item, COUNTER_VALUE_FIELD, value))
                };
                self.set_row(&item, row);
            }
            Undo::Collection { item, id } => {
                let st = self.collections.get_mut(&item).expect("collection exists");
                st.forget(&id);
                let row = if st.is_empty() {
                    self.collections.remove(&item);
                    None
                } else {
                    let size = st.size();
                    Some(self.pseudo_row(&item, COLLECTION_SIZE_FIELD, size))
                };
                self.set_row(&item, row);
            }
            Undo::Marker(t, f, v) => {
                self.markers.remove(&(t, f, v));
            }
        }
    }

    fn set_row(&mut self, item: &ItemId, after: Option<Row>) -> Option<Change> {
        let table = self.rows.entry(item.table.clone()).or_default();
        let before = match &after {
            Some(r) => table.insert(item.key.clone(), r.clone()),
            None => table.remove(&item.key),
        };
        if before.is_none() && after.is_none() {
            return None;
        }
        if before.as_ref().zip(after.as_ref()).is_some_and(|(b, a)| b == a) {
            return None;
        }
        for ((t, fields), index) in self.indexes.iter_mut() {
            if t != &item.table {
                continue;
            }
            let old = before.as_ref().map(|b| project(b, fields));
            let new = after.as_ref().map(|a| project(a, fields));
            if old == new {
                continue;
            }
            if let Some(k) = old {
                if let Some(set) = index.get_mut(&k) {
                    set.remove(&item.key);
                    if set.is_empty() {
                        index.remove(&k);
                    }
                }
            }
            if let Some(k) = new {
                index.entry(k).or_default().insert(item.key.clone());
            }
        }
        Some(Change::Row {
            table: item.table.clone(),
            key: item.key.clone(),
            before,
            after,
        })
    }

    /// Builds (once) an index over `table` on `fields`.
    pub fn ensure_index(&mut self, table: &str, fields: &[String]) {
        let id = (table.to_string(), fields.to_vec());
        if self.indexes.contains_key(&id) {
            return;
        }
        let mut index = Index::new();
        if let Some(rows) = self.rows.get(table) {
            for (key, row) in rows {
                index
                    .entry(project(row, fields))
                    .or_default()
                    .insert(key.clone());
            }
        }
        self.indexes.insert(id, index);
    }

    pub fn get(&self, item: &ItemId) -> Option<&Row> {
        self.row(&item.table, &item.key)
    }

    pub fn row(&self, table: &str, key: &Key) -> Option<&Row> {
        self.rows.get(table).and_then(|t| t.get(key))
    }

    pub fn rows(&self, table: &str) -> impl Iterator<Item = (&Key, &Row)> {
        self.rows.get(table).into_iter().flat_map(|t| t.iter())
    }

    pub fn table_len(&self, table: &str) -> usize {
        self.rows.get(table).map_or(0, |t| t.len())
    }

    /// Keys of live rows of `table` whose `fields` equal `values`. Uses an
    /// index when one exists, otherwise scans.
    pub fn lookup(&self, table: &str, fields: &[String], values: &[Option<Value>]) -> Vec<Key> {
        self.matching(table, fields, values).map(|(k, _)| k.clone()).collect()
    }

    /// Live rows of `table` whose `fields` equal `values`, by reference.
    pub fn matching<'a>(
        &'a self,
        table: &'a str,
        fields: &'a [String],
        values: &'a [Option<Value>],
    ) -> Box<dyn Iterator<Item = (&'a Key, &'a Row)> + 'a> {
        let id = (table.to_string(), fields.to_vec());
        match self.indexes.get(&id) {
            Some(index) => Box::new(
                index
                    .get(values)
                    .into_iter()
                    .flatten()
                    .filter_map(move |k| self.row(table, k).map(|r| (k, r))),
            ),
            None => Box::new(
                self.rows(table)
                    .filter(move |(_, r)| project(r, fields) == values),
            ),
        }
    }

    pub fn counter(&self, item: &ItemId) -> i64 {
        self.counters.get(item).map_or(0, |c| c.value())
    }

    pub fn collection(&self, item: &ItemId) -> Option<&CollectionState> {
        self.collections.get(item)
    }

    pub fn collection_size(&self, item: &ItemId) -> i64 {
        self.collections.get(item).map_or(0, |c| c.size())
    }

    pub fn collection_contains(&self, item: &ItemId, v: &Value) -> bool {
        self.collections.get(item).is_some_and(|c| c.contains(v))
    }

    pub fn has_marker(&self, table: &str, field: &str, value: &Value) -> bool {
        self.markers
            .contains(&(table.to_string(), field.to_string(), value.clone()))
    }

    pub fn markers(&self) -> impl Iterator<Item = &(String, String, Value)> {
        self.markers.iter()
    }

    /// Logical kind of a table: declared kind, or record if undeclared.
    pub fn kind(&self, table: &str) -> TableKind {
        self.schema.table(table).map_or(TableKind::Record, |t| t.kind)
    }

    /// Tables that currently have live rows.
    pub fn tables(&self) -> impl Iterator<Item = &String> {
        self.rows.iter().filter(|(_, r)| !r.is_empty()).map(|(t, _)| t)
    }
}

impl PartialEq for View {
    fn eq(&self, other: &Self) -> bool {
        let live = |v: &View| {
            v.rows
                .iter()
                .filter(|(_, r)| !r.is_empty())
                .map(|(t, r)| (t.clone(), r.clone()))
                .collect::<BTreeMap<_, _>>()
        };
        live(self) == live(other) && self.markers == other.markers
    }
}

impl std::fmt::Debug for View {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_map()
            .entries(self.rows.iter().filter(|(_, r)| !r.is_empty()))
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::TableSchema;
    use crate::value::{ReplicaId, TxnId};
    use proptest::prelude::*;

    fn schema() -> Arc<Schema> {
        Arc::new(Schema::new().with("t", TableSchema::record(&["k"], &["x"])))
    }

    fn version(counter: u64, ts: u64, k: i64, x: Option<i64>) -> Arc<Version> {
        Arc::new(Version {
            item: ItemId::new("t", vec![Value::Int(k)]),
            writer: TxnId {
                replica: ReplicaId(1),
                counter,
            },
            seq: 0,
            origin: ReplicaId(1),
            timestamp: ts,
            payload: match x {
                Some(x) => Payload::Record([("k".to_string(), Value::Int(k)), ("x".to_string(), Value::Int(x))].into()),
                None => Payload::Tombstone,
            },
        })
    }

    fn snapshot(v: &View) -> Vec<(Key, Fields)> {
        v.rows("t").map(|(k, r)| (k.clone(), (**r).clone())).collect()
    }

    #[test]
    fn last_writer_wins_and_tombstones_hide_rows() {
        let mut v = View::new(schema());
        v.apply(&version(1, 2, 0, Some(5)));
        v.apply(&version(2, 1, 0, Some(9)));
        assert_eq!(v.row("t", &vec![Value::Int(0)]).unwrap()["x"], Value::Int(5));
        v.apply(&version(3, 3, 0, None));
        assert!(v.row("t", &vec![Value::Int(0)]).is_none());
        assert_eq!(v.table_len("t"), 0);
    }

    proptest! {
        #[test]
        fn undo_restores_the_previous_view(
            vs in proptest::collection::vec((0u64..4, 0i64..3, proptest::option::of(0i64..9)), 1..16),
        ) {
            let versions: Vec<_> = vs.iter().enumerate().map(|(i, (ts, k, x))| version(i as u64, *ts, *k, *x)).collect();
            let mut view = View::new(schema());
            let mut undos = Vec::new();
            let mut snaps = Vec::new();
            for v in &versions {
                snaps.push(snapshot(&view));
                undos.push(view.apply(v).1);
            }
            // Arrival order does not matter.
            let rev = View::build(schema(), &DatabaseState::from_versions(versions.iter().rev().map(|v| (**v).clone())));
            prop_assert_eq!(snapshot(&view), snapshot(&rev));
            while let Some(u) = undos.pop() {
                view.undo(u);
                prop_assert_eq!(snapshot(&view), snaps.pop().unwrap());
            }
        }
    }
}
