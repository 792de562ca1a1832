//! The invariant catalog and its evaluators.
//!
//! Every invariant is evaluated group by group: a group is the smallest unit
//! whose validity can be decided independently (one record, one value of a
//! unique field, one namespace of a sequence, one view group, ...). Full
//! evaluation checks every group present in a view; incremental evaluation
//! after a commit or merge re-checks only the groups touched by the changed
//! rows, which is what keeps per-event validation cheap in the simulator.

use crate::schema::{Schema, TableKind, COUNTER_VALUE_FIELD};
use crate::state::{DatabaseState, ValidityVerdict, Witness};
use crate::view::{Change, Row, View};
use crate::value::{Fields, ItemId, Key, Value};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::sync::Arc;

/// Row filter used by foreign keys and view terms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Predicate {
    IsNull(String),
    NotNull(String),
    Equals { field: String, value: Value },
    NotEquals { field: String, value: Value },
}

impl Predicate {
    pub fn holds(&self, row: &Fields) -> bool {
        match self {
            Predicate::IsNull(f) => !row.contains_key(f),
            Predicate::NotNull(f) => row.contains_key(f),
            Predicate::Equals { field, value } => row.get(field) == Some(value),
            Predicate::NotEquals { field, value } => row.get(field) != Some(value),
        }
    }

    pub fn field(&self) -> &str {
        match self {
            Predicate::IsNull(f) | Predicate::NotNull(f) => f,
            Predicate::Equals { field, .. } | Predicate::NotEquals { field, .. } => field,
        }
    }
}

fn passes(filter: &[Predicate], row: &Fields) -> bool {
    filter.iter().all(|p| p.holds(row))
}

/// One side of a foreign-key reference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefSide {
    pub table: String,
    pub fields: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub filter: Vec<Predicate>,
}

impl RefSide {
    pub fn new(table: &str, fields: &[&str]) -> Self {
        RefSide {
            table: table.to_string(),
            fields: fields.iter().map(|s| s.to_string()).collect(),
            filter: Vec::new(),
        }
    }

    pub fn filtered(mut self, p: Predicate) -> Self {
        self.filter.push(p);
        self
    }
}

/// Resolves a row's sequence value through a lookup table sharing its key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lookup {
    pub table: String,
    pub field: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Measure {
    Count,
    Sum(String),
}

/// A grouped aggregate over a filtered table; counter and collection tables
/// expose `value` and `size` as summable fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub table: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub group_by: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub filter: Vec<Predicate>,
    pub measure: Measure,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub negate: bool,
}

impl Term {
    pub fn sum(table: &str, field: &str, group_by: &[&str]) -> Self {
        Term {
            table: table.to_string(),
            group_by: group_by.iter().map(|s| s.to_string()).collect(),
            filter: Vec::new(),
            measure: Measure::Sum(field.to_string()),
            negate: false,
        }
    }

    pub fn count(table: &str, group_by: &[&str]) -> Self {
        Term {
            table: table.to_string(),
            group_by: group_by.iter().map(|s| s.to_string()).collect(),
            filter: Vec::new(),
            measure: Measure::Count,
            negate: false,
        }
    }

    pub fn filtered(mut self, p: Predicate) -> Self {
        self.filter.push(p);
        self
    }

    pub fn negated(mut self) -> Self {
        self.negate = !self.negate;
        self
    }

    fn contribution(&self, row: &Fields) -> i64 {
        if !passes(&self.filter, row) {
            return 0;
        }
        let v = match &self.measure {
            Measure::Count => 1,
            Measure::Sum(f) => row.get(f).and_then(Value::as_int).unwrap_or(0),
        };
        if self.negate {
            -v
        } else {
            v
        }
    }

    /// Value of this term for one group.
    pub fn value(&self, view: &View, group: &[Value]) -> i64 {
        let probe: Vec<Option<Value>> = group.iter().cloned().map(Some).collect();
        view.matching(&self.table, &self.group_by, &probe)
            .map(|(_, r)| self.contribution(r))
            .sum()
    }
}

/// A materialized view: the stored terms must equal the source terms plus a
/// constant, group by group. The first stored term designates the view item
/// that maintenance adjusts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewFunction {
    pub name: String,
    pub stored: Vec<Term>,
    pub source: Vec<Term>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub offset: i64,
}

fn is_zero(v: &i64) -> bool {
    *v == 0
}

impl ViewFunction {
    fn terms(&self) -> impl Iterator<Item = &Term> {
        self.stored.iter().chain(self.source.iter())
    }

    pub fn stored_value(&self, view: &View, group: &[Value]) -> i64 {
        self.stored.iter().map(|t| t.value(view, group)).sum()
    }

    pub fn computed_value(&self, view: &View, group: &[Value]) -> i64 {
        self.source.iter().map(|t| t.value(view, group)).sum::<i64>() + self.offset
    }
}

/// Invariant classes of the catalog.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InvariantSpec {
    AttributeEquality {
        table: String,
        field: String,
        value: Value,
    },
    AttributeInequality {
        table: String,
        field: String,
        value: Value,
    },
    Uniqueness {
        table: String,
        field: String,
    },
    /// Per namespace, the assigned values form a gap-free run of distinct
    /// integers (starting at `start` when given). Rows whose value is not yet
    /// resolvable through `lookup` count as violations.
    Sequentiality {
        table: String,
        field: String,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        namespace: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        start: Option<i64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lookup: Option<Lookup>,
    },
    ForeignKey {
        from: RefSide,
        to: RefSide,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        cascade: bool,
    },
    SecondaryIndex {
        table: String,
        field: String,
        index: String,
    },
    MaterializedView {
        view: ViewFunction,
    },
    CounterGreaterThan {
        table: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        key: Option<Key>,
        bound: i64,
    },
    CounterLessThan {
        table: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        key: Option<Key>,
        bound: i64,
    },
    Contains {
        table: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        key: Option<Key>,
        value: Value,
    },
    NotContains {
        table: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        key: Option<Key>,
        value: Value,
    },
    SizeEquals {
        table: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        key: Option<Key>,
        size: i64,
    },
    /// Reads must observe the latest write. Always holds of a state; exists
    /// so the static classifier can flag it.
    Recency { table: String },
}

/// A named invariant; a list of them is evaluated as one conjunction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamedInvariant {
    pub name: String,
    #[serde(flatten)]
    pub spec: InvariantSpec,
}

impl NamedInvariant {
    pub fn new(name: impl Into<String>, spec: InvariantSpec) -> Self {
        NamedInvariant {
            name: name.into(),
            spec,
        }
    }
}

/// Unit of independent evaluation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Group {
    Item(ItemId),
    Tuple(Vec<Value>),
}

fn tuple(row: &Fields, fields: &[String]) -> Option<Vec<Value>> {
    fields.iter().map(|f| row.get(f).cloned()).collect()
}

fn witness(name: &str, items: Vec<ItemId>, detail: String) -> Witness {
    Witness {
        invariant: name.to_string(),
        items,
        detail,
    }
}

fn fmt_tuple(t: &[Value]) -> String {
    let parts: Vec<String> = t.iter().map(|v| v.to_string()).collect();
    format!("({})", parts.join(", "))
}

impl InvariantSpec {
    /// Tables whose rows the invariant reads.
    pub fn tables(&self) -> Vec<&str> {
        use InvariantSpec::*;
        match self {
            AttributeEquality { table, .. }
            | AttributeInequality { table, .. }
            | Uniqueness { table, .. }
            | CounterGreaterThan { table, .. }
            | CounterLessThan { table, .. }
            | Contains { table, .. }
            | NotContains { table, .. }
            | SizeEquals { table, .. }
            | Recency { table } => vec![table],
            Sequentiality { table, lookup, .. } => {
                let mut t = vec![table.as_str()];
                if let Some(l) = lookup {
                    t.push(&l.table);
                }
                t
            }
            ForeignKey { from, to, .. } => vec![&from.table, &to.table],
            SecondaryIndex { table, index, .. } => vec![table, index],
            MaterializedView { view } => view.terms().map(|t| t.table.as_str()).collect(),
        }
    }

    /// Indexes the evaluator relies on, as (table, fields).
    pub fn indexes(&self) -> Vec<(String, Vec<String>)> {
        use InvariantSpec::*;
        match self {
            Uniqueness { table, field } => vec![(table.clone(), vec![field.clone()])],
            Sequentiality {
                table, namespace, ..
            } => vec![(table.clone(), namespace.clone())],
            ForeignKey { from, to, .. } => vec![
                (from.table.clone(), from.fields.clone()),
                (to.table.clone(), to.fields.clone()),
            ],
            MaterializedView { view } => view
                .terms()
                .map(|t| (t.table.clone(), t.group_by.clone()))
                .collect(),
            _ => Vec::new(),
        }
    }

    /// Checks that every referenced table and field exists; returns one
    /// message per problem.
    pub fn resolve(&self, schema: &Schema) -> Vec<String> {
        use InvariantSpec::*;
        let mut errs = Vec::new();
        let mut field = |table: &str, f: &str, what: &str| match schema.table(table) {
            None => errs.push(format!("{what}: unknown table `{table}`")),
            Some(t) => {
                if !t.has_field(f) {
                    errs.push(format!("{what}: unknown field `{table}.{f}`"));
                }
            }
        };
        match self {
            AttributeEquality { table, field: f, .. }
            | AttributeInequality { table, field: f, .. }
            | Uniqueness { table, field: f } => field(table, f, "field"),
            Sequentiality {
                table,
                field: f,
                namespace,
                lookup,
                ..
            } => {
                if lookup.is_none() {
                    field(table, f, "field");
                }
                for n in namespace {
                    field(table, n, "namespace");
                }
                if let Some(l) = lookup {
                    field(&l.table, &l.field, "lookup");
                    for n in namespace {
                        field(&l.table, n, "lookup namespace");
                    }
                }
            }
            ForeignKey { from, to, .. } => {
                for (side, name) in [(from, "from"), (to, "to")] {
                    if side.fields.is_empty() {
                        field(&side.table, "", name);
                    }
                    for f in &side.fields {
                        field(&side.table, f, name);
                    }
                    for p in &side.filter {
                        field(&side.table, p.field(), name);
                    }
                }
                if from.fields.len() != to.fields.len() {
                    errs.push("foreign key sides have different arity".to_string());
                }
            }
            SecondaryIndex {
                table,
                field: f,
                index,
            } => {
                field(table, f, "field");
                field(index, f, "index");
            }
            MaterializedView { view } => {
                for t in view.terms() {
                    for g in &t.group_by {
                        field(&t.table, g, "group-by");
                    }
                    for p in &t.filter {
                        field(&t.table, p.field(), "filter");
                    }
                    if let Measure::Sum(f) = &t.measure {
                        field(&t.table, f, "measure");
                    }
                }
                let arity = view.stored.first().map(|t| t.group_by.len());
                if view.terms().any(|t| Some(t.group_by.len()) != arity) {
                    errs.push(format!("view `{}`: terms group by different arity", view.name));
                }
            }
            CounterGreaterThan { table, .. } | CounterLessThan { table, .. } => {
                field(table, COUNTER_VALUE_FIELD, "counter");
                if schema.table(table).is_some_and(|t| t.kind != TableKind::Counter) {
                    errs.push(format!("counter: `{table}` is not a counter table"));
                }
            }
            Contains { table, .. } | NotContains { table, .. } | SizeEquals { table, .. } => {
                if schema
                    .table(table)
                    .is_none_or(|t| t.kind != TableKind::Collection)
                {
                    errs.push(format!("collection: `{table}` is not a collection table"));
                }
            }
            Recency { table } => {
                if schema.table(table).is_none() {
                    errs.push(format!("recency: unknown table `{table}`"));
                }
            }
        }
        errs
    }

    /// Groups whose validity may be affected by `change`.
    pub fn groups_for(&self, change: &Change, out: &mut BTreeSet<Group>) {
        use InvariantSpec::*;
        let (table, key, before, after) = match change {
            Change::Row {
                table,
                key,
                before,
                after,
            } => (table, key, before, after),
            Change::Marker {
                table: mt,
                field: mf,
                value,
            } => {
                if let ForeignKey {
                    to, cascade: true, ..
                } = self
                {
                    if &to.table == mt && to.fields.len() == 1 && &to.fields[0] == mf {
                        out.insert(Group::Tuple(vec![value.clone()]));
                    }
                }
                return;
            }
        };
        let rows = || before.iter().chain(after.iter());
        let tuples = |fields: &[String], out: &mut BTreeSet<Group>| {
            for r in rows() {
                if let Some(t) = tuple(r, fields) {
                    out.insert(Group::Tuple(t));
                }
            }
        };
        match self {
            AttributeEquality { table: t, .. } | AttributeInequality { table: t, .. } => {
                if t == table {
                    out.insert(Group::Item(ItemId::new(table.clone(), key.clone())));
                }
            }
            Uniqueness { table: t, field } => {
                if t == table {
                    tuples(std::slice::from_ref(field), out);
                }
            }
            Sequentiality {
                table: t,
                namespace,
                lookup,
                ..
            } => {
                if t == table || lookup.as_ref().is_some_and(|l| &l.table == table) {
                    tuples(namespace, out);
                }
            }
            ForeignKey { from, to, .. } => {
                if &from.table == table {
                    tuples(&from.fields, out);
                }
                if &to.table == table {
                    tuples(&to.fields, out);
                }
            }
            SecondaryIndex { table: t, index, .. } => {
                if t == table || index == table {
                    out.insert(Group::Item(ItemId::new(t.clone(), key.clone())));
                }
            }
            MaterializedView { view } => {
                for term in view.terms().filter(|term| &term.table == table) {
                    tuples(&term.group_by, out);
                }
            }
            CounterGreaterThan { table: t, key: k, .. }
            | CounterLessThan { table: t, key: k, .. }
            | Contains { table: t, key: k, .. }
            | NotContains { table: t, key: k, .. }
            | SizeEquals { table: t, key: k, .. } => {
                if t == table && k.as_ref().is_none_or(|k| k == key) {
                    out.insert(Group::Item(ItemId::new(table.clone(), key.clone())));
                }
            }
            Recency { .. } => {}
        }
    }

    /// Every group present in `view`.
    pub fn all_groups(&self, view: &View) -> BTreeSet<Group> {
        use InvariantSpec::*;
        let mut out = BTreeSet::new();
        let tuples = |table: &str, fields: &[String], out: &mut BTreeSet<Group>| {
            for (_, r) in view.rows(table) {
                if let Some(t) = tuple(r, fields) {
                    out.insert(Group::Tuple(t));
                }
            }
        };
        match self {
            AttributeEquality { table, .. } | AttributeInequality { table, .. } => {
                for (k, _) in view.rows(table) {
                    out.insert(Group::Item(ItemId::new(table.clone(), k.clone())));
                }
            }
            Uniqueness { table, field } => tuples(table, std::slice::from_ref(field), &mut out),
            Sequentiality {
                table,
                namespace,
                lookup,
                ..
            } => {
                tuples(table, namespace, &mut out);
                if let Some(l) = lookup {
                    tuples(&l.table, namespace, &mut out);
                }
            }
            ForeignKey { from, .. } => tuples(&from.table, &from.fields, &mut out),
            SecondaryIndex { table, index, .. } => {
                for t in [table, index] {
                    for (k, _) in view.rows(t) {
                        out.insert(Group::Item(ItemId::new(table.clone(), k.clone())));
                    }
                }
            }
            MaterializedView { view: vf } => {
                for term in vf.terms() {
                    tuples(&term.table, &term.group_by, &mut out);
                }
            }
            CounterGreaterThan { table, key, .. }
            | CounterLessThan { table, key, .. }
            | Contains { table, key, .. }
            | NotContains { table, key, .. }
            | SizeEquals { table, key, .. } => match key {
                Some(k) => {
                    out.insert(Group::Item(ItemId::new(table.clone(), k.clone())));
                }
                None => {
                    for (k, _) in view.rows(table) {
                        out.insert(Group::Item(ItemId::new(table.clone(), k.clone())));
                    }
                }
            },
            Recency { .. } => {}
        }
        out
    }

    /// Checks one group.
    pub fn check(&self, name: &str, view: &View, group: &Group) -> Option<Witness> {
        use InvariantSpec::*;
        match (self, group) {
            (AttributeEquality { field, value, .. }, Group::Item(item)) => {
                let row = view.get(item)?;
                match row.get(field) {
                    Some(v) if v == value => None,
                    got => Some(witness(
                        name,
                        vec![item.clone()],
                        format!(
                            "{field} is {}, expected {value}",
                            got.map_or("null".to_string(), |v| v.to_string())
                        ),
                    )),
                }
            }
            (AttributeInequality { field, value, .. }, Group::Item(item)) => {
                let row = view.get(item)?;
                (row.get(field) == Some(value)).then(|| {
                    witness(
                        name,
                        vec![item.clone()],
                        format!("{field} equals forbidden value {value}"),
                    )
                })
            }
            (Uniqueness { table, field }, Group::Tuple(t)) => {
                let keys = view.lookup(table, std::slice::from_ref(field), &[t.first().cloned()]);
                (keys.len() > 1).then(|| {
                    witness(
                        name,
                        keys.iter()
                            .map(|k| ItemId::new(table.clone(), k.clone()))
                            .collect(),
                        format!("value {} of {table}.{field} held by {} records", t[0], keys.len()),
                    )
                })
            }
            (
                Sequentiality {
                    table,
                    field,
                    namespace,
                    start,
                    lookup,
                },
                Group::Tuple(ns),
            ) => check_sequence(name, view, table, field, namespace, *start, lookup, ns),
            (ForeignKey { from, to, cascade }, Group::Tuple(v)) => {
                let probe: Vec<Option<Value>> = v.iter().cloned().map(Some).collect();
                let dangling: Vec<&Key> = view
                    .matching(&from.table, &from.fields, &probe)
                    .filter(|(_, r)| passes(&from.filter, r))
                    .map(|(k, _)| k)
                    .collect();
                if dangling.is_empty() {
                    return None;
                }
                let target = view
                    .matching(&to.table, &to.fields, &probe)
                    .any(|(_, r)| passes(&to.filter, r));
                let exempt = *cascade
                    && to.fields.len() == 1
                    && view.has_marker(&to.table, &to.fields[0], &v[0]);
                (!target && !exempt).then(|| {
                    witness(
                        name,
                        dangling
                            .iter()
                            .map(|k| ItemId::new(from.table.clone(), (*k).clone()))
                            .collect(),
                        format!(
                            "{}.{} = {} references no {} record",
                            from.table,
                            from.fields.join(","),
                            fmt_tuple(v),
                            to.table
                        ),
                    )
                })
            }
            (SecondaryIndex { table, field, index }, Group::Item(item)) => {
                let rec = view.row(table, &item.key).and_then(|r| r.get(field));
                let ent = view.row(index, &item.key).and_then(|r| r.get(field));
                (rec != ent).then(|| {
                    witness(
                        name,
                        vec![item.clone(), ItemId::new(index.clone(), item.key.clone())],
                        format!(
                            "record has {field} = {}, index entry has {}",
                            rec.map_or("null".into(), |v| v.to_string()),
                            ent.map_or("null".into(), |v| v.to_string())
                        ),
                    )
                })
            }
            (MaterializedView { view: vf }, Group::Tuple(g)) => {
                let stored = vf.stored_value(view, g);
                let computed = vf.computed_value(view, g);
                (stored != computed).then(|| {
                    let items = vf
                        .stored
                        .iter()
                        .flat_map(|t| {
                            let probe: Vec<Option<Value>> = g.iter().cloned().map(Some).collect();
                            view.lookup(&t.table, &t.group_by, &probe)
                                .into_iter()
                                .map(|k| ItemId::new(t.table.clone(), k))
                        })
                        .collect();
                    witness(
                        name,
                        items,
                        format!(
                            "view {} for group {}: stored {stored}, computed {computed}",
                            vf.name,
                            fmt_tuple(g)
                        ),
                    )
                })
            }
            (CounterGreaterThan { bound, .. }, Group::Item(item)) => {
                let v = view.counter(item);
                (v <= *bound).then(|| {
                    witness(name, vec![item.clone()], format!("value {v} is not > {bound}"))
                })
            }
            (CounterLessThan { bound, .. }, Group::Item(item)) => {
                let v = view.counter(item);
                (v >= *bound).then(|| {
                    witness(name, vec![item.clone()], format!("value {v} is not < {bound}"))
                })
            }
            (Contains { value, .. }, Group::Item(item)) => {
                (!view.collection_contains(item, value)).then(|| {
                    witness(name, vec![item.clone()], format!("does not contain {value}"))
                })
            }
            (NotContains { value, .. }, Group::Item(item)) => {
                view.collection_contains(item, value).then(|| {
                    witness(name, vec![item.clone()], format!("contains {value}"))
                })
            }
            (SizeEquals { size, .. }, Group::Item(item)) => {
                let n = view.collection_size(item);
                (n != *size).then(|| {
                    witness(name, vec![item.clone()], format!("size {n}, expected {size}"))
                })
            }
            _ => None,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn check_sequence(
    name: &str,
    view: &View,
    table: &str,
    field: &str,
    namespace: &[String],
    start: Option<i64>,
    lookup: &Option<Lookup>,
    ns: &[Value],
) -> Option<Witness> {
    let probe: Vec<Option<Value>> = ns.iter().cloned().map(Some).collect();
    let mut assigned: Vec<(i64, ItemId)> = Vec::new();
    let mut rows: Vec<(ItemId, Option<&Row>)> = view
        .lookup(table, namespace, &probe)
        .into_iter()
        .map(|k| {
            let r = view.row(table, &k);
            (ItemId::new(table, k), r)
        })
        .collect();
    if let Some(l) = lookup {
        // Mappings without a live row in `table` do not belong to the run.
        rows.retain(|(_, r)| r.is_some());
        for (item, _) in &rows {
            match view
                .row(&l.table, &item.key)
                .and_then(|r| r.get(&l.field))
                .and_then(Value::as_int)
            {
                Some(v) => assigned.push((v, item.clone())),
                None => {
                    return Some(witness(
                        name,
                        vec![item.clone()],
                        format!("no {}.{} resolves this row", l.table, l.field),
                    ))
                }
            }
        }
    } else {
        for (item, r) in &rows {
            match r.and_then(|r| r.get(field)) {
                Some(Value::Int(v)) => assigned.push((*v, item.clone())),
                Some(Value::Str(_)) => {
                    return Some(witness(
                        name,
                        vec![item.clone()],
                        format!("{field} is not an integer"),
                    ))
                }
                None => {
                    return Some(witness(
                        name,
                        vec![item.clone()],
                        format!("{field} is unassigned"),
                    ))
                }
            }
        }
    }
    if assigned.is_empty() {
        return None;
    }
    assigned.sort();
    for w in assigned.windows(2) {
        if w[0].0 == w[1].0 {
            return Some(witness(
                name,
                vec![w[0].1.clone(), w[1].1.clone()],
                format!("value {} assigned twice in namespace {}", w[0].0, fmt_tuple(ns)),
            ));
        }
        if w[1].0 != w[0].0 + 1 {
            return Some(witness(
                name,
                vec![w[0].1.clone(), w[1].1.clone()],
                format!(
                    "gap between {} and {} in namespace {}",
                    w[0].0,
                    w[1].0,
                    fmt_tuple(ns)
                ),
            ));
        }
    }
    if let Some(s) = start {
        let first = &assigned[0];
        if first.0 != s {
            return Some(witness(
                name,
                vec![first.1.clone()],
                format!("sequence starts at {}, expected {s}", first.0),
            ));
        }
    }
    None
}

/// Evaluates a conjunction of invariants over a view; reports the first
/// violation in declaration order.
pub fn evaluate_view(specs: &[NamedInvariant], view: &View) -> ValidityVerdict {
    for inv in specs {
        for g in inv.spec.all_groups(view) {
            if let Some(w) = inv.spec.check(&inv.name, view, &g) {
                return ValidityVerdict::invalid(w);
            }
        }
    }
    ValidityVerdict::valid()
}

/// Builds a view with the indexes the invariants need.
pub fn indexed_view(schema: &Arc<Schema>, specs: &[NamedInvariant], s: &DatabaseState) -> View {
    let mut view = View::build(schema.clone(), s);
    for inv in specs {
        for (t, f) in inv.spec.indexes() {
            view.ensure_index(&t, &f);
        }
    }
    view
}

/// Evaluates one invariant over a state.
pub fn evaluate(schema: &Arc<Schema>, spec: &NamedInvariant, s: &DatabaseState) -> ValidityVerdict {
    let specs = std::slice::from_ref(spec);
    evaluate_view(specs, &indexed_view(schema, specs, s))
}

/// Evaluates a conjunction of invariants over a state.
pub fn is_valid(schema: &Arc<Schema>, specs: &[NamedInvariant], s: &DatabaseState) -> ValidityVerdict {
    evaluate_view(specs, &indexed_view(schema, specs, s))
}

/// How maintenance writes a counter-backed view item.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaintainMode {
    /// Emit increments/decrements for the difference (commutes with
    /// concurrent maintenance of independent updates).
    Delta,
    /// Emit an assignment of the recomputed value (idempotent when several
    /// replicas repair the same divergence).
    Reset,
}

/// A view-item write produced by maintenance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViewWrite {
    Counter { item: ItemId, delta: i64 },
    CounterAssign { item: ItemId, value: i64 },
    Field { item: ItemId, field: String, value: i64 },
}

/// Whether the first stored term names a single view item per group.
pub fn maintainable(vf: &ViewFunction, schema: &Schema) -> bool {
    let Some(t) = vf.stored.first() else {
        return false;
    };
    let Some(ts) = schema.table(&t.table) else {
        return false;
    };
    if ts.key != t.group_by || !t.filter.is_empty() {
        return false;
    }
    match (&ts.kind, &t.measure) {
        (TableKind::Counter, Measure::Sum(f)) => f == COUNTER_VALUE_FIELD,
        (TableKind::Record, Measure::Sum(f)) => !ts.key.contains(f),
        _ => false,
    }
}

/// Writes that bring the view item of every group in `groups` (or of every
/// group, when `None`) in line with its definition.
pub fn maintain_view(
    vf: &ViewFunction,
    view: &View,
    groups: Option<&BTreeSet<Group>>,
    mode: MaintainMode,
) -> Vec<ViewWrite> {
    if !maintainable(vf, view.schema()) {
        return Vec::new();
    }
    let target = &vf.stored[0];
    let kind = view.kind(&target.table);
    let all;
    let groups = match groups {
        Some(g) => g,
        None => {
            all = InvariantSpec::MaterializedView { view: vf.clone() }.all_groups(view);
            &all
        }
    };
    let mut out = Vec::new();
    for g in groups {
        let Group::Tuple(g) = g else { continue };
        let others: i64 = vf.stored[1..].iter().map(|t| t.value(view, g)).sum();
        let want = vf.computed_value(view, g) - others;
        let want = if target.negate { -want } else { want };
        let item = ItemId::new(target.table.clone(), g.clone());
        match kind {
            TableKind::Counter => {
                let have = view.counter(&item);
                if have != want {
                    out.push(match mode {
                        MaintainMode::Delta => ViewWrite::Counter {
                            item,
                            delta: want - have,
                        },
                        MaintainMode::Reset => ViewWrite::CounterAssign { item, value: want },
                    });
                }
            }
            TableKind::Record => {
                let Measure::Sum(field) = &target.measure else {
                    continue;
                };
                let Some(row) = view.get(&item) else { continue };
                if row.get(field).and_then(Value::as_int) != Some(want) {
                    out.push(ViewWrite::Field {
                        item,
                        field: field.clone(),
                        value: want,
                    });
                }
            }
            TableKind::Collection => {}
        }
    }
    out
}
