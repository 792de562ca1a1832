//! Workloads: a catalog, an initial state and weighted transaction templates,
//! plus the declarative spec file format they load from.
//!
//! A spec file is TOML with four sections:
//!
//! ```toml
//! name = "payroll"
//!
//! [schema.emp]               # kind = "record" (default) | "counter" | "collection"
//! key = ["name"]
//! fields = ["id", "dept"]
//!
//! [[invariants]]
//! name = "unique-id"
//! class = "uniqueness"       # see InvariantSpec for every class
//! table = "emp"
//! field = "id"
//!
//! [[transactions]]
//! name = "hire"
//! params = { n = { choice = ["Stan", "Mary"] }, i = { range = [1, 9] } }
//! ops = [{ op = "insert", table = "emp", fields = { name = "$n", id = "$i" } }]
//!
//! [[initial-state]]
//! table = "dept"
//! fields = { id = 1 }
//! ```
//!
//! Expressions use `"$x"` for parameters, `"nonce()"` for a fresh unique
//! value and `"null"` for null; see [`crate::txn::Expr`].

use crate::confluence::operation_tags;
use crate::error::{Error, Result};
use crate::invariants::NamedInvariant;
use crate::replica::Catalog;
use crate::schema::{Schema, TableKind};
use crate::state::{CounterKind, DatabaseState, Payload, Version};
use crate::txn::{Cond, Expr, Operation, Transaction, TxnTemplate};
use crate::value::{Fields, ItemId, Key, ReplicaId, TxnId, Value};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::sync::Arc;

/// One entry of a configured initial state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum InitialRow {
    Record {
        table: String,
        fields: Fields,
    },
    Counter {
        table: String,
        key: Key,
        value: i64,
    },
    Collection {
        table: String,
        key: Key,
        values: Vec<Value>,
    },
}

/// An extra lookup index declared by a workload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexDecl {
    pub table: String,
    pub fields: Vec<String>,
}

/// A parsed workload spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct WorkloadSpec {
    #[serde(default)]
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub schema: Schema,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub indexes: Vec<IndexDecl>,
    #[serde(default)]
    pub invariants: Vec<NamedInvariant>,
    #[serde(default)]
    pub transactions: Vec<TxnTemplate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub initial_state: Vec<InitialRow>,
}

/// A runnable workload.
#[derive(Debug, Clone)]
pub struct Workload {
    pub name: String,
    pub catalog: Arc<Catalog>,
    pub initial: DatabaseState,
    pub templates: Vec<TxnTemplate>,
    bodies: Vec<Transaction>,
    weights: Option<WeightedIndex<f64>>,
}

impl Workload {
    pub fn new(name: &str, catalog: Catalog, initial: DatabaseState, templates: Vec<TxnTemplate>) -> Self {
        let bodies = templates.iter().map(TxnTemplate::body).collect();
        let weights = WeightedIndex::new(templates.iter().map(|t| t.weight)).ok();
        Workload {
            name: name.to_string(),
            catalog: Arc::new(catalog),
            initial,
            templates,
            bodies,
            weights,
        }
    }

    /// Draws a template by weight and instantiates its parameters.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<Transaction> {
        let i = self.weights.as_ref()?.sample(rng);
        Some(self.instantiate(i, rng))
    }

    pub fn instantiate<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> Transaction {
        self.templates[i].instantiate(&self.bodies[i], rng)
    }

    /// Transaction bodies (parameters unbound), one per template.
    pub fn bodies(&self) -> &[Transaction] {
        &self.bodies
    }

    pub fn with_catalog(&self, catalog: Catalog) -> Self {
        Workload {
            catalog: Arc::new(catalog),
            ..self.clone()
        }
    }
}

/// Builds the versions of a configured initial state. They are written by
/// the genesis replica at timestamp 0, so every later write supersedes them.
pub fn initial_state(schema: &Schema, rows: &[InitialRow]) -> Result<DatabaseState> {
    let mut errs = Vec::new();
    let mut versions = Vec::new();
    let push = |item: ItemId, payload: Payload, versions: &mut Vec<Version>| {
        versions.push(Version {
            item,
            writer: TxnId {
                replica: ReplicaId::GENESIS,
                counter: 0,
            },
            seq: versions.len() as u32,
            origin: ReplicaId::GENESIS,
            timestamp: 0,
            payload,
        })
    };
    for (i, row) in rows.iter().enumerate() {
        let at = format!("initial-state[{i}]");
        let (table, kind) = match row {
            InitialRow::Record { table, .. } => (table, TableKind::Record),
            InitialRow::Counter { table, .. } => (table, TableKind::Counter),
            InitialRow::Collection { table, .. } => (table, TableKind::Collection),
        };
        let Some(ts) = schema.table(table) else {
            errs.push(format!("{at}: unknown table `{table}`"));
            continue;
        };
        if ts.kind != kind {
            errs.push(format!("{at}: `{table}` is a {:?} table, entry is a {kind:?}", ts.kind));
            continue;
        }
        match row {
            InitialRow::Record { fields, .. } => {
                for f in fields.keys() {
                    if !ts.has_field(f) {
                        errs.push(format!("{at}: unknown field `{table}.{f}`"));
                    }
                }
                let key: Option<Key> = ts.key.iter().map(|k| fields.get(k).cloned()).collect();
                match key {
                    Some(key) => push(
                        ItemId::new(table.clone(), key),
                        Payload::Record(fields.clone()),
                        &mut versions,
                    ),
                    None => errs.push(format!("{at}: missing key fields {:?}", ts.key)),
                }
            }
            InitialRow::Counter { key, .. } | InitialRow::Collection { key, .. }
                if key.len() != ts.key.len() =>
            {
                errs.push(format!(
                    "{at}: `{table}` has {} key fields, got {}",
                    ts.key.len(),
                    key.len()
                ));
            }
            InitialRow::Counter { key, value, .. } => push(
                ItemId::new(table.clone(), key.clone()),
                Payload::Counter {
                    kind: CounterKind::Assign,
                    amount: *value,
                },
                &mut versions,
            ),
            InitialRow::Collection { key, values, .. } => {
                for v in values {
                    push(
                        ItemId::new(table.clone(), key.clone()),
                        Payload::Add(v.clone()),
                        &mut versions,
                    );
                }
            }
        }
    }
    if errs.is_empty() {
        Ok(DatabaseState::from_versions(versions))
    } else {
        Err(Error::Spec(errs))
    }
}

/// Parses and resolves a spec document, reporting every problem found.
pub fn parse_spec(text: &str) -> Result<WorkloadSpec> {
    let spec: WorkloadSpec = toml::from_str(text).map_err(|e| Error::Spec(vec![e.to_string()]))?;
    let mut errs = resolve_spec(&spec);
    if errs.is_empty() {
        match spec.build() {
            Ok(w) => {
                let verdict = w.catalog.is_valid(&w.initial);
                if let Some(wit) = verdict.witness {
                    errs.push(format!("initial-state: violates {wit}"));
                }
            }
            Err(Error::Spec(e)) => errs.extend(e),
            Err(e) => errs.push(e.to_string()),
        }
    }
    if errs.is_empty() {
        Ok(spec)
    } else {
        Err(Error::Spec(errs))
    }
}

/// Renders a spec back to a document that parses to an equal spec.
pub fn serialize_spec(spec: &WorkloadSpec) -> String {
    toml::to_string(spec).expect("workload specs always serialize")
}

struct Resolver<'a> {
    schema: &'a Schema,
    errs: Vec<String>,
}

impl Resolver<'_> {
    fn table(&mut self, at: &str, table: &str) -> Option<TableKind> {
        match self.schema.table(table) {
            Some(t) => Some(t.kind),
            None => {
                self.errs.push(format!("{at}: unknown table `{table}`"));
                None
            }
        }
    }

    fn field(&mut self, at: &str, table: &str, field: &str) {
        if let Some(t) = self.schema.table(table) {
            if !t.has_field(field) {
                self.errs.push(format!("{at}: unknown field `{table}.{field}`"));
            }
        } else {
            self.errs.push(format!("{at}: unknown table `{table}`"));
        }
    }

    fn key(&mut self, at: &str, table: &str, key: &[Expr], bound: &BTreeSet<String>) {
        self.arity(at, table, key.len());
        for e in key {
            self.expr(at, e, bound);
        }
    }

    fn expr(&mut self, at: &str, e: &Expr, bound: &BTreeSet<String>) {
        let mut vars = BTreeSet::new();
        e.vars(&mut vars);
        for v in vars.difference(bound) {
            self.errs.push(format!("{at}: unbound parameter `${v}`"));
        }
        self.references(at, e);
    }

    /// Checks the tables and fields an expression reads.
    fn references(&mut self, at: &str, e: &Expr) {
        match e {
            Expr::Field { table, key, field } => {
                self.arity(at, table, key.len());
                self.field(at, table, field);
                key.iter().for_each(|k| self.references(at, k));
            }
            Expr::Counter { table, key } | Expr::Size { table, key } => {
                self.arity(at, table, key.len());
                key.iter().for_each(|k| self.references(at, k));
            }
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Mod(a, b) => {
                self.references(at, a);
                self.references(at, b);
            }
            Expr::Lit(_) | Expr::Null | Expr::Param(_) | Expr::Nonce => {}
        }
    }

    fn arity(&mut self, at: &str, table: &str, n: usize) {
        match self.schema.table(table) {
            Some(t) if t.key.len() != n => self.errs.push(format!(
                "{at}: `{table}` has {} key fields, got {n}",
                t.key.len()
            )),
            Some(_) => {}
            None => self.errs.push(format!("{at}: unknown table `{table}`")),
        }
    }

    fn cond(&mut self, at: &str, c: &Cond, bound: &BTreeSet<String>) {
        match c {
            Cond::Eq(a, b)
            | Cond::Ne(a, b)
            | Cond::Lt(a, b)
            | Cond::Le(a, b)
            | Cond::Gt(a, b)
            | Cond::Ge(a, b) => {
                self.expr(at, a, bound);
                self.expr(at, b, bound);
            }
            Cond::IsNull(e) => self.expr(at, e, bound),
            Cond::Exists { table, key } => self.key(at, table, key, bound),
            Cond::Contains { table, key, value } => {
                self.key(at, table, key, bound);
                self.expr(at, value, bound);
            }
            Cond::Not(c) => self.cond(at, c, bound),
            Cond::All(cs) | Cond::Any(cs) => cs.iter().for_each(|c| self.cond(at, c, bound)),
            Cond::Const(_) => {}
        }
    }

    fn kind(&mut self, at: &str, table: &str, want: TableKind, op: &str) {
        if let Some(k) = self.table(at, table) {
            if k != want {
                self.errs.push(format!("{at}: `{op}` needs a {want:?} table, `{table}` is {k:?}"));
            }
        }
    }

    fn op(&mut self, at: &str, op: &Operation, bound: &mut BTreeSet<String>) {
        match op {
            Operation::Read { table, key } | Operation::Delete { table, key } => {
                self.key(at, table, key, bound)
            }
            Operation::Insert { table, fields } => {
                self.kind(at, table, TableKind::Record, "insert");
                if let Some(t) = self.schema.table(table) {
                    for k in &t.key {
                        if !fields.contains_key(k) {
                            self.errs.push(format!("{at}: insert lacks key field `{table}.{k}`"));
                        }
                    }
                }
                for (f, e) in fields {
                    self.field(at, table, f);
                    self.expr(at, e, bound);
                }
            }
            Operation::Update { table, key, fields } => {
                self.kind(at, table, TableKind::Record, "update");
                self.key(at, table, key, bound);
                for (f, e) in fields {
                    self.field(at, table, f);
                    self.expr(at, e, bound);
                }
            }
            Operation::CascadeDelete {
                table,
                field,
                value,
                referencing,
            } => {
                self.field(at, table, field);
                for r in referencing {
                    self.field(at, &r.table, &r.field);
                }
                self.expr(at, value, bound);
            }
            Operation::Increment { table, key, by } | Operation::Decrement { table, key, by } => {
                self.kind(at, table, TableKind::Counter, "increment/decrement");
                self.key(at, table, key, bound);
                self.expr(at, by, bound);
            }
            Operation::Assign { table, key, value } => {
                self.kind(at, table, TableKind::Counter, "assign");
                self.key(at, table, key, bound);
                self.expr(at, value, bound);
            }
            Operation::Add { table, key, value } | Operation::Remove { table, key, value } => {
                self.kind(at, table, TableKind::Collection, "add/remove");
                self.key(at, table, key, bound);
                self.expr(at, value, bound);
            }
            Operation::Let { var, expr } => {
                self.expr(at, expr, bound);
                bound.insert(var.clone());
            }
            Operation::NextSequence {
                table,
                key,
                field,
                bind,
            } => {
                self.kind(at, table, TableKind::Record, "next-sequence");
                self.key(at, table, key, bound);
                self.field(at, table, field);
                bound.insert(bind.clone());
            }
            Operation::AbortIf { cond } => self.cond(at, cond, bound),
        }
    }
}

fn resolve_spec(spec: &WorkloadSpec) -> Vec<String> {
    let mut r = Resolver {
        schema: &spec.schema,
        errs: Vec::new(),
    };
    for (name, t) in &spec.schema.tables {
        if t.kind != TableKind::Record && !t.fields.is_empty() {
            r.errs
                .push(format!("schema.{name}: only record tables declare fields"));
        }
    }
    for (i, inv) in spec.invariants.iter().enumerate() {
        for e in inv.spec.resolve(&spec.schema) {
            r.errs.push(format!("invariants[{i}] ({}): {e}", inv.name));
        }
    }
    for (i, idx) in spec.indexes.iter().enumerate() {
        for f in &idx.fields {
            r.field(&format!("indexes[{i}]"), &idx.table, f);
        }
    }
    for (i, t) in spec.transactions.iter().enumerate() {
        let mut bound: BTreeSet<String> = t.params.keys().cloned().collect();
        for (p, d) in &t.params {
            if d.is_empty() {
                r.errs
                    .push(format!("transactions[{i}] ({}): parameter `{p}` has an empty domain", t.name));
            }
        }
        for (j, op) in t.ops.iter().enumerate() {
            r.op(&format!("transactions[{i}] ({}).ops[{j}]", t.name), op, &mut bound);
        }
        if let Some(ws) = &t.writes {
            for w in ws {
                r.table(&format!("transactions[{i}] ({}).writes", t.name), w);
            }
        }
        if !(t.weight.is_finite() && t.weight >= 0.0) {
            r.errs
                .push(format!("transactions[{i}] ({}): weight must be non-negative", t.name));
        }
    }
    if let Err(Error::Spec(e)) = initial_state(&spec.schema, &spec.initial_state) {
        r.errs.extend(e);
    }
    r.errs
}

impl WorkloadSpec {
    pub fn catalog(&self) -> Catalog {
        let mut c = Catalog::new(self.schema.clone(), self.invariants.clone());
        for i in &self.indexes {
            c.indexes.push((i.table.clone(), i.fields.clone()));
        }
        c
    }

    /// Builds the runnable workload.
    pub fn build(&self) -> Result<Workload> {
        let initial = initial_state(&self.schema, &self.initial_state)?;
        Ok(Workload::new(
            &self.name,
            self.catalog(),
            initial,
            self.transactions.clone(),
        ))
    }
}

/// Lints a parsed spec for likely specification mistakes.
pub fn validate_spec(w: &WorkloadSpec) -> Vec<String> {
    let mut out = Vec::new();
    let covered: BTreeSet<&str> = w
        .invariants
        .iter()
        .flat_map(|i| i.spec.tables())
        .collect();
    let mut written_any = BTreeSet::new();
    for t in &w.transactions {
        if t.ops.iter().all(|op| operation_tags(op).is_empty()) {
            out.push(format!("transaction `{}` has no classifiable operations", t.name));
        }
        let written: BTreeSet<&str> = t.ops.iter().flat_map(|o| o.written_tables()).collect();
        for table in &written {
            written_any.insert(table.to_string());
            if !covered.contains(table) {
                out.push(format!(
                    "transaction `{}` writes `{table}`, which no invariant covers",
                    t.name
                ));
            }
            if let Some(ws) = &t.writes {
                if !ws.iter().any(|x| x == table) {
                    out.push(format!(
                        "transaction `{}` writes `{table}` outside its declared write set",
                        t.name
                    ));
                }
            }
        }
    }
    for inv in &w.invariants {
        if !inv.spec.tables().iter().any(|t| written_any.contains(*t)) {
            out.push(format!("invariant `{}` is never exercised by any transaction", inv.name));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::TableSchema;

    fn schema() -> Schema {
        Schema::new()
            .with("t", TableSchema::record(&["k"], &["x"]))
            .with("c", TableSchema::counter(&["k"]))
    }

    #[test]
    fn initial_rows_become_genesis_versions() {
        let rows = [
            InitialRow::Record {
                table: "t".into(),
                fields: [("k".to_string(), Value::Int(1)), ("x".to_string(), Value::Int(2))].into(),
            },
            InitialRow::Counter {
                table: "c".into(),
                key: vec![Value::Int(0)],
                value: 7,
            },
        ];
        let s = initial_state(&schema(), &rows).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.iter().all(|v| v.origin == ReplicaId::GENESIS && v.timestamp == 0));
        assert_eq!(crate::adt::counter_value(&s, &ItemId::new("c", vec![Value::Int(0)])), 7);
    }

    #[test]
    fn initial_row_errors_are_all_reported() {
        let rows = [
            InitialRow::Record {
                table: "nope".into(),
                fields: Fields::new(),
            },
            InitialRow::Record {
                table: "t".into(),
                fields: [("y".to_string(), Value::Int(1))].into(),
            },
            InitialRow::Collection {
                table: "c".into(),
                key: vec![],
                values: vec![],
            },
        ];
        let Err(Error::Spec(errs)) = initial_state(&schema(), &rows) else {
            panic!("expected spec errors");
        };
        assert_eq!(errs.len(), 4, "{errs:?}");
    }
}
