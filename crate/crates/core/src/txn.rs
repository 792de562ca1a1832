//! The transaction language and its executor.
//!
//! A transaction is a closed-form list of operations over named parameters.
//! Execution runs against a replica's logical view plus the transaction's own
//! buffered writes and produces a list of [`Write`]s, which the replica turns
//! into versions at commit. Execution can optionally stop at a
//! [`Operation::NextSequence`] so a simulator can obtain the sequence value
//! from another site and resume.

use crate::adt::NonceValue;
use crate::error::{Error, Result};
use crate::schema::{Schema, TableKind};
use crate::state::{CounterKind, EventId, Payload, CASCADE_TABLE};
use crate::value::{Fields, ItemId, Key, ReplicaId, TxnId, Value};
use crate::view::View;
use rand::Rng;
use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

/// A scalar expression. In spec files `"$x"` names a parameter or bound
/// variable, `"nonce()"` draws a fresh nonce, `"null"` is null and other
/// strings and integers are literals; the remaining forms are tables such as
/// `{ add = [a, b] }` or `{ field = { table, key, field } }`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Lit(Value),
    Null,
    Param(String),
    Nonce,
    Field {
        table: String,
        key: Vec<Expr>,
        field: String,
    },
    Counter {
        table: String,
        key: Vec<Expr>,
    },
    Size {
        table: String,
        key: Vec<Expr>,
    },
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    /// Euclidean remainder.
    Mod(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn int(v: i64) -> Self {
        Expr::Lit(Value::Int(v))
    }

    pub fn lit(v: impl Into<Value>) -> Self {
        Expr::Lit(v.into())
    }

    pub fn param(name: &str) -> Self {
        Expr::Param(name.to_string())
    }

    pub fn field(table: &str, key: Vec<Expr>, field: &str) -> Self {
        Expr::Field {
            table: table.to_string(),
            key,
            field: field.to_string(),
        }
    }

    pub fn counter(table: &str, key: Vec<Expr>) -> Self {
        Expr::Counter {
            table: table.to_string(),
            key,
        }
    }

    pub fn add(a: Expr, b: Expr) -> Self {
        Expr::Add(Box::new(a), Box::new(b))
    }

    pub fn sub(a: Expr, b: Expr) -> Self {
        Expr::Sub(Box::new(a), Box::new(b))
    }

    pub fn mul(a: Expr, b: Expr) -> Self {
        Expr::Mul(Box::new(a), Box::new(b))
    }

    pub fn modulo(a: Expr, b: Expr) -> Self {
        Expr::Mod(Box::new(a), Box::new(b))
    }

    /// Parameters and variables referenced by this expression.
    pub fn vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Param(p) => {
                out.insert(p.clone());
            }
            Expr::Field { key, .. } | Expr::Counter { key, .. } | Expr::Size { key, .. } => {
                key.iter().for_each(|k| k.vars(out))
            }
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Mod(a, b) => {
                a.vars(out);
                b.vars(out);
            }
            Expr::Lit(_) | Expr::Null | Expr::Nonce => {}
        }
    }

    /// Tables read by this expression.
    pub fn tables(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Field { table, key, .. }
            | Expr::Counter { table, key }
            | Expr::Size { table, key } => {
                out.insert(table.clone());
                key.iter().for_each(|k| k.tables(out));
            }
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Mod(a, b) => {
                a.tables(out);
                b.tables(out);
            }
            _ => {}
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum TaggedExpr {
    Lit(Value),
    Param(String),
    Field {
        table: String,
        key: Vec<Expr>,
        field: String,
    },
    Counter {
        table: String,
        key: Vec<Expr>,
    },
    Size {
        table: String,
        key: Vec<Expr>,
    },
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Mod(Box<Expr>, Box<Expr>),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ExprRepr {
    Int(i64),
    Str(String),
    Tagged(TaggedExpr),
}

const NONCE_TOKEN: &str = "nonce()";
const NULL_TOKEN: &str = "null";

fn is_special(s: &str) -> bool {
    s.starts_with('$') || s == NONCE_TOKEN || s == NULL_TOKEN
}

impl Serialize for Expr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let tagged = match self.clone() {
            Expr::Lit(Value::Int(i)) => return s.serialize_i64(i),
            Expr::Lit(Value::Str(v)) if !is_special(&v) => return s.serialize_str(&v),
            Expr::Lit(v) => TaggedExpr::Lit(v),
            Expr::Null => return s.serialize_str(NULL_TOKEN),
            Expr::Nonce => return s.serialize_str(NONCE_TOKEN),
            Expr::Param(p) => return s.serialize_str(&format!("${p}")),
            Expr::Field { table, key, field } => TaggedExpr::Field { table, key, field },
            Expr::Counter { table, key } => TaggedExpr::Counter { table, key },
            Expr::Size { table, key } => TaggedExpr::Size { table, key },
            Expr::Add(a, b) => TaggedExpr::Add(a, b),
            Expr::Sub(a, b) => TaggedExpr::Sub(a, b),
            Expr::Mul(a, b) => TaggedExpr::Mul(a, b),
            Expr::Mod(a, b) => TaggedExpr::Mod(a, b),
        };
        tagged.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(match ExprRepr::deserialize(d)? {
            ExprRepr::Int(i) => Expr::Lit(Value::Int(i)),
            ExprRepr::Str(s) => {
                if let Some(p) = s.strip_prefix('$') {
                    if p.is_empty() {
                        return Err(de::Error::custom("empty parameter name `$`"));
                    }
                    Expr::Param(p.to_string())
                } else if s == NONCE_TOKEN {
                    Expr::Nonce
                } else if s == NULL_TOKEN {
                    Expr::Null
                } else {
                    Expr::Lit(Value::Str(s))
                }
            }
            ExprRepr::Tagged(t) => match t {
                TaggedExpr::Lit(v) => Expr::Lit(v),
                TaggedExpr::Param(p) => Expr::Param(p),
                TaggedExpr::Field { table, key, field } => Expr::Field { table, key, field },
                TaggedExpr::Counter { table, key } => Expr::Counter { table, key },
                TaggedExpr::Size { table, key } => Expr::Size { table, key },
                TaggedExpr::Add(a, b) => Expr::Add(a, b),
                TaggedExpr::Sub(a, b) => Expr::Sub(a, b),
                TaggedExpr::Mul(a, b) => Expr::Mul(a, b),
                TaggedExpr::Mod(a, b) => Expr::Mod(a, b),
            },
        })
    }
}

/// A boolean condition for [`Operation::AbortIf`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Cond {
    Eq(Expr, Expr),
    Ne(Expr, Expr),
    Lt(Expr, Expr),
    Le(Expr, Expr),
    Gt(Expr, Expr),
    Ge(Expr, Expr),
    IsNull(Expr),
    Exists { table: String, key: Vec<Expr> },
    Contains { table: String, key: Vec<Expr>, value: Expr },
    Not(Box<Cond>),
    All(Vec<Cond>),
    Any(Vec<Cond>),
    Const(bool),
}

/// A `(table, field)` pair whose rows a cascading delete also removes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reference {
    pub table: String,
    pub field: String,
}

fn one() -> Expr {
    Expr::int(1)
}

fn is_one(e: &Expr) -> bool {
    *e == one()
}

/// One step of a transaction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum Operation {
    /// Reads a record (recorded in the read set; values are read through
    /// expressions).
    Read { table: String, key: Vec<Expr> },
    /// Writes a full record; the key is taken from the key fields.
    Insert {
        table: String,
        fields: BTreeMap<String, Expr>,
    },
    /// Overwrites the given fields of a record, creating it if absent.
    Update {
        table: String,
        key: Vec<Expr>,
        fields: BTreeMap<String, Expr>,
    },
    /// Tombstones a record if it is live.
    Delete { table: String, key: Vec<Expr> },
    /// Tombstones every record of `table` whose `field` equals `value`, and
    /// every record of each referencing table pointing at that value, and
    /// records a cascade marker that survives merge.
    CascadeDelete {
        table: String,
        field: String,
        value: Expr,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        referencing: Vec<Reference>,
    },
    Increment {
        table: String,
        key: Vec<Expr>,
        #[serde(default = "one", skip_serializing_if = "is_one")]
        by: Expr,
    },
    Decrement {
        table: String,
        key: Vec<Expr>,
        #[serde(default = "one", skip_serializing_if = "is_one")]
        by: Expr,
    },
    Assign {
        table: String,
        key: Vec<Expr>,
        value: Expr,
    },
    Add {
        table: String,
        key: Vec<Expr>,
        value: Expr,
    },
    Remove {
        table: String,
        key: Vec<Expr>,
        value: Expr,
    },
    /// Binds a variable for later expressions.
    Let { var: String, expr: Expr },
    /// Reads an integer field (1 if absent), binds it to `bind` and writes
    /// back its successor: the per-namespace ID allocator.
    NextSequence {
        table: String,
        key: Vec<Expr>,
        field: String,
        bind: String,
    },
    AbortIf { cond: Cond },
}

impl Operation {
    /// Table written by this operation, if any.
    pub fn written_table(&self) -> Option<&str> {
        use Operation::*;
        match self {
            Insert { table, .. }
            | Update { table, .. }
            | Delete { table, .. }
            | CascadeDelete { table, .. }
            | Increment { table, .. }
            | Decrement { table, .. }
            | Assign { table, .. }
            | Add { table, .. }
            | Remove { table, .. }
            | NextSequence { table, .. } => Some(table),
            Read { .. } | Let { .. } | AbortIf { .. } => None,
        }
    }

    /// Every table written, including cascade targets.
    pub fn written_tables(&self) -> Vec<&str> {
        match self {
            Operation::CascadeDelete {
                table, referencing, ..
            } => std::iter::once(table.as_str())
                .chain(referencing.iter().map(|r| r.table.as_str()))
                .collect(),
            op => op.written_table().into_iter().collect(),
        }
    }

    pub fn is_write(&self) -> bool {
        self.written_table().is_some()
    }
}

/// An instantiated transaction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
    pub ops: Arc<Vec<Operation>>,
}

impl Transaction {
    pub fn new(name: &str, ops: Vec<Operation>) -> Self {
        Transaction {
            name: name.to_string(),
            params: BTreeMap::new(),
            ops: Arc::new(ops),
        }
    }

    pub fn with_param(mut self, name: &str, v: impl Into<Value>) -> Self {
        self.params.insert(name.to_string(), v.into());
        self
    }

    /// Tables this transaction may write.
    pub fn writeset_tables(&self) -> BTreeSet<String> {
        self.ops
            .iter()
            .flat_map(|o| o.written_tables())
            .map(str::to_string)
            .collect()
    }
}

/// Parameter domain of a template.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    /// Integers in `[lo, hi]`.
    Range(i64, i64),
    Choice(Vec<Value>),
}

impl Domain {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Value {
        match self {
            Domain::Range(lo, hi) => Value::Int(rng.random_range(*lo..=*hi)),
            Domain::Choice(vs) => vs[rng.random_range(0..vs.len())].clone(),
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            Domain::Range(lo, hi) => lo > hi,
            Domain::Choice(vs) => vs.is_empty(),
        }
    }
}

fn default_weight() -> f64 {
    1.0
}

fn is_default_weight(w: &f64) -> bool {
    *w == 1.0
}

/// A parameterized transaction with its parameter distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TxnTemplate {
    pub name: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, Domain>,
    pub ops: Vec<Operation>,
    /// Declared write set (tables). When present, writes elsewhere are
    /// flagged by validation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub writes: Option<Vec<String>>,
    /// Relative frequency in generated workloads.
    #[serde(default = "default_weight", skip_serializing_if = "is_default_weight")]
    pub weight: f64,
}

impl TxnTemplate {
    pub fn new(name: &str, ops: Vec<Operation>) -> Self {
        TxnTemplate {
            name: name.to_string(),
            params: BTreeMap::new(),
            ops,
            writes: None,
            weight: 1.0,
        }
    }

    pub fn param(mut self, name: &str, d: Domain) -> Self {
        self.params.insert(name.to_string(), d);
        self
    }

    /// The operations as a shareable transaction body.
    pub fn body(&self) -> Transaction {
        Transaction {
            name: self.name.clone(),
            params: BTreeMap::new(),
            ops: Arc::new(self.ops.clone()),
        }
    }

    pub fn instantiate<R: Rng + ?Sized>(&self, body: &Transaction, rng: &mut R) -> Transaction {
        Transaction {
            name: self.name.clone(),
            params: self
                .params
                .iter()
                .map(|(k, d)| (k.clone(), d.sample(rng)))
                .collect(),
            ops: body.ops.clone(),
        }
    }
}

/// A write produced by execution, before it becomes a version.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Write {
    pub item: ItemId,
    pub payload: Payload,
}

/// A sequence allocation a suspended transaction is waiting for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceRequest {
    pub item: ItemId,
    pub field: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    Done,
    Aborted,
    Suspended(SequenceRequest),
}

/// Lock mode needed on an accessed item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Access {
    Read,
    Write,
}

/// Mutable state of one executing transaction.
#[derive(Debug, Clone)]
pub struct ExecState {
    pub txn: TxnId,
    env: BTreeMap<String, Value>,
    pc: usize,
    writes: Vec<Write>,
    /// Position of the write of each record item (coalesced in place).
    record_slot: BTreeMap<ItemId, usize>,
    /// Buffered record images (`None` = deleted).
    records: BTreeMap<ItemId, Option<Fields>>,
    /// Buffered counter effects: optional new base and a delta.
    counters: BTreeMap<ItemId, (Option<i64>, i64)>,
    /// Buffered collection insertions and removed insertion tags.
    added: BTreeMap<ItemId, BTreeMap<EventId, Value>>,
    removed: BTreeMap<ItemId, BTreeSet<EventId>>,
    pub accessed: BTreeMap<ItemId, Access>,
}

impl ExecState {
    pub fn new(txn: TxnId, t: &Transaction) -> Self {
        ExecState {
            txn,
            env: t.params.clone(),
            pc: 0,
            writes: Vec::new(),
            record_slot: BTreeMap::new(),
            records: BTreeMap::new(),
            counters: BTreeMap::new(),
            added: BTreeMap::new(),
            removed: BTreeMap::new(),
            accessed: BTreeMap::new(),
        }
    }

    pub fn writes(&self) -> &[Write] {
        &self.writes
    }

    pub fn into_writes(self) -> Vec<Write> {
        self.writes
    }

    pub fn var(&self, name: &str) -> Option<&Value> {
        self.env.get(name)
    }

    /// Completes a suspended [`Operation::NextSequence`] with the value the
    /// sequence's home site allocated.
    pub fn resume(&mut self, t: &Transaction, value: i64) {
        match &t.ops[self.pc] {
            Operation::NextSequence { bind, .. } => {
                self.env.insert(bind.clone(), Value::Int(value));
                self.pc += 1;
            }
            op => panic!("resume at non-sequence operation {op:?}"),
        }
    }

    fn touch(&mut self, item: &ItemId, a: Access) {
        let e = self.accessed.entry(item.clone()).or_insert(a);
        *e = (*e).max(a);
    }

    fn push(&mut self, item: ItemId, payload: Payload) {
        self.touch(&item, Access::Write);
        self.writes.push(Write { item, payload });
    }

    fn put_record(&mut self, item: ItemId, row: Option<Fields>) {
        self.touch(&item, Access::Write);
        let payload = match &row {
            Some(f) => Payload::Record(f.clone()),
            None => Payload::Tombstone,
        };
        match self.record_slot.get(&item) {
            Some(&i) => self.writes[i].payload = payload,
            None => {
                self.record_slot.insert(item.clone(), self.writes.len());
                self.writes.push(Write {
                    item: item.clone(),
                    payload,
                });
            }
        }
        self.records.insert(item, row);
    }
}

/// Executes transactions against a view.
pub struct Executor<'a> {
    pub schema: &'a Schema,
    pub view: &'a View,
    pub replica: ReplicaId,
}

fn arith(a: Option<Value>, b: Option<Value>, f: impl Fn(i64, i64) -> Option<i64>) -> Result<Option<Value>> {
    match (a, b) {
        (None, _) | (_, None) => Ok(None),
        (Some(Value::Int(x)), Some(Value::Int(y))) => f(x, y)
            .map(|v| Some(Value::Int(v)))
            .ok_or_else(|| Error::Execution("arithmetic overflow or division by zero".into())),
        (x, y) => Err(Error::Execution(format!(
            "arithmetic on non-integers {x:?}, {y:?}"
        ))),
    }
}

impl<'a> Executor<'a> {
    pub fn new(schema: &'a Schema, view: &'a View, replica: ReplicaId) -> Self {
        Executor {
            schema,
            view,
            replica,
        }
    }

    fn kind(&self, table: &str) -> Result<TableKind> {
        self.schema
            .table(table)
            .map(|t| t.kind)
            .ok_or_else(|| Error::MissingItem(format!("unknown table `{table}`")))
    }

    fn key(&self, st: &mut ExecState, nonce: &mut u64, table: &str, key: &[Expr]) -> Result<ItemId> {
        let t = self
            .schema
            .table(table)
            .ok_or_else(|| Error::MissingItem(format!("unknown table `{table}`")))?;
        if t.key.len() != key.len() {
            return Err(Error::MissingItem(format!(
                "`{table}` has {} key fields, got {}",
                t.key.len(),
                key.len()
            )));
        }
        let mut k = Vec::with_capacity(key.len());
        for e in key {
            match self.eval(st, nonce, e)? {
                Some(v) => k.push(v),
                None => return Err(Error::Execution(format!("null key component for `{table}`"))),
            }
        }
        Ok(ItemId::new(table, k))
    }

    /// Current image of a record as seen by the transaction.
    fn record(&self, st: &ExecState, item: &ItemId) -> Option<Fields> {
        match st.records.get(item) {
            Some(r) => r.clone(),
            None => self.view.get(item).map(|r| (**r).clone()),
        }
    }

    fn counter(&self, st: &ExecState, item: &ItemId) -> i64 {
        let (base, delta) = st.counters.get(item).copied().unwrap_or((None, 0));
        base.unwrap_or_else(|| self.view.counter(item)) + delta
    }

    fn live_tags(&self, st: &ExecState, item: &ItemId, v: &Value) -> Vec<EventId> {
        let mut tags: Vec<EventId> = self
            .view
            .collection(item)
            .map(|c| c.live_tags(v).collect())
            .unwrap_or_default();
        if let Some(a) = st.added.get(item) {
            tags.extend(a.iter().filter(|(_, x)| *x == v).map(|(id, _)| *id));
        }
        if let Some(r) = st.removed.get(item) {
            tags.retain(|t| !r.contains(t));
        }
        tags.sort();
        tags
    }

    fn size(&self, st: &ExecState, item: &ItemId) -> i64 {
        // Removed tags were live when removed, so each cancels one insertion.
        self.view.collection_size(item) + st.added.get(item).map_or(0, |a| a.len() as i64)
            - st.removed.get(item).map_or(0, |r| r.len() as i64)
    }

    pub fn eval(&self, st: &mut ExecState, nonce: &mut u64, e: &Expr) -> Result<Option<Value>> {
        Ok(match e {
            Expr::Lit(v) => Some(v.clone()),
            Expr::Null => None,
            Expr::Param(p) => Some(
                st.env
                    .get(p)
                    .cloned()
                    .ok_or_else(|| Error::Execution(format!("unbound parameter `${p}`")))?,
            ),
            Expr::Nonce => {
                let n = NonceValue {
                    replica: self.replica,
                    counter: *nonce,
                };
                *nonce += 1;
                Some(n.to_value())
            }
            Expr::Field { table, key, field } => {
                let item = self.key(st, nonce, table, key)?;
                st.touch(&item, Access::Read);
                match self.kind(table)? {
                    TableKind::Counter if field == crate::schema::COUNTER_VALUE_FIELD => {
                        Some(Value::Int(self.counter(st, &item)))
                    }
                    TableKind::Collection if field == crate::schema::COLLECTION_SIZE_FIELD => {
                        Some(Value::Int(self.size(st, &item)))
                    }
                    _ => self.record(st, &item).and_then(|r| r.get(field).cloned()),
                }
            }
            Expr::Counter { table, key } => {
                let item = self.key(st, nonce, table, key)?;
                st.touch(&item, Access::Read);
                Some(Value::Int(self.counter(st, &item)))
            }
            Expr::Size { table, key } => {
                let item = self.key(st, nonce, table, key)?;
                st.touch(&item, Access::Read);
                Some(Value::Int(self.size(st, &item)))
            }
            Expr::Add(a, b) => {
                let (a, b) = (self.eval(st, nonce, a)?, self.eval(st, nonce, b)?);
                arith(a, b, i64::checked_add)?
            }
            Expr::Sub(a, b) => {
                let (a, b) = (self.eval(st, nonce, a)?, self.eval(st, nonce, b)?);
                arith(a, b, i64::checked_sub)?
            }
            Expr::Mul(a, b) => {
                let (a, b) = (self.eval(st, nonce, a)?, self.eval(st, nonce, b)?);
                arith(a, b, i64::checked_mul)?
            }
            Expr::Mod(a, b) => {
                let (a, b) = (self.eval(st, nonce, a)?, self.eval(st, nonce, b)?);
                arith(a, b, i64::checked_rem_euclid)?
            }
        })
    }

    fn cond(&self, st: &mut ExecState, nonce: &mut u64, c: &Cond) -> Result<bool> {
        let mut cmp = |a: &Expr, b: &Expr, f: fn(i64, i64) -> bool| -> Result<bool> {
            let (a, b) = (self.eval(st, nonce, a)?, self.eval(st, nonce, b)?);
            Ok(match (a, b) {
                (Some(Value::Int(x)), Some(Value::Int(y))) => f(x, y),
                (Some(Value::Str(x)), Some(Value::Str(y))) => f(x.cmp(&y) as i64, 0),
                _ => false,
            })
        };
        Ok(match c {
            Cond::Eq(a, b) => self.eval(st, nonce, a)? == self.eval(st, nonce, b)?,
            Cond::Ne(a, b) => self.eval(st, nonce, a)? != self.eval(st, nonce, b)?,
            Cond::Lt(a, b) => cmp(a, b, |x, y| x < y)?,
            Cond::Le(a, b) => cmp(a, b, |x, y| x <= y)?,
            Cond::Gt(a, b) => cmp(a, b, |x, y| x > y)?,
            Cond::Ge(a, b) => cmp(a, b, |x, y| x >= y)?,
            Cond::IsNull(e) => self.eval(st, nonce, e)?.is_none(),
            Cond::Exists { table, key } => {
                let item = self.key(st, nonce, table, key)?;
                st.touch(&item, Access::Read);
                match self.kind(table)? {
                    TableKind::Record => self.record(st, &item).is_some(),
                    TableKind::Counter => {
                        st.counters.contains_key(&item) || self.view.get(&item).is_some()
                    }
                    TableKind::Collection => self.size(st, &item) > 0,
                }
            }
            Cond::Contains { table, key, value } => {
                let item = self.key(st, nonce, table, key)?;
                st.touch(&item, Access::Read);
                let v = self.eval(st, nonce, value)?;
                v.is_some_and(|v| !self.live_tags(st, &item, &v).is_empty())
            }
            Cond::Not(c) => !self.cond(st, nonce, c)?,
            Cond::All(cs) => {
                for c in cs {
                    if !self.cond(st, nonce, c)? {
                        return Ok(false);
                    }
                }
                true
            }
            Cond::Any(cs) => {
                for c in cs {
                    if self.cond(st, nonce, c)? {
                        return Ok(true);
                    }
                }
                false
            }
            Cond::Const(b) => *b,
        })
    }

    fn eval_fields(
        &self,
        st: &mut ExecState,
        nonce: &mut u64,
        fields: &BTreeMap<String, Expr>,
    ) -> Result<Vec<(String, Option<Value>)>> {
        let mut out = Vec::with_capacity(fields.len());
        for (f, e) in fields {
            out.push((f.clone(), self.eval(st, nonce, e)?));
        }
        Ok(out)
    }

    fn expect_kind(&self, table: &str, want: TableKind, op: &str) -> Result<()> {
        let k = self.kind(table)?;
        if k != want {
            return Err(Error::Execution(format!(
                "`{op}` on `{table}`, which is a {k:?} table"
            )));
        }
        Ok(())
    }

    fn amount(&self, st: &mut ExecState, nonce: &mut u64, e: &Expr) -> Result<i64> {
        match self.eval(st, nonce, e)? {
            Some(Value::Int(v)) if v >= 0 => Ok(v),
            other => Err(Error::Execution(format!(
                "counter step must be a non-negative integer, got {other:?}"
            ))),
        }
    }

    /// Keys of live records of `table` whose `field` equals `v`, as seen by
    /// the transaction.
    fn matching(&self, st: &ExecState, table: &str, field: &str, v: &Value) -> Vec<ItemId> {
        let mut keys: BTreeSet<Key> = self
            .view
            .lookup(table, &[field.to_string()], &[Some(v.clone())])
            .into_iter()
            .collect();
        for (item, _) in st.records.range(ItemId::new(table, Vec::new())..) {
            if item.table != table {
                break;
            }
            keys.insert(item.key.clone());
        }
        keys.into_iter()
            .map(|k| ItemId::new(table, k))
            .filter(|item| {
                self.record(st, item)
                    .is_some_and(|r| r.get(field) == Some(v))
            })
            .collect()
    }

    /// Runs from the current position. With `split` set, stops before each
    /// [`Operation::NextSequence`]; otherwise allocates locally.
    pub fn run(&self, t: &Transaction, st: &mut ExecState, nonce: &mut u64, split: bool) -> Result<Step> {
        while st.pc < t.ops.len() {
            let op = &t.ops[st.pc];
            match op {
                Operation::Read { table, key } => {
                    let item = self.key(st, nonce, table, key)?;
                    st.touch(&item, Access::Read);
                }
                Operation::Insert { table, fields } => {
                    self.expect_kind(table, TableKind::Record, "insert")?;
                    let vals = self.eval_fields(st, nonce, fields)?;
                    let row: Fields = vals
                        .into_iter()
                        .filter_map(|(f, v)| v.map(|v| (f, v)))
                        .collect();
                    let schema = self.schema.table(table).expect("checked");
                    let mut key = Vec::with_capacity(schema.key.len());
                    for k in &schema.key {
                        key.push(row.get(k).cloned().ok_or_else(|| {
                            Error::Execution(format!("insert into `{table}` lacks key field `{k}`"))
                        })?);
                    }
                    st.put_record(ItemId::new(table, key), Some(row));
                }
                Operation::Update { table, key, fields } => {
                    self.expect_kind(table, TableKind::Record, "update")?;
                    let item = self.key(st, nonce, table, key)?;
                    let vals = self.eval_fields(st, nonce, fields)?;
                    let mut row = self.record(st, &item).unwrap_or_else(|| {
                        let ts = self.schema.table(table).expect("checked");
                        ts.key.iter().cloned().zip(item.key.iter().cloned()).collect()
                    });
                    for (f, v) in vals {
                        match v {
                            Some(v) => row.insert(f, v),
                            None => row.remove(&f),
                        };
                    }
                    st.put_record(item, Some(row));
                }
                Operation::Delete { table, key } => {
                    self.expect_kind(table, TableKind::Record, "delete")?;
                    let item = self.key(st, nonce, table, key)?;
                    if self.record(st, &item).is_some() {
                        st.put_record(item, None);
                    } else {
                        st.touch(&item, Access::Read);
                    }
                }
                Operation::CascadeDelete {
                    table,
                    field,
                    value,
                    referencing,
                } => {
                    self.expect_kind(table, TableKind::Record, "cascade-delete")?;
                    let Some(v) = self.eval(st, nonce, value)? else {
                        st.pc += 1;
                        continue;
                    };
                    let targets = std::iter::once((table.as_str(), field.as_str()))
                        .chain(referencing.iter().map(|r| (r.table.as_str(), r.field.as_str())));
                    let mut doomed = Vec::new();
                    for (t, f) in targets {
                        self.expect_kind(t, TableKind::Record, "cascade-delete")?;
                        doomed.extend(self.matching(st, t, f, &v));
                    }
                    for item in doomed {
                        st.put_record(item, None);
                    }
                    st.push(
                        ItemId::new(
                            CASCADE_TABLE,
                            vec![table.as_str().into(), field.as_str().into(), v.clone()],
                        ),
                        Payload::Cascade {
                            table: table.clone(),
                            field: field.clone(),
                            value: v,
                        },
                    );
                }
                Operation::Increment { table, key, by } | Operation::Decrement { table, key, by } => {
                    self.expect_kind(table, TableKind::Counter, "increment")?;
                    let item = self.key(st, nonce, table, key)?;
                    let amount = self.amount(st, nonce, by)?;
                    let kind = if matches!(op, Operation::Increment { .. }) {
                        CounterKind::Increment
                    } else {
                        CounterKind::Decrement
                    };
                    let e = st.counters.entry(item.clone()).or_insert((None, 0));
                    e.1 += if kind == CounterKind::Increment {
                        amount
                    } else {
                        -amount
                    };
                    st.push(item, Payload::Counter { kind, amount });
                }
                Operation::Assign { table, key, value } => {
                    self.expect_kind(table, TableKind::Counter, "assign")?;
                    let item = self.key(st, nonce, table, key)?;
                    let Some(Value::Int(v)) = self.eval(st, nonce, value)? else {
                        return Err(Error::Execution("assign needs an integer".into()));
                    };
                    st.counters.insert(item.clone(), (Some(v), 0));
                    st.push(
                        item,
                        Payload::Counter {
                            kind: CounterKind::Assign,
                            amount: v,
                        },
                    );
                }
                Operation::Add { table, key, value } => {
                    self.expect_kind(table, TableKind::Collection, "add")?;
                    let item = self.key(st, nonce, table, key)?;
                    let Some(v) = self.eval(st, nonce, value)? else {
                        return Err(Error::Execution("cannot add null".into()));
                    };
                    let id = EventId {
                        writer: st.txn,
                        seq: st.writes.len() as u32,
                    };
                    st.added.entry(item.clone()).or_default().insert(id, v.clone());
                    st.push(item, Payload::Add(v));
                }
                Operation::Remove { table, key, value } => {
                    self.expect_kind(table, TableKind::Collection, "remove")?;
                    let item = self.key(st, nonce, table, key)?;
                    if let Some(v) = self.eval(st, nonce, value)? {
                        // Observed-remove: every live insertion of `v` seen here.
                        let targets = self.live_tags(st, &item, &v);
                        if targets.is_empty() {
                            st.touch(&item, Access::Read);
                        }
                        for target in targets {
                            st.removed.entry(item.clone()).or_default().insert(target);
                            st.push(item.clone(), Payload::Remove { value: v.clone(), target });
                        }
                    }
                }
                Operation::Let { var, expr } => {
                    let v = self.eval(st, nonce, expr)?;
                    match v {
                        Some(v) => st.env.insert(var.clone(), v),
                        None => st.env.remove(var),
                    };
                }
                Operation::NextSequence {
                    table,
                    key,
                    field,
                    bind,
                } => {
                    self.expect_kind(table, TableKind::Record, "next-sequence")?;
                    let item = self.key(st, nonce, table, key)?;
                    if split {
                        return Ok(Step::Suspended(SequenceRequest {
                            item,
                            field: field.clone(),
                        }));
                    }
                    let (v, row) = next_sequence(self.record(st, &item), &item, self.schema, field);
                    st.env.insert(bind.clone(), Value::Int(v));
                    st.put_record(item, Some(row));
                }
                Operation::AbortIf { cond } => {
                    if self.cond(st, nonce, cond)? {
                        return Ok(Step::Aborted);
                    }
                }
            }
            st.pc += 1;
        }
        Ok(Step::Done)
    }
}

/// Allocates from a sequence record: returns the current value (1 when
/// unset) and the record with its successor.
pub fn next_sequence(row: Option<Fields>, item: &ItemId, schema: &Schema, field: &str) -> (i64, Fields) {
    let mut row = row.unwrap_or_else(|| {
        schema
            .table(&item.table)
            .map(|t| t.key.iter().cloned().zip(item.key.iter().cloned()).collect())
            .unwrap_or_default()
    });
    let v = row.get(field).and_then(Value::as_int).unwrap_or(1);
    row.insert(field.to_string(), Value::Int(v + 1));
    (v, row)
}
