//! Static classification: the rule table of invariant/operation pairs and the
//! per-transaction analysis that maps each operation to the class it
//! exercises against each invariant.

use crate::invariants::{InvariantSpec, NamedInvariant, Predicate, RefSide};
use crate::schema::Schema;
use crate::txn::{Expr, Operation, Transaction};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;

/// Invariant classes recognised by the rule table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InvariantClass {
    AttributeEquality,
    AttributeInequality,
    Uniqueness,
    Sequentiality,
    ForeignKey,
    SecondaryIndex,
    MaterializedView,
    CounterGreaterThan,
    CounterLessThan,
    Contains,
    NotContains,
    SizeEquals,
    /// Pseudo-class for recency guarantees.
    Recency,
}

impl InvariantClass {
    pub const ALL: [InvariantClass; 13] = [
        InvariantClass::AttributeEquality,
        InvariantClass::AttributeInequality,
        InvariantClass::Uniqueness,
        InvariantClass::Sequentiality,
        InvariantClass::ForeignKey,
        InvariantClass::SecondaryIndex,
        InvariantClass::MaterializedView,
        InvariantClass::CounterGreaterThan,
        InvariantClass::CounterLessThan,
        InvariantClass::Contains,
        InvariantClass::NotContains,
        InvariantClass::SizeEquals,
        InvariantClass::Recency,
    ];

    pub fn of(spec: &InvariantSpec) -> Self {
        use InvariantSpec as S;
        match spec {
            S::AttributeEquality { .. } => Self::AttributeEquality,
            S::AttributeInequality { .. } => Self::AttributeInequality,
            S::Uniqueness { .. } => Self::Uniqueness,
            S::Sequentiality { .. } => Self::Sequentiality,
            S::ForeignKey { .. } => Self::ForeignKey,
            S::SecondaryIndex { .. } => Self::SecondaryIndex,
            S::MaterializedView { .. } => Self::MaterializedView,
            S::CounterGreaterThan { .. } => Self::CounterGreaterThan,
            S::CounterLessThan { .. } => Self::CounterLessThan,
            S::Contains { .. } => Self::Contains,
            S::NotContains { .. } => Self::NotContains,
            S::SizeEquals { .. } => Self::SizeEquals,
            S::Recency { .. } => Self::Recency,
        }
    }
}

impl fmt::Display for InvariantClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use InvariantClass::*;
        f.write_str(match self {
            AttributeEquality => "attribute-equality",
            AttributeInequality => "attribute-inequality",
            Uniqueness => "uniqueness",
            Sequentiality => "sequentiality",
            ForeignKey => "foreign-key",
            SecondaryIndex => "secondary-index",
            MaterializedView => "materialized-view",
            CounterGreaterThan => "counter-greater-than",
            CounterLessThan => "counter-less-than",
            Contains => "contains",
            NotContains => "not-contains",
            SizeEquals => "size-equals",
            Recency => "recency",
        })
    }
}

/// Operation classes recognised by the rule table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperationClass {
    Read,
    WriteAnyValue,
    WriteChosenUnique,
    Insert,
    Delete,
    CascadeDelete,
    UpdateIndexed,
    ViewUpdate,
    CounterIncrement,
    CounterDecrement,
    CounterAssign,
    CollectionAdd,
    CollectionDel,
}

impl OperationClass {
    pub const ALL: [OperationClass; 13] = [
        OperationClass::Read,
        OperationClass::WriteAnyValue,
        OperationClass::WriteChosenUnique,
        OperationClass::Insert,
        OperationClass::Delete,
        OperationClass::CascadeDelete,
        OperationClass::UpdateIndexed,
        OperationClass::ViewUpdate,
        OperationClass::CounterIncrement,
        OperationClass::CounterDecrement,
        OperationClass::CounterAssign,
        OperationClass::CollectionAdd,
        OperationClass::CollectionDel,
    ];
}

impl fmt::Display for OperationClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use OperationClass::*;
        f.write_str(match self {
            Read => "read",
            WriteAnyValue => "write-any-value",
            WriteChosenUnique => "write-chosen-unique",
            Insert => "insert",
            Delete => "delete",
            CascadeDelete => "cascade-delete",
            UpdateIndexed => "update-indexed",
            ViewUpdate => "view-update",
            CounterIncrement => "counter-increment",
            CounterDecrement => "counter-decrement",
            CounterAssign => "counter-assign",
            CollectionAdd => "collection-add",
            CollectionDel => "collection-del",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    IConfluent,
    NotIConfluent,
    Unknown,
}

impl Verdict {
    /// Yes/No rendering; unknown pairs are reported as requiring
    /// coordination.
    pub fn yes_no(self) -> &'static str {
        match self {
            Verdict::IConfluent => "Yes",
            Verdict::NotIConfluent => "No",
            Verdict::Unknown => "Unknown",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub verdict: Verdict,
    /// Proof number of the rule, if the pair is tabulated.
    pub proof: Option<u8>,
}

impl Classification {
    fn rule(verdict: Verdict, proof: u8) -> Self {
        Classification {
            verdict,
            proof: Some(proof),
        }
    }
}

/// Pure lookup in the rule table. Pairs outside it are `Unknown`.
pub fn classify_static(inv: InvariantClass, op: OperationClass) -> Classification {
    use InvariantClass as I;
    use OperationClass as O;
    use Verdict::*;
    match (inv, op) {
        (I::AttributeEquality, _) => Classification::rule(IConfluent, 1),
        (I::AttributeInequality, _) => Classification::rule(IConfluent, 2),
        (I::Uniqueness, O::WriteAnyValue) => Classification::rule(NotIConfluent, 3),
        (I::Uniqueness, O::WriteChosenUnique) => Classification::rule(IConfluent, 4),
        (I::Sequentiality, O::Insert) => Classification::rule(NotIConfluent, 5),
        (I::ForeignKey, O::Insert) => Classification::rule(IConfluent, 6),
        (I::ForeignKey, O::Delete) => Classification::rule(NotIConfluent, 7),
        (I::ForeignKey, O::CascadeDelete) => Classification::rule(IConfluent, 8),
        (I::SecondaryIndex, O::UpdateIndexed) => Classification::rule(IConfluent, 9),
        (I::MaterializedView, O::ViewUpdate) => Classification::rule(IConfluent, 10),
        (I::CounterGreaterThan, O::CounterIncrement) => Classification::rule(IConfluent, 11),
        (I::CounterLessThan, O::CounterIncrement) => Classification::rule(NotIConfluent, 12),
        (I::CounterGreaterThan, O::CounterDecrement) => Classification::rule(NotIConfluent, 13),
        (I::CounterLessThan, O::CounterDecrement) => Classification::rule(IConfluent, 14),
        (I::Contains, _) => Classification::rule(IConfluent, 15),
        (I::NotContains, _) => Classification::rule(IConfluent, 16),
        (I::SizeEquals, O::CollectionAdd | O::CollectionDel) => {
            Classification::rule(NotIConfluent, 17)
        }
        (I::Recency, _) => Classification {
            verdict: NotIConfluent,
            proof: None,
        },
        _ => Classification {
            verdict: Unknown,
            proof: None,
        },
    }
}

/// Class tags of an operation by kind alone, independent of invariants.
pub fn operation_tags(op: &Operation) -> Vec<OperationClass> {
    use OperationClass as O;
    match op {
        Operation::Read { .. } => vec![O::Read],
        Operation::Insert { fields, .. } => {
            let mut t = vec![O::Insert, O::WriteAnyValue];
            if fields.values().any(|e| *e == Expr::Nonce) {
                t.push(O::WriteChosenUnique);
            }
            t
        }
        Operation::Update { .. } => vec![O::WriteAnyValue],
        Operation::Delete { .. } => vec![O::Delete],
        Operation::CascadeDelete { .. } => vec![O::CascadeDelete],
        Operation::Increment { .. } => vec![O::CounterIncrement],
        Operation::Decrement { .. } => vec![O::CounterDecrement],
        Operation::Assign { .. } => vec![O::CounterAssign],
        Operation::Add { .. } => vec![O::CollectionAdd],
        Operation::Remove { .. } => vec![O::CollectionDel],
        Operation::NextSequence { .. } => vec![O::Read, O::WriteAnyValue],
        Operation::Let { .. } | Operation::AbortIf { .. } => Vec::new(),
    }
}

/// Variables bound (directly or through other variables) to nonces.
fn nonce_vars(t: &Transaction) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for op in t.ops.iter() {
        if let Operation::Let { var, expr } = op {
            if is_unique(expr, &out) {
                out.insert(var.clone());
            } else {
                out.remove(var);
            }
        }
    }
    out
}

fn is_unique(e: &Expr, nonce_vars: &BTreeSet<String>) -> bool {
    match e {
        Expr::Nonce => true,
        Expr::Param(p) => nonce_vars.contains(p),
        _ => false,
    }
}

/// What a write does to a record: which fields it sets, and to what.
enum RowWrite<'a> {
    /// Full-image insert; absent fields become null.
    Insert(&'a std::collections::BTreeMap<String, Expr>),
    /// Overwrites the listed fields only.
    Update(Vec<(&'a str, Option<&'a Expr>)>),
    Delete,
}

impl RowWrite<'_> {
    /// The expression written to `field`: `Some(None)` when the write sets
    /// it to an unknown value, `None` when the field is untouched.
    fn writes(&self, field: &str) -> Option<Option<&Expr>> {
        match self {
            RowWrite::Insert(fields) => Some(Some(fields.get(field).unwrap_or(&Expr::Null))),
            RowWrite::Update(fs) => fs.iter().find(|(f, _)| *f == field).map(|(_, e)| *e),
            RowWrite::Delete => None,
        }
    }

    fn writes_any(&self, fields: &[String]) -> bool {
        fields.iter().any(|f| self.writes(f).is_some())
    }
}

/// Could the written row satisfy the predicate afterwards?
fn may_satisfy(p: &Predicate, w: &RowWrite) -> bool {
    match (p, w.writes(p.field())) {
        (Predicate::IsNull(_), Some(Some(e))) => matches!(e, Expr::Null),
        (Predicate::NotNull(_), Some(Some(Expr::Null))) => false,
        (Predicate::NotNull(_), None) => !matches!(w, RowWrite::Insert(_)),
        (Predicate::Equals { value, .. }, Some(Some(Expr::Lit(v)))) => v == value,
        (Predicate::NotEquals { value, .. }, Some(Some(Expr::Lit(v)))) => v != value,
        _ => true,
    }
}

/// Could the written row fail the predicate afterwards (having passed it)?
fn may_violate(p: &Predicate, w: &RowWrite) -> bool {
    match (p, w.writes(p.field())) {
        (_, None) => false,
        (Predicate::IsNull(_), Some(Some(Expr::Null))) => false,
        (Predicate::NotNull(_), Some(Some(e))) => matches!(e, Expr::Null) || is_nullable(e),
        (Predicate::Equals { value, .. }, Some(Some(Expr::Lit(v)))) => v != value,
        (Predicate::NotEquals { value, .. }, Some(Some(Expr::Lit(v)))) => v == value,
        _ => true,
    }
}

fn is_nullable(e: &Expr) -> bool {
    matches!(e, Expr::Field { .. })
}

fn row_write<'a>(op: &'a Operation, table: &str) -> Option<RowWrite<'a>> {
    match op {
        Operation::Insert { table: t, fields } if t == table => Some(RowWrite::Insert(fields)),
        Operation::Update { table: t, fields, .. } if t == table => Some(RowWrite::Update(
            fields.iter().map(|(f, e)| (f.as_str(), Some(e))).collect(),
        )),
        Operation::NextSequence { table: t, field, .. } if t == table => {
            Some(RowWrite::Update(vec![(field.as_str(), None)]))
        }
        Operation::Delete { table: t, .. } if t == table => Some(RowWrite::Delete),
        Operation::CascadeDelete {
            table: t,
            referencing,
            ..
        } if t == table || referencing.iter().any(|r| r.table == table) => Some(RowWrite::Delete),
        _ => None,
    }
}

fn fk_class(
    from: &RefSide,
    to: &RefSide,
    cascade: bool,
    op: &Operation,
    t: &Transaction,
    schema: Option<&Schema>,
) -> Option<OperationClass> {
    use OperationClass as O;
    let mut class = None;
    // Referencing side: creating or redirecting a reference.
    if let Some(w) = row_write(op, &from.table) {
        let c = match &w {
            RowWrite::Delete => None,
            RowWrite::Insert(_) => {
                let nonnull = from
                    .fields
                    .iter()
                    .all(|f| !matches!(w.writes(f), Some(Some(Expr::Null))));
                let enters = from.filter.iter().all(|p| may_satisfy(p, &w));
                (nonnull && enters).then_some(O::Insert)
            }
            RowWrite::Update(_) => {
                let redirects = w.writes_any(&from.fields);
                let enters = from
                    .filter
                    .iter()
                    .any(|p| w.writes(p.field()).is_some() && may_satisfy(p, &w));
                let stays_in = from.filter.iter().all(|p| may_satisfy(p, &w));
                ((redirects || enters) && stays_in).then_some(O::Insert)
            }
        };
        class = class.or(c);
    }
    // Referenced side: removing or changing a referenced record.
    if let Some(w) = row_write(op, &to.table) {
        let c = match (&w, op) {
            (RowWrite::Delete, Operation::CascadeDelete { table, field, .. })
                if table == &to.table && to.fields.len() == 1 && field == &to.fields[0] =>
            {
                Some(if cascade { O::CascadeDelete } else { O::Delete })
            }
            (RowWrite::Delete, _) => Some(O::Delete),
            (RowWrite::Insert(_), _) => {
                let table = schema.and_then(|s| s.table(&to.table));
                let keyed = table.is_some_and(|ts| to.fields.iter().all(|f| ts.key.contains(f)));
                let filter_safe = to.filter.iter().all(|p| !may_violate(p, &w));
                // A key containing a fresh nonce names a new record, so the
                // insert cannot overwrite one that is referenced.
                let nonces = nonce_vars(t);
                let fresh = table.is_some_and(|ts| {
                    ts.key
                        .iter()
                        .any(|k| matches!(w.writes(k), Some(Some(e)) if is_unique(e, &nonces)))
                });
                (!fresh && !(keyed && filter_safe)).then_some(O::Delete)
            }
            (RowWrite::Update(_), _) => {
                let moves = w.writes_any(&to.fields);
                let exits = to.filter.iter().any(|p| may_violate(p, &w));
                (moves || exits).then_some(O::Delete)
            }
        };
        // Deleting a referenced record dominates.
        class = match (class, c) {
            (_, Some(O::Delete)) => Some(O::Delete),
            (a, b) => a.or(b),
        };
    }
    class
}

fn mv_relevant(term: &crate::invariants::Term, op: &Operation) -> bool {
    let Some(w) = row_write(op, &term.table) else {
        return match op {
            Operation::Increment { table, .. }
            | Operation::Decrement { table, .. }
            | Operation::Assign { table, .. }
            | Operation::Add { table, .. }
            | Operation::Remove { table, .. } => table == &term.table,
            _ => false,
        };
    };
    match w {
        // A row the term filters out contributes nothing.
        RowWrite::Insert(_) => term.filter.iter().all(|p| may_satisfy(p, &w)),
        RowWrite::Delete => true,
        RowWrite::Update(_) => {
            let mut fields: Vec<String> = term.group_by.clone();
            fields.extend(term.filter.iter().map(|p| p.field().to_string()));
            if let crate::invariants::Measure::Sum(f) = &term.measure {
                fields.push(f.clone());
            }
            w.writes_any(&fields)
        }
    }
}

/// The class an operation exercises against an invariant, or `None` when the
/// operation cannot affect the invariant's truth.
pub fn effective_class(
    spec: &InvariantSpec,
    op: &Operation,
    t: &Transaction,
    schema: Option<&Schema>,
) -> Option<OperationClass> {
    use InvariantSpec as S;
    use OperationClass as O;
    match spec {
        S::AttributeEquality { table, field, .. } | S::AttributeInequality { table, field, .. } => {
            match row_write(op, table)? {
                RowWrite::Delete => Some(O::Delete),
                w => w.writes(field).map(|_| O::WriteAnyValue),
            }
        }
        S::Uniqueness { table, field } => match row_write(op, table)? {
            RowWrite::Delete => None,
            w => match w.writes(field)? {
                Some(Expr::Null) => None,
                Some(e) if is_unique(e, &nonce_vars(t)) => Some(O::WriteChosenUnique),
                _ => Some(O::WriteAnyValue),
            },
        },
        S::Sequentiality {
            table,
            field,
            namespace,
            lookup,
            ..
        } => {
            let mut class = None;
            if let Some(w) = row_write(op, table) {
                class = match w {
                    RowWrite::Delete => Some(O::Delete),
                    RowWrite::Insert(_) => Some(O::Insert),
                    w => {
                        let watched = lookup.is_none() && w.writes(field).is_some();
                        (watched || w.writes_any(namespace)).then_some(O::Insert)
                    }
                };
            }
            if let Some(l) = lookup {
                if let Some(w) = row_write(op, &l.table) {
                    let c = match w {
                        RowWrite::Delete => Some(O::Delete),
                        w => (w.writes(&l.field).is_some() || w.writes_any(namespace))
                            .then_some(O::Insert),
                    };
                    class = match (class, c) {
                        (Some(O::Delete), _) | (_, Some(O::Delete)) => Some(O::Delete),
                        (a, b) => a.or(b),
                    };
                }
            }
            class
        }
        S::ForeignKey { from, to, cascade } => fk_class(from, to, *cascade, op, t, schema),
        S::SecondaryIndex { table, index, .. } => {
            (row_write(op, table).is_some() || row_write(op, index).is_some())
                .then_some(O::UpdateIndexed)
        }
        S::MaterializedView { view } => view
            .stored
            .iter()
            .chain(view.source.iter())
            .any(|term| mv_relevant(term, op))
            .then_some(O::ViewUpdate),
        S::CounterGreaterThan { table, .. } | S::CounterLessThan { table, .. } => match op {
            Operation::Increment { table: t, .. } if t == table => Some(O::CounterIncrement),
            Operation::Decrement { table: t, .. } if t == table => Some(O::CounterDecrement),
            Operation::Assign { table: t, .. } if t == table => Some(O::CounterAssign),
            _ => None,
        },
        S::Contains { table, .. } | S::NotContains { table, .. } | S::SizeEquals { table, .. } => {
            match op {
                Operation::Add { table: t, .. } if t == table => Some(O::CollectionAdd),
                Operation::Remove { table: t, .. } if t == table => Some(O::CollectionDel),
                _ => None,
            }
        }
        S::Recency { table } => op
            .written_tables()
            .contains(&table.as_str())
            .then_some(O::WriteAnyValue),
    }
}

/// Classification of one (invariant, operation) pair of a transaction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairReport {
    pub invariant: String,
    pub invariant_class: InvariantClass,
    pub op_index: usize,
    pub op_kind: String,
    /// `None` when the operation cannot affect the invariant.
    pub op_class: Option<OperationClass>,
    pub classification: Classification,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransactionReport {
    pub transaction: String,
    pub pairs: Vec<PairReport>,
    pub coordination_free: bool,
}

impl TransactionReport {
    /// Pairs that are not I-confluent (including unknown ones).
    pub fn offending(&self) -> impl Iterator<Item = &PairReport> {
        self.pairs
            .iter()
            .filter(|p| p.classification.verdict != Verdict::IConfluent)
    }

    /// Names of invariants with at least one offending pair.
    pub fn offending_invariants(&self) -> BTreeSet<&str> {
        self.offending().map(|p| p.invariant.as_str()).collect()
    }
}

/// Spec-file name of an operation kind.
pub fn op_kind(op: &Operation) -> &'static str {
    match op {
        Operation::Read { .. } => "read",
        Operation::Insert { .. } => "insert",
        Operation::Update { .. } => "update",
        Operation::Delete { .. } => "delete",
        Operation::CascadeDelete { .. } => "cascade-delete",
        Operation::Increment { .. } => "increment",
        Operation::Decrement { .. } => "decrement",
        Operation::Assign { .. } => "assign",
        Operation::Add { .. } => "add",
        Operation::Remove { .. } => "remove",
        Operation::Let { .. } => "let",
        Operation::NextSequence { .. } => "next-sequence",
        Operation::AbortIf { .. } => "abort-if",
    }
}

/// Classifies every (invariant, operation) pair of `t`. The transaction is
/// coordination-free iff every pair is I-confluent; operations that cannot
/// affect an invariant count as I-confluent for it.
pub fn classify_transaction(
    t: &Transaction,
    specs: &[NamedInvariant],
    schema: Option<&Schema>,
) -> TransactionReport {
    let mut pairs = Vec::new();
    for inv in specs {
        let class = InvariantClass::of(&inv.spec);
        for (i, op) in t.ops.iter().enumerate() {
            let op_class = effective_class(&inv.spec, op, t, schema);
            let classification = match op_class {
                Some(c) => classify_static(class, c),
                None => Classification {
                    verdict: Verdict::IConfluent,
                    proof: None,
                },
            };
            pairs.push(PairReport {
                invariant: inv.name.clone(),
                invariant_class: class,
                op_index: i,
                op_kind: op_kind(op).to_string(),
                op_class,
                classification,
            });
        }
    }
    let coordination_free = pairs
        .iter()
        .all(|p| p.classification.verdict == Verdict::IConfluent);
    TransactionReport {
        transaction: t.name.clone(),
        pairs,
        coordination_free,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tabulated_pairs_cite_a_proof_and_the_rest_are_unknown() {
        for inv in InvariantClass::ALL {
            for op in OperationClass::ALL {
                let c = classify_static(inv, op);
                match c.verdict {
                    Verdict::Unknown => assert_eq!(c.proof, None, "{inv} x {op}"),
                    _ if inv == InvariantClass::Recency => assert_eq!(c.proof, None),
                    _ => assert!(c.proof.is_some(), "{inv} x {op}"),
                }
            }
        }
    }

    #[test]
    fn counter_rules_depend_on_direction() {
        use InvariantClass as I;
        use OperationClass as O;
        assert_eq!(classify_static(I::CounterGreaterThan, O::CounterIncrement).verdict, Verdict::IConfluent);
        assert_eq!(classify_static(I::CounterGreaterThan, O::CounterDecrement).verdict, Verdict::NotIConfluent);
        assert_eq!(classify_static(I::CounterLessThan, O::CounterIncrement).verdict, Verdict::NotIConfluent);
        assert_eq!(classify_static(I::CounterLessThan, O::CounterDecrement).verdict, Verdict::IConfluent);
    }
}
