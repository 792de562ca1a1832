//! The invariant/operation confluence table, with a small witness workload
//! for every cell and fixed diamonds for the non-confluent ones.

use super::classify::{InvariantClass, OperationClass, Verdict};
use crate::invariants::{InvariantSpec, NamedInvariant, RefSide, Term, ViewFunction};
use crate::replica::{Catalog, ReplicaState};
use crate::schema::{Schema, TableSchema};
use crate::state::DatabaseState;
use crate::txn::{Domain, Expr, Operation, Reference, Transaction, TxnTemplate};
use crate::value::{ReplicaId, Value};
use crate::workload::{initial_state, InitialRow, Workload};
use crate::error::{Error, Result};
use std::collections::BTreeMap;

/// One row of the confluence table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableRow {
    pub invariant: &'static str,
    pub operation: &'static str,
    pub classes: &'static [InvariantClass],
    pub ops: &'static [OperationClass],
    pub expected: Verdict,
    pub proofs: &'static [u8],
}

use InvariantClass as I;
use OperationClass as O;

/// Every row of the invariant/operation confluence table.
pub const TABLE: [TableRow; 16] = [
    row("Attribute Equality", "Any", &[I::AttributeEquality], &O::ALL, Verdict::IConfluent, &[1]),
    row("Attribute Inequality", "Any", &[I::AttributeInequality], &O::ALL, Verdict::IConfluent, &[2]),
    row("Uniqueness", "Choose specific value", &[I::Uniqueness], &[O::WriteAnyValue], Verdict::NotIConfluent, &[3]),
    row("Uniqueness", "Choose some value", &[I::Uniqueness], &[O::WriteChosenUnique], Verdict::IConfluent, &[4]),
    row("AUTO_INCREMENT", "Insert", &[I::Sequentiality], &[O::Insert], Verdict::NotIConfluent, &[5]),
    row("Foreign Key", "Insert", &[I::ForeignKey], &[O::Insert], Verdict::IConfluent, &[6]),
    row("Foreign Key", "Delete", &[I::ForeignKey], &[O::Delete], Verdict::NotIConfluent, &[7]),
    row("Foreign Key", "Cascading Delete", &[I::ForeignKey], &[O::CascadeDelete], Verdict::IConfluent, &[8]),
    row("Secondary Indexing", "Update", &[I::SecondaryIndex], &[O::UpdateIndexed], Verdict::IConfluent, &[9]),
    row("Materialized Views", "Update", &[I::MaterializedView], &[O::ViewUpdate], Verdict::IConfluent, &[10]),
    row(">", "Increment", &[I::CounterGreaterThan], &[O::CounterIncrement], Verdict::IConfluent, &[11]),
    row("<", "Increment", &[I::CounterLessThan], &[O::CounterIncrement], Verdict::NotIConfluent, &[12]),
    row(">", "Decrement", &[I::CounterGreaterThan], &[O::CounterDecrement], Verdict::NotIConfluent, &[13]),
    row("<", "Decrement", &[I::CounterLessThan], &[O::CounterDecrement], Verdict::IConfluent, &[14]),
    row("[NOT] CONTAINS", "Any", &[I::Contains, I::NotContains], &O::ALL, Verdict::IConfluent, &[15, 16]),
    row("SIZE=", "Mutation", &[I::SizeEquals], &[O::CollectionAdd, O::CollectionDel], Verdict::NotIConfluent, &[17]),
];

const fn row(
    invariant: &'static str,
    operation: &'static str,
    classes: &'static [InvariantClass],
    ops: &'static [OperationClass],
    expected: Verdict,
    proofs: &'static [u8],
) -> TableRow {
    TableRow {
        invariant,
        operation,
        classes,
        ops,
        expected,
        proofs,
    }
}

/// A dynamically checkable table cell: one invariant class, one operation
/// class and a workload exercising exactly that pair.
pub struct Cell {
    pub label: &'static str,
    /// Index into [`TABLE`].
    pub row: usize,
    pub invariant: InvariantClass,
    pub operation: OperationClass,
    pub expected: Verdict,
    pub workload: fn() -> Workload,
}

/// Witness cells. Rows whose invariant or operation column is a family
/// (`[NOT] CONTAINS`, `SIZE=` mutation) get one cell per member.
pub fn cells() -> Vec<Cell> {
    let c = |label, row, invariant, operation, workload| Cell {
        label,
        row,
        invariant,
        operation,
        expected: TABLE[row].expected,
        workload,
    };
    vec![
        c("attribute-equality/any", 0, I::AttributeEquality, O::WriteAnyValue, attribute_equality as fn() -> Workload),
        c("attribute-inequality/any", 1, I::AttributeInequality, O::WriteAnyValue, attribute_inequality),
        c("uniqueness/specific-value", 2, I::Uniqueness, O::WriteAnyValue, uniqueness_specific),
        c("uniqueness/some-value", 3, I::Uniqueness, O::WriteChosenUnique, uniqueness_some),
        c("auto-increment/insert", 4, I::Sequentiality, O::Insert, auto_increment),
        c("foreign-key/insert", 5, I::ForeignKey, O::Insert, foreign_key_insert),
        c("foreign-key/delete", 6, I::ForeignKey, O::Delete, foreign_key_delete),
        c("foreign-key/cascading-delete", 7, I::ForeignKey, O::CascadeDelete, foreign_key_cascade),
        c("secondary-index/update", 8, I::SecondaryIndex, O::UpdateIndexed, secondary_index),
        c("materialized-view/update", 9, I::MaterializedView, O::ViewUpdate, materialized_view),
        c("greater-than/increment", 10, I::CounterGreaterThan, O::CounterIncrement, gt_increment),
        c("less-than/increment", 11, I::CounterLessThan, O::CounterIncrement, lt_increment),
        c("greater-than/decrement", 12, I::CounterGreaterThan, O::CounterDecrement, gt_decrement),
        c("less-than/decrement", 13, I::CounterLessThan, O::CounterDecrement, lt_decrement),
        c("contains/any", 14, I::Contains, O::CollectionDel, contains),
        c("not-contains/any", 14, I::NotContains, O::CollectionAdd, not_contains),
        c("size-equals/add", 15, I::SizeEquals, O::CollectionAdd, size_add),
        c("size-equals/remove", 15, I::SizeEquals, O::CollectionDel, size_remove),
    ]
}

fn lit(v: impl Into<Value>) -> Expr {
    Expr::lit(v)
}

fn p(name: &str) -> Expr {
    Expr::param(name)
}

fn fields(pairs: &[(&str, Expr)]) -> BTreeMap<String, Expr> {
    pairs.iter().map(|(k, e)| (k.to_string(), e.clone())).collect()
}

fn choice<V: Into<Value> + Clone>(vs: &[V]) -> Domain {
    Domain::Choice(vs.iter().cloned().map(Into::into).collect())
}

fn record(table: &str, kv: &[(&str, Value)]) -> InitialRow {
    InitialRow::Record {
        table: table.to_string(),
        fields: kv.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
    }
}

fn build(
    name: &str,
    schema: Schema,
    invariants: Vec<(&str, InvariantSpec)>,
    templates: Vec<TxnTemplate>,
    rows: &[InitialRow],
) -> Workload {
    let catalog = Catalog::new(
        schema,
        invariants
            .into_iter()
            .map(|(n, s)| NamedInvariant::new(n, s))
            .collect(),
    );
    let initial = initial_state(&catalog.schema, rows).expect("witness initial state is well formed");
    Workload::new(name, catalog, initial, templates)
}

fn status_workload(name: &str, spec: InvariantSpec, statuses: &[&str]) -> Workload {
    let schema = Schema::new().with("emp", TableSchema::record(&["id"], &["status"]));
    build(
        name,
        schema,
        vec![("status", spec)],
        vec![
            TxnTemplate::new(
                "hire",
                vec![Operation::Insert {
                    table: "emp".into(),
                    fields: fields(&[("id", p("i")), ("status", lit("active"))]),
                }],
            )
            .param("i", Domain::Range(1, 3)),
            TxnTemplate::new(
                "set-status",
                vec![Operation::Update {
                    table: "emp".into(),
                    key: vec![p("i")],
                    fields: fields(&[("status", p("s"))]),
                }],
            )
            .param("i", Domain::Range(1, 3))
            .param("s", choice(statuses)),
            TxnTemplate::new(
                "fire",
                vec![Operation::Delete {
                    table: "emp".into(),
                    key: vec![p("i")],
                }],
            )
            .param("i", Domain::Range(1, 3)),
        ],
        &[],
    )
}

fn attribute_equality() -> Workload {
    status_workload(
        "attribute-equality",
        InvariantSpec::AttributeEquality {
            table: "emp".into(),
            field: "status".into(),
            value: "active".into(),
        },
        &["active", "retired"],
    )
}

fn attribute_inequality() -> Workload {
    status_workload(
        "attribute-inequality",
        InvariantSpec::AttributeInequality {
            table: "emp".into(),
            field: "status".into(),
            value: "banned".into(),
        },
        &["active", "retired", "banned"],
    )
}

fn unique_emp(name: &str, id: Expr, id_domain: Option<Domain>) -> Workload {
    let schema = Schema::new().with("emp", TableSchema::record(&["eid"], &["name", "id"]));
    let mut hire = TxnTemplate::new(
        "hire",
        vec![Operation::Insert {
            table: "emp".into(),
            fields: fields(&[("eid", Expr::Nonce), ("name", p("n")), ("id", id)]),
        }],
    )
    .param("n", choice(&["Stan", "Mary", "Ann"]));
    if let Some(d) = id_domain {
        hire = hire.param("i", d);
    }
    build(
        name,
        schema,
        vec![(
            "unique-id",
            InvariantSpec::Uniqueness {
                table: "emp".into(),
                field: "id".into(),
            },
        )],
        vec![hire],
        &[],
    )
}

fn uniqueness_specific() -> Workload {
    unique_emp("uniqueness-specific", p("i"), Some(Domain::Range(1, 3)))
}

fn uniqueness_some() -> Workload {
    unique_emp("uniqueness-some", Expr::Nonce, None)
}

fn auto_increment() -> Workload {
    let schema = Schema::new()
        .with("ctr", TableSchema::record(&["k"], &["next"]))
        .with("rec", TableSchema::record(&["id"], &["seq"]));
    build(
        "auto-increment",
        schema,
        vec![(
            "sequential-ids",
            InvariantSpec::Sequentiality {
                table: "rec".into(),
                field: "seq".into(),
                namespace: Vec::new(),
                start: Some(1),
                lookup: None,
            },
        )],
        vec![TxnTemplate::new(
            "append",
            vec![
                Operation::NextSequence {
                    table: "ctr".into(),
                    key: vec![Expr::int(0)],
                    field: "next".into(),
                    bind: "s".into(),
                },
                Operation::Insert {
                    table: "rec".into(),
                    fields: fields(&[("id", Expr::Nonce), ("seq", p("s"))]),
                },
            ],
        )],
        &[record("ctr", &[("k", 0.into()), ("next", 1.into())])],
    )
}

fn dept_schema() -> Schema {
    Schema::new()
        .with("dept", TableSchema::record(&["id"], &[]))
        .with("emp", TableSchema::record(&["name"], &["dept"]))
}

fn fk_spec(cascade: bool) -> InvariantSpec {
    InvariantSpec::ForeignKey {
        from: RefSide::new("emp", &["dept"]),
        to: RefSide::new("dept", &["id"]),
        cascade,
    }
}

fn hire_into_dept() -> TxnTemplate {
    TxnTemplate::new(
        "hire",
        vec![Operation::Insert {
            table: "emp".into(),
            fields: fields(&[("name", p("n")), ("dept", p("d"))]),
        }],
    )
    .param("n", choice(&["Stan", "Mary", "Ann"]))
    .param("d", Domain::Range(1, 3))
}

fn depts() -> Vec<InitialRow> {
    vec![record("dept", &[("id", 1.into())]), record("dept", &[("id", 2.into())])]
}

fn foreign_key_insert() -> Workload {
    build(
        "foreign-key-insert",
        dept_schema(),
        vec![("emp-dept", fk_spec(false))],
        vec![
            hire_into_dept(),
            TxnTemplate::new(
                "open-dept",
                vec![Operation::Insert {
                    table: "dept".into(),
                    fields: fields(&[("id", p("d"))]),
                }],
            )
            .param("d", Domain::Range(1, 3)),
        ],
        &depts(),
    )
}

fn foreign_key_delete() -> Workload {
    build(
        "foreign-key-delete",
        dept_schema(),
        vec![("emp-dept", fk_spec(false))],
        vec![
            hire_into_dept(),
            TxnTemplate::new(
                "close-dept",
                vec![Operation::Delete {
                    table: "dept".into(),
                    key: vec![p("d")],
                }],
            )
            .param("d", Domain::Range(1, 3)),
        ],
        &depts(),
    )
}

fn foreign_key_cascade() -> Workload {
    build(
        "foreign-key-cascade",
        dept_schema(),
        vec![("emp-dept", fk_spec(true))],
        vec![
            hire_into_dept(),
            TxnTemplate::new(
                "close-dept",
                vec![Operation::CascadeDelete {
                    table: "dept".into(),
                    field: "id".into(),
                    value: p("d"),
                    referencing: vec![Reference {
                        table: "emp".into(),
                        field: "dept".into(),
                    }],
                }],
            )
            .param("d", Domain::Range(1, 3)),
        ],
        &depts(),
    )
}

fn secondary_index() -> Workload {
    let schema = Schema::new()
        .with("emp", TableSchema::record(&["id"], &["dept"]))
        .with("emp_by_dept", TableSchema::record(&["id"], &["dept"]));
    build(
        "secondary-index",
        schema,
        vec![(
            "dept-index",
            InvariantSpec::SecondaryIndex {
                table: "emp".into(),
                field: "dept".into(),
                index: "emp_by_dept".into(),
            },
        )],
        vec![
            TxnTemplate::new(
                "move",
                ["emp", "emp_by_dept"]
                    .iter()
                    .map(|t| Operation::Update {
                        table: t.to_string(),
                        key: vec![p("i")],
                        fields: fields(&[("dept", p("d"))]),
                    })
                    .collect(),
            )
            .param("i", Domain::Range(1, 3))
            .param("d", Domain::Range(1, 3)),
            TxnTemplate::new(
                "fire",
                ["emp", "emp_by_dept"]
                    .iter()
                    .map(|t| Operation::Delete {
                        table: t.to_string(),
                        key: vec![p("i")],
                    })
                    .collect(),
            )
            .param("i", Domain::Range(1, 3)),
        ],
        &[],
    )
}

fn materialized_view() -> Workload {
    let schema = Schema::new()
        .with("emp", TableSchema::record(&["id"], &["dept", "salary"]))
        .with("dept_total", TableSchema::counter(&["dept"]));
    build(
        "materialized-view",
        schema,
        vec![(
            "dept-total",
            InvariantSpec::MaterializedView {
                view: ViewFunction {
                    name: "dept_total".into(),
                    stored: vec![Term::sum("dept_total", "value", &["dept"])],
                    source: vec![Term::sum("emp", "salary", &["dept"])],
                    offset: 0,
                },
            },
        )],
        vec![
            TxnTemplate::new(
                "hire",
                vec![Operation::Insert {
                    table: "emp".into(),
                    fields: fields(&[("id", p("i")), ("dept", p("d")), ("salary", p("s"))]),
                }],
            )
            .param("i", Domain::Range(1, 3))
            .param("d", Domain::Range(1, 2))
            .param("s", Domain::Range(1, 5)),
            TxnTemplate::new(
                "fire",
                vec![Operation::Delete {
                    table: "emp".into(),
                    key: vec![p("i")],
                }],
            )
            .param("i", Domain::Range(1, 3)),
        ],
        &[],
    )
}

fn counter_workload(name: &str, spec: InvariantSpec, increment: bool) -> Workload {
    let schema = Schema::new().with("c", TableSchema::counter(&["k"]));
    let (table, key, by) = ("c".to_string(), vec![Expr::int(0)], Expr::int(1));
    let op = if increment {
        Operation::Increment { table, key, by }
    } else {
        Operation::Decrement { table, key, by }
    };
    build(
        name,
        schema,
        vec![("bound", spec)],
        vec![TxnTemplate::new(if increment { "increment" } else { "decrement" }, vec![op])],
        &[InitialRow::Counter {
            table: "c".into(),
            key: vec![0.into()],
            value: 0,
        }],
    )
}

fn gt(bound: i64) -> InvariantSpec {
    InvariantSpec::CounterGreaterThan {
        table: "c".into(),
        key: Some(vec![0.into()]),
        bound,
    }
}

fn lt(bound: i64) -> InvariantSpec {
    InvariantSpec::CounterLessThan {
        table: "c".into(),
        key: Some(vec![0.into()]),
        bound,
    }
}

fn gt_increment() -> Workload {
    counter_workload("greater-than-increment", gt(-2), true)
}

fn lt_increment() -> Workload {
    counter_workload("less-than-increment", lt(2), true)
}

fn gt_decrement() -> Workload {
    counter_workload("greater-than-decrement", gt(-2), false)
}

fn lt_decrement() -> Workload {
    counter_workload("less-than-decrement", lt(2), false)
}

fn list_ops(values: &[&str]) -> Vec<TxnTemplate> {
    let key = vec![Expr::int(0)];
    vec![
        TxnTemplate::new(
            "add",
            vec![Operation::Add {
                table: "l".into(),
                key: key.clone(),
                value: p("v"),
            }],
        )
        .param("v", choice(values)),
        TxnTemplate::new(
            "remove",
            vec![Operation::Remove {
                table: "l".into(),
                key,
                value: p("v"),
            }],
        )
        .param("v", choice(values)),
    ]
}

fn list_schema() -> Schema {
    Schema::new().with("l", TableSchema::collection(&["k"]))
}

fn contains() -> Workload {
    build(
        "contains",
        list_schema(),
        vec![(
            "has-a",
            InvariantSpec::Contains {
                table: "l".into(),
                key: Some(vec![0.into()]),
                value: "a".into(),
            },
        )],
        list_ops(&["a", "b", "c"]),
        &[InitialRow::Collection {
            table: "l".into(),
            key: vec![0.into()],
            values: vec!["a".into()],
        }],
    )
}

fn not_contains() -> Workload {
    build(
        "not-contains",
        list_schema(),
        vec![(
            "no-x",
            InvariantSpec::NotContains {
                table: "l".into(),
                key: Some(vec![0.into()]),
                value: "x".into(),
            },
        )],
        list_ops(&["a", "b", "x"]),
        &[],
    )
}

fn size_add() -> Workload {
    build(
        "size-equals-add",
        list_schema(),
        vec![(
            "singleton",
            InvariantSpec::SizeEquals {
                table: "l".into(),
                key: None,
                size: 1,
            },
        )],
        vec![TxnTemplate::new(
            "add",
            vec![Operation::Add {
                table: "l".into(),
                key: vec![p("k")],
                value: p("v"),
            }],
        )
        .param("k", Domain::Range(0, 1))
        .param("v", choice(&["a", "b"]))],
        &[],
    )
}

fn size_remove() -> Workload {
    build(
        "size-equals-remove",
        list_schema(),
        vec![(
            "singleton",
            InvariantSpec::SizeEquals {
                table: "l".into(),
                key: Some(vec![0.into()]),
                size: 1,
            },
        )],
        vec![TxnTemplate::new(
            "replace",
            vec![
                Operation::Remove {
                    table: "l".into(),
                    key: vec![Expr::int(0)],
                    value: lit("i"),
                },
                Operation::Add {
                    table: "l".into(),
                    key: vec![Expr::int(0)],
                    value: p("b"),
                },
            ],
        )
        .param("b", choice(&["a", "b"]))],
        &[InitialRow::Collection {
            table: "l".into(),
            key: vec![0.into()],
            values: vec!["i".into()],
        }],
    )
}

/// A hand-built diamond: two single-branch transaction sequences run on
/// separate replicas from the workload's initial state.
pub struct FixedDiamond {
    /// Proof number of the table row this diamond refutes.
    pub proof: u8,
    pub workload: Workload,
    pub left: Vec<Transaction>,
    pub right: Vec<Transaction>,
}

/// Result of running a [`FixedDiamond`].
#[derive(Debug, Clone)]
pub struct DiamondOutcome {
    pub left: DatabaseState,
    pub right: DatabaseState,
    pub merged: DatabaseState,
    pub left_valid: bool,
    pub right_valid: bool,
    pub merged_valid: bool,
}

impl FixedDiamond {
    pub fn run(&self) -> Result<DiamondOutcome> {
        let w = &self.workload;
        let branch = |id: u32, txns: &[Transaction]| -> Result<DatabaseState> {
            let mut r = ReplicaState::new(ReplicaId(id), w.catalog.clone(), &w.initial);
            for t in txns {
                let out = r.apply_transaction(t)?;
                if !out.committed() {
                    return Err(Error::Execution(format!("{} aborted: {:?}", t.name, out.abort_reason)));
                }
            }
            Ok(r.local().clone())
        };
        let left = branch(1, &self.left)?;
        let right = branch(2, &self.right)?;
        let merged = super::dynamic::merge_branches(&w.catalog, &left, &right).local().clone();
        Ok(DiamondOutcome {
            left_valid: w.catalog.is_valid(&left).valid,
            right_valid: w.catalog.is_valid(&right).valid,
            merged_valid: w.catalog.is_valid(&merged).valid,
            left,
            right,
            merged,
        })
    }
}

fn bind(w: &Workload, name: &str, params: &[(&str, Value)]) -> Transaction {
    let body = w
        .bodies()
        .iter()
        .find(|b| b.name == name)
        .expect("template exists")
        .clone();
    params
        .iter()
        .fold(body, |t, (k, v)| t.with_param(k, v.clone()))
}

/// One fixed counterexample per non-confluent row.
pub fn fixed_counterexamples() -> Vec<FixedDiamond> {
    let mut out = Vec::new();

    let w = uniqueness_specific();
    out.push(FixedDiamond {
        proof: 3,
        left: vec![bind(&w, "hire", &[("n", "Stan".into()), ("i", 1.into())])],
        right: vec![bind(&w, "hire", &[("n", "Mary".into()), ("i", 1.into())])],
        workload: w,
    });

    let w = auto_increment();
    out.push(FixedDiamond {
        proof: 5,
        left: vec![bind(&w, "append", &[])],
        right: vec![bind(&w, "append", &[])],
        workload: w,
    });

    let w = foreign_key_delete();
    out.push(FixedDiamond {
        proof: 7,
        left: vec![bind(&w, "hire", &[("n", "Stan".into()), ("d", 1.into())])],
        right: vec![bind(&w, "close-dept", &[("d", 1.into())])],
        workload: w,
    });

    let w = lt_increment();
    out.push(FixedDiamond {
        proof: 12,
        left: vec![bind(&w, "increment", &[])],
        right: vec![bind(&w, "increment", &[])],
        workload: w,
    });

    let w = gt_decrement();
    out.push(FixedDiamond {
        proof: 13,
        left: vec![bind(&w, "decrement", &[])],
        right: vec![bind(&w, "decrement", &[])],
        workload: w,
    });

    let w = size_remove();
    out.push(FixedDiamond {
        proof: 17,
        left: vec![bind(&w, "replace", &[("b", "a".into())])],
        right: vec![bind(&w, "replace", &[("b", "b".into())])],
        workload: w,
    });

    out
}
