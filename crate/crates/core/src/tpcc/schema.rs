//! Tables, invariants and initial data of the TPC-C encoding.
//!
//! Orders are created under a temporary identifier (`tmp`, a nonce) and
//! receive their real, per-district sequential identifier through the
//! `id_map` table once the district's sequence has been consulted. Every
//! reference between order, new-order and order-line rows uses the temporary
//! identifier, so the references hold whether or not the real identifier is
//! known yet.

use super::TpccConfig;
use crate::error::Result;
use crate::invariants::{InvariantSpec, Lookup, NamedInvariant, Predicate, RefSide, Term, ViewFunction};
use crate::replica::Catalog;
use crate::schema::{Schema, TableSchema, COUNTER_VALUE_FIELD};
use crate::state::DatabaseState;
use crate::value::{Fields, Value};
use crate::workload::{initial_state, InitialRow};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const WAREHOUSE: &str = "warehouse";
pub const WAREHOUSE_YTD: &str = "warehouse_ytd";
pub const DISTRICT: &str = "district";
pub const DISTRICT_YTD: &str = "district_ytd";
pub const CUSTOMER: &str = "customer";
pub const CUSTOMER_BALANCE: &str = "customer_balance";
pub const CUSTOMER_YTD_PAYMENT: &str = "customer_ytd_payment";
pub const ITEM: &str = "item";
pub const STOCK: &str = "stock";
pub const ORDER: &str = "order";
pub const NEW_ORDER: &str = "new_order";
pub const ORDER_LINE: &str = "order_line";
pub const HISTORY: &str = "history";
pub const ID_MAP: &str = "id_map";

pub fn schema() -> Schema {
    Schema::new()
        .with(WAREHOUSE, TableSchema::record(&["w"], &["name"]))
        .with(WAREHOUSE_YTD, TableSchema::counter(&["w"]))
        .with(DISTRICT, TableSchema::record(&["w", "d"], &["next_o_id"]))
        .with(DISTRICT_YTD, TableSchema::counter(&["w", "d"]))
        .with(CUSTOMER, TableSchema::record(&["w", "d", "c"], &["name"]))
        .with(CUSTOMER_BALANCE, TableSchema::counter(&["w", "d", "c"]))
        .with(CUSTOMER_YTD_PAYMENT, TableSchema::counter(&["w", "d", "c"]))
        .with(ITEM, TableSchema::record(&["i"], &["price"]))
        .with(STOCK, TableSchema::record(&["w", "i"], &["quantity"]))
        .with(ORDER, TableSchema::record(&["w", "d", "tmp"], &["c", "ol_cnt", "carrier"]))
        .with(NEW_ORDER, TableSchema::record(&["w", "d", "tmp"], &[]))
        .with(
            ORDER_LINE,
            TableSchema::record(
                &["w", "d", "tmp", "n"],
                &["c", "i", "supply_w", "qty", "amount", "delivery"],
            ),
        )
        .with(HISTORY, TableSchema::record(&["w", "d", "h"], &["c", "amount"]))
        .with(ID_MAP, TableSchema::record(&["w", "d", "tmp"], &["real_id"]))
}

/// The transactions of the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TpccTxn {
    NewOrder,
    Payment,
    Delivery,
}

impl TpccTxn {
    pub const ALL: [TpccTxn; 3] = [TpccTxn::NewOrder, TpccTxn::Payment, TpccTxn::Delivery];

    pub fn letter(self) -> char {
        match self {
            TpccTxn::NewOrder => 'N',
            TpccTxn::Payment => 'P',
            TpccTxn::Delivery => 'D',
        }
    }
}

/// One numbered consistency condition: the invariants encoding it and its
/// published classification.
#[derive(Debug, Clone)]
pub struct ConsistencyCondition {
    pub number: u8,
    /// Published invariant type (`MV`, `FK`, `S_ID`, `S_ID+FK`).
    pub kind: &'static str,
    /// Transactions the published table lists for the condition.
    pub declared: &'static [TpccTxn],
    /// Published verdict: achievable without coordination.
    pub confluent: bool,
    pub invariants: Vec<NamedInvariant>,
}

fn mv(name: &str, stored: Vec<Term>, source: Vec<Term>, offset: i64) -> InvariantSpec {
    InvariantSpec::MaterializedView {
        view: ViewFunction {
            name: name.to_string(),
            stored,
            source,
            offset,
        },
    }
}

fn fk(from: RefSide, to: RefSide, cascade: bool) -> InvariantSpec {
    InvariantSpec::ForeignKey { from, to, cascade }
}

fn named(number: u8, name: &str, spec: InvariantSpec) -> NamedInvariant {
    NamedInvariant::new(format!("c{number}-{name}"), spec)
}

fn not_null(f: &str) -> Predicate {
    Predicate::NotNull(f.to_string())
}

/// The twelve consistency conditions.
pub fn conditions() -> Vec<ConsistencyCondition> {
    use TpccTxn::*;
    let v = COUNTER_VALUE_FIELD;
    let c = |number, kind, declared, confluent, invariants| ConsistencyCondition {
        number,
        kind,
        declared,
        confluent,
        invariants,
    };
    vec![
        c(1, "MV", &[Payment], true, vec![named(
            1,
            "warehouse-ytd",
            mv(
                "warehouse ytd = sum of district ytd",
                vec![Term::sum(WAREHOUSE_YTD, v, &["w"])],
                vec![Term::sum(DISTRICT_YTD, v, &["w"])],
                0,
            ),
        )]),
        c(2, "S_ID+FK", &[NewOrder, Delivery], false, vec![
            named(2, "order-ids", InvariantSpec::Sequentiality {
                table: ID_MAP.into(),
                field: "real_id".into(),
                namespace: vec!["w".into(), "d".into()],
                start: Some(1),
                lookup: None,
            }),
            named(
                2,
                "next-order-id",
                mv(
                    "next order id = orders + 1",
                    vec![Term::sum(DISTRICT, "next_o_id", &["w", "d"])],
                    vec![Term::count(ID_MAP, &["w", "d"])],
                    1,
                ),
            ),
            named(2, "id-map-order", fk(RefSide::new(ID_MAP, &["tmp"]), RefSide::new(ORDER, &["tmp"]), false)),
            named(2, "order-id-map", fk(RefSide::new(ORDER, &["tmp"]), RefSide::new(ID_MAP, &["tmp"]), false)),
        ]),
        c(3, "S_ID", &[NewOrder, Delivery], false, vec![named(
            3,
            "new-order-ids",
            InvariantSpec::Sequentiality {
                table: NEW_ORDER.into(),
                field: "real_id".into(),
                namespace: vec!["w".into(), "d".into()],
                start: None,
                lookup: Some(Lookup {
                    table: ID_MAP.into(),
                    field: "real_id".into(),
                }),
            },
        )]),
        c(4, "MV", &[NewOrder], true, vec![named(
            4,
            "district-line-count",
            mv(
                "sum of order line counts = order lines, per district",
                vec![Term::sum(ORDER, "ol_cnt", &["w", "d"])],
                vec![Term::count(ORDER_LINE, &["w", "d"])],
                0,
            ),
        )]),
        c(5, "FK", &[NewOrder, Delivery], true, vec![named(
            5,
            "undelivered-new-order",
            fk(
                RefSide::new(ORDER, &["tmp"]).filtered(Predicate::IsNull("carrier".into())),
                RefSide::new(NEW_ORDER, &["tmp"]),
                true,
            ),
        )]),
        c(6, "MV", &[NewOrder], true, vec![named(
            6,
            "order-line-count",
            mv(
                "order line count = order lines, per order",
                vec![Term::sum(ORDER, "ol_cnt", &["w", "d", "tmp"])],
                vec![Term::count(ORDER_LINE, &["w", "d", "tmp"])],
                0,
            ),
        )]),
        c(7, "FK", &[Delivery], true, vec![
            named(
                7,
                "delivered-line-order",
                fk(
                    RefSide::new(ORDER_LINE, &["tmp"]).filtered(not_null("delivery")),
                    RefSide::new(ORDER, &["tmp"]).filtered(not_null("carrier")),
                    false,
                ),
            ),
            named(
                7,
                "delivered-order-line",
                fk(
                    RefSide::new(ORDER, &["tmp"]).filtered(not_null("carrier")),
                    RefSide::new(ORDER_LINE, &["tmp"]).filtered(not_null("delivery")),
                    false,
                ),
            ),
        ]),
        c(8, "MV", &[Delivery], true, vec![named(
            8,
            "warehouse-ytd-history",
            mv(
                "warehouse ytd = sum of history amounts",
                vec![Term::sum(WAREHOUSE_YTD, v, &["w"])],
                vec![Term::sum(HISTORY, "amount", &["w"])],
                0,
            ),
        )]),
        c(9, "MV", &[Payment], true, vec![named(
            9,
            "district-ytd-history",
            mv(
                "district ytd = sum of history amounts",
                vec![Term::sum(DISTRICT_YTD, v, &["w", "d"])],
                vec![Term::sum(HISTORY, "amount", &["w", "d"])],
                0,
            ),
        )]),
        c(10, "MV", &[Payment, Delivery], true, vec![named(
            10,
            "customer-balance",
            mv(
                "balance = delivered amounts - payments",
                vec![Term::sum(CUSTOMER_BALANCE, v, &["w", "d", "c"])],
                vec![
                    Term::sum(ORDER_LINE, "amount", &["w", "d", "c"]).filtered(not_null("delivery")),
                    Term::sum(HISTORY, "amount", &["w", "d", "c"]).negated(),
                ],
                0,
            ),
        )]),
        c(11, "FK", &[NewOrder], true, vec![named(
            11,
            "new-order-order",
            fk(RefSide::new(NEW_ORDER, &["tmp"]), RefSide::new(ORDER, &["tmp"]), false),
        )]),
        c(12, "MV", &[Payment, Delivery], true, vec![named(
            12,
            "customer-ytd",
            mv(
                "balance + ytd payment = delivered amounts",
                vec![
                    Term::sum(CUSTOMER_BALANCE, v, &["w", "d", "c"]),
                    Term::sum(CUSTOMER_YTD_PAYMENT, v, &["w", "d", "c"]),
                ],
                vec![Term::sum(ORDER_LINE, "amount", &["w", "d", "c"]).filtered(not_null("delivery"))],
                0,
            ),
        )]),
    ]
}

/// Conditions a coordination-free deployment cannot maintain while
/// transactions are in flight: the sequential order identifiers. They are
/// checked on converged states instead.
pub const DEFERRED_CONDITIONS: [u8; 2] = [2, 3];

/// Every invariant of every condition.
pub fn full_catalog() -> Catalog {
    catalog(conditions().into_iter().flat_map(|c| c.invariants).collect())
}

/// The invariants replicas enforce when running without coordination.
pub fn replica_catalog() -> Catalog {
    catalog(
        conditions()
            .into_iter()
            .filter(|c| !DEFERRED_CONDITIONS.contains(&c.number))
            .flat_map(|c| c.invariants)
            .collect(),
    )
}

fn catalog(invariants: Vec<NamedInvariant>) -> Catalog {
    Catalog::new(schema(), invariants).with_index(NEW_ORDER, &["w", "d"])
}

fn record(table: &str, fields: &[(&str, Value)]) -> InitialRow {
    InitialRow::Record {
        table: table.to_string(),
        fields: fields
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect::<Fields>(),
    }
}

/// The populated database: warehouses, districts, customers, items and
/// stock. Prices and quantities are drawn from `seed`.
pub fn initial(cfg: &TpccConfig, seed: u64) -> Result<DatabaseState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let int = |v: usize| Value::Int(v as i64);
    let mut rows = Vec::new();
    for i in 1..=cfg.items {
        rows.push(record(ITEM, &[("i", int(i)), ("price", Value::Int(rng.random_range(1..=100)))]));
    }
    for w in 1..=cfg.warehouses {
        rows.push(record(WAREHOUSE, &[("w", int(w)), ("name", Value::str(format!("W{w}")))]));
        for i in 1..=cfg.items {
            rows.push(record(
                STOCK,
                &[("w", int(w)), ("i", int(i)), ("quantity", Value::Int(rng.random_range(10..=100)))],
            ));
        }
        for d in 1..=cfg.districts {
            rows.push(record(DISTRICT, &[("w", int(w)), ("d", int(d)), ("next_o_id", Value::Int(1))]));
            for c in 1..=cfg.customers_per_district {
                rows.push(record(
                    CUSTOMER,
                    &[
                        ("w", int(w)),
                        ("d", int(d)),
                        ("c", int(c)),
                        ("name", Value::str(format!("C{w}.{d}.{c}"))),
                    ],
                ));
            }
        }
    }
    initial_state(&schema(), &rows)
}
