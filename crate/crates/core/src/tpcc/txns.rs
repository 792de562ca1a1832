//! New-Order, Payment and Delivery.

use super::schema::*;
use crate::txn::{Cond, Expr, Operation, Transaction};
use crate::value::{Key, Value};
use crate::view::View;
use std::collections::BTreeMap;

fn p(name: &str) -> Expr {
    Expr::param(name)
}

fn fields(pairs: Vec<(&str, Expr)>) -> BTreeMap<String, Expr> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn insert(table: &str, pairs: Vec<(&str, Expr)>) -> Operation {
    Operation::Insert {
        table: table.to_string(),
        fields: fields(pairs),
    }
}

fn update(table: &str, key: Vec<Expr>, pairs: Vec<(&str, Expr)>) -> Operation {
    Operation::Update {
        table: table.to_string(),
        key,
        fields: fields(pairs),
    }
}

/// New-Order with `lines` order lines. Parameters: `w`, `d`, `c` and, per
/// line `k`, the item `i{k}`, supplying warehouse `s{k}` and quantity
/// `q{k}`.
///
/// The order, its new-order entry and its lines are created under a fresh
/// temporary identifier; the district's sequence is consulted last and only
/// to record the real identifier in `id_map`.
pub fn new_order(lines: usize) -> Transaction {
    let (w, d, tmp) = (p("w"), p("d"), p("tmp"));
    let mut ops = vec![
        Operation::Let {
            var: "tmp".into(),
            expr: Expr::Nonce,
        },
        Operation::Read {
            table: CUSTOMER.into(),
            key: vec![w.clone(), d.clone(), p("c")],
        },
        insert(
            ORDER,
            vec![
                ("w", w.clone()),
                ("d", d.clone()),
                ("tmp", tmp.clone()),
                ("c", p("c")),
                ("ol_cnt", Expr::int(lines as i64)),
            ],
        ),
        insert(NEW_ORDER, vec![("w", w.clone()), ("d", d.clone()), ("tmp", tmp.clone())]),
    ];
    for k in 1..=lines {
        let (i, s, q) = (p(&format!("i{k}")), p(&format!("s{k}")), p(&format!("q{k}")));
        let stock_key = vec![s.clone(), i.clone()];
        ops.push(insert(
            ORDER_LINE,
            vec![
                ("w", w.clone()),
                ("d", d.clone()),
                ("tmp", tmp.clone()),
                ("n", Expr::int(k as i64)),
                ("c", p("c")),
                ("i", i.clone()),
                ("supply_w", s.clone()),
                ("qty", q.clone()),
                ("amount", Expr::mul(q.clone(), Expr::field(ITEM, vec![i.clone()], "price"))),
            ],
        ));
        // Decrease stock by the quantity, restocking by 91 below 10.
        let level = Expr::field(STOCK, stock_key.clone(), "quantity");
        let next = Expr::add(
            Expr::modulo(Expr::sub(Expr::sub(level, q), Expr::int(10)), Expr::int(91)),
            Expr::int(10),
        );
        ops.push(update(STOCK, stock_key, vec![("quantity", next)]));
    }
    ops.push(Operation::NextSequence {
        table: DISTRICT.into(),
        key: vec![w.clone(), d.clone()],
        field: "next_o_id".into(),
        bind: "o_id".into(),
    });
    ops.push(insert(ID_MAP, vec![("w", w), ("d", d), ("tmp", tmp), ("real_id", p("o_id"))]));
    Transaction::new("new-order", ops)
}

/// Payment of `a` by customer `c` of district `d` of warehouse `w`.
pub fn payment() -> Transaction {
    let (w, d, c, a) = (p("w"), p("d"), p("c"), p("a"));
    let customer = vec![w.clone(), d.clone(), c.clone()];
    let ops = vec![
        Operation::Let {
            var: "h".into(),
            expr: Expr::Nonce,
        },
        Operation::Increment {
            table: WAREHOUSE_YTD.into(),
            key: vec![w.clone()],
            by: a.clone(),
        },
        Operation::Increment {
            table: DISTRICT_YTD.into(),
            key: vec![w.clone(), d.clone()],
            by: a.clone(),
        },
        Operation::Decrement {
            table: CUSTOMER_BALANCE.into(),
            key: customer.clone(),
            by: a.clone(),
        },
        Operation::Increment {
            table: CUSTOMER_YTD_PAYMENT.into(),
            key: customer,
            by: a.clone(),
        },
        insert(
            HISTORY,
            vec![("w", w), ("d", d), ("h", p("h")), ("c", c), ("amount", a)],
        ),
    ];
    Transaction::new("payment", ops)
}

/// One order a delivery completes.
#[derive(Debug, Clone, PartialEq)]
pub struct DeliveryPick {
    pub d: Expr,
    pub tmp: Expr,
    pub c: Expr,
    pub lines: usize,
    /// Sum of the order's line amounts.
    pub total: Expr,
}

/// Delivery of one order per pick in warehouse `w`, recording `carrier`
/// on each order and `date` on each of its lines.
pub fn delivery(w: Expr, carrier: Expr, date: Expr, picks: &[DeliveryPick]) -> Transaction {
    let mut ops = Vec::new();
    for pick in picks {
        let order = vec![w.clone(), pick.d.clone(), pick.tmp.clone()];
        ops.push(Operation::AbortIf {
            cond: Cond::Not(Box::new(Cond::Exists {
                table: NEW_ORDER.into(),
                key: order.clone(),
            })),
        });
        ops.push(Operation::CascadeDelete {
            table: NEW_ORDER.into(),
            field: "tmp".into(),
            value: pick.tmp.clone(),
            referencing: Vec::new(),
        });
        ops.push(update(ORDER, order, vec![("carrier", carrier.clone())]));
        for n in 1..=pick.lines {
            ops.push(update(
                ORDER_LINE,
                vec![w.clone(), pick.d.clone(), pick.tmp.clone(), Expr::int(n as i64)],
                vec![("delivery", date.clone())],
            ));
        }
        ops.push(Operation::Increment {
            table: CUSTOMER_BALANCE.into(),
            key: vec![w.clone(), pick.d.clone(), pick.c.clone()],
            by: pick.total.clone(),
        });
    }
    Transaction::new("delivery", ops)
}

/// Delivery body over parameters, delivering a one-line order; used for
/// classification.
pub fn delivery_body() -> Transaction {
    delivery(
        p("w"),
        p("carrier"),
        p("date"),
        &[DeliveryPick {
            d: p("d"),
            tmp: p("tmp"),
            c: p("c"),
            lines: 1,
            total: p("total"),
        }],
    )
}

/// Bodies used to classify each transaction.
pub fn bodies() -> Vec<(TpccTxn, Transaction)> {
    vec![
        (TpccTxn::NewOrder, new_order(1)),
        (TpccTxn::Payment, payment()),
        (TpccTxn::Delivery, delivery_body()),
    ]
}

/// The real identifier of an order, if its district sequence has been
/// consulted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrderId {
    Resolved(i64),
    Pending,
}

/// Resolves an order's temporary identifier through `id_map`.
pub fn resolve_order_id(view: &View, w: i64, d: i64, tmp: &Value) -> OrderId {
    let key: Key = vec![Value::Int(w), Value::Int(d), tmp.clone()];
    view.row(ID_MAP, &key)
        .and_then(|r| r.get("real_id"))
        .and_then(Value::as_int)
        .map_or(OrderId::Pending, OrderId::Resolved)
}

/// For each district of warehouse `w`, the oldest undelivered order with a
/// resolved identifier, read from `view`.
pub fn delivery_picks(view: &View, w: i64, districts: usize) -> Vec<DeliveryPick> {
    let by_district = ["w".to_string(), "d".to_string()];
    let mut picks = Vec::new();
    for d in 1..=districts as i64 {
        let oldest = view
            .lookup(NEW_ORDER, &by_district, &[Some(Value::Int(w)), Some(Value::Int(d))])
            .into_iter()
            .filter_map(|k| match resolve_order_id(view, w, d, &k[2]) {
                OrderId::Resolved(id) => Some((id, k)),
                OrderId::Pending => None,
            })
            .min_by_key(|(id, _)| *id);
        let Some((_, key)) = oldest else { continue };
        let Some(order) = view.row(ORDER, &key) else { continue };
        let lines = order.get("ol_cnt").and_then(Value::as_int).unwrap_or(0).max(0) as usize;
        let total: i64 = (1..=lines as i64)
            .filter_map(|n| {
                let mut lk = key.clone();
                lk.push(Value::Int(n));
                view.row(ORDER_LINE, &lk)
                    .and_then(|r| r.get("amount"))
                    .and_then(Value::as_int)
            })
            .sum();
        let Some(c) = order.get("c") else { continue };
        picks.push(DeliveryPick {
            d: Expr::int(d),
            tmp: Expr::Lit(key[2].clone()),
            c: Expr::Lit(c.clone()),
            lines,
            total: Expr::int(total),
        });
    }
    picks
}
