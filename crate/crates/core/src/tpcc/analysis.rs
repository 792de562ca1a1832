//! Static classification of the consistency conditions and the audit of
//! final states.

use super::schema::*;
use super::txns::{bodies, resolve_order_id, OrderId};
use crate::confluence::{classify_transaction, InvariantClass, Verdict};
use crate::invariants::evaluate_view;
use crate::replica::Catalog;
use crate::state::DatabaseState;
use crate::value::Value;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Classification of one consistency condition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub number: u8,
    /// Published invariant type.
    pub published_kind: String,
    /// Type derived from the encoding's invariant classes.
    pub kind: String,
    /// Transactions the published table attributes the condition to.
    pub declared: Vec<TpccTxn>,
    /// Transactions with at least one operation that can affect it.
    pub derived: Vec<TpccTxn>,
    pub published: Verdict,
    pub verdict: Verdict,
    /// `transaction: invariant / operation (class)` for each pair that
    /// needs coordination.
    pub offending: Vec<String>,
}

impl ConditionReport {
    pub fn matches_published(&self) -> bool {
        self.verdict == self.published && self.kind == self.published_kind
    }
}

/// Type label of a set of invariants: `MV`, `FK`, or `S_ID` (with `+FK`
/// when foreign keys accompany the sequence).
pub fn kind_label(classes: &[InvariantClass]) -> String {
    let has = |c| classes.contains(&c);
    if has(InvariantClass::Sequentiality) {
        if has(InvariantClass::ForeignKey) {
            "S_ID+FK".into()
        } else {
            "S_ID".into()
        }
    } else if classes.iter().all(|c| *c == InvariantClass::MaterializedView) {
        "MV".into()
    } else if classes.iter().all(|c| *c == InvariantClass::ForeignKey) {
        "FK".into()
    } else {
        let names: Vec<String> = classes.iter().map(|c| c.to_string()).collect();
        names.join("+")
    }
}

/// Classifies every condition against New-Order, Payment and Delivery.
pub fn classify_tpcc() -> Vec<ConditionReport> {
    let schema = schema();
    let bodies = bodies();
    conditions()
        .into_iter()
        .map(|cond| {
            let classes: Vec<InvariantClass> =
                cond.invariants.iter().map(|i| InvariantClass::of(&i.spec)).collect();
            let mut derived = Vec::new();
            let mut offending = Vec::new();
            for (txn, body) in &bodies {
                let report = classify_transaction(body, &cond.invariants, Some(&schema));
                if report.pairs.iter().any(|p| p.op_class.is_some()) {
                    derived.push(*txn);
                }
                for p in report.offending() {
                    let class = p.op_class.map(|c| c.to_string()).unwrap_or_default();
                    offending.push(format!(
                        "{}: {} / {} #{} ({class}, {})",
                        body.name,
                        p.invariant,
                        p.op_kind,
                        p.op_index,
                        p.classification.verdict.yes_no()
                    ));
                }
            }
            ConditionReport {
                number: cond.number,
                published_kind: cond.kind.to_string(),
                kind: kind_label(&classes),
                declared: cond.declared.to_vec(),
                derived,
                published: if cond.confluent {
                    Verdict::IConfluent
                } else {
                    Verdict::NotIConfluent
                },
                verdict: if offending.is_empty() {
                    Verdict::IConfluent
                } else {
                    Verdict::NotIConfluent
                },
                offending,
            }
        })
        .collect()
}

/// One audited property.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub holds: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Check {
    fn new(name: &str, failure: Option<String>) -> Self {
        Check {
            name: name.to_string(),
            holds: failure.is_none(),
            detail: failure,
        }
    }
}

/// Audit of a (converged) database state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Audit {
    /// One check per consistency condition, in order.
    pub conditions: Vec<Check>,
    /// Properties beyond the catalog: converse references and the
    /// identifier assignment.
    pub extra: Vec<Check>,
    pub orders: usize,
    pub delivered: usize,
}

impl Audit {
    pub fn conditions_hold(&self) -> bool {
        self.conditions.iter().all(|c| c.holds)
    }

    pub fn all_hold(&self) -> bool {
        self.conditions_hold() && self.extra.iter().all(|c| c.holds)
    }
}

fn int(v: Option<&Value>) -> Option<i64> {
    v.and_then(Value::as_int)
}

/// Checks all twelve conditions and the converse properties on `state`.
pub fn audit(state: &DatabaseState) -> Audit {
    let catalog: Catalog = full_catalog();
    let view = catalog.view(state);
    let conditions = conditions()
        .iter()
        .map(|c| {
            let v = evaluate_view(&c.invariants, &view);
            Check::new(&format!("condition {}", c.number), v.witness.map(|w| w.to_string()))
        })
        .collect();

    let mut extra = Vec::new();

    // Every new-order entry belongs to an undelivered order.
    let failure = view.rows(NEW_ORDER).find_map(|(k, _)| match view.row(ORDER, k) {
        None => Some(format!("new_order {k:?} has no order")),
        Some(o) if o.contains_key("carrier") => Some(format!("new_order {k:?} belongs to a delivered order")),
        Some(_) => None,
    });
    extra.push(Check::new("new-order entries are undelivered orders", failure));

    // A delivered order has every line delivered.
    let mut delivered = 0;
    let mut failure = None;
    for (k, o) in view.rows(ORDER) {
        if !o.contains_key("carrier") {
            continue;
        }
        delivered += 1;
        let lines = int(o.get("ol_cnt")).unwrap_or(0);
        for n in 1..=lines {
            let mut lk = k.clone();
            lk.push(Value::Int(n));
            if !view.row(ORDER_LINE, &lk).is_some_and(|l| l.contains_key("delivery")) {
                failure.get_or_insert_with(|| format!("order {k:?} line {n} undelivered"));
            }
        }
    }
    extra.push(Check::new("delivered orders have all lines delivered", failure));

    // Each order has one real identifier; per district they run 1..=n and
    // the district's next identifier is n + 1.
    let mut ids: BTreeMap<(i64, i64), Vec<i64>> = BTreeMap::new();
    let mut failure = None;
    for (k, _) in view.rows(ORDER) {
        let (Some(w), Some(d)) = (k[0].as_int(), k[1].as_int()) else { continue };
        match resolve_order_id(&view, w, d, &k[2]) {
            OrderId::Resolved(id) => ids.entry((w, d)).or_default().push(id),
            OrderId::Pending => {
                failure.get_or_insert_with(|| format!("order {k:?} has no real id"));
            }
        }
    }
    if view.table_len(ID_MAP) != view.table_len(ORDER) {
        failure.get_or_insert_with(|| {
            format!(
                "{} id mappings for {} orders",
                view.table_len(ID_MAP),
                view.table_len(ORDER)
            )
        });
    }
    extra.push(Check::new("every order has exactly one real id", failure));

    let mut failure = None;
    for (k, row) in view.rows(DISTRICT) {
        let (Some(w), Some(d)) = (k[0].as_int(), k[1].as_int()) else { continue };
        let mut got = ids.remove(&(w, d)).unwrap_or_default();
        got.sort_unstable();
        let n = got.len() as i64;
        if got != (1..=n).collect::<Vec<_>>() {
            failure.get_or_insert_with(|| format!("district ({w}, {d}) ids are not 1..={n}: {got:?}"));
        } else if int(row.get("next_o_id")) != Some(n + 1) {
            failure.get_or_insert_with(|| {
                format!("district ({w}, {d}) next id {:?} after {n} orders", row.get("next_o_id"))
            });
        }
    }
    if let Some(((w, d), _)) = ids.iter().next() {
        failure.get_or_insert_with(|| format!("orders in unknown district ({w}, {d})"));
    }
    extra.push(Check::new("real order ids are gap-free", failure));

    Audit {
        conditions,
        extra,
        orders: view.table_len(ORDER),
        delivered,
    }
}
