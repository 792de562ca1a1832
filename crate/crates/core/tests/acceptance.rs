//! Acceptance run: one pass/fail line per criterion.
//!
//! Every expected value is either transcribed from the published tables or
//! computed by an oracle written here, independently of the library code
//! under test. Runs without the test harness so the report lines are always
//! printed; exits non-zero if any criterion fails.

use iconfluence::adt::{collection_contains, collection_size, counter_value, CounterState};
use iconfluence::confluence::dynamic::{check_dynamic, generate_divergent_pair, replay, GenConfig, Outcome};
use iconfluence::confluence::rule_table::{cells, fixed_counterexamples, Cell, TABLE};
use iconfluence::confluence::{classify_static, Verdict};
use iconfluence::invariants::{maintain_view, MaintainMode, Term, ViewFunction, ViewWrite};
use iconfluence::sim::{
    execute, inject_partition, model_commit_throughput, run_coordinated, run_coordination_free, CommitProtocol,
    NetworkModel, SimConfig, Strategy, TxnSource,
};
use iconfluence::state::{CounterKind, EventId};
use iconfluence::tpcc::{audit, classify_tpcc, full_catalog, run_tpcc, TpccConfig, TpccSource};
use iconfluence::workload::{initial_state, InitialRow};
use iconfluence::{
    merge, Catalog, DatabaseState, Expr, Group, InvariantSpec, ItemId, NamedInvariant, Operation, Payload,
    ReplicaId, ReplicaState, Schema, TableSchema, Transaction, TxnId, Value, Version, View,
};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

type CriterionResult = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn cell(label: &str) -> Cell {
    cells().into_iter().find(|c| c.label == label).expect("cell exists")
}

// ---------------------------------------------------------------------------
// 1. Static classification against the published invariant/operation table.

/// The published table: invariant, operation, confluent?, proof numbers.
const PUBLISHED_TABLE: [(&str, &str, bool, &[u8]); 16] = [
    ("Attribute Equality", "Any", true, &[1]),
    ("Attribute Inequality", "Any", true, &[2]),
    ("Uniqueness", "Choose specific value", false, &[3]),
    ("Uniqueness", "Choose some value", true, &[4]),
    ("AUTO_INCREMENT", "Insert", false, &[5]),
    ("Foreign Key", "Insert", true, &[6]),
    ("Foreign Key", "Delete", false, &[7]),
    ("Foreign Key", "Cascading Delete", true, &[8]),
    ("Secondary Indexing", "Update", true, &[9]),
    ("Materialized Views", "Update", true, &[10]),
    (">", "Increment [Counter]", true, &[11]),
    ("<", "Increment [Counter]", false, &[12]),
    (">", "Decrement [Counter]", false, &[13]),
    ("<", "Decrement [Counter]", true, &[14]),
    ("[NOT] CONTAINS", "Any [Set, List, Map]", true, &[15, 16]),
    ("SIZE=", "Mutation [Set, List, Map]", false, &[17]),
];

fn criterion_1() -> CriterionResult {
    let mut yes = 0;
    for (inv, op, confluent, proofs) in PUBLISHED_TABLE {
        let row = TABLE
            .iter()
            .find(|r| r.proofs == proofs)
            .ok_or_else(|| format!("no row for proofs {proofs:?}"))?;
        ensure(row.invariant == inv && op.starts_with(row.operation), || {
            format!("row {proofs:?} is {} / {}", row.invariant, row.operation)
        })?;
        let want = if confluent { Verdict::IConfluent } else { Verdict::NotIConfluent };
        for &c in row.classes {
            for &o in row.ops {
                let got = classify_static(c, o).verdict;
                ensure(got == want, || format!("{inv} / {op}: {c} x {o} classified {got:?}"))?;
            }
        }
        yes += confluent as usize;
    }
    ensure(TABLE.len() == 16 && yes == 10, || format!("{yes} Yes rows of {}", TABLE.len()))?;
    Ok("all 16 rows match (10 Yes / 6 No)".into())
}

// ---------------------------------------------------------------------------
// 2. Dynamic checks of every witness cell.

fn criterion_2() -> CriterionResult {
    let all = cells();
    let results: Vec<Result<(), String>> = all
        .par_iter()
        .map(|c| {
            let w = (c.workload)();
            let (trials, depth) = match c.expected {
                Verdict::NotIConfluent => (1_000, 2),
                _ => (10_000, 4),
            };
            let v = check_dynamic(&w, trials, depth, 2024).map_err(|e| format!("{}: {e}", c.label))?;
            let found = v.outcome == Outcome::CounterexampleFound;
            ensure(found == (c.expected == Verdict::NotIConfluent), || {
                format!("{}: counterexample found = {found} after {} trials", c.label, v.trials)
            })
        })
        .collect();
    results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let no = all.iter().filter(|c| c.expected == Verdict::NotIConfluent).count();
    Ok(format!(
        "{no} No cells refuted within 10^3 trials at depth 2; {} Yes cells clean over 10^4 trials at depth 4",
        all.len() - no
    ))
}

// ---------------------------------------------------------------------------
// 3. The published counterexample constructions.

fn fields(pairs: &[(&str, Expr)]) -> BTreeMap<String, Expr> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn insert(table: &str, pairs: &[(&str, Expr)]) -> Operation {
    Operation::Insert {
        table: table.into(),
        fields: fields(pairs),
    }
}

/// Runs `left` and `right` on two replicas of `initial` and merges the
/// results. Returns (left valid, right valid, merged state, merged valid).
fn diamond(
    catalog: Catalog,
    initial: &DatabaseState,
    left: Vec<Operation>,
    right: Vec<Operation>,
) -> Result<(bool, bool, DatabaseState, View, bool), String> {
    let catalog = Arc::new(catalog);
    ensure(catalog.is_valid(initial).valid, || "initial state invalid".into())?;
    let run = |id: u32, ops: Vec<Operation>| -> Result<DatabaseState, String> {
        let mut r = ReplicaState::new(ReplicaId(id), catalog.clone(), initial);
        let out = r
            .apply_transaction(&Transaction::new(&format!("t{id}"), ops))
            .map_err(|e| e.to_string())?;
        ensure(out.committed(), || format!("t{id} did not commit"))?;
        Ok(r.local().clone())
    };
    let (a, b) = (run(1, left)?, run(2, right)?);
    let mut m = ReplicaState::new(ReplicaId(3), catalog.clone(), &a);
    m.merge(&b);
    let merged = m.local().clone();
    Ok((
        catalog.is_valid(&a).valid,
        catalog.is_valid(&b).valid,
        merged.clone(),
        catalog.view(&merged),
        catalog.is_valid(&merged).valid,
    ))
}

/// Brute-force counter value: the latest assignment by version order sets
/// the base; later increments and decrements adjust it.
fn oracle_counter(s: &DatabaseState, item: &ItemId) -> i64 {
    let events: Vec<&Version> = s.iter().map(|v| v.as_ref()).filter(|v| &v.item == item).collect();
    let base = events
        .iter()
        .filter(|v| matches!(v.payload, Payload::Counter { kind: CounterKind::Assign, .. }))
        .max_by_key(|v| v.order());
    let (start, mut value) = match base {
        Some(v) => match v.payload {
            Payload::Counter { amount, .. } => (Some(v.order()), amount),
            _ => unreachable!(),
        },
        None => (None, 0),
    };
    for v in &events {
        if start.is_some_and(|b| v.order() <= b) {
            continue;
        }
        match v.payload {
            Payload::Counter { kind: CounterKind::Increment, amount } => value += amount,
            Payload::Counter { kind: CounterKind::Decrement, amount } => value -= amount,
            _ => {}
        }
    }
    value
}

/// Brute-force live insertions of a collection: additions no removal in the
/// state names.
fn oracle_live(s: &DatabaseState, item: &ItemId) -> Vec<Value> {
    let removed: BTreeSet<EventId> = s
        .iter()
        .filter(|v| &v.item == item)
        .filter_map(|v| match &v.payload {
            Payload::Remove { target, .. } => Some(*target),
            _ => None,
        })
        .collect();
    s.iter()
        .filter(|v| &v.item == item && !removed.contains(&v.event_id()))
        .filter_map(|v| match &v.payload {
            Payload::Add(x) => Some(x.clone()),
            _ => None,
        })
        .collect()
}

fn claim_uniqueness() -> Result<(), String> {
    let schema = Schema::new().with("users", TableSchema::record(&["name"], &["id"]));
    let inv = InvariantSpec::Uniqueness {
        table: "users".into(),
        field: "id".into(),
    };
    let catalog = Catalog::new(schema, vec![NamedInvariant::new("unique-id", inv)]);
    let hire = |n: &str| vec![insert("users", &[("name", Expr::lit(n)), ("id", Expr::int(5))])];
    let (l, r, _, view, m) = diamond(catalog, &DatabaseState::new(), hire("Stan"), hire("Mary"))?;
    let fives = view.rows("users").filter(|(_, row)| row.get("id") == Some(&Value::Int(5))).count();
    ensure(l && r && !m && fives == 2, || format!("uniqueness: {l} {r} {m}, {fives} rows with id 5"))
}

fn claim_sequentiality() -> Result<(), String> {
    let schema = Schema::new().with("t", TableSchema::record(&["k"], &["x"]));
    let inv = InvariantSpec::Sequentiality {
        table: "t".into(),
        field: "x".into(),
        namespace: Vec::new(),
        start: None,
        lookup: None,
    };
    let catalog = Catalog::new(schema, vec![NamedInvariant::new("sequential", inv)]);
    let add = |k: &str, x: i64| vec![insert("t", &[("k", Expr::lit(k)), ("x", Expr::int(x))])];
    let (l, r, _, view, m) = diamond(catalog, &DatabaseState::new(), add("a", 1), add("b", 3))?;
    let mut xs: Vec<i64> = view.rows("t").filter_map(|(_, row)| row.get("x")?.as_int()).collect();
    xs.sort();
    let gap_free = xs.windows(2).all(|w| w[1] == w[0] + 1);
    ensure(l && r && !m && xs == [1, 3] && !gap_free, || {
        format!("sequentiality: {l} {r} {m}, values {xs:?}")
    })
}

fn claim_foreign_key() -> Result<(), String> {
    let schema = Schema::new()
        .with("dept", TableSchema::record(&["id"], &[]))
        .with("emp", TableSchema::record(&["name"], &["dept"]));
    let inv = InvariantSpec::ForeignKey {
        from: iconfluence::invariants::RefSide::new("emp", &["dept"]),
        to: iconfluence::invariants::RefSide::new("dept", &["id"]),
        cascade: false,
    };
    let initial = initial_state(
        &schema,
        &[InitialRow::Record {
            table: "dept".into(),
            fields: [("id".to_string(), Value::Int(1))].into_iter().collect(),
        }],
    )
    .map_err(|e| e.to_string())?;
    let catalog = Catalog::new(schema, vec![NamedInvariant::new("emp-dept", inv)]);
    let hire = vec![insert("emp", &[("name", Expr::lit("g")), ("dept", Expr::int(1))])];
    let fire_dept = vec![Operation::Delete {
        table: "dept".into(),
        key: vec![Expr::int(1)],
    }];
    let (l, r, _, view, m) = diamond(catalog, &initial, hire, fire_dept)?;
    let dangling = view.row("emp", &vec![Value::str("g")]).is_some() && view.row("dept", &vec![Value::Int(1)]).is_none();
    ensure(l && r && !m && dangling, || format!("foreign key: {l} {r} {m}, dangling {dangling}"))
}

fn claim_counter(less_than: bool) -> Result<(), String> {
    let schema = Schema::new().with("c", TableSchema::counter(&["k"]));
    let key = Some(vec![Value::Int(0)]);
    let (inv, bound) = if less_than {
        (InvariantSpec::CounterLessThan { table: "c".into(), key, bound: 2 }, 2)
    } else {
        (InvariantSpec::CounterGreaterThan { table: "c".into(), key, bound: -2 }, -2)
    };
    let initial = initial_state(
        &schema,
        &[InitialRow::Counter {
            table: "c".into(),
            key: vec![0.into()],
            value: 0,
        }],
    )
    .map_err(|e| e.to_string())?;
    let catalog = Catalog::new(schema, vec![NamedInvariant::new("bound", inv)]);
    let step = || {
        let (table, key, by) = ("c".to_string(), vec![Expr::int(0)], Expr::int(1));
        vec![if less_than {
            Operation::Increment { table, key, by }
        } else {
            Operation::Decrement { table, key, by }
        }]
    };
    let (l, r, merged, _, m) = diamond(catalog, &initial, step(), step())?;
    let value = oracle_counter(&merged, &ItemId::new("c", vec![0.into()]));
    ensure(l && r && !m && value == bound, || format!("counter: {l} {r} {m}, merged value {value}"))
}

fn claim_size() -> Result<(), String> {
    let schema = Schema::new().with("l", TableSchema::collection(&["k"]));
    let inv = InvariantSpec::SizeEquals {
        table: "l".into(),
        key: Some(vec![0.into()]),
        size: 1,
    };
    let initial = initial_state(
        &schema,
        &[InitialRow::Collection {
            table: "l".into(),
            key: vec![0.into()],
            values: vec!["xi".into()],
        }],
    )
    .map_err(|e| e.to_string())?;
    let catalog = Catalog::new(schema, vec![NamedInvariant::new("size", inv)]);
    let swap = |to: &str| {
        let key = vec![Expr::int(0)];
        vec![
            Operation::Remove {
                table: "l".into(),
                key: key.clone(),
                value: Expr::lit("xi"),
            },
            Operation::Add {
                table: "l".into(),
                key,
                value: Expr::lit(to),
            },
        ]
    };
    let (l, r, merged, _, m) = diamond(catalog, &initial, swap("xa"), swap("xb"))?;
    let mut live = oracle_live(&merged, &ItemId::new("l", vec![0.into()]));
    live.sort();
    ensure(l && r && !m && live == [Value::str("xa"), Value::str("xb")], || {
        format!("size: {l} {r} {m}, live {live:?}")
    })
}

fn criterion_3() -> CriterionResult {
    claim_uniqueness()?;
    claim_sequentiality()?;
    claim_foreign_key()?;
    claim_counter(true)?;
    claim_counter(false)?;
    claim_size()?;
    // The library's own fixed diamonds must agree.
    for d in fixed_counterexamples() {
        let o = d.run().map_err(|e| e.to_string())?;
        ensure(o.left_valid && o.right_valid && !o.merged_valid, || {
            format!("library diamond {} does not refute its row", d.proof)
        })?;
    }
    Ok("uniqueness, sequence without start, FK delete, inc/inc < 2, dec/dec > -2 and SIZE=1 diamonds all invalid after merge".into())
}

// ---------------------------------------------------------------------------
// 4/5. Simulated partitions.

fn criterion_4() -> CriterionResult {
    let yes: Vec<Cell> = cells().into_iter().filter(|c| c.expected == Verdict::IConfluent).collect();
    let runs: Vec<Result<(), String>> = (0..100u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(0xAC_0004 + i);
            let c = yes.choose(&mut rng).unwrap();
            let w = (c.workload)();
            let replicas = rng.random_range(2..=4);
            let a = rng.random_range(0..replicas);
            let b = (a + rng.random_range(1..replicas)) % replicas;
            let duration = 200.0;
            let start = rng.random_range(0.0..duration / 2.0);
            let end = rng.random_range(start..=duration);
            let cfg = SimConfig {
                replicas,
                clients: 2 * replicas,
                duration_ms: duration,
                seed: i,
                network: NetworkModel::constant(rng.random_range(1.0..20.0)),
                ..SimConfig::default()
            };
            let cfg = inject_partition(&cfg, (a, b), (start, end)).map_err(|e| e.to_string())?;
            let m = run_coordination_free(&w, &cfg).map_err(|e| e.to_string())?;
            ensure(m.committed > 0 && m.violations == 0 && m.all_converged(), || {
                format!("run {i} ({}): {m}", c.label)
            })
        })
        .collect();
    runs.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok("100 partitioned runs of confluent workloads: 0 violations, all converged".into())
}

fn criterion_5() -> CriterionResult {
    let w = (cell("uniqueness/specific-value").workload)();
    let cfg = SimConfig {
        duration_ms: 100.0,
        ..SimConfig::default()
    };
    let cfg = inject_partition(&cfg, (0, 1), (0.0, 50.0)).map_err(|e| e.to_string())?;
    let run = execute(&w, &cfg).map_err(|e| e.to_string())?;
    let view = w.catalog.view(&run.states[0]);
    let mut ids: BTreeMap<Value, usize> = BTreeMap::new();
    for (_, row) in view.rows("emp") {
        *ids.entry(row["id"].clone()).or_default() += 1;
    }
    let duplicated = ids.values().filter(|&&n| n > 1).count();
    ensure(run.metrics.violations > 0 && duplicated > 0, || {
        format!("violations {}, duplicated ids {duplicated}", run.metrics.violations)
    })?;
    Ok(format!(
        "{} violations observed; {duplicated} ids duplicated in the converged state",
        run.metrics.violations
    ))
}

// ---------------------------------------------------------------------------
// 6. Replay.

fn criterion_6() -> CriterionResult {
    let all = cells();
    let n: usize = (0..1_000u64)
        .into_par_iter()
        .map(|i| -> Result<usize, String> {
            let c = &all[i as usize % all.len()];
            let w = (c.workload)();
            let pair = generate_divergent_pair(&w, GenConfig::new(4), i).map_err(|e| e.to_string())?;
            ensure(pair.prefix.end_state == pair.ancestor, || format!("{}: ancestor differs", c.label))?;
            for h in [&pair.prefix, &pair.left, &pair.right] {
                let end = replay(h, &w.catalog).map_err(|e| e.to_string())?;
                ensure(end == h.end_state, || format!("{} seed {i}: replay diverges", c.label))?;
            }
            Ok(3)
        })
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .sum();
    Ok(format!("{n} histories replayed to their recorded end states"))
}

// ---------------------------------------------------------------------------
// 7. Merge algebra.

fn random_version(rng: &mut ChaCha8Rng, id: u64) -> Version {
    let replica = ReplicaId(rng.random_range(1..=3));
    let item_no: i64 = rng.random_range(0..4);
    let (table, payload) = match rng.random_range(0..5) {
        0 => (
            "r",
            Payload::Record([("k".to_string(), Value::Int(item_no)), ("x".into(), Value::Int(rng.random_range(0..9)))].into()),
        ),
        1 => ("r", Payload::Tombstone),
        2 => (
            "c",
            Payload::Counter {
                kind: *[CounterKind::Increment, CounterKind::Decrement, CounterKind::Assign]
                    .choose(rng)
                    .unwrap(),
                amount: rng.random_range(0..10),
            },
        ),
        3 => ("l", Payload::Add(Value::Int(rng.random_range(0..3)))),
        _ => (
            "l",
            Payload::Remove {
                value: Value::Int(rng.random_range(0..3)),
                target: EventId {
                    writer: TxnId {
                        replica: ReplicaId(rng.random_range(1..=3)),
                        counter: rng.random_range(0..id.max(1)),
                    },
                    seq: 0,
                },
            },
        ),
    };
    Version {
        item: ItemId::new(table, vec![Value::Int(item_no)]),
        writer: TxnId { replica, counter: id },
        seq: 0,
        origin: replica,
        timestamp: rng.random_range(0..8),
        payload,
    }
}

fn random_subset(rng: &mut ChaCha8Rng, pool: &[Version]) -> DatabaseState {
    let p = rng.random_range(0.0..1.0);
    DatabaseState::from_versions(pool.iter().filter(|_| rng.random_bool(p)).cloned())
}

fn keys(s: &DatabaseState) -> BTreeSet<(TxnId, u32, ItemId)> {
    s.iter().map(|v| (v.writer, v.seq, v.item.clone())).collect()
}

fn criterion_7() -> CriterionResult {
    (0..10_000u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(0xAC_0007 + i);
            let pool: Vec<Version> = (0..rng.random_range(0..24)).map(|id| random_version(&mut rng, id)).collect();
            let (a, b, c) = (
                random_subset(&mut rng, &pool),
                random_subset(&mut rng, &pool),
                random_subset(&mut rng, &pool),
            );
            let ab = merge(&a, &b);
            let union: BTreeSet<_> = keys(&a).union(&keys(&b)).cloned().collect();
            ensure(keys(&ab) == union, || format!("case {i}: merge is not the union"))?;
            ensure(ab == merge(&b, &a), || format!("case {i}: not commutative"))?;
            ensure(merge(&ab, &c) == merge(&a, &merge(&b, &c)), || format!("case {i}: not associative"))?;
            ensure(merge(&a, &a) == a, || format!("case {i}: not idempotent"))?;
            ensure(merge(&a, &DatabaseState::new()) == a, || format!("case {i}: empty is not an identity"))?;
            ensure(a.is_subset(&ab) && b.is_subset(&ab), || format!("case {i}: merge loses versions"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok("commutativity, associativity, idempotence and identity over 10^4 random cases".into())
}

// ---------------------------------------------------------------------------
// 8/9. Coordination cost models.

fn criterion_8() -> CriterionResult {
    let w = (cell("greater-than/increment").workload)();
    let home = w.home(&ItemId::new("c", vec![0.into()]), 2).ok_or("counter has no home")?;
    let mut got = Vec::new();
    for d in [1.0, 5.0, 10.0] {
        let cfg = SimConfig {
            replicas: 2,
            clients: 4,
            duration_ms: 1000.0,
            strategy: Strategy::Coordinated2pl,
            network: NetworkModel::constant(d),
            client_replicas: vec![1 - home; 4],
            ..SimConfig::default()
        };
        let m = run_coordinated(&w, &cfg).map_err(|e| e.to_string())?;
        let bound = 1000.0 / d;
        ensure((m.throughput - bound).abs() <= 0.1 * bound, || {
            format!("d = {d} ms: {} txn/s, expected {bound}", m.throughput)
        })?;
        got.push(format!("{d} ms: {:.1}/s", m.throughput));
    }
    Ok(got.join(", "))
}

fn criterion_9() -> CriterionResult {
    let e = model_commit_throughput(2, CommitProtocol::D2pc, &[166.0], 10_000, 1).map_err(|e| e.to_string())?;
    ensure((e.throughput - 12.0).abs() <= 1.0, || format!("d2pc at 166 ms: {}", e.throughput))?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let tail = LogNormal::new(166f64.ln(), 0.8).unwrap();
    let samples: Vec<f64> = (0..10_000).map(|_| tail.sample(&mut rng)).collect();
    let series: Vec<f64> = (2..=8)
        .map(|n| model_commit_throughput(n, CommitProtocol::D2pc, &samples, 10_000, 3).map(|e| e.throughput))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    ensure(series.windows(2).all(|w| w[1] <= w[0]), || format!("not monotone: {series:?}"))?;
    Ok(format!(
        "{:.2}/s at N=2, 166 ms; long-tailed series {:.2} .. {:.2}/s non-increasing for N=2..8",
        e.throughput, series[0], series[6]
    ))
}

// ---------------------------------------------------------------------------
// 10/11. TPC-C.

/// The published TPC-C table: number, type, transactions, confluent?
const PUBLISHED_TPCC: [(u8, &str, &str, bool); 12] = [
    (1, "MV", "P", true),
    (2, "S_ID+FK", "ND", false),
    (3, "S_ID", "ND", false),
    (4, "MV", "N", true),
    (5, "FK", "ND", true),
    (6, "MV", "N", true),
    (7, "FK", "D", true),
    (8, "MV", "D", true),
    (9, "MV", "P", true),
    (10, "MV", "PD", true),
    (11, "FK", "N", true),
    (12, "MV", "PD", true),
];

fn criterion_10() -> CriterionResult {
    let reports = classify_tpcc();
    ensure(reports.len() == 12, || format!("{} conditions", reports.len()))?;
    for ((n, kind, txns, confluent), r) in PUBLISHED_TPCC.iter().zip(&reports) {
        let want = if *confluent { Verdict::IConfluent } else { Verdict::NotIConfluent };
        let declared: String = r.declared.iter().map(|t| t.letter()).collect();
        ensure(r.number == *n && r.kind == *kind && r.verdict == want && declared == *txns, || {
            format!("condition {n}: got #{} {} {declared} {:?}", r.number, r.kind, r.verdict)
        })?;
    }
    Ok("12 conditions match (10 Yes / 2 No)".into())
}

fn tpcc_cfg(strategy: Strategy, servers: usize, distributed: f64) -> TpccConfig {
    let mut c = TpccConfig {
        warehouses: servers,
        distributed_fraction: distributed,
        ..TpccConfig::default()
    };
    c.sim.strategy = strategy;
    c.sim.replicas = servers;
    c.sim.clients = 2 * servers;
    c.sim.duration_ms = 100.0;
    c
}

fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy * sxy / (sxx * syy)
}

/// Independent identifier audit: per district, the real ids of the mapped
/// orders are exactly 1..=n, every order is mapped once, and the district's
/// next id is n + 1.
fn ids_gap_free(view: &View) -> Result<usize, String> {
    let mut ids: BTreeMap<(Value, Value), Vec<i64>> = BTreeMap::new();
    for (k, row) in view.rows("id_map") {
        let id = row.get("real_id").and_then(Value::as_int).ok_or("mapping without id")?;
        ids.entry((k[0].clone(), k[1].clone())).or_default().push(id);
        ensure(view.row("order", k).is_some(), || format!("mapping {k:?} without order"))?;
    }
    for (k, _) in view.rows("order") {
        ensure(view.row("id_map", k).is_some(), || format!("order {k:?} without id"))?;
    }
    let mut total = 0;
    for (k, row) in view.rows("district") {
        let mut got = ids.remove(&(k[0].clone(), k[1].clone())).unwrap_or_default();
        got.sort_unstable();
        let n = got.len() as i64;
        ensure(got == (1..=n).collect::<Vec<_>>(), || format!("district {k:?}: ids {got:?}"))?;
        ensure(row.get("next_o_id").and_then(Value::as_int) == Some(n + 1), || {
            format!("district {k:?}: next id {:?} after {n}", row.get("next_o_id"))
        })?;
        total += got.len();
    }
    ensure(ids.is_empty(), || "ids in unknown districts".into())?;
    Ok(total)
}

fn criterion_11() -> CriterionResult {
    let servers: Vec<usize> = (1..=8).collect();
    let tput: Vec<f64> = servers
        .par_iter()
        .map(|&n| run_tpcc(&tpcc_cfg(Strategy::CoordinationFree, n, 0.1)).map(|r| r.metrics.throughput))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let x: Vec<f64> = servers.iter().map(|&n| n as f64).collect();
    let r2 = r_squared(&x, &tput);
    ensure(r2 >= 0.95, || format!("R^2 {r2} over {tput:?}"))?;

    let [local, remote]: [f64; 2] = [0.0, 1.0]
        .par_iter()
        .map(|&f| run_tpcc(&tpcc_cfg(Strategy::Coordinated2pl, 2, f)).map(|r| r.metrics.throughput))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?
        .try_into()
        .unwrap();
    ensure(remote <= 0.2 * local, || format!("2PL 0%: {local}, 100%: {remote}"))?;

    let cfg = tpcc_cfg(Strategy::CoordinationFree, 3, 0.2);
    let source = TpccSource::for_strategy(cfg.clone()).map_err(|e| e.to_string())?;
    let run = execute(&source, &cfg.sim).map_err(|e| e.to_string())?;
    let state = &run.states[0];
    ensure(run.states.iter().all(|s| s == state), || "replicas did not converge".into())?;
    let catalog = full_catalog();
    let verdict = catalog.is_valid(state);
    ensure(verdict.valid, || format!("converged state violates {:?}", verdict.witness))?;
    let a = audit(state);
    ensure(a.conditions.len() == 12 && a.all_hold(), || format!("{a:#?}"))?;
    let orders = ids_gap_free(&catalog.view(state))?;
    ensure(orders > 0, || "no orders placed".into())?;
    Ok(format!(
        "coordination-free R^2 {r2:.4} over 1..8 servers; 2PL 100% distributed at {:.3}x of local; 12 conditions hold; {orders} real ids gap-free",
        remote / local
    ))
}

// ---------------------------------------------------------------------------
// 12. ADT and view-maintenance oracles.

fn criterion_12() -> CriterionResult {
    let schema = Arc::new(
        Schema::new()
            .with("src", TableSchema::record(&["id"], &["g", "amt"]))
            .with("v", TableSchema::counter(&["g"]))
            .with("l", TableSchema::collection(&["k"])),
    );
    (0..10_000u64)
        .into_par_iter()
        .map(|i| -> Result<(), String> {
            let mut rng = ChaCha8Rng::seed_from_u64(0xAC_0012 + i);
            let mut versions = Vec::new();
            let mut adds: Vec<EventId> = Vec::new();
            for id in 0..rng.random_range(0..40u64) {
                let replica = ReplicaId(rng.random_range(1..=3));
                let writer = TxnId { replica, counter: id };
                let (item, payload) = match rng.random_range(0..4) {
                    0 => {
                        let rid = rng.random_range(0..6i64);
                        let payload = if rng.random_bool(0.2) {
                            Payload::Tombstone
                        } else {
                            Payload::Record(
                                [
                                    ("id".to_string(), Value::Int(rid)),
                                    ("g".into(), Value::Int(rng.random_range(0..3))),
                                    ("amt".into(), Value::Int(rng.random_range(-5..10))),
                                ]
                                .into(),
                            )
                        };
                        (ItemId::new("src", vec![Value::Int(rid)]), payload)
                    }
                    1 => (
                        ItemId::new("v", vec![Value::Int(rng.random_range(0..3))]),
                        Payload::Counter {
                            kind: *[CounterKind::Increment, CounterKind::Decrement, CounterKind::Assign]
                                .choose(&mut rng)
                                .unwrap(),
                            amount: rng.random_range(0..10),
                        },
                    ),
                    2 => {
                        adds.push(EventId { writer, seq: 0 });
                        (
                            ItemId::new("l", vec![Value::Int(0)]),
                            Payload::Add(Value::Int(rng.random_range(0..4))),
                        )
                    }
                    _ => {
                        let Some(target) = adds.choose(&mut rng).copied() else { continue };
                        (
                            ItemId::new("l", vec![Value::Int(0)]),
                            Payload::Remove {
                                value: Value::Int(0),
                                target,
                            },
                        )
                    }
                };
                versions.push(Version {
                    item,
                    writer,
                    seq: 0,
                    origin: replica,
                    timestamp: rng.random_range(0..6),
                    payload,
                });
            }
            // A random subset models partial delivery (removals may arrive
            // before the insertions they name).
            versions.shuffle(&mut rng);
            let keep = rng.random_range(0..=versions.len());
            let s = DatabaseState::from_versions(versions[..keep].iter().cloned());

            for g in 0..3 {
                let item = ItemId::new("v", vec![Value::Int(g)]);
                let want = oracle_counter(&s, &item);
                ensure(counter_value(&s, &item) == want, || format!("case {i}: counter {g}"))?;
                let mut inc = CounterState::default();
                for v in s.iter().filter(|v| v.item == item) {
                    if let Payload::Counter { kind, amount } = v.payload {
                        inc.insert(v.order(), kind, amount);
                    }
                }
                ensure(inc.value() == want, || format!("case {i}: incremental counter {g}"))?;
            }
            let l = ItemId::new("l", vec![Value::Int(0)]);
            let live = oracle_live(&s, &l);
            ensure(collection_size(&s, &l) == live.len() as i64, || format!("case {i}: size"))?;
            for x in 0..4 {
                let v = Value::Int(x);
                ensure(collection_contains(&s, &l, &v) == live.contains(&v), || {
                    format!("case {i}: contains {x}")
                })?;
            }

            // Materialized view v[g] = sum(src.amt by g) + offset.
            let offset = rng.random_range(-3..3);
            let vf = ViewFunction {
                name: "rollup".into(),
                stored: vec![Term::sum("v", "value", &["g"])],
                source: vec![Term::sum("src", "amt", &["g"])],
                offset,
            };
            let visible = oracle_records(&s, "src");
            let view = View::build(schema.clone(), &s);
            let groups: BTreeSet<Group> = (0..3).map(|g| Group::Tuple(vec![Value::Int(g)])).collect();
            for mode in [MaintainMode::Delta, MaintainMode::Reset] {
                let mut expected = Vec::new();
                for g in 0..3 {
                    let want: i64 = visible
                        .values()
                        .filter(|r| r.get("g") == Some(&Value::Int(g)))
                        .map(|r| r.get("amt").and_then(Value::as_int).unwrap_or(0))
                        .sum::<i64>()
                        + offset;
                    let item = ItemId::new("v", vec![Value::Int(g)]);
                    let have = oracle_counter(&s, &item);
                    if have != want {
                        expected.push(match mode {
                            MaintainMode::Delta => ViewWrite::Counter { item, delta: want - have },
                            MaintainMode::Reset => ViewWrite::CounterAssign { item, value: want },
                        });
                    }
                }
                let got = maintain_view(&vf, &view, Some(&groups), mode);
                ensure(got == expected, || format!("case {i}: {mode:?} {got:?} != {expected:?}"))?;
                // Without explicit groups, maintenance covers the groups
                // present: those of a visible source row or a counter event.
                let present: BTreeSet<ItemId> = visible
                    .values()
                    .filter_map(|r| r.get("g").cloned())
                    .map(|g| ItemId::new("v", vec![g]))
                    .chain(s.iter().filter(|v| v.item.table == "v").map(|v| v.item.clone()))
                    .collect();
                let expected_present: Vec<ViewWrite> = expected
                    .iter()
                    .filter(|w| matches!(w, ViewWrite::Counter { item, .. } | ViewWrite::CounterAssign { item, .. } if present.contains(item)))
                    .cloned()
                    .collect();
                let all = maintain_view(&vf, &view, None, mode);
                ensure(all == expected_present, || {
                    format!("case {i}: {mode:?} over present groups {all:?} != {expected_present:?}")
                })?;
            }
            Ok(())
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok("counter value, collection size/contains and view maintenance agree with brute force over 10^4 states".into())
}

/// Brute-force visible records: per item, the latest version by version
/// order, unless it is a tombstone.
fn oracle_records(s: &DatabaseState, table: &str) -> BTreeMap<ItemId, iconfluence::Fields> {
    let mut latest: BTreeMap<ItemId, &Version> = BTreeMap::new();
    for v in s.iter().filter(|v| v.item.table == table) {
        let e = latest.entry(v.item.clone()).or_insert(v);
        if v.order() > e.order() {
            *e = v;
        }
    }
    latest
        .into_iter()
        .filter_map(|(k, v)| match &v.payload {
            Payload::Record(f) => Some((k, f.clone())),
            _ => None,
        })
        .collect()
}

fn main() {
    let criteria: [(&str, fn() -> CriterionResult); 12] = [
        ("static classification of the invariant/operation table", criterion_1),
        ("dynamic checks of every witness cell", criterion_2),
        ("published counterexample diamonds", criterion_3),
        ("confluent workloads under random partitions", criterion_4),
        ("uniqueness under a partition", criterion_5),
        ("history replay", criterion_6),
        ("merge algebra", criterion_7),
        ("2PL on one contended item", criterion_8),
        ("two-phase commit model", criterion_9),
        ("TPC-C condition classification", criterion_10),
        ("TPC-C scaling, locking loss and final-state audit", criterion_11),
        ("ADT and view-maintenance oracles", criterion_12),
    ];
    // Numeric arguments select criteria; anything else (harness flags) is
    // ignored.
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let selected: Vec<usize> = (1..=criteria.len()).filter(|n| only.is_empty() || only.contains(n)).collect();
    let results: Vec<CriterionResult> = selected
        .par_iter()
        .map(|&n| std::panic::catch_unwind(criteria[n - 1].1).unwrap_or_else(|_| Err("panicked".into())))
        .collect();
    let mut failed = 0;
    for (&n, r) in selected.iter().zip(&results) {
        let (name, i) = (criteria[n - 1].0, n - 1);
        match r {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!("\n{} of {} criteria passed", selected.len() - failed, selected.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
