//! Subcommand implementations. Each returns a [`Report`] whose JSON results
//! and text rendering carry the same numbers.

use crate::report::{Report, Table};
use crate::{CheckArgs, SimArgs, SimParam, TpccArgs, TpccParam};
use iconfluence::confluence::dynamic::Outcome;
use iconfluence::confluence::{check_dynamic, classify_transaction, PairReport, Verdict};
use iconfluence::sim::{self, load_samples, model_commit_throughput, CommitProtocol, Metrics, SimConfig};
use iconfluence::tpcc::{classify_tpcc, run_tpcc, TpccConfig, TpccRun};
use iconfluence::workload::{parse_spec, validate_spec, Workload, WorkloadSpec};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value as Json};
use std::path::Path;

fn read(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))
}

fn load_spec(path: &Path) -> Result<WorkloadSpec, String> {
    parse_spec(&read(path)?).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, String> {
    match path {
        None => Ok(T::default()),
        Some(p) => toml::from_str(&read(p)?).map_err(|e| format!("{}: {e}", p.display())),
    }
}

fn to_json<T: Serialize>(v: &T) -> Json {
    serde_json::to_value(v).expect("results always serialize")
}

/// Renders whole numbers without a fractional part.
fn num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

fn rank(v: Verdict) -> u8 {
    match v {
        Verdict::IConfluent => 0,
        Verdict::Unknown => 1,
        Verdict::NotIConfluent => 2,
    }
}

fn describe(p: &PairReport) -> String {
    let class = p.op_class.map(|c| c.to_string()).unwrap_or_default();
    match p.classification.proof {
        Some(n) => format!("#{} {} ({class}, rule {n})", p.op_index, p.op_kind),
        None => format!("#{} {} ({class})", p.op_index, p.op_kind),
    }
}

pub fn analyze(command: String, seed: u64, path: &Path) -> Result<Report, String> {
    let spec = load_spec(path)?;
    let workload = spec.build().map_err(|e| e.to_string())?;
    let mut report = Report::new(command, seed, json!({ "spec": path, "workload": spec.name }));
    let mut table = Table::new(&["transaction", "invariant", "class", "verdict", "offending operations"]);
    let mut transactions = Vec::new();
    let mut required = Vec::new();
    for body in workload.bodies() {
        let r = classify_transaction(body, &spec.invariants, Some(&spec.schema));
        let mut rows = Vec::new();
        for inv in &spec.invariants {
            let pairs: Vec<&PairReport> = r.pairs.iter().filter(|p| p.invariant == inv.name).collect();
            let verdict = pairs
                .iter()
                .map(|p| p.classification.verdict)
                .max_by_key(|v| rank(*v))
                .unwrap_or(Verdict::IConfluent);
            let offending: Vec<String> = pairs
                .iter()
                .filter(|p| p.classification.verdict != Verdict::IConfluent)
                .map(|p| describe(p))
                .collect();
            let class = iconfluence::confluence::InvariantClass::of(&inv.spec).to_string();
            table.push(vec![
                r.transaction.clone(),
                inv.name.clone(),
                class.clone(),
                verdict.yes_no().to_string(),
                offending.join("; "),
            ]);
            rows.push(json!({
                "invariant": inv.name,
                "class": class,
                "verdict": verdict,
                "offending": offending,
            }));
        }
        if !r.coordination_free {
            required.push(r.transaction.clone());
        }
        transactions.push(json!({
            "transaction": r.transaction,
            "coordination_free": r.coordination_free,
            "invariants": rows,
        }));
    }
    let lints = validate_spec(&spec);
    let mut text = table.render();
    text += "\n";
    if required.is_empty() {
        text += "all transactions are coordination-free\n";
    } else {
        text += &format!("coordination required: {}\n", required.join(", "));
    }
    for l in &lints {
        text += &format!("warning: {l}\n");
    }
    report.flagged = !required.is_empty();
    report.results = json!({
        "transactions": transactions,
        "coordination_required": required,
        "warnings": lints,
    });
    report.table = table;
    report.text = text;
    Ok(report)
}

pub fn check(command: String, seed: u64, args: &CheckArgs) -> Result<Report, String> {
    let spec = load_spec(&args.spec)?;
    let workload = spec.build().map_err(|e| e.to_string())?;
    let mut report = Report::new(
        command,
        seed,
        json!({ "spec": args.spec, "trials": args.trials, "depth": args.depth, "each": args.each }),
    );
    let sets: Vec<Vec<usize>> = if args.each {
        (0..spec.transactions.len()).map(|i| vec![i]).collect()
    } else if spec.transactions.is_empty() {
        Vec::new()
    } else {
        vec![(0..spec.transactions.len()).collect()]
    };
    let mut table = Table::new(&["transactions", "invariant", "outcome", "trials"]);
    let mut rows = Vec::new();
    let mut narratives = Vec::new();
    for set in &sets {
        let templates: Vec<_> = set.iter().map(|&i| spec.transactions[i].clone()).collect();
        let names: Vec<&str> = templates.iter().map(|t| t.name.as_str()).collect();
        let label = names.join(", ");
        for inv in &spec.invariants {
            let catalog = workload.catalog.restricted(vec![inv.clone()]);
            let w = Workload::new(&spec.name, catalog, workload.initial.clone(), templates.clone());
            let (outcome, trials, cx) = match check_dynamic(&w, args.trials, args.depth, seed) {
                Ok(v) => {
                    let outcome = match v.outcome {
                        Outcome::CounterexampleFound => "counterexample-found",
                        Outcome::NoCounterexampleFound => "no-counterexample-found",
                    };
                    (outcome.to_string(), v.trials, v.counterexample)
                }
                Err(e) => (format!("error: {e}"), 0, None),
            };
            table.push(vec![label.clone(), inv.name.clone(), outcome.clone(), trials.to_string()]);
            let cx_json = cx.as_ref().map(|c| {
                let narrative = c.narrative();
                narratives.push(format!("[{label} / {}]\n{narrative}", inv.name));
                json!({ "trial": c.trial, "witness": c.witness.to_string(), "narrative": narrative })
            });
            report.flagged |= cx.is_some();
            rows.push(json!({
                "transactions": names,
                "invariant": inv.name,
                "outcome": outcome,
                "trials": trials,
                "counterexample": cx_json,
            }));
        }
    }
    let mut text = table.render();
    for n in &narratives {
        text += "\n";
        text += n;
        text += "\n";
    }
    report.results = json!({ "verdicts": rows });
    report.table = table;
    report.text = text;
    Ok(report)
}

fn metrics_row(m: &Metrics) -> Vec<String> {
    vec![
        format!("{:.1}", m.throughput),
        m.committed.to_string(),
        m.aborted.to_string(),
        format!("{:.3}", m.latency.p50_ms),
        format!("{:.3}", m.latency.p99_ms),
        format!("{:.1}", m.coordination_stall_ms),
        m.violations.to_string(),
        m.all_converged().to_string(),
        m.serializable.map(|s| s.to_string()).unwrap_or_else(|| "-".into()),
    ]
}

const METRIC_COLUMNS: [&str; 9] = [
    "throughput",
    "committed",
    "aborted",
    "p50_ms",
    "p99_ms",
    "stall_ms",
    "violations",
    "converged",
    "serializable",
];

fn metrics_table(m: &Metrics) -> Table {
    let mut t = Table::new(&METRIC_COLUMNS);
    t.push(metrics_row(m));
    t
}

fn metrics_flagged(m: &Metrics) -> bool {
    m.violations > 0 || !m.all_converged() || m.serializable == Some(false)
}

fn sim_config(args: &SimArgs, seed: u64) -> Result<SimConfig, String> {
    let mut cfg: SimConfig = load_config(args.config.as_deref())?;
    args.apply(&mut cfg, seed);
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

pub fn simulate(command: String, seed: u64, path: &Path, args: &SimArgs) -> Result<Report, String> {
    let workload = load_spec(path)?.build().map_err(|e| e.to_string())?;
    let cfg = sim_config(args, seed)?;
    let m = sim::simulate(&workload, &cfg).map_err(|e| e.to_string())?;
    let mut report = Report::new(command, seed, json!({ "spec": path, "sim": cfg }));
    report.flagged = metrics_flagged(&m);
    report.text = m.to_string();
    report.table = metrics_table(&m);
    report.results = to_json(&m);
    Ok(report)
}

fn tpcc_config(args: &TpccArgs, seed: u64) -> Result<TpccConfig, String> {
    let mut cfg: TpccConfig = load_config(args.sim.config.as_deref())?;
    if let Some(w) = args.warehouses {
        cfg.warehouses = w;
    }
    if let Some(f) = args.distributed_fraction {
        cfg.distributed_fraction = f;
    }
    if let Some(f) = args.payment_fraction {
        cfg.payment_fraction = f;
    }
    if let Some(f) = args.delivery_fraction {
        cfg.delivery_fraction = f;
    }
    args.sim.apply(&mut cfg.sim, seed);
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn letters(txns: &[iconfluence::tpcc::TpccTxn]) -> String {
    txns.iter().map(|t| t.letter().to_string()).collect::<Vec<_>>().join(", ")
}

pub fn tpcc(command: String, seed: u64, args: &TpccArgs) -> Result<Report, String> {
    let cfg = tpcc_config(args, seed)?;
    let run = run_tpcc(&cfg).map_err(|e| e.to_string())?;
    let classes = classify_tpcc();
    let mut table = Table::new(&["#", "type", "txns", "I-C?", "holds", "detail"]);
    for (c, check) in classes.iter().zip(&run.audit.conditions) {
        table.push(vec![
            c.number.to_string(),
            c.kind.clone(),
            letters(&c.declared),
            c.verdict.yes_no().to_string(),
            if check.holds { "yes" } else { "NO" }.to_string(),
            check.detail.clone().unwrap_or_default(),
        ]);
    }
    let mut extra = Table::new(&["check", "holds", "detail"]);
    for c in &run.audit.extra {
        extra.push(vec![
            c.name.clone(),
            if c.holds { "yes" } else { "NO" }.to_string(),
            c.detail.clone().unwrap_or_default(),
        ]);
    }
    let m = &run.metrics;
    let mut report = Report::new(command, seed, to_json(&cfg));
    report.flagged = metrics_flagged(m) || !run.audit.all_hold();
    report.text = format!(
        "{m}\norders {} (delivered {})\n\n{}\n{}",
        run.audit.orders,
        run.audit.delivered,
        table.render(),
        extra.render()
    );
    report.results = json!({ "metrics": m, "audit": run.audit, "classification": classes });
    report.table = table;
    Ok(report)
}

fn sweep_table(param: &str, values: &[f64], runs: &[Metrics], audits: Option<&[bool]>) -> Table {
    let mut columns = vec![param, "relative"];
    columns.extend(METRIC_COLUMNS);
    if audits.is_some() {
        columns.push("audit");
    }
    let mut t = Table::new(&columns);
    let base = runs.first().map(|m| m.throughput).unwrap_or(0.0);
    for (i, (v, m)) in values.iter().zip(runs).enumerate() {
        let rel = if base > 0.0 { m.throughput / base } else { 0.0 };
        let mut row = vec![num(*v), format!("{rel:.3}")];
        row.extend(metrics_row(m));
        if let Some(a) = audits {
            row.push(a[i].to_string());
        }
        t.push(row);
    }
    t
}

pub fn sweep_tpcc(
    command: String,
    seed: u64,
    over: TpccParam,
    values: &[f64],
    args: &TpccArgs,
) -> Result<Report, String> {
    let base = tpcc_config(args, seed)?;
    let configs: Vec<TpccConfig> = values
        .iter()
        .map(|&v| {
            let mut cfg = base.clone();
            match over {
                TpccParam::Servers => {
                    let n = v as usize;
                    cfg.sim.replicas = n;
                    cfg.warehouses = base.warehouses * n;
                    cfg.sim.clients = base.sim.clients * n;
                }
                TpccParam::Warehouses => cfg.warehouses = v as usize,
                TpccParam::Clients => cfg.sim.clients = v as usize,
                TpccParam::DistributedFraction => cfg.distributed_fraction = v / 100.0,
                TpccParam::DelayMs => cfg.sim.network.base_delay_ms = v,
            }
            cfg.validate().map_err(|e| format!("{} = {}: {e}", to_json(&over), num(v)))?;
            Ok(cfg)
        })
        .collect::<Result<_, String>>()?;
    let runs: Vec<TpccRun> = configs
        .par_iter()
        .map(run_tpcc)
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let metrics: Vec<Metrics> = runs.iter().map(|r| r.metrics.clone()).collect();
    let audits: Vec<bool> = runs.iter().map(|r| r.audit.all_hold()).collect();
    let param = to_json(&over).as_str().unwrap_or_default().to_string();
    let table = sweep_table(&param, values, &metrics, Some(&audits));
    let mut report = Report::new(command, seed, json!({ "over": over, "values": values, "base": base }));
    report.flagged = metrics.iter().any(metrics_flagged) || audits.iter().any(|a| !a);
    report.results = json!({
        "rows": values.iter().zip(&runs).map(|(v, r)| json!({
            "value": v,
            "metrics": r.metrics,
            "audit_holds": r.audit.all_hold(),
        })).collect::<Vec<_>>(),
    });
    report.text = table.render();
    report.table = table;
    Ok(report)
}

pub fn sweep_simulate(
    command: String,
    seed: u64,
    path: &Path,
    over: SimParam,
    values: &[f64],
    args: &SimArgs,
) -> Result<Report, String> {
    let workload = load_spec(path)?.build().map_err(|e| e.to_string())?;
    let base = sim_config(args, seed)?;
    let configs: Vec<SimConfig> = values
        .iter()
        .map(|&v| {
            let mut cfg = base.clone();
            match over {
                SimParam::Servers => cfg.replicas = v as usize,
                SimParam::Clients => cfg.clients = v as usize,
                SimParam::DelayMs => cfg.network.base_delay_ms = v,
                SimParam::DurationMs => cfg.duration_ms = v,
            }
            cfg.validate().map_err(|e| format!("{} = {}: {e}", to_json(&over), num(v)))?;
            Ok(cfg)
        })
        .collect::<Result<_, String>>()?;
    let runs: Vec<Metrics> = configs
        .par_iter()
        .map(|c| sim::simulate(&workload, c))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let param = to_json(&over).as_str().unwrap_or_default().to_string();
    let table = sweep_table(&param, values, &runs, None);
    let mut report = Report::new(
        command,
        seed,
        json!({ "spec": path, "over": over, "values": values, "base": base }),
    );
    report.flagged = runs.iter().any(metrics_flagged);
    report.results = json!({
        "rows": values.iter().zip(&runs).map(|(v, m)| json!({ "value": v, "metrics": m })).collect::<Vec<_>>(),
    });
    report.text = table.render();
    report.table = table;
    Ok(report)
}

pub fn sweep_commit(
    command: String,
    seed: u64,
    protocol: CommitProtocol,
    rtt_ms: Option<f64>,
    samples: Option<&Path>,
    servers: &[f64],
    rounds: usize,
) -> Result<Report, String> {
    let rtts = match (rtt_ms, samples) {
        (Some(r), _) => vec![r],
        (None, Some(p)) => load_samples(&read(p)?).map_err(|e| format!("{}: {e}", p.display()))?,
        (None, None) => return Err("either --rtt-ms or --samples is required".into()),
    };
    let mut table = Table::new(&["servers", "throughput", "mean_latency_ms"]);
    let mut rows = Vec::new();
    for &n in servers {
        let e = model_commit_throughput(n as usize, protocol, &rtts, rounds, seed).map_err(|e| e.to_string())?;
        table.push(vec![
            e.servers.to_string(),
            format!("{:.2}", e.throughput),
            format!("{:.3}", e.mean_latency_ms),
        ]);
        rows.push(e);
    }
    let mut report = Report::new(
        command,
        seed,
        json!({
            "protocol": protocol,
            "rtt_ms": rtt_ms,
            "samples": samples,
            "sample_count": rtts.len(),
            "rounds": rounds,
        }),
    );
    report.results = json!({ "rows": rows });
    report.text = table.render();
    report.table = table;
    Ok(report)
}

