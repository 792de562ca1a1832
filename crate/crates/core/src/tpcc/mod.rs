//! TPC-C New-Order, Payment and Delivery over the replicated store, with
//! the benchmark's twelve consistency conditions as invariants.

mod analysis;
pub mod schema;
mod txns;

pub use analysis::{audit, classify_tpcc, kind_label, Audit, Check, ConditionReport};
pub use schema::{conditions, full_catalog, replica_catalog, ConsistencyCondition, TpccTxn, DEFERRED_CONDITIONS};
pub use txns::{
    bodies, delivery, delivery_body, delivery_picks, new_order, payment, resolve_order_id, DeliveryPick, OrderId,
};

use crate::error::{Error, Result};
use crate::replica::{Catalog, ReplicaState};
use crate::sim::{execute, ClientCtx, Metrics, NetworkModel, SimConfig, Strategy, TxnSource};
use crate::state::DatabaseState;
use crate::txn::{Expr, Transaction};
use crate::value::{ItemId, Value};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Fewest and most lines of a New-Order.
pub const MIN_LINES: usize = 5;
pub const MAX_LINES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct TpccConfig {
    pub warehouses: usize,
    pub districts: usize,
    pub customers_per_district: usize,
    pub items: usize,
    /// Fraction of New-Orders with a line supplied by another warehouse.
    pub distributed_fraction: f64,
    pub payment_fraction: f64,
    pub delivery_fraction: f64,
    /// Servers are the simulator's replicas; warehouse `w` lives on server
    /// `(w - 1) % replicas`.
    pub sim: SimConfig,
}

impl Default for TpccConfig {
    fn default() -> Self {
        TpccConfig {
            warehouses: 2,
            districts: 10,
            customers_per_district: 30,
            items: 100,
            distributed_fraction: 0.0,
            payment_fraction: 0.15,
            delivery_fraction: 0.05,
            sim: SimConfig {
                duration_ms: 200.0,
                exec_cost_us: 1000,
                think_time_us: 0,
                network: NetworkModel::constant(10.0),
                ..SimConfig::default()
            },
        }
    }
}

impl TpccConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.to_string()));
        if self.warehouses == 0 || self.districts == 0 || self.customers_per_district == 0 || self.items == 0 {
            return bad("warehouses, districts, customers and items must be at least 1");
        }
        let unit = |f: f64| (0.0..=1.0).contains(&f);
        if !unit(self.distributed_fraction) || !unit(self.payment_fraction) || !unit(self.delivery_fraction) {
            return bad("fractions must lie in [0, 1]");
        }
        if self.payment_fraction + self.delivery_fraction > 1.0 {
            return bad("payment and delivery fractions exceed 1");
        }
        self.sim.validate()
    }

    /// A client's home warehouse: one placed on the client's server when
    /// there is one.
    pub fn home_warehouse(&self, client: usize) -> i64 {
        let servers = self.sim.replicas;
        let server = self.sim.client_replica(client);
        let local: Vec<usize> = (1..=self.warehouses).filter(|w| (w - 1) % servers == server).collect();
        let w = if local.is_empty() {
            client % self.warehouses + 1
        } else {
            local[(client / servers) % local.len()]
        };
        w as i64
    }
}

/// Feeds the benchmark's transaction mix to the simulator.
pub struct TpccSource {
    pub cfg: TpccConfig,
    catalog: Arc<Catalog>,
    initial: DatabaseState,
    /// New-Order bodies indexed by line count minus [`MIN_LINES`].
    new_orders: Vec<Transaction>,
    payment: Transaction,
}

impl TpccSource {
    /// A source enforcing `catalog`.
    pub fn new(cfg: TpccConfig, catalog: Catalog) -> Result<Self> {
        cfg.validate()?;
        let initial = schema::initial(&cfg, cfg.sim.seed)?;
        Ok(TpccSource {
            cfg,
            catalog: Arc::new(catalog),
            initial,
            new_orders: (MIN_LINES..=MAX_LINES).map(new_order).collect(),
            payment: payment(),
        })
    }

    /// The catalog each strategy enforces while running: everything under
    /// locking; without coordination, all but the deferred conditions.
    pub fn for_strategy(cfg: TpccConfig) -> Result<Self> {
        let catalog = match cfg.sim.strategy {
            Strategy::CoordinationFree => replica_catalog(),
            Strategy::Coordinated2pl | Strategy::Coordinated2pcModel => full_catalog(),
        };
        TpccSource::new(cfg, catalog)
    }

    fn new_order_txn(&self, w: i64, rng: &mut ChaCha8Rng) -> Transaction {
        let cfg = &self.cfg;
        let lines = rng.random_range(MIN_LINES..=MAX_LINES);
        let mut t = self.new_orders[lines - MIN_LINES]
            .clone()
            .with_param("w", w)
            .with_param("d", rng.random_range(1..=cfg.districts as i64))
            .with_param("c", rng.random_range(1..=cfg.customers_per_district as i64));
        let remote = cfg.warehouses > 1 && rng.random_bool(cfg.distributed_fraction);
        for k in 1..=lines {
            let supply = if k == 1 && remote {
                let other = rng.random_range(1..cfg.warehouses as i64);
                if other >= w {
                    other + 1
                } else {
                    other
                }
            } else {
                w
            };
            t = t
                .with_param(&format!("i{k}"), rng.random_range(1..=cfg.items as i64))
                .with_param(&format!("s{k}"), supply)
                .with_param(&format!("q{k}"), rng.random_range(1..=10i64));
        }
        t
    }

    fn payment_txn(&self, w: i64, rng: &mut ChaCha8Rng) -> Transaction {
        self.payment
            .clone()
            .with_param("w", w)
            .with_param("d", rng.random_range(1..=self.cfg.districts as i64))
            .with_param("c", rng.random_range(1..=self.cfg.customers_per_district as i64))
            .with_param("a", rng.random_range(1..=5000i64))
    }

    fn delivery_txn(&self, w: i64, state: &ReplicaState, rng: &mut ChaCha8Rng) -> Option<Transaction> {
        let picks = delivery_picks(state.view(), w, self.cfg.districts);
        if picks.is_empty() {
            return None;
        }
        Some(delivery(
            Expr::int(w),
            Expr::int(rng.random_range(1..=10)),
            Expr::Lit(Value::Int(rng.random_range(1..=1_000_000))),
            &picks,
        ))
    }
}

impl TxnSource for TpccSource {
    fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    fn initial(&self) -> &DatabaseState {
        &self.initial
    }

    fn next_txn(&self, ctx: &ClientCtx, state: &ReplicaState, rng: &mut ChaCha8Rng) -> Option<Transaction> {
        let w = self.cfg.home_warehouse(ctx.client);
        let roll: f64 = rng.random();
        if roll < self.cfg.payment_fraction {
            return Some(self.payment_txn(w, rng));
        }
        if roll < self.cfg.payment_fraction + self.cfg.delivery_fraction {
            if let Some(t) = self.delivery_txn(w, state, rng) {
                return Some(t);
            }
        }
        Some(self.new_order_txn(w, rng))
    }

    /// Items keyed by warehouse live on that warehouse's server; the item
    /// catalog is read-only and cascade markers are write-once, so neither
    /// needs a lock.
    fn home(&self, item: &ItemId, replicas: usize) -> Option<usize> {
        if item.table == schema::ITEM {
            return None;
        }
        match item.key.first() {
            Some(Value::Int(w)) if *w >= 1 => Some((*w as usize - 1) % replicas),
            _ => None,
        }
    }
}

/// Result of one benchmark run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TpccRun {
    pub metrics: Metrics,
    /// Audit of the first replica's final state (all replicas are equal
    /// once converged).
    pub audit: Audit,
}

/// Runs the benchmark with the strategy of `cfg.sim` and audits the final
/// state against every condition.
pub fn run_tpcc(cfg: &TpccConfig) -> Result<TpccRun> {
    let source = TpccSource::for_strategy(cfg.clone())?;
    let run = execute(&source, &cfg.sim)?;
    let state = run.states.first().cloned().unwrap_or_default();
    Ok(TpccRun {
        metrics: run.metrics,
        audit: audit(&state),
    })
}
