//! Invariant confluence end to end: replicated database states with a
//! set-union merge, an invariant catalog, static and dynamic confluence
//! analysis, a discrete-event simulator comparing coordination-free and
//! coordinated execution, and a desk-scale TPC-C New-Order workload.

pub mod adt;
pub mod confluence;
pub mod error;
pub mod invariants;
pub mod replica;
pub mod schema;
pub mod sim;
pub mod state;
pub mod tpcc;
pub mod txn;
pub mod value;
pub mod view;
pub mod workload;

pub use error::{Error, Result};
pub use invariants::{Group, InvariantSpec, NamedInvariant};
pub use replica::{apply_transaction, Catalog, ReplicaState};
pub use schema::{Schema, TableKind, TableSchema};
pub use state::{merge, DatabaseState, Payload, TransactionOutcome, ValidityVerdict, Version, Witness};
pub use txn::{Cond, Expr, Operation, Transaction, TxnTemplate};
pub use value::{Fields, ItemId, Key, ReplicaId, TxnId, Value};
pub use view::{visible_state, View};
