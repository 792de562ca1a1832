//! Table declarations: record tables, counters and collections.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Field under which a counter's current value appears in the logical view.
pub const COUNTER_VALUE_FIELD: &str = "value";
/// Field under which a collection's current size appears in the logical view.
pub const COLLECTION_SIZE_FIELD: &str = "size";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TableKind {
    #[default]
    Record,
    Counter,
    Collection,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSchema {
    #[serde(default)]
    pub kind: TableKind,
    /// Key fields, in key-tuple order.
    #[serde(default)]
    pub key: Vec<String>,
    /// Non-key fields (records only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<String>,
}

impl TableSchema {
    pub fn record(key: &[&str], fields: &[&str]) -> Self {
        TableSchema {
            kind: TableKind::Record,
            key: key.iter().map(|s| s.to_string()).collect(),
            fields: fields.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn counter(key: &[&str]) -> Self {
        TableSchema {
            kind: TableKind::Counter,
            key: key.iter().map(|s| s.to_string()).collect(),
            fields: Vec::new(),
        }
    }

    pub fn collection(key: &[&str]) -> Self {
        TableSchema {
            kind: TableKind::Collection,
            key: key.iter().map(|s| s.to_string()).collect(),
            fields: Vec::new(),
        }
    }

    /// Every field name visible in the logical view of this table.
    pub fn has_field(&self, name: &str) -> bool {
        if self.key.iter().any(|k| k == name) {
            return true;
        }
        match self.kind {
            TableKind::Record => self.fields.iter().any(|f| f == name),
            TableKind::Counter => name == COUNTER_VALUE_FIELD,
            TableKind::Collection => name == COLLECTION_SIZE_FIELD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct Schema {
    pub tables: BTreeMap<String, TableSchema>,
}

impl Schema {
    pub fn new() -> Self {
        Schema::default()
    }

    pub fn with(mut self, name: &str, table: TableSchema) -> Self {
        self.tables.insert(name.to_string(), table);
        self
    }

    pub fn table(&self, name: &str) -> Option<&TableSchema> {
        self.tables.get(name)
    }
}
