//! Confluence analysis: static classification of invariant/operation pairs
//! and dynamic search for counterexample diamonds.

mod classify;
pub mod dynamic;
pub mod rule_table;

pub use classify::*;
pub use dynamic::{check_dynamic, generate_divergent_pair, replay, ConfluenceVerdict, Counterexample, History};
