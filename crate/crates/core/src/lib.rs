//! Mutual-information based block pruning for residual networks.
//!
//! A [`trace::Trace`] holds the hidden states before and after every block
//! for a fixed set of samples. [`importance`] scores blocks and spans by the
//! information their removal destroys, and [`selection`] searches for the
//! set of blocks to drop.

mod seed;

pub mod error;
pub mod importance;
pub mod mi;
pub mod selection;
pub mod stats;
pub mod toy;
pub mod trace;

pub use error::{Error, Result};
pub use importance::{FixedSpans, ImportanceTable, Span, SpanEstimator, TraceEstimator};
pub use mi::{estimate_mi, EstimatorConfig, EstimatorKind, MiEstimate};
pub use selection::{fast_block_select, greedy_select, oracle_select, PruneResult, SelectConfig};
pub use toy::{build_toy_model, run_toy_model, Nonlinearity, ToyModelSpec};
pub use trace::{read_trace, write_trace, Trace, TraceHeader};
