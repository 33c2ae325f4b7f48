//! Execution-verified data synthesis for dialect text-to-SQL.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod engine;
pub mod eval;
pub mod executor;
pub mod llm;
pub mod model;
pub mod pipeline;
pub mod sampling;
pub mod services;
pub mod translate;
