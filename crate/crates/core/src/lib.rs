//! Per-clip, per-bitrate-range tuning of the encoder's Lagrangian multiplier
//! scale `k`, with Pareto rate-distortion envelopes and BD-Rate reporting.

// `!(x > 0.0)` style checks are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bdrate;
pub mod brent;
pub mod cli;
pub mod corpus;
pub mod curvefit;
pub mod encoder;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod types;

pub use error::{Error, Result};
