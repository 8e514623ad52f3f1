//! Data-driven transient stability assessment for small power systems.
//!
//! The pipeline runs load scenario generation, cost-optimal dispatch,
//! classical multimachine fault simulation, critical-line ranking, and a
//! two-stage classifier (binary MLP for stability, one-vs-one quadratic SVM
//! for the time of instability).

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod netcase;
pub mod csvio;
pub mod dispatch;
pub mod powerflow;
pub mod scenario;
pub mod tdsim;
pub mod criticality;
pub mod operating;
pub mod features;
pub mod ml;
pub mod evalreport;
pub mod pipeline;

pub use error::{Error, Result};
