//! Execution-based detection and measurement of code hallucinations.
//!
//! Completions are gated by a textual degeneration check, executed against
//! test cases in a resource-limited sandbox, classified into a fixed
//! taxonomy, aggregated into per-sample profiles, thresholded into a typed
//! benchmark, and scored as hallucination rates.

pub mod aggregate;
pub mod bench;
pub mod cli;
pub mod corpus;
pub mod degeneration;
pub mod error;
pub mod gateway;
pub mod pipeline;
pub mod report;
pub mod sandbox;
pub mod scalar;
pub mod taxonomy;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Exact rational used for reproducible rate arithmetic. 128-bit so that
/// averaging rates with unrelated sample counts stays in range.
pub type ExactRate = num_rational::Ratio<i128>;

pub type HrCell = report::HrCell<f64>;
pub type HrReport = report::HrReport<f64>;
pub type ExactHrCell = report::HrCell<ExactRate>;
pub type ExactHrReport = report::HrReport<ExactRate>;
