//! Electrode protection for UHP electric arc furnaces.
//!
//! Four fixed-threshold protection loops guard each electrode against
//! over-current and short-circuit conditions. On top of them, a Lyapunov
//! change assessment driven by a fuzzy-rule RBF network predicts charge
//! collapses early enough to lift the electrode before the arc is shorted.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assessment;
pub mod engine;
pub mod heuristic;
pub mod protection;
pub mod rbf;
pub mod sim;
pub mod telemetry;
