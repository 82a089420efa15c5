//! Drill-down diagnosis of timeout bugs in distributed systems.
//!
//! Given an anomaly alert plus span traces, thread dumps, configuration and
//! dataflow facts, this crate classifies the bug as a misused or missing
//! timeout, localizes the root-cause function and variable, plans a patch,
//! predicts a workload-adaptive timeout value, and validates the fix by
//! re-executing the triggering scenario.

pub mod drilldown;
pub mod faultlab;
pub mod misused;
pub mod patch;
pub mod predict;
pub mod report;
pub mod stack;
pub mod taint;
pub mod trace;
pub mod validate;

pub use drilldown::{AnomalyAlert, BugCategory, Diagnosis, DrilldownInputs, TimeoutFunctionRegistry};
pub use predict::{PaddingMode, Prediction, RegressionModel};
pub use report::ReportDocument;
pub use validate::{Outcome, Scenario, Verdict};
