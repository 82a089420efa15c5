//! Pipeline orchestration: from an anomaly alert to a full diagnosis.
//!
//! The alert window is cut out of the trace, the bug is classified as a
//! misused or missing timeout, and the matching analyzer chain runs to
//! produce a category, a root cause, an optional patch plan and an optional
//! predicted timeout value.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::misused::{
    cross_validate, differentiate, identify_affected_functions, resolve_ambiguous, MisusedError,
    MisusedVerdict, MisuseDirection, VariableVerdict, DEFAULT_MATCH_TOLERANCE,
};
use crate::patch::{
    plan_blocking_fix, plan_loop_fix, ApiCatalog, Callsite, LoopSite, PatchError, PatchPlan,
};
use crate::predict::{
    padding_ratio, predict, select_model, PaddingMode, PredictError, Prediction, SelectionScorer,
    TrainingSample,
};
use crate::stack::{
    classify_hang, common_innermost, default_framework_prefixes, prune_background, HangType,
    RootCauseCandidate, StackDump, StackError,
};
use crate::taint::{seed_timeout_variables, tainted_uses, TaintError, TaintFactBase, TimeoutVariable};
use crate::trace::{compute_function_stats, AnomalyPolicy, Span, SpanTrace, TraceError};

#[derive(Debug, Error)]
pub enum DrilldownError {
    #[error("no spans overlap the alert window")]
    EmptyWindow,
    #[error("trace stage: {0}")]
    Trace(#[from] TraceError),
    #[error("misuse stage: {0}")]
    Misused(#[from] MisusedError),
    #[error("taint stage: {0}")]
    Taint(#[from] TaintError),
    #[error("stack stage: {0}")]
    Stack(#[from] StackError),
    #[error("patch stage: {0}")]
    Patch(#[from] PatchError),
    #[error("prediction stage: {0}")]
    Predict(#[from] PredictError),
    #[error("missing input for {stage} stage: {what}")]
    MissingInput { stage: &'static str, what: String },
}

/// Upstream detector output that triggers the drill-down.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyAlert {
    pub alert_time_ms: i64,
    pub affected_process: String,
    pub window: (i64, i64),
}

impl AnomalyAlert {
    pub fn is_well_formed(&self) -> bool {
        self.window.0 <= self.alert_time_ms && self.alert_time_ms <= self.window.1
    }
}

/// On-disk envelope for an alert plus run metadata the pipeline may use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertDocument {
    pub alert: AnomalyAlert,
    /// Instant the hung process was force-terminated, when known.
    #[serde(default)]
    pub termination_time_ms: Option<i64>,
    /// Workload metrics of the run being diagnosed, for prediction.
    #[serde(default)]
    pub query_features: Option<Vec<f64>>,
}

/// Function names known to implement timeout machinery. A span matches when
/// its function equals a pattern or starts with one (exact-or-prefix).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeoutFunctionRegistry {
    pub patterns: Vec<String>,
}

impl Default for TimeoutFunctionRegistry {
    fn default() -> Self {
        TimeoutFunctionRegistry {
            patterns: [
                "java.net.Socket.connect",
                "java.net.SocketInputStream.socketRead",
                "java.net.URLConnection.connect",
                "java.lang.Object.wait",
                "java.lang.Thread.join",
                "java.nio.channels.Selector.select",
                "java.util.concurrent.locks.LockSupport.parkNanos",
                "org.apache.hadoop.ipc.Client.call",
                "org.apache.hadoop.hdfs.server.namenode.TransferFsImage",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        }
    }
}

impl TimeoutFunctionRegistry {
    pub fn matches(&self, function: &str) -> bool {
        self.patterns
            .iter()
            .any(|p| function == p || function.starts_with(p.as_str()))
    }

    pub fn extend_with(&mut self, patterns: impl IntoIterator<Item = String>) {
        self.patterns.extend(patterns);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BugClass {
    Misused,
    Missing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BugCategory {
    MisusedTooLarge,
    MisusedTooSmall,
    MissingTimeout,
    HardCodedSuspected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub bug_category: BugCategory,
    pub root_cause_function: String,
    pub misused_variable: Option<TimeoutVariable>,
    pub alternate_variables: Vec<TimeoutVariable>,
    pub hang_type: Option<HangType>,
    pub patch_plan: Option<PatchPlan>,
    pub prediction: Option<Prediction>,
    pub diagnosis_time_ms: u64,
    pub notes: Vec<String>,
}

/// Tunables of the pipeline, all with defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DrilldownPolicy {
    pub anomaly: AnomalyPolicy,
    /// Alignment slack between trace timestamps and the alert/termination
    /// instants when pruning background threads.
    pub alert_align_tolerance_ms: i64,
    /// Relative tolerance for too-small value matching.
    pub match_tolerance: f64,
    pub padding_mode: PaddingMode,
    pub framework_prefixes: Vec<String>,
}

impl Default for DrilldownPolicy {
    fn default() -> Self {
        DrilldownPolicy {
            anomaly: AnomalyPolicy::default(),
            alert_align_tolerance_ms: 1000,
            match_tolerance: DEFAULT_MATCH_TOLERANCE,
            padding_mode: PaddingMode::Safe,
            framework_prefixes: default_framework_prefixes(),
        }
    }
}

/// Everything the pipeline may need. Stages only touch their own inputs,
/// so e.g. `facts` may stay `None` for a missing-timeout bug.
#[derive(Debug, Clone, Default)]
pub struct DrilldownInputs {
    pub trace: SpanTrace,
    pub baseline: SpanTrace,
    pub dumps: Vec<StackDump>,
    pub facts: Option<TaintFactBase>,
    pub catalog: Option<ApiCatalog>,
    /// Explicit config key for a loop-guard plan; derived otherwise.
    pub loop_config_key: Option<String>,
    /// When the hung process was force-terminated, the instant of the kill;
    /// enables background-thread pruning.
    pub termination_time_ms: Option<i64>,
    pub samples: Vec<TrainingSample>,
    pub query_features: Option<Vec<f64>>,
}

fn window_spans<'a>(trace: &'a SpanTrace, alert: &AnomalyAlert) -> Vec<&'a Span> {
    trace
        .spans
        .iter()
        .filter(|s| s.overlaps(alert.window))
        .collect()
}

/// Misused iff at least one span inside the alert window invokes a
/// registry-matched timeout function; missing otherwise.
pub fn classify_bug(
    trace: &SpanTrace,
    alert: &AnomalyAlert,
    registry: &TimeoutFunctionRegistry,
) -> Result<BugClass, DrilldownError> {
    let spans = window_spans(trace, alert);
    if spans.is_empty() {
        return Err(DrilldownError::EmptyWindow);
    }
    if spans.iter().any(|s| registry.matches(&s.function)) {
        Ok(BugClass::Misused)
    } else {
        Ok(BugClass::Missing)
    }
}

fn sub_trace(trace: &SpanTrace, alert: &AnomalyAlert) -> SpanTrace {
    SpanTrace {
        trace_id: trace.trace_id.clone(),
        spans: window_spans(trace, alert).into_iter().cloned().collect(),
        window: Some(alert.window),
    }
}

fn run_prediction(
    inputs: &DrilldownInputs,
    policy: &DrilldownPolicy,
    notes: &mut Vec<String>,
) -> Result<Option<Prediction>, DrilldownError> {
    let Some(query) = &inputs.query_features else {
        return Ok(None);
    };
    if inputs.samples.is_empty() {
        return Ok(None);
    }
    let model = select_model(&inputs.samples, SelectionScorer::Auto)?;
    let report = padding_ratio(&model, &inputs.samples, policy.padding_mode)?;
    if report.underestimation_warning {
        notes.push("padding ratio is negative: the model only over-estimates history".into());
    }
    let historical_max = inputs
        .samples
        .iter()
        .map(|s| s.observed_ms)
        .fold(0.0f64, f64::max);
    let prediction = predict(&model, &report, query, historical_max)?;
    if prediction.fallback_used {
        notes.push("model output unusable, predicted 2x the historical maximum".into());
    }
    Ok(Some(prediction))
}

fn analyze_misused(
    inputs: &DrilldownInputs,
    alert: &AnomalyAlert,
    policy: &DrilldownPolicy,
    notes: &mut Vec<String>,
) -> Result<(BugCategory, String, Option<TimeoutVariable>, Vec<TimeoutVariable>), DrilldownError> {
    let current = compute_function_stats(&sub_trace(&inputs.trace, alert));
    let baseline = compute_function_stats(&inputs.baseline);
    let affected = identify_affected_functions(&current, &baseline, &policy.anomaly)?;
    let affected = affected
        .into_iter()
        .max_by(|a, b| a.magnitude.total_cmp(&b.magnitude).then_with(|| b.function.cmp(&a.function)))
        .ok_or(DrilldownError::MissingInput {
            stage: "misuse",
            what: "no function deviates from the baseline".into(),
        })?;

    let facts = inputs.facts.as_ref().ok_or(DrilldownError::MissingInput {
        stage: "taint",
        what: "fact base (--facts/--config)".into(),
    })?;
    let seeds = seed_timeout_variables(facts);
    let used_by: Vec<String> = vec![affected.function.clone()];
    let candidates = tainted_uses(facts, &seeds, &used_by);

    let verdict: MisusedVerdict = match differentiate(&affected) {
        Ok(direction) => cross_validate(&affected, direction, &candidates, policy.match_tolerance),
        Err(MisusedError::AmbiguousAnomaly(_)) => {
            notes.push("both anomaly kinds fired; direction resolved by value matching".into());
            resolve_ambiguous(&affected, &candidates, policy.match_tolerance)
        }
        Err(e) => return Err(e.into()),
    };
    notes.push(verdict.evidence.clone());

    let function = verdict.affected.function.clone();
    match verdict.variable {
        VariableVerdict::Selected { variable, alternates } => {
            let category = match verdict.direction {
                MisuseDirection::TooLarge => BugCategory::MisusedTooLarge,
                MisuseDirection::TooSmall => BugCategory::MisusedTooSmall,
            };
            Ok((category, function, Some(variable), alternates))
        }
        VariableVerdict::HardCodedSuspected => {
            notes.push("no configurable variable explains the observations".into());
            Ok((BugCategory::HardCodedSuspected, function, None, Vec::new()))
        }
    }
}

fn base_callsite(catalog: &ApiCatalog, function: &str) -> Result<Callsite, DrilldownError> {
    let (class, method) = function.rsplit_once('.').ok_or(DrilldownError::MissingInput {
        stage: "patch",
        what: format!("cannot split {function} into class and method"),
    })?;
    let methods = catalog
        .classes
        .get(class)
        .ok_or_else(|| PatchError::UnknownCallsite {
            class: class.into(),
            method: method.into(),
        })?;
    // The call as written: the same-name signature without a trailing
    // timeout parameter, preferring the shortest.
    let base = methods
        .iter()
        .filter(|m| m.name == method)
        .filter(|m| {
            m.params
                .last()
                .map(|p| !p.name.to_lowercase().contains("timeout"))
                .unwrap_or(true)
        })
        .min_by_key(|m| m.params.len())
        .or_else(|| methods.iter().find(|m| m.name == method))
        .ok_or_else(|| PatchError::UnknownCallsite {
            class: class.into(),
            method: method.into(),
        })?;
    Ok(Callsite {
        class: class.into(),
        method: method.into(),
        param_types: base.params.iter().map(|p| p.type_name.clone()).collect(),
        file: format!("{class}.java"),
        line: 0,
        enclosing_function: function.into(),
        enclosing_throws: base.throws.clone(),
    })
}

fn analyze_missing(
    inputs: &DrilldownInputs,
    alert: &AnomalyAlert,
    policy: &DrilldownPolicy,
    notes: &mut Vec<String>,
) -> Result<(String, HangType, PatchPlan), DrilldownError> {
    if inputs.dumps.len() < 2 {
        return Err(DrilldownError::MissingInput {
            stage: "stack",
            what: format!("need at least 2 thread dumps, got {}", inputs.dumps.len()),
        });
    }
    let candidates = common_innermost(&inputs.dumps, &policy.framework_prefixes)?;
    let chosen: RootCauseCandidate = match inputs.termination_time_ms {
        Some(termination) => {
            let baseline = compute_function_stats(&inputs.baseline);
            let outcome = prune_background(
                &candidates,
                &inputs.trace,
                alert,
                termination,
                &baseline,
                policy.alert_align_tolerance_ms,
            );
            if outcome.no_survivor {
                notes.push("all candidates pruned as background; keeping the first".into());
                candidates.first().cloned().ok_or(DrilldownError::MissingInput {
                    stage: "stack",
                    what: "no root-cause candidate".into(),
                })?
            } else {
                if candidates.len() > outcome.survivors.len() {
                    notes.push(format!(
                        "pruned {} background candidate(s)",
                        candidates.len() - outcome.survivors.len()
                    ));
                }
                outcome.survivors[0].clone()
            }
        }
        None => candidates.first().cloned().ok_or(DrilldownError::MissingInput {
            stage: "stack",
            what: "no root-cause candidate".into(),
        })?,
    };

    let hang = classify_hang(&chosen);
    // The frame as seen in the first dump carries file and line.
    let frame = inputs
        .dumps
        .iter()
        .flat_map(|d| &d.threads)
        .filter(|t| t.name == chosen.thread)
        .flat_map(|t| &t.frames)
        .find(|f| f.function == chosen.function);
    let (file, line) = match frame {
        Some(f) => (
            f.file.clone(),
            match f.line {
                crate::stack::FrameLine::Line(n) => n,
                crate::stack::FrameLine::Native => 0,
            },
        ),
        None => ("unknown".into(), 0),
    };

    let plan = match hang {
        HangType::InfiniteLoop => {
            // Key the new knob off the method name: ...Client.poll gets
            // poll.timeout.
            let config_key = inputs.loop_config_key.clone().or_else(|| {
                chosen.function.rsplit('.').next().map(|method| {
                    let cleaned: String = method
                        .chars()
                        .filter(|c| c.is_ascii_alphanumeric())
                        .collect();
                    format!("{}.timeout", cleaned.to_lowercase())
                })
            });
            plan_loop_fix(
                &LoopSite {
                    function: chosen.function.clone(),
                    file,
                    line,
                    body: Vec::new(),
                    config_key,
                },
                "",
            )?
        }
        HangType::BlockingCall => {
            let catalog = inputs.catalog.as_ref().ok_or(DrilldownError::MissingInput {
                stage: "patch",
                what: "API catalog (--catalog)".into(),
            })?;
            let mut callsite = base_callsite(catalog, &chosen.function)?;
            callsite.file = file;
            callsite.line = line;
            plan_blocking_fix(&callsite, catalog, "")?
        }
    };
    Ok((chosen.function, hang, plan))
}

/// Runs the full pipeline and aggregates a Diagnosis. Wall-clock analysis
/// time is measured here; validation happens elsewhere and is excluded.
pub fn run_drilldown(
    inputs: &DrilldownInputs,
    alert: &AnomalyAlert,
    registry: &TimeoutFunctionRegistry,
    policy: &DrilldownPolicy,
) -> Result<Diagnosis, DrilldownError> {
    let started = Instant::now();
    let mut notes = Vec::new();
    let class = classify_bug(&inputs.trace, alert, registry)?;
    let diagnosis = match class {
        BugClass::Misused => {
            let (category, function, variable, alternates) =
                analyze_misused(inputs, alert, policy, &mut notes)?;
            let prediction = run_prediction(inputs, policy, &mut notes)?;
            Diagnosis {
                bug_category: category,
                root_cause_function: function,
                misused_variable: variable,
                alternate_variables: alternates,
                hang_type: None,
                patch_plan: None,
                prediction,
                diagnosis_time_ms: 0,
                notes,
            }
        }
        BugClass::Missing => {
            let (function, hang, plan) = analyze_missing(inputs, alert, policy, &mut notes)?;
            let prediction = run_prediction(inputs, policy, &mut notes)?;
            Diagnosis {
                bug_category: BugCategory::MissingTimeout,
                root_cause_function: function,
                misused_variable: None,
                alternate_variables: Vec::new(),
                hang_type: Some(hang),
                patch_plan: Some(plan),
                prediction,
                diagnosis_time_ms: 0,
                notes,
            }
        }
    };
    Ok(Diagnosis {
        diagnosis_time_ms: started.elapsed().as_millis() as u64,
        ..diagnosis
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::parse_span_trace;

    fn trace_with(functions: &[(&str, i64, i64)]) -> SpanTrace {
        let mut lines = String::new();
        for (i, (f, b, e)) in functions.iter().enumerate() {
            lines.push_str(&format!(
                "{{\"i\":\"t1\",\"s\":\"s{i}\",\"b\":{b},\"e\":{e},\"r\":\"node1\",\"p\":[],\"d\":\"{f}\"}}\n"
            ));
        }
        parse_span_trace(&lines).unwrap()
    }

    fn alert(window: (i64, i64)) -> AnomalyAlert {
        AnomalyAlert {
            alert_time_ms: window.0,
            affected_process: "node1".into(),
            window,
        }
    }

    #[test]
    fn registry_match_means_misused() {
        let trace = trace_with(&[("java.net.Socket.connect", 100, 500)]);
        let class = classify_bug(&trace, &alert((0, 1000)), &TimeoutFunctionRegistry::default());
        assert_eq!(class.unwrap(), BugClass::Misused);
    }

    #[test]
    fn no_match_means_missing() {
        let trace = trace_with(&[("app.Worker.poll", 100, 500)]);
        let class = classify_bug(&trace, &alert((0, 1000)), &TimeoutFunctionRegistry::default());
        assert_eq!(class.unwrap(), BugClass::Missing);
    }

    #[test]
    fn empty_window_is_an_error() {
        let trace = trace_with(&[("app.Worker.poll", 100, 500)]);
        let class = classify_bug(&trace, &alert((5000, 6000)), &TimeoutFunctionRegistry::default());
        assert!(matches!(class, Err(DrilldownError::EmptyWindow)));
    }

    #[test]
    fn out_of_window_spans_are_ignored() {
        // Adding spans outside the window never changes the class.
        let inside = trace_with(&[("app.Worker.poll", 100, 500)]);
        let noisy = trace_with(&[
            ("app.Worker.poll", 100, 500),
            ("java.net.Socket.connect", 5000, 5500),
        ]);
        let registry = TimeoutFunctionRegistry::default();
        let a = alert((0, 1000));
        assert_eq!(
            classify_bug(&inside, &a, &registry).unwrap(),
            classify_bug(&noisy, &a, &registry).unwrap()
        );
    }

    #[test]
    fn prefix_matching() {
        let mut registry = TimeoutFunctionRegistry::default();
        registry.extend_with(["app.rpc.TimedClient".to_string()]);
        assert!(registry.matches("app.rpc.TimedClient.invoke"));
        assert!(registry.matches("java.lang.Object.wait"));
        assert!(!registry.matches("app.rpc.Client.invoke"));
    }

    #[test]
    fn alert_window_sanity() {
        assert!(alert((0, 10)).is_well_formed());
        let bad = AnomalyAlert {
            alert_time_ms: 50,
            affected_process: "p".into(),
            window: (0, 10),
        };
        assert!(!bad.is_well_formed());
    }
}
