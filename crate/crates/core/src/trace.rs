//! Span-trace data model, ingestion, and per-function execution statistics.
//!
//! Traces are newline-delimited records, one JSON object per line with keys
//! `i` (trace id), `s` (span id), `b`/`e` (begin/end epoch milliseconds),
//! `r` (process name), `p` (parent span ids), and `d` (function name).
//! All times are integer milliseconds end-to-end.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("malformed trace record at line {0}: {1}")]
    MalformedRecord(usize, String),
    #[error("span {span} references unknown parent {parent}")]
    DanglingParent { span: String, parent: String },
    #[error("span {0} has end before begin")]
    NegativeDuration(String),
    #[error("duplicate span id {0}")]
    DuplicateSpanId(String),
    #[error("span {0} carries trace id {1}, expected {2}")]
    MixedTraceIds(String, String, String),
    #[error("parent links of span {0} form a cycle")]
    ParentCycle(String),
    #[error("function {0} has no baseline entry")]
    InsufficientBaseline(String),
}

/// One timed function/RPC invocation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub trace_id: String,
    pub span_id: String,
    pub parent_ids: Vec<String>,
    pub begin_ms: i64,
    pub end_ms: i64,
    pub process: String,
    pub function: String,
}

impl Span {
    pub fn duration_ms(&self) -> i64 {
        self.end_ms - self.begin_ms
    }

    pub fn is_root(&self) -> bool {
        self.parent_ids.is_empty()
    }

    /// True when [begin, end] intersects the given window.
    pub fn overlaps(&self, window: (i64, i64)) -> bool {
        self.begin_ms <= window.1 && self.end_ms >= window.0
    }
}

/// The tree (forest) of spans captured for one trace id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanTrace {
    pub trace_id: String,
    pub spans: Vec<Span>,
    /// [start_ms, end_ms] of the capture; `None` for an empty trace.
    pub window: Option<(i64, i64)>,
}

impl SpanTrace {
    pub fn empty() -> Self {
        SpanTrace {
            trace_id: String::new(),
            spans: Vec::new(),
            window: None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }
}

/// Wire form of one trace record. Field names follow the record format.
#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    i: String,
    s: String,
    b: i64,
    e: i64,
    r: String,
    #[serde(default)]
    p: Vec<String>,
    d: String,
}

const KNOWN_KEYS: [&str; 7] = ["i", "s", "b", "e", "r", "p", "d"];

/// Parses newline-delimited trace records into a `SpanTrace`.
///
/// Blank lines are skipped. Unknown keys are ignored with a warning.
/// Parent references are resolved after the full read; the parent links
/// must form a forest.
pub fn parse_span_trace(input: &str) -> Result<SpanTrace, TraceError> {
    let mut spans = Vec::new();
    let mut ids = HashSet::new();
    let mut trace_id: Option<String> = None;

    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| TraceError::MalformedRecord(line_no, e.to_string()))?;
        if let Some(map) = value.as_object() {
            for key in map.keys() {
                if !KNOWN_KEYS.contains(&key.as_str()) {
                    log::warn!("line {line_no}: ignoring unknown trace record key {key:?}");
                }
            }
        }
        let raw: RawRecord = serde_json::from_value(value)
            .map_err(|e| TraceError::MalformedRecord(line_no, e.to_string()))?;
        if raw.s.is_empty() {
            return Err(TraceError::MalformedRecord(line_no, "empty span id".into()));
        }
        if raw.e < raw.b {
            return Err(TraceError::NegativeDuration(raw.s));
        }
        if !ids.insert(raw.s.clone()) {
            return Err(TraceError::DuplicateSpanId(raw.s));
        }
        match &trace_id {
            None => trace_id = Some(raw.i.clone()),
            Some(t) if *t != raw.i => {
                return Err(TraceError::MixedTraceIds(raw.s, raw.i, t.clone()))
            }
            _ => {}
        }
        spans.push(Span {
            trace_id: raw.i,
            span_id: raw.s,
            parent_ids: raw.p,
            begin_ms: raw.b,
            end_ms: raw.e,
            process: raw.r,
            function: raw.d,
        });
    }

    for span in &spans {
        for parent in &span.parent_ids {
            if !ids.contains(parent) {
                return Err(TraceError::DanglingParent {
                    span: span.span_id.clone(),
                    parent: parent.clone(),
                });
            }
        }
    }
    check_forest(&spans)?;

    let window = spans
        .iter()
        .map(|s| (s.begin_ms, s.end_ms))
        .reduce(|(a, b), (c, d)| (a.min(c), b.max(d)));
    Ok(SpanTrace {
        trace_id: trace_id.unwrap_or_default(),
        spans,
        window,
    })
}

/// Renders a trace back to the newline-delimited record format.
pub fn render_span_trace(trace: &SpanTrace) -> String {
    let mut out = String::new();
    for span in &trace.spans {
        let raw = RawRecord {
            i: span.trace_id.clone(),
            s: span.span_id.clone(),
            b: span.begin_ms,
            e: span.end_ms,
            r: span.process.clone(),
            p: span.parent_ids.clone(),
            d: span.function.clone(),
        };
        out.push_str(&serde_json::to_string(&raw).expect("record serialization"));
        out.push('\n');
    }
    out
}

fn check_forest(spans: &[Span]) -> Result<(), TraceError> {
    let index: HashMap<&str, &Span> = spans.iter().map(|s| (s.span_id.as_str(), s)).collect();
    // DFS colors: absent = white, false = on stack, true = done.
    let mut state: HashMap<&str, bool> = HashMap::new();
    for span in spans {
        let mut stack = vec![(span.span_id.as_str(), 0usize)];
        while let Some((id, next_parent)) = stack.pop() {
            if next_parent == 0 {
                match state.get(id) {
                    Some(true) => continue,
                    Some(false) => return Err(TraceError::ParentCycle(id.to_string())),
                    None => {
                        state.insert(id, false);
                    }
                }
            }
            let parents = &index[id].parent_ids;
            if next_parent < parents.len() {
                stack.push((id, next_parent + 1));
                let parent = parents[next_parent].as_str();
                match state.get(parent) {
                    Some(true) => {}
                    Some(false) => return Err(TraceError::ParentCycle(parent.to_string())),
                    None => stack.push((parent, 0)),
                }
            } else {
                state.insert(id, true);
            }
        }
    }
    Ok(())
}

/// Exact execution statistics for one function over a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionStats {
    pub function: String,
    pub durations_ms: Vec<i64>,
}

impl FunctionStats {
    pub fn invocation_count(&self) -> usize {
        self.durations_ms.len()
    }

    pub fn mean_ms(&self) -> f64 {
        if self.durations_ms.is_empty() {
            return 0.0;
        }
        self.durations_ms.iter().sum::<i64>() as f64 / self.durations_ms.len() as f64
    }

    pub fn max_ms(&self) -> i64 {
        self.durations_ms.iter().copied().max().unwrap_or(0)
    }

    /// Population standard deviation of the durations.
    pub fn stddev_ms(&self) -> f64 {
        if self.durations_ms.is_empty() {
            return 0.0;
        }
        let mean = self.mean_ms();
        let var = self
            .durations_ms
            .iter()
            .map(|&d| {
                let diff = d as f64 - mean;
                diff * diff
            })
            .sum::<f64>()
            / self.durations_ms.len() as f64;
        var.sqrt()
    }
}

/// One entry per distinct function name, stats exact over the trace.
pub fn compute_function_stats(trace: &SpanTrace) -> BTreeMap<String, FunctionStats> {
    let mut map: BTreeMap<String, FunctionStats> = BTreeMap::new();
    for span in &trace.spans {
        map.entry(span.function.clone())
            .or_insert_with(|| FunctionStats {
                function: span.function.clone(),
                durations_ms: Vec::new(),
            })
            .durations_ms
            .push(span.duration_ms());
    }
    for stats in map.values_mut() {
        stats.durations_ms.sort_unstable();
    }
    map
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnomalyKind {
    DurationSpike,
    FrequencySpike,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionAnomaly {
    pub function: String,
    pub kind: AnomalyKind,
    /// Ratio to the baseline (max duration or invocation count).
    pub magnitude: f64,
}

/// Detection thresholds for baseline comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnomalyPolicy {
    /// Stddev multiplier k: spike requires max > mean + k * stddev.
    pub stddev_multiplier: f64,
    /// Duration spike additionally requires max > factor * baseline max.
    pub duration_factor: f64,
    /// Frequency spike requires count > factor * baseline count.
    pub frequency_factor: f64,
    /// Baseline entries with fewer samples are not compared against.
    pub min_baseline_samples: usize,
    /// When set, a current function without a baseline entry is an error.
    pub strict: bool,
}

impl Default for AnomalyPolicy {
    fn default() -> Self {
        AnomalyPolicy {
            stddev_multiplier: 3.0,
            duration_factor: 2.0,
            frequency_factor: 5.0,
            min_baseline_samples: 5,
            strict: false,
        }
    }
}

/// Flags functions whose duration or frequency spikes against the baseline.
///
/// Deterministic and permutation-invariant: the result depends only on the
/// per-function stats, and functions are visited in name order.
pub fn compare_against_baseline(
    current: &BTreeMap<String, FunctionStats>,
    baseline: &BTreeMap<String, FunctionStats>,
    policy: &AnomalyPolicy,
) -> Result<Vec<FunctionAnomaly>, TraceError> {
    let mut anomalies = Vec::new();
    for (function, cur) in current {
        let Some(base) = baseline.get(function) else {
            if policy.strict {
                return Err(TraceError::InsufficientBaseline(function.clone()));
            }
            continue;
        };
        if base.invocation_count() < policy.min_baseline_samples {
            continue;
        }
        let cur_max = cur.max_ms() as f64;
        let base_max = base.max_ms() as f64;
        if cur_max > base.mean_ms() + policy.stddev_multiplier * base.stddev_ms()
            && cur_max > policy.duration_factor * base_max
        {
            anomalies.push(FunctionAnomaly {
                function: function.clone(),
                kind: AnomalyKind::DurationSpike,
                magnitude: if base_max > 0.0 { cur_max / base_max } else { f64::INFINITY },
            });
        }
        let cur_count = cur.invocation_count() as f64;
        let base_count = base.invocation_count() as f64;
        if cur_count > policy.frequency_factor * base_count {
            anomalies.push(FunctionAnomaly {
                function: function.clone(),
                kind: AnomalyKind::FrequencySpike,
                magnitude: cur_count / base_count,
            });
        }
    }
    Ok(anomalies)
}
