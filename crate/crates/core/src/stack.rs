//! Thread-dump parsing and hang classification.
//!
//! Dump grammar: a thread header line `"<name>" #<n> ... <flags>`, a state
//! line `java.lang.Thread.State: <STATE>`, then frames
//! `at <qualified.fn>(<File>:<line>)` or `at <qualified.fn>(Native Method)`,
//! blocks separated by blank lines. `//` lines are comments. Frames are
//! stored innermost-first, as dumped.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drilldown::AnomalyAlert;
use crate::trace::{FunctionStats, SpanTrace};

#[derive(Debug, Error)]
pub enum StackError {
    #[error("malformed dump line {0}: {1}")]
    MalformedFrame(usize, String),
    #[error("dump contains no threads")]
    EmptyDump,
    #[error("need at least 2 dumps, got {0}")]
    InsufficientDumps(usize),
    #[error("thread {0} shares no application frame across dumps")]
    NoCommonFunction(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameLine {
    Line(u32),
    Native,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackFrame {
    /// Qualified function name, e.g. `YarnClientImpl.submitApplication`.
    pub function: String,
    pub file: String,
    pub line: FrameLine,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreadStack {
    pub name: String,
    pub state: String,
    /// Innermost first.
    pub frames: Vec<StackFrame>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackDump {
    pub capture_time_ms: i64,
    pub threads: Vec<ThreadStack>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HangType {
    InfiniteLoop,
    BlockingCall,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RootCauseCandidate {
    pub function: String,
    pub thread: String,
    pub line_numbers_observed: BTreeSet<u32>,
    pub is_background: bool,
}

/// Frame prefixes treated as framework/runtime code when choosing the
/// inner-most application frame.
pub const DEFAULT_FRAMEWORK_PREFIXES: [&str; 5] =
    ["java.", "javax.", "jdk.", "sun.", "com.sun."];

pub fn parse_thread_dump(text: &str) -> Result<StackDump, StackError> {
    parse_thread_dump_at(text, 0)
}

pub fn parse_thread_dump_at(text: &str, capture_time_ms: i64) -> Result<StackDump, StackError> {
    let mut threads: Vec<ThreadStack> = Vec::new();
    let mut current: Option<ThreadStack> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            if let Some(t) = current.take() {
                threads.push(t);
            }
            continue;
        }
        if line.starts_with("//") {
            continue;
        }
        if line.starts_with('"') {
            if let Some(t) = current.take() {
                threads.push(t);
            }
            let name_end = line[1..]
                .find('"')
                .ok_or_else(|| StackError::MalformedFrame(line_no, "unterminated thread name".into()))?;
            current = Some(ThreadStack {
                name: line[1..1 + name_end].to_string(),
                state: String::new(),
                frames: Vec::new(),
            });
        } else if let Some(state) = line.strip_prefix("java.lang.Thread.State:") {
            let thread = current
                .as_mut()
                .ok_or_else(|| StackError::MalformedFrame(line_no, "state before header".into()))?;
            thread.state = state.trim().to_string();
        } else if let Some(frame) = line.strip_prefix("at ") {
            let thread = current
                .as_mut()
                .ok_or_else(|| StackError::MalformedFrame(line_no, "frame before header".into()))?;
            thread.frames.push(parse_frame(frame, line_no)?);
        } else {
            return Err(StackError::MalformedFrame(line_no, line.to_string()));
        }
    }
    if let Some(t) = current.take() {
        threads.push(t);
    }
    for t in &threads {
        if t.frames.is_empty() {
            return Err(StackError::EmptyDump);
        }
    }
    if threads.is_empty() {
        return Err(StackError::EmptyDump);
    }
    Ok(StackDump {
        capture_time_ms,
        threads,
    })
}

fn parse_frame(frame: &str, line_no: usize) -> Result<StackFrame, StackError> {
    let malformed = || StackError::MalformedFrame(line_no, frame.to_string());
    let open = frame.rfind('(').ok_or_else(malformed)?;
    let close = frame.rfind(')').ok_or_else(malformed)?;
    if close <= open {
        return Err(malformed());
    }
    let function = frame[..open].trim().to_string();
    let location = &frame[open + 1..close];
    if location == "Native Method" {
        return Ok(StackFrame {
            function,
            file: String::new(),
            line: FrameLine::Native,
        });
    }
    let (file, line) = location.rsplit_once(':').ok_or_else(malformed)?;
    let line: u32 = line.parse().map_err(|_| malformed())?;
    if line == 0 {
        return Err(malformed());
    }
    Ok(StackFrame {
        function,
        file: file.to_string(),
        line: FrameLine::Line(line),
    })
}

/// Renders a dump back to the thread-dump grammar.
pub fn render_thread_dump(dump: &StackDump) -> String {
    let mut out = String::new();
    for (i, thread) in dump.threads.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!(
            "\"{}\" #{} prio=5 os_prio=0 tid=0x0 nid=0x0 runnable [0x0]\n",
            thread.name,
            i + 1
        ));
        out.push_str(&format!("java.lang.Thread.State: {}\n", thread.state));
        for frame in &thread.frames {
            match &frame.line {
                FrameLine::Native => out.push_str(&format!(" at {}(Native Method)\n", frame.function)),
                FrameLine::Line(n) => {
                    out.push_str(&format!(" at {}({}:{})\n", frame.function, frame.file, n))
                }
            }
        }
    }
    out
}

fn is_application_frame(frame: &StackFrame, framework_prefixes: &[String]) -> bool {
    matches!(frame.line, FrameLine::Line(_))
        && !framework_prefixes
            .iter()
            .any(|p| frame.function.starts_with(p.as_str()))
}

/// Per thread, the deepest application frame whose function appears in all
/// dumps, with the line numbers observed across dumps.
///
/// Threads are matched by name; the result is invariant to dump ordering.
pub fn common_innermost(
    dumps: &[StackDump],
    framework_prefixes: &[String],
) -> Result<Vec<RootCauseCandidate>, StackError> {
    if dumps.len() < 2 {
        return Err(StackError::InsufficientDumps(dumps.len()));
    }
    let mut thread_names: Vec<String> = dumps[0].threads.iter().map(|t| t.name.clone()).collect();
    for dump in &dumps[1..] {
        let names: BTreeSet<&str> = dump.threads.iter().map(|t| t.name.as_str()).collect();
        thread_names.retain(|n| names.contains(n.as_str()));
    }

    let mut candidates = Vec::new();
    for name in thread_names {
        let stacks: Vec<&ThreadStack> = dumps
            .iter()
            .map(|d| d.threads.iter().find(|t| t.name == name).expect("matched"))
            .collect();
        let mut common: Option<BTreeSet<&str>> = None;
        for stack in &stacks {
            let fns: BTreeSet<&str> = stack
                .frames
                .iter()
                .filter(|f| is_application_frame(f, framework_prefixes))
                .map(|f| f.function.as_str())
                .collect();
            common = Some(match common {
                None => fns,
                Some(prev) => prev.intersection(&fns).copied().collect(),
            });
        }
        let common = common.unwrap_or_default();
        if common.is_empty() {
            return Err(StackError::NoCommonFunction(name));
        }
        // Innermost: first common application frame of the first dump's stack.
        let chosen = stacks[0]
            .frames
            .iter()
            .find(|f| {
                is_application_frame(f, framework_prefixes) && common.contains(f.function.as_str())
            })
            .expect("non-empty common set")
            .function
            .clone();
        let mut lines = BTreeSet::new();
        for stack in &stacks {
            for frame in &stack.frames {
                if frame.function == chosen {
                    if let FrameLine::Line(n) = frame.line {
                        lines.insert(n);
                    }
                }
            }
        }
        candidates.push(RootCauseCandidate {
            function: chosen,
            thread: name,
            line_numbers_observed: lines,
            is_background: false,
        });
    }
    Ok(candidates)
}

/// Two or more distinct lines within the same function means the thread is
/// cycling through a loop body; a single repeated line means a blocked call.
pub fn classify_hang(candidate: &RootCauseCandidate) -> HangType {
    if candidate.line_numbers_observed.len() >= 2 {
        HangType::InfiniteLoop
    } else {
        HangType::BlockingCall
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneOutcome {
    /// Candidates meeting all three alignment criteria.
    pub survivors: Vec<RootCauseCandidate>,
    /// All candidates, background ones flagged.
    pub all: Vec<RootCauseCandidate>,
    /// Set when every candidate was pruned; callers report, not fail.
    pub no_survivor: bool,
}

/// Prunes long-running background threads using the interrupted trace.
///
/// A candidate survives when its matching span (1) runs longer than the
/// baseline normal duration, (2) begins within `tolerance_ms` of the alert,
/// and (3) ends within `tolerance_ms` of the forced termination time.
pub fn prune_background(
    candidates: &[RootCauseCandidate],
    interrupted_trace: &SpanTrace,
    alert: &AnomalyAlert,
    termination_time_ms: i64,
    baseline: &std::collections::BTreeMap<String, FunctionStats>,
    tolerance_ms: i64,
) -> PruneOutcome {
    let mut all = Vec::new();
    let mut survivors = Vec::new();
    for candidate in candidates {
        let normal_ms = baseline
            .get(&candidate.function)
            .map(|s| s.mean_ms())
            .unwrap_or(0.0);
        let keeps = interrupted_trace.spans.iter().any(|span| {
            span.function == candidate.function
                && span.duration_ms() as f64 > normal_ms
                && (span.begin_ms - alert.alert_time_ms).abs() <= tolerance_ms
                && (span.end_ms - termination_time_ms).abs() <= tolerance_ms
        });
        let mut flagged = candidate.clone();
        flagged.is_background = !keeps;
        if keeps {
            survivors.push(flagged.clone());
        }
        all.push(flagged);
    }
    let no_survivor = survivors.is_empty();
    PruneOutcome {
        survivors,
        all,
        no_survivor,
    }
}

pub fn default_framework_prefixes() -> Vec<String> {
    DEFAULT_FRAMEWORK_PREFIXES
        .iter()
        .map(|s| s.to_string())
        .collect()
}
