//! Synthetic ground-truth scenarios.
//!
//! Each generated bundle contains everything the diagnosis pipeline ingests
//! (traces, dumps, config, dataflow facts, API catalog, training data) plus
//! an executable workload script whose behavior honestly exhibits the bug,
//! and a manifest recording the ground truth for oracle checks. Generation
//! is fully deterministic for a fixed seed.

pub mod script;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drilldown::{AlertDocument, AnomalyAlert, BugCategory};
use crate::patch::{ApiCatalog, ApiMethod, ApiParam, FixStrategy};
use crate::predict::{render_dataset, TrainingSample};
use crate::stack::{FrameLine, HangType, StackDump, StackFrame, ThreadStack};
use crate::trace::{render_span_trace, Span, SpanTrace};
use crate::validate::{BugSignature, Outcome, Scenario};

use self::script::{render_script, OnTimeout, Script, Step};

#[derive(Debug, Error)]
pub enum FaultlabError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioCategory {
    TooLarge,
    TooSmall,
    MissingLoop,
    MissingBlocking,
    /// Misused shape whose value is hard-coded, not configurable.
    Hardcoded,
}

impl ScenarioCategory {
    pub fn parse(s: &str) -> Result<Self, FaultlabError> {
        match s {
            "too-large" => Ok(ScenarioCategory::TooLarge),
            "too-small" => Ok(ScenarioCategory::TooSmall),
            "missing-loop" => Ok(ScenarioCategory::MissingLoop),
            "missing-blocking" => Ok(ScenarioCategory::MissingBlocking),
            "hardcoded" => Ok(ScenarioCategory::Hardcoded),
            other => Err(FaultlabError::UnknownCategory(other.to_string())),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioCategory::TooLarge => "too-large",
            ScenarioCategory::TooSmall => "too-small",
            ScenarioCategory::MissingLoop => "missing-loop",
            ScenarioCategory::MissingBlocking => "missing-blocking",
            ScenarioCategory::Hardcoded => "hardcoded",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub category: ScenarioCategory,
    /// Index within the category; selects function names, catalog shape etc.
    pub variant: usize,
    pub seed: u64,
}

/// Ground truth written alongside each bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub category: String,
    pub expected_bug_category: BugCategory,
    pub root_cause_function: String,
    /// Misused categories: the config key the diagnosis must name.
    pub variable: Option<String>,
    pub expected_strategy: Option<FixStrategy>,
    pub expected_hang_type: Option<HangType>,
    /// The key the validated patch injects.
    pub config_key: String,
    pub true_need_ms: i64,
    pub buggy_value_ms: Option<i64>,
    pub expected_outcome: Outcome,
    pub seed: u64,
}

const EPOCH: i64 = 1_700_000_000_000;
const SCALE: i64 = 100;

/// The 16-scenario suite: 7 too-large, 4 too-small, 5 missing (two loops,
/// one of which exercises the partial-fix abort path, and three blocking
/// calls covering each patch strategy).
pub fn default_suite(master_seed: u64) -> Vec<ScenarioSpec> {
    let mut specs = Vec::new();
    let mut push = |category: ScenarioCategory, variant: usize, slug: &str| {
        let index = specs.len();
        specs.push(ScenarioSpec {
            name: format!("{:02}-{slug}", index + 1),
            category,
            variant,
            seed: master_seed.wrapping_mul(1000).wrapping_add(index as u64),
        });
    };
    let large_slugs = [
        "large-ipc-call", "large-socket-connect", "large-http-connect", "large-lock-wait",
        "large-worker-join", "large-selector-poll", "large-image-transfer",
    ];
    for (v, slug) in large_slugs.iter().enumerate() {
        push(ScenarioCategory::TooLarge, v, slug);
    }
    let small_slugs = [
        "small-image-transfer", "small-socket-read", "small-ipc-ping", "small-checkpoint",
    ];
    for (v, slug) in small_slugs.iter().enumerate() {
        push(ScenarioCategory::TooSmall, v, slug);
    }
    push(ScenarioCategory::MissingLoop, 0, "missing-poll-loop");
    push(ScenarioCategory::MissingLoop, 1, "missing-drain-loop");
    push(ScenarioCategory::MissingBlocking, 0, "missing-connect");
    push(ScenarioCategory::MissingBlocking, 1, "missing-notifier");
    push(ScenarioCategory::MissingBlocking, 2, "missing-editlog");
    specs
}

pub fn generate_all(master_seed: u64, out_dir: &Path) -> Result<Vec<(PathBuf, Manifest)>, FaultlabError> {
    let mut out = Vec::new();
    for spec in default_suite(master_seed) {
        let dir = out_dir.join(&spec.name);
        let manifest = generate(&spec, &dir)?;
        out.push((dir, manifest));
    }
    Ok(out)
}

struct PolyModel {
    a: i64,
    b: i64,
    query: i64,
}

impl PolyModel {
    fn need(&self) -> i64 {
        self.a + self.b * self.query
    }

    fn dataset(&self) -> (Vec<String>, Vec<TrainingSample>) {
        let samples = (1..=10)
            .map(|s| TrainingSample {
                features: vec![s as f64],
                observed_ms: (self.a + self.b * s) as f64,
            })
            .collect();
        (vec!["load".to_string()], samples)
    }
}

fn small_poly(rng: &mut ChaCha8Rng) -> PolyModel {
    PolyModel {
        a: rng.gen_range(300..800),
        b: rng.gen_range(30..120),
        query: rng.gen_range(4..=9),
    }
}

fn large_poly(rng: &mut ChaCha8Rng) -> PolyModel {
    PolyModel {
        a: rng.gen_range(60_000..90_000),
        b: rng.gen_range(2_000..5_000),
        query: rng.gen_range(5..=9),
    }
}

fn span(trace_id: &str, n: usize, function: &str, begin: i64, duration: i64) -> Span {
    Span {
        trace_id: trace_id.to_string(),
        span_id: format!("s{n:03}"),
        parent_ids: Vec::new(),
        begin_ms: begin,
        end_ms: begin + duration,
        process: "node1".to_string(),
        function: function.to_string(),
    }
}

fn write_trace(path: &Path, trace_id: &str, spans: Vec<Span>) -> Result<(), FaultlabError> {
    let trace = SpanTrace {
        trace_id: trace_id.to_string(),
        spans,
        window: None,
    };
    fs::write(path, render_span_trace(&trace))?;
    Ok(())
}

fn xml_config(entries: &[(&str, i64)]) -> String {
    let mut out = String::from("<configuration>\n");
    for (key, value) in entries {
        let _ = write!(
            out,
            "  <property>\n    <name>{key}</name>\n    <value>{value}</value>\n  </property>\n"
        );
    }
    out.push_str("</configuration>\n");
    out
}

fn method(name: &str, params: &[(&str, &str)], throws: &[&str]) -> ApiMethod {
    ApiMethod {
        name: name.to_string(),
        params: params
            .iter()
            .map(|(n, t)| ApiParam {
                name: n.to_string(),
                type_name: t.to_string(),
            })
            .collect(),
        throws: throws.iter().map(|s| s.to_string()).collect(),
    }
}

fn write_common(
    dir: &Path,
    dataset: (Vec<String>, Vec<TrainingSample>),
    alert: AlertDocument,
    scenario: &Scenario,
    workload: &Script,
    manifest: &Manifest,
) -> Result<(), FaultlabError> {
    fs::write(dir.join("dataset.csv"), render_dataset(&dataset.0, &dataset.1))?;
    fs::write(
        dir.join("alert.json"),
        serde_json::to_string_pretty(&alert).expect("alert serializes"),
    )?;
    fs::write(dir.join("scenario.json"), scenario.to_json())?;
    fs::write(dir.join("workload.script"), render_script(workload))?;
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(manifest).expect("manifest serializes"),
    )?;
    Ok(())
}

fn scenario_shell(name: &str, signature: BugSignature, base_config: BTreeMap<String, String>) -> Scenario {
    Scenario {
        name: name.to_string(),
        workload: vec![
            "$SELF".into(),
            "workload".into(),
            "--script".into(),
            "$BUNDLE/workload.script".into(),
            "--config".into(),
            "$CONFIG".into(),
        ],
        signature,
        tests: vec![vec![
            "$SELF".into(),
            "testsuite".into(),
            "--script".into(),
            "$BUNDLE/workload.script".into(),
            "--config".into(),
            "$CONFIG".into(),
        ]],
        base_config,
        config_file: "injected.properties".into(),
        budget_ms: 30_000,
        expected_normal_ms: 2_000,
    }
}

const LARGE_FUNCTIONS: [(&str, &str); 7] = [
    ("org.apache.hadoop.ipc.Client.call", "ipc.client.call.timeout"),
    ("java.net.Socket.connect", "socket.connect.timeout"),
    ("java.net.URLConnection.connect", "http.connect.timeout"),
    ("java.lang.Object.wait", "lock.wait.timeout"),
    ("java.lang.Thread.join", "worker.join.timeout"),
    ("java.nio.channels.Selector.select", "selector.poll.timeout"),
    (
        "org.apache.hadoop.hdfs.server.namenode.TransferFsImage.getFileClient",
        "image.transfer.timeout",
    ),
];

const SMALL_FUNCTIONS: [(&str, &str); 4] = [
    (
        "org.apache.hadoop.hdfs.server.namenode.TransferFsImage.getFileClient",
        "dfs.image.transfer.timeout",
    ),
    ("java.net.SocketInputStream.socketRead0", "dfs.socket.read.timeout"),
    ("org.apache.hadoop.ipc.Client.call", "ipc.ping.timeout"),
    ("java.net.Socket.connect", "checkpoint.transfer.timeout"),
];

const DECOY_FUNCTION: &str = "app.job.Runner.execute";

fn misused_baseline(
    rng: &mut ChaCha8Rng,
    trace_id: &str,
    function: &str,
    durations: &[i64],
) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut t = EPOCH - 3_600_000;
    for (i, d) in durations.iter().enumerate() {
        spans.push(span(trace_id, i, function, t, *d));
        t += d + rng.gen_range(500..1500);
    }
    // Decoy activity so the trace is not single-function.
    for i in 0..6 {
        let d = rng.gen_range(80..220);
        spans.push(span(trace_id, 100 + i, DECOY_FUNCTION, t, d));
        t += d + 300;
    }
    spans
}

fn generate_too_large(
    spec: &ScenarioSpec,
    dir: &Path,
    hardcoded: bool,
) -> Result<Manifest, FaultlabError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (function, key) = LARGE_FUNCTIONS[spec.variant % LARGE_FUNCTIONS.len()];
    let poly = small_poly(&mut rng);
    let need = poly.need();
    let buggy = rng.gen_range(200_000..400_000);

    let base_id = format!("base-{}", spec.name);
    let baseline_durations: Vec<i64> = (0..8)
        .map(|_| (need as f64 * rng.gen_range(0.85..1.10)) as i64)
        .collect();
    write_trace(
        &dir.join("baseline.ndjson"),
        &base_id,
        misused_baseline(&mut rng, &base_id, function, &baseline_durations),
    )?;

    let run_id = format!("run-{}", spec.name);
    let alert_time = EPOCH + 10_000;
    let mut spans = vec![span(&run_id, 0, function, alert_time, buggy)];
    for i in 0..3 {
        spans.push(span(&run_id, 10 + i, DECOY_FUNCTION, alert_time - 5_000 + i as i64 * 400, 150));
    }
    write_trace(&dir.join("trace.ndjson"), &run_id, spans)?;

    // Dataflow facts. The buggy key feeds the variable the function reads;
    // a small retry knob and a compiled-in default survive as decoys.
    let retry_key = "rpc.retry.timeout";
    let heartbeat_key = "app.heartbeat.interval";
    let (config_value, default_const) = if hardcoded {
        // The config knob is unrelated to the observed stall; the real
        // bound lives in a compiled constant nothing can reconfigure, and
        // neither explains the observed maximum.
        (1_000, 2_000)
    } else {
        (buggy, buggy * 2)
    };
    fs::write(
        dir.join("config.xml"),
        xml_config(&[(key, config_value), (retry_key, 1_000), (heartbeat_key, 5_000)]),
    )?;
    let facts = format!(
        "facts v1\nVAR v_main\nVAR v_retry\nVAR v_def\nCONST DEFAULT_OP_TIMEOUT {default_const}\n\
         EDGE read-config {key} v_main\nEDGE read-config {retry_key} v_retry\n\
         EDGE assign DEFAULT_OP_TIMEOUT v_def\n\
         USE {function} v_main\nUSE {function} v_retry\nUSE {function} v_def\n"
    );
    fs::write(dir.join("facts.txt"), facts)?;

    // The hardcoded variant reads its bound from a compiled constant, so
    // the wait step's knob is not the advertised config key and injecting a
    // value cannot fix it.
    let wait_key = if hardcoded { "hardcoded.op.bound" } else { key };
    let workload = Script {
        scale: SCALE,
        steps: vec![
            Step::Sleep { ms: 200 },
            Step::Wait {
                key: wait_key.to_string(),
                default_ms: buggy,
                recover_ms: 300,
            },
            Step::Flush { name: "sink".into() },
        ],
    };
    let mut base_config = BTreeMap::new();
    if !hardcoded {
        base_config.insert(key.to_string(), buggy.to_string());
    }
    let mut scenario = scenario_shell(
        &spec.name,
        BugSignature::SlowdownBeyond { factor: 3.0 },
        base_config,
    );
    scenario.expected_normal_ms = 500;

    let alert = AlertDocument {
        alert: AnomalyAlert {
            alert_time_ms: alert_time,
            affected_process: "node1".into(),
            window: (alert_time - 8_000, alert_time + buggy + 2_000),
        },
        termination_time_ms: None,
        query_features: Some(vec![poly.query as f64]),
    };
    let manifest = Manifest {
        name: spec.name.clone(),
        category: if hardcoded { "hardcoded" } else { "too-large" }.into(),
        expected_bug_category: if hardcoded {
            BugCategory::HardCodedSuspected
        } else {
            BugCategory::MisusedTooLarge
        },
        root_cause_function: function.to_string(),
        variable: if hardcoded { None } else { Some(key.to_string()) },
        expected_strategy: None,
        expected_hang_type: None,
        config_key: key.to_string(),
        true_need_ms: need,
        buggy_value_ms: Some(buggy),
        expected_outcome: if hardcoded { Outcome::NotFixed } else { Outcome::Fixed },
        seed: spec.seed,
    };
    write_common(dir, poly.dataset(), alert, &scenario, &workload, &manifest)?;
    Ok(manifest)
}

fn generate_too_small(spec: &ScenarioSpec, dir: &Path) -> Result<Manifest, FaultlabError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (function, key) = SMALL_FUNCTIONS[spec.variant % SMALL_FUNCTIONS.len()];
    let poly = large_poly(&mut rng);
    let need = poly.need();
    let buggy = need / 2;

    let base_id = format!("base-{}", spec.name);
    // Healthy history: 6 transfers, all finishing under the limit; one near
    // miss keeps the duration-spike factor check quiet later.
    let mut baseline_durations: Vec<i64> = (0..5)
        .map(|_| (buggy as f64 * rng.gen_range(0.55..0.88)) as i64)
        .collect();
    baseline_durations.push((buggy as f64 * 0.90) as i64);
    write_trace(
        &dir.join("baseline.ndjson"),
        &base_id,
        misused_baseline(&mut rng, &base_id, function, &baseline_durations),
    )?;

    let run_id = format!("run-{}", spec.name);
    let alert_time = EPOCH + 10_000;
    let mut spans = Vec::new();
    for i in 0..31 {
        let d = buggy - rng.gen_range(0..buggy / 25);
        spans.push(span(&run_id, i, function, alert_time + i as i64 * 800, d));
    }
    for i in 0..3 {
        spans.push(span(&run_id, 200 + i, DECOY_FUNCTION, alert_time + i as i64 * 500, 150));
    }
    let window_end = alert_time + 31 * 800 + buggy + 2_000;
    write_trace(&dir.join("trace.ndjson"), &run_id, spans)?;

    let decoy_key = "zk.session.timeout";
    fs::write(
        dir.join("config.xml"),
        xml_config(&[(key, buggy), (decoy_key, buggy * 10), ("io.file.buffer.size", 4096)]),
    )?;
    let facts = format!(
        "facts v1\nVAR v_main\nVAR v_session\n\
         EDGE read-config {key} v_main\nEDGE read-config {decoy_key} v_session\n\
         USE {function} v_main\nUSE {function} v_session\n"
    );
    fs::write(dir.join("facts.txt"), facts)?;

    let workload = Script {
        scale: SCALE,
        steps: vec![
            Step::Sleep { ms: 100 },
            Step::Call {
                key: key.to_string(),
                default_ms: buggy,
                need_ms: need,
                retries: 3,
            },
            Step::Flush { name: "sink".into() },
        ],
    };
    let mut base_config = BTreeMap::new();
    base_config.insert(key.to_string(), buggy.to_string());
    let scenario = scenario_shell(
        &spec.name,
        BugSignature::RepeatedFailure { count: 3 },
        base_config,
    );

    let alert = AlertDocument {
        alert: AnomalyAlert {
            alert_time_ms: alert_time,
            affected_process: "node1".into(),
            window: (alert_time - 2_000, window_end),
        },
        termination_time_ms: None,
        query_features: Some(vec![poly.query as f64]),
    };
    let manifest = Manifest {
        name: spec.name.clone(),
        category: "too-small".into(),
        expected_bug_category: BugCategory::MisusedTooSmall,
        root_cause_function: function.to_string(),
        variable: Some(key.to_string()),
        expected_strategy: None,
        expected_hang_type: None,
        config_key: key.to_string(),
        true_need_ms: need,
        buggy_value_ms: Some(buggy),
        expected_outcome: Outcome::Fixed,
        seed: spec.seed,
    };
    write_common(dir, poly.dataset(), alert, &scenario, &workload, &manifest)?;
    Ok(manifest)
}

struct MissingShape {
    function: &'static str,
    file: &'static str,
    outer_function: &'static str,
    outer_file: &'static str,
    thread: &'static str,
    /// Lines of the root-cause frame in dump 1 and dump 2.
    lines: (u32, u32),
    config_key: &'static str,
    native_top: &'static str,
}

fn missing_dumps(shape: &MissingShape, capture_times: (i64, i64)) -> (StackDump, StackDump) {
    let build = |line: u32, capture: i64| StackDump {
        capture_time_ms: capture,
        threads: vec![
            ThreadStack {
                name: shape.thread.to_string(),
                state: "RUNNABLE".to_string(),
                frames: vec![
                    StackFrame {
                        function: shape.native_top.to_string(),
                        file: String::new(),
                        line: FrameLine::Native,
                    },
                    StackFrame {
                        function: shape.function.to_string(),
                        file: shape.file.to_string(),
                        line: FrameLine::Line(line),
                    },
                    StackFrame {
                        function: shape.outer_function.to_string(),
                        file: shape.outer_file.to_string(),
                        line: FrameLine::Line(52),
                    },
                ],
            },
            ThreadStack {
                name: "log-roller".to_string(),
                state: "RUNNABLE".to_string(),
                frames: vec![
                    StackFrame {
                        function: "java.io.FileOutputStream.writeBytes".to_string(),
                        file: String::new(),
                        line: FrameLine::Native,
                    },
                    StackFrame {
                        function: "app.util.LogRoller.flushLoop".to_string(),
                        file: "LogRoller.java".to_string(),
                        line: FrameLine::Line(88),
                    },
                ],
            },
        ],
    };
    (build(shape.lines.0, capture_times.0), build(shape.lines.1, capture_times.1))
}

fn generate_missing(
    spec: &ScenarioSpec,
    dir: &Path,
    shape: &MissingShape,
    workload_step: Step,
    catalog: Option<ApiCatalog>,
    expected_strategy: FixStrategy,
    expected_hang: HangType,
    expected_outcome: Outcome,
    poly: PolyModel,
) -> Result<Manifest, FaultlabError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let need = poly.need();

    let alert_time = EPOCH + 5_000;
    let termination = EPOCH + 35_000;

    let base_id = format!("base-{}", spec.name);
    let mut baseline = Vec::new();
    let mut t = EPOCH - 3_600_000;
    for i in 0..6 {
        let d = rng.gen_range(300..800);
        baseline.push(span(&base_id, i, shape.function, t, d));
        t += d + 500;
    }
    for i in 0..6 {
        // The log roller always runs about this long; it is busy, not hung.
        let d = rng.gen_range(30_500..31_500);
        baseline.push(span(&base_id, 100 + i, "app.util.LogRoller.flushLoop", t, d));
        t += 2_000;
    }
    write_trace(&dir.join("baseline.ndjson"), &base_id, baseline)?;

    let run_id = format!("run-{}", spec.name);
    let mut spans = vec![
        span(
            &run_id,
            0,
            shape.function,
            alert_time + rng.gen_range(-400..400),
            0,
        ),
        span(&run_id, 1, "app.util.LogRoller.flushLoop", EPOCH + 100, 0),
        span(&run_id, 2, DECOY_FUNCTION, alert_time - 2_000, 180),
    ];
    spans[0].end_ms = termination + rng.gen_range(-400..400);
    spans[1].end_ms = termination - rng.gen_range(0..300);
    write_trace(&dir.join("trace.ndjson"), &run_id, spans)?;

    let (dump1, dump2) = missing_dumps(shape, (EPOCH + 15_000, EPOCH + 25_000));
    fs::write(dir.join("dump1.txt"), crate::stack::render_thread_dump(&dump1))?;
    fs::write(dir.join("dump2.txt"), crate::stack::render_thread_dump(&dump2))?;

    fs::write(
        dir.join("config.xml"),
        xml_config(&[("app.heartbeat.interval", 5_000), ("io.file.buffer.size", 4096)]),
    )?;
    if let Some(catalog) = &catalog {
        fs::write(
            dir.join("catalog.json"),
            serde_json::to_string_pretty(catalog).expect("catalog serializes"),
        )?;
    }

    let workload = Script {
        scale: SCALE,
        steps: vec![workload_step, Step::Flush { name: "sink".into() }],
    };
    let mut scenario = scenario_shell(
        &spec.name,
        BugSignature::HangBeyond { ms: 1_500 },
        BTreeMap::new(),
    );
    scenario.expected_normal_ms = 600;
    scenario.budget_ms = 20_000;

    let alert = AlertDocument {
        alert: AnomalyAlert {
            alert_time_ms: alert_time,
            affected_process: "node1".into(),
            window: (EPOCH, termination + 1_000),
        },
        termination_time_ms: Some(termination),
        query_features: Some(vec![poly.query as f64]),
    };
    let manifest = Manifest {
        name: spec.name.clone(),
        category: if matches!(expected_hang, HangType::InfiniteLoop) {
            "missing-loop"
        } else {
            "missing-blocking"
        }
        .into(),
        expected_bug_category: BugCategory::MissingTimeout,
        root_cause_function: shape.function.to_string(),
        variable: None,
        expected_strategy: Some(expected_strategy),
        expected_hang_type: Some(expected_hang),
        config_key: shape.config_key.to_string(),
        true_need_ms: need,
        buggy_value_ms: None,
        expected_outcome,
        seed: spec.seed,
    };
    write_common(dir, poly.dataset(), alert, &scenario, &workload, &manifest)?;
    Ok(manifest)
}

fn generate_missing_loop(spec: &ScenarioSpec, dir: &Path) -> Result<Manifest, FaultlabError> {
    let mut seed_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed);
    let poly = small_poly(&mut seed_rng);
    let (shape, on_timeout, outcome) = match spec.variant % 2 {
        0 => (
            MissingShape {
                function: "app.yarn.client.YarnClient.poll",
                file: "YarnClient.java",
                outer_function: "app.yarn.client.YarnClient.submitApplication",
                outer_file: "YarnClient.java",
                thread: "AM-Launcher",
                lines: (71, 75),
                config_key: "poll.timeout",
                native_top: "java.lang.Thread.sleep",
            },
            OnTimeout::Throw,
            Outcome::Fixed,
        ),
        _ => (
            // The drain loop's timeout path aborts the run before the final
            // flush, so the fix escapes the hang but a test still fails.
            MissingShape {
                function: "app.flume.sink.BucketWriter.drain",
                file: "BucketWriter.java",
                outer_function: "app.flume.sink.HDFSEventSink.process",
                outer_file: "HDFSEventSink.java",
                thread: "SinkRunner-PollingRunner",
                lines: (138, 142),
                config_key: "drain.timeout",
                native_top: "java.lang.Thread.sleep",
            },
            OnTimeout::Abort,
            Outcome::PartialFix,
        ),
    };
    let step = Step::Loop {
        key: shape.config_key.to_string(),
        step_ms: 100,
        on_timeout,
    };
    generate_missing(
        spec,
        dir,
        &shape,
        step,
        None,
        FixStrategy::LoopGuard,
        HangType::InfiniteLoop,
        outcome,
        poly,
    )
}

fn generate_missing_blocking(spec: &ScenarioSpec, dir: &Path) -> Result<Manifest, FaultlabError> {
    let mut seed_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xb10c);
    let poly = small_poly(&mut seed_rng);
    let need = poly.need();
    let (shape, catalog, strategy) = match spec.variant % 3 {
        0 => (
            MissingShape {
                function: "app.net.ChannelClient.connect",
                file: "ChannelClient.java",
                outer_function: "app.net.TransferWorker.run",
                outer_file: "TransferWorker.java",
                thread: "transfer-worker",
                lines: (203, 203),
                config_key: "connect.timeout",
                native_top: "java.net.PlainSocketImpl.socketConnect",
            },
            ApiCatalog {
                classes: [(
                    "app.net.ChannelClient".to_string(),
                    vec![
                        method("connect", &[("endpoint", "SocketAddress")], &["IOException"]),
                        method(
                            "connect",
                            &[("endpoint", "SocketAddress"), ("timeout", "int")],
                            &["IOException"],
                        ),
                        method("close", &[], &[]),
                    ],
                )]
                .into_iter()
                .collect(),
            },
            FixStrategy::ReplaceWithOverload,
        ),
        1 => (
            MissingShape {
                function: "app.http.NotifierConnection.open",
                file: "NotifierConnection.java",
                outer_function: "app.http.JobEndNotifier.notifyOnce",
                outer_file: "JobEndNotifier.java",
                thread: "JobEnd-Notifier",
                lines: (97, 97),
                config_key: "open.timeout",
                native_top: "java.net.SocketInputStream.socketRead0",
            },
            ApiCatalog {
                classes: [(
                    "app.http.NotifierConnection".to_string(),
                    vec![
                        method("open", &[], &["IOException"]),
                        method("setConnectTimeout", &[("timeout", "int")], &[]),
                        method("setReadTimeout", &[("timeout", "int")], &[]),
                        method("disconnect", &[], &[]),
                    ],
                )]
                .into_iter()
                .collect(),
            },
            FixStrategy::InsertSetters,
        ),
        _ => (
            MissingShape {
                function: "app.hdfs.EditLogChannel.rollEditLog",
                file: "EditLogChannel.java",
                outer_function: "app.hdfs.StandbyCheckpointer.doWork",
                outer_file: "StandbyCheckpointer.java",
                thread: "Standby-Checkpointer",
                lines: (310, 310),
                config_key: "rolleditlog.timeout",
                native_top: "java.net.SocketInputStream.socketRead0",
            },
            ApiCatalog {
                classes: [(
                    "app.hdfs.EditLogChannel".to_string(),
                    vec![method("rollEditLog", &[], &["IOException"])],
                )]
                .into_iter()
                .collect(),
            },
            FixStrategy::AsyncWrapper,
        ),
    };
    let step = Step::Block {
        key: shape.config_key.to_string(),
        need_ms: need.max(1_000),
    };
    generate_missing(
        spec,
        dir,
        &shape,
        step,
        Some(catalog),
        strategy,
        HangType::BlockingCall,
        Outcome::Fixed,
        poly,
    )
}

/// Generates one bundle and returns its ground-truth manifest.
pub fn generate(spec: &ScenarioSpec, dir: &Path) -> Result<Manifest, FaultlabError> {
    fs::create_dir_all(dir)?;
    match spec.category {
        ScenarioCategory::TooLarge => generate_too_large(spec, dir, false),
        ScenarioCategory::Hardcoded => generate_too_large(spec, dir, true),
        ScenarioCategory::TooSmall => generate_too_small(spec, dir),
        ScenarioCategory::MissingLoop => generate_missing_loop(spec, dir),
        ScenarioCategory::MissingBlocking => generate_missing_blocking(spec, dir),
    }
}
