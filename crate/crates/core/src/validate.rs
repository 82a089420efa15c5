//! Patch validation: re-run the triggering workload with the patch applied,
//! then run the scenario's test suite, and map the pair of outcomes onto a
//! verdict.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Read as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ValidateError {
    #[error("failed to launch {what}: {cause}")]
    LaunchFailure { what: String, cause: String },
    #[error("workload exceeded the {0} ms budget without matching the signature")]
    BudgetExceeded(u64),
    #[error("malformed scenario: {0}")]
    MalformedScenario(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// How the bug announces itself when the workload runs unpatched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BugSignature {
    /// No forward progress for this long while the process stays alive.
    HangBeyond { ms: u64 },
    /// At least this many FAILURE lines over the run.
    RepeatedFailure { count: usize },
    /// Wall time beyond factor x the expected normal runtime.
    SlowdownBeyond { factor: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    /// Command and arguments; tokens may use the $SELF, $BUNDLE, $DIR and
    /// $CONFIG placeholders.
    pub workload: Vec<String>,
    pub signature: BugSignature,
    /// Test suite commands, same placeholder language. Suites report one
    /// line per test, `PASS <name>` or `FAIL <name>`.
    pub tests: Vec<Vec<String>>,
    /// Configuration written into the sandbox before launch; the patch hook
    /// overrides/adds its key here.
    pub base_config: BTreeMap<String, String>,
    /// File name (within the sandbox) the config is written to.
    pub config_file: String,
    pub budget_ms: u64,
    /// Unpatched-but-healthy runtime; slowdown baseline.
    pub expected_normal_ms: u64,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ValidateError> {
        let scenario: Scenario = serde_json::from_str(text)
            .map_err(|e| ValidateError::MalformedScenario(e.to_string()))?;
        scenario.check()?;
        Ok(scenario)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    fn check(&self) -> Result<(), ValidateError> {
        if self.budget_ms <= self.expected_normal_ms {
            return Err(ValidateError::MalformedScenario(
                "budget must exceed the expected normal runtime".into(),
            ));
        }
        match &self.signature {
            BugSignature::HangBeyond { ms } => {
                if *ms == 0 {
                    return Err(ValidateError::MalformedScenario("HangBeyond needs ms > 0".into()));
                }
                if *ms >= self.budget_ms {
                    return Err(ValidateError::MalformedScenario(
                        "budget must exceed the hang threshold".into(),
                    ));
                }
            }
            BugSignature::RepeatedFailure { count } if *count == 0 => {
                return Err(ValidateError::MalformedScenario(
                    "RepeatedFailure needs count > 0".into(),
                ));
            }
            BugSignature::SlowdownBeyond { factor } if *factor <= 1.0 => {
                return Err(ValidateError::MalformedScenario(
                    "SlowdownBeyond needs factor > 1".into(),
                ));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Paths substituted into scenario command placeholders.
#[derive(Debug, Clone)]
pub struct RunContext {
    /// Program implementing the workload/testsuite runtime ($SELF).
    pub self_path: PathBuf,
    /// Directory of the generated bundle ($BUNDLE).
    pub bundle_dir: PathBuf,
}

/// The injected fix: a config key set to a concrete value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedPatch {
    pub config_key: String,
    pub value_ms: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub signature_matched: bool,
    pub wall_time_ms: u64,
    /// None when the process had to be killed.
    pub exit_status: Option<i32>,
    pub log: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub name: String,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Fixed,
    PartialFix,
    NotFixed,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub outcome: Outcome,
    pub bug_reproduced: bool,
    pub tests_passed: bool,
    pub test_results: Vec<TestResult>,
    pub evidence: Vec<String>,
}

/// The verdict table: Fixed iff the bug is gone and the tests pass,
/// PartialFix iff the bug is gone but a test fails, NotFixed iff the bug
/// still reproduces.
pub fn map_outcome(bug_reproduced: bool, tests_passed: bool) -> Outcome {
    match (bug_reproduced, tests_passed) {
        (true, _) => Outcome::NotFixed,
        (false, true) => Outcome::Fixed,
        (false, false) => Outcome::PartialFix,
    }
}

fn substitute(token: &str, ctx: &RunContext, sandbox: &Path, config_path: &Path) -> String {
    token
        .replace("$SELF", &ctx.self_path.to_string_lossy())
        .replace("$BUNDLE", &ctx.bundle_dir.to_string_lossy())
        .replace("$CONFIG", &config_path.to_string_lossy())
        .replace("$DIR", &sandbox.to_string_lossy())
}

fn write_config(
    scenario: &Scenario,
    patch: Option<&AppliedPatch>,
    sandbox: &Path,
) -> Result<PathBuf, ValidateError> {
    let mut entries = scenario.base_config.clone();
    if let Some(p) = patch {
        entries.insert(p.config_key.clone(), p.value_ms.to_string());
    }
    let mut text = String::new();
    for (k, v) in &entries {
        let _ = writeln!(text, "{k}={v}");
    }
    let path = sandbox.join(&scenario.config_file);
    fs::write(&path, text)?;
    Ok(path)
}

fn progress_count(output: &str) -> usize {
    output
        .lines()
        .filter(|l| l.starts_with("STEP ") && l.ends_with(" DONE"))
        .count()
}

fn failure_count(output: &str) -> usize {
    output.lines().filter(|l| l.contains("FAILURE")).count()
}

/// Runs the workload under the signature monitors, applying the patch (via
/// the scenario's config hook) first when given.
pub fn reproduce(
    scenario: &Scenario,
    patch: Option<&AppliedPatch>,
    ctx: &RunContext,
    sandbox: &Path,
) -> Result<RunRecord, ValidateError> {
    let config_path = write_config(scenario, patch, sandbox)?;
    if scenario.workload.is_empty() {
        return Ok(RunRecord {
            signature_matched: false,
            wall_time_ms: 0,
            exit_status: Some(0),
            log: vec!["zero-length workload, nothing to run".into()],
        });
    }
    let argv: Vec<String> = scenario
        .workload
        .iter()
        .map(|t| substitute(t, ctx, sandbox, &config_path))
        .collect();
    let out_path = sandbox.join("workload.out");
    let out_file = fs::File::create(&out_path)?;
    let err_file = out_file.try_clone()?;
    let started = Instant::now();
    let mut child = Command::new(&argv[0])
        .args(&argv[1..])
        .current_dir(sandbox)
        .stdin(Stdio::null())
        .stdout(Stdio::from(out_file))
        .stderr(Stdio::from(err_file))
        .spawn()
        .map_err(|e| ValidateError::LaunchFailure {
            what: format!("workload {:?}", argv[0]),
            cause: e.to_string(),
        })?;

    let mut log = Vec::new();
    let mut last_progress = Instant::now();
    let mut last_steps = 0usize;
    let mut killed_for_hang = false;
    let exit_status = loop {
        if let Some(status) = child.try_wait()? {
            break Some(status);
        }
        let output = fs::read_to_string(&out_path).unwrap_or_default();
        let steps = progress_count(&output);
        if steps > last_steps {
            last_steps = steps;
            last_progress = Instant::now();
        }
        if let BugSignature::HangBeyond { ms } = scenario.signature {
            if last_progress.elapsed() >= Duration::from_millis(ms) {
                let _ = child.kill();
                let _ = child.wait();
                killed_for_hang = true;
                log.push(format!("no progress for {ms} ms, process killed"));
                break None;
            }
        }
        if started.elapsed() >= Duration::from_millis(scenario.budget_ms) {
            let _ = child.kill();
            let _ = child.wait();
            return Err(ValidateError::BudgetExceeded(scenario.budget_ms));
        }
        std::thread::sleep(Duration::from_millis(10));
    };
    let wall_time_ms = started.elapsed().as_millis() as u64;
    let output = fs::read_to_string(&out_path).unwrap_or_default();

    let signature_matched = match scenario.signature {
        BugSignature::HangBeyond { .. } => killed_for_hang,
        BugSignature::RepeatedFailure { count } => {
            let failures = failure_count(&output);
            log.push(format!("{failures} failure line(s) observed"));
            failures >= count
        }
        BugSignature::SlowdownBeyond { factor } => {
            let bound = factor * scenario.expected_normal_ms as f64;
            log.push(format!("wall time {wall_time_ms} ms vs bound {bound:.0} ms"));
            wall_time_ms as f64 > bound
        }
    };
    Ok(RunRecord {
        signature_matched,
        wall_time_ms,
        exit_status: exit_status.and_then(|s| s.code()),
        log,
    })
}

/// Runs the suite; overall pass requires every command to exit 0.
pub fn run_tests(
    scenario: &Scenario,
    patch: Option<&AppliedPatch>,
    ctx: &RunContext,
    sandbox: &Path,
) -> Result<(bool, Vec<TestResult>, Vec<String>), ValidateError> {
    let config_path = write_config(scenario, patch, sandbox)?;
    let mut evidence = Vec::new();
    if scenario.tests.is_empty() {
        evidence.push("empty test suite, vacuous pass".into());
        return Ok((true, Vec::new(), evidence));
    }
    let mut all_passed = true;
    let mut results = Vec::new();
    for command in &scenario.tests {
        let argv: Vec<String> = command
            .iter()
            .map(|t| substitute(t, ctx, sandbox, &config_path))
            .collect();
        let mut child = Command::new(&argv[0])
            .args(&argv[1..])
            .current_dir(sandbox)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| ValidateError::LaunchFailure {
                what: format!("test suite {:?}", argv[0]),
                cause: e.to_string(),
            })?;
        let mut output = String::new();
        if let Some(stdout) = child.stdout.as_mut() {
            stdout.read_to_string(&mut output)?;
        }
        let status = child.wait()?;
        for line in output.lines() {
            if let Some(name) = line.strip_prefix("PASS ") {
                results.push(TestResult { name: name.trim().into(), passed: true });
            } else if let Some(name) = line.strip_prefix("FAIL ") {
                results.push(TestResult { name: name.trim().into(), passed: false });
                evidence.push(format!("test failed: {}", name.trim()));
            }
        }
        if !status.success() {
            all_passed = false;
        }
    }
    Ok((all_passed, results, evidence))
}

/// Full validation in a fresh sandbox. Launch failures surface as an
/// Inconclusive verdict, not an error.
pub fn validate(
    scenario: &Scenario,
    patch: Option<&AppliedPatch>,
    ctx: &RunContext,
) -> Result<Verdict, ValidateError> {
    let sandbox = tempfile::tempdir()?;
    let run = match reproduce(scenario, patch, ctx, sandbox.path()) {
        Ok(run) => run,
        Err(ValidateError::LaunchFailure { what, cause }) => {
            return Ok(Verdict {
                outcome: Outcome::Inconclusive,
                bug_reproduced: false,
                tests_passed: false,
                test_results: Vec::new(),
                evidence: vec![format!("launch failure ({what}): {cause}")],
            });
        }
        Err(e) => return Err(e),
    };
    let mut evidence = run.log.clone();
    evidence.push(format!(
        "workload wall time {} ms, signature {}",
        run.wall_time_ms,
        if run.signature_matched { "matched" } else { "not matched" }
    ));
    let (tests_passed, test_results, mut test_evidence) =
        match run_tests(scenario, patch, ctx, sandbox.path()) {
            Ok(r) => r,
            Err(ValidateError::LaunchFailure { what, cause }) => {
                evidence.push(format!("launch failure ({what}): {cause}"));
                return Ok(Verdict {
                    outcome: Outcome::Inconclusive,
                    bug_reproduced: run.signature_matched,
                    tests_passed: false,
                    test_results: Vec::new(),
                    evidence,
                });
            }
            Err(e) => return Err(e),
        };
    evidence.append(&mut test_evidence);
    Ok(Verdict {
        outcome: map_outcome(run.signature_matched, tests_passed),
        bug_reproduced: run.signature_matched,
        tests_passed,
        test_results,
        evidence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_table_exhaustive() {
        assert_eq!(map_outcome(false, true), Outcome::Fixed);
        assert_eq!(map_outcome(false, false), Outcome::PartialFix);
        assert_eq!(map_outcome(true, true), Outcome::NotFixed);
        assert_eq!(map_outcome(true, false), Outcome::NotFixed);
    }

    fn scenario(signature: BugSignature) -> Scenario {
        Scenario {
            name: "t".into(),
            workload: vec![],
            signature,
            tests: vec![],
            base_config: BTreeMap::new(),
            config_file: "injected.properties".into(),
            budget_ms: 10_000,
            expected_normal_ms: 100,
        }
    }

    fn ctx() -> RunContext {
        RunContext {
            self_path: PathBuf::from("/bin/true"),
            bundle_dir: PathBuf::from("."),
        }
    }

    #[test]
    fn zero_length_workload_matches_nothing() {
        let s = scenario(BugSignature::HangBeyond { ms: 500 });
        let dir = tempfile::tempdir().unwrap();
        let run = reproduce(&s, None, &ctx(), dir.path()).unwrap();
        assert!(!run.signature_matched);
        assert_eq!(run.exit_status, Some(0));
    }

    #[test]
    fn empty_suite_is_vacuous_pass() {
        let s = scenario(BugSignature::HangBeyond { ms: 500 });
        let dir = tempfile::tempdir().unwrap();
        let (passed, results, evidence) = run_tests(&s, None, &ctx(), dir.path()).unwrap();
        assert!(passed);
        assert!(results.is_empty());
        assert!(evidence[0].contains("vacuous"));
    }

    #[test]
    fn launch_failure_is_inconclusive() {
        let mut s = scenario(BugSignature::HangBeyond { ms: 500 });
        s.workload = vec!["/nonexistent/definitely-not-here".into()];
        let verdict = validate(&s, None, &ctx()).unwrap();
        assert_eq!(verdict.outcome, Outcome::Inconclusive);
    }

    #[test]
    fn hang_detected_and_killed() {
        let mut s = scenario(BugSignature::HangBeyond { ms: 300 });
        s.workload = vec!["/bin/sleep".into(), "30".into()];
        s.budget_ms = 5_000;
        let dir = tempfile::tempdir().unwrap();
        let run = reproduce(&s, None, &ctx(), dir.path()).unwrap();
        assert!(run.signature_matched);
        assert!(run.exit_status.is_none());
        assert!(run.wall_time_ms < 5_000);
    }

    #[test]
    fn quick_exit_avoids_hang_signature() {
        let mut s = scenario(BugSignature::HangBeyond { ms: 2_000 });
        s.workload = vec!["/bin/true".into()];
        let dir = tempfile::tempdir().unwrap();
        let run = reproduce(&s, None, &ctx(), dir.path()).unwrap();
        assert!(!run.signature_matched);
    }

    #[test]
    fn repeated_failure_counted_from_output() {
        let mut s = scenario(BugSignature::RepeatedFailure { count: 3 });
        s.workload = vec![
            "/bin/sh".into(),
            "-c".into(),
            "for i in 1 2 3; do echo RETRY FAILURE $i; done".into(),
        ];
        let dir = tempfile::tempdir().unwrap();
        let run = reproduce(&s, None, &ctx(), dir.path()).unwrap();
        assert!(run.signature_matched);
    }

    #[test]
    fn patch_hook_injects_config() {
        let mut s = scenario(BugSignature::RepeatedFailure { count: 1 });
        s.base_config.insert("a.timeout".into(), "60000".into());
        s.workload = vec!["/bin/cat".into(), "$CONFIG".into()];
        let dir = tempfile::tempdir().unwrap();
        let patch = AppliedPatch { config_key: "a.timeout".into(), value_ms: 120_000 };
        reproduce(&s, Some(&patch), &ctx(), dir.path()).unwrap();
        let written = fs::read_to_string(dir.path().join("injected.properties")).unwrap();
        assert_eq!(written.trim(), "a.timeout=120000");
    }

    #[test]
    fn test_lines_parsed() {
        let mut s = scenario(BugSignature::HangBeyond { ms: 500 });
        s.tests = vec![vec![
            "/bin/sh".into(),
            "-c".into(),
            "echo PASS alpha; echo FAIL beta; exit 1".into(),
        ]];
        let dir = tempfile::tempdir().unwrap();
        let (passed, results, _) = run_tests(&s, None, &ctx(), dir.path()).unwrap();
        assert!(!passed);
        assert_eq!(results.len(), 2);
        assert!(results[0].passed);
        assert!(!results[1].passed);
    }

    #[test]
    fn scenario_sanity_checks() {
        let mut s = scenario(BugSignature::HangBeyond { ms: 20_000 });
        assert!(s.check().is_err(), "hang threshold above budget");
        s.signature = BugSignature::SlowdownBeyond { factor: 0.5 };
        assert!(s.check().is_err());
        s.signature = BugSignature::RepeatedFailure { count: 2 };
        assert!(s.check().is_ok());
        let json = s.to_json();
        assert_eq!(Scenario::from_json(&json).unwrap(), s);
    }

    #[test]
    fn repeat_validation_is_stable() {
        let mut s = scenario(BugSignature::RepeatedFailure { count: 2 });
        s.workload = vec!["/bin/sh".into(), "-c".into(), "echo FAILURE; echo FAILURE".into()];
        let c = ctx();
        let first = validate(&s, None, &c).unwrap();
        let second = validate(&s, None, &c).unwrap();
        assert_eq!(first.outcome, second.outcome);
        assert_eq!(first.outcome, Outcome::NotFixed);
    }
}
