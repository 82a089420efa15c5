//! The faultlab workload: a tiny interpreter for scenario scripts.
//!
//! Scripts model one process of a distributed job. Timeout decisions are
//! logical (configured value vs. the operation's true need, in logical
//! milliseconds) while sleeps are scaled down so a whole scenario runs in
//! seconds. The interpreter prints heartbeats while "busy" and a
//! `STEP <n> DONE` line after each completed step; hang detection keys on
//! the latter.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("script line {0}: {1}")]
    Malformed(usize, String),
    #[error("missing script header")]
    MissingHeader,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OnTimeout {
    /// Raise a timeout error and continue with the next step.
    Throw,
    /// Stop the whole script (models an error path that skips later work).
    Abort,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Step {
    /// Plain work taking a fixed logical time.
    Sleep { ms: i64 },
    /// An operation bounded by a timeout: succeeds iff the configured value
    /// covers the true need, otherwise retries and gives up.
    Call { key: String, default_ms: i64, need_ms: i64, retries: u32 },
    /// A call against a dead dependency: waits the full configured timeout
    /// before failing over (the too-large shape).
    Wait { key: String, default_ms: i64, recover_ms: i64 },
    /// A polling loop with no exit condition; a configured positive timeout
    /// is the only way out.
    Loop { key: String, step_ms: i64, on_timeout: OnTimeout },
    /// A blocking call with no timeout machinery; a configured positive
    /// value interrupts it and the fallback succeeds.
    Block { key: String, need_ms: i64 },
    /// Writes a completion artifact (models a final flush/commit).
    Flush { name: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Script {
    /// Logical-to-real divisor for sleeps.
    pub scale: i64,
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    /// Honest execution; loops without a bound really spin.
    Workload,
    /// Test-suite execution: unbounded busy states fail after this many
    /// loop iterations instead of spinning forever.
    Bounded { max_iterations: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptOutcome {
    /// Every step ran to completion.
    pub completed: bool,
    pub steps_completed: usize,
    pub aborted: Option<String>,
    pub exit_code: i32,
}

const HEADER: &str = "script v1";
/// Upper bound on any single real sleep.
const MAX_REAL_SLEEP_MS: u64 = 2000;

pub fn parse_script(text: &str) -> Result<Script, ScriptError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == HEADER => {}
        _ => return Err(ScriptError::MissingHeader),
    }
    let mut scale = 100i64;
    let mut steps = Vec::new();
    for (idx, raw) in lines {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let verb = parts.next().expect("non-empty line");
        let kv: BTreeMap<&str, &str> = parts
            .filter_map(|p| p.split_once('='))
            .collect();
        let get = |k: &str| -> Result<&str, ScriptError> {
            kv.get(k)
                .copied()
                .ok_or_else(|| ScriptError::Malformed(idx + 1, format!("missing {k}=")))
        };
        let get_i64 = |k: &str| -> Result<i64, ScriptError> {
            get(k)?
                .parse()
                .map_err(|_| ScriptError::Malformed(idx + 1, format!("bad integer for {k}")))
        };
        match verb {
            "scale" => {
                scale = line
                    .split_whitespace()
                    .nth(1)
                    .and_then(|v| v.parse().ok())
                    .filter(|v| *v > 0)
                    .ok_or_else(|| ScriptError::Malformed(idx + 1, "bad scale".into()))?;
            }
            "sleep" => {
                let ms = line
                    .split_whitespace()
                    .nth(1)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| ScriptError::Malformed(idx + 1, "bad sleep".into()))?;
                steps.push(Step::Sleep { ms });
            }
            "call" => steps.push(Step::Call {
                key: get("key")?.to_string(),
                default_ms: get_i64("default").unwrap_or(0),
                need_ms: get_i64("need")?,
                retries: get_i64("retries")? as u32,
            }),
            "wait" => steps.push(Step::Wait {
                key: get("key")?.to_string(),
                default_ms: get_i64("default").unwrap_or(0),
                recover_ms: get_i64("recover")?,
            }),
            "loop" => steps.push(Step::Loop {
                key: get("key")?.to_string(),
                step_ms: get_i64("step")?,
                on_timeout: match get("on_timeout")? {
                    "throw" => OnTimeout::Throw,
                    "abort" => OnTimeout::Abort,
                    other => {
                        return Err(ScriptError::Malformed(
                            idx + 1,
                            format!("unknown on_timeout {other}"),
                        ))
                    }
                },
            }),
            "block" => steps.push(Step::Block {
                key: get("key")?.to_string(),
                need_ms: get_i64("need")?,
            }),
            "flush" => steps.push(Step::Flush {
                name: get("name")?.to_string(),
            }),
            other => {
                return Err(ScriptError::Malformed(idx + 1, format!("unknown step {other}")))
            }
        }
    }
    Ok(Script { scale, steps })
}

pub fn render_script(script: &Script) -> String {
    let mut out = format!("{HEADER}\nscale {}\n", script.scale);
    for step in &script.steps {
        match step {
            Step::Sleep { ms } => out.push_str(&format!("sleep {ms}\n")),
            Step::Call { key, default_ms, need_ms, retries } => out.push_str(&format!(
                "call key={key} default={default_ms} need={need_ms} retries={retries}\n"
            )),
            Step::Wait { key, default_ms, recover_ms } => out.push_str(&format!(
                "wait key={key} default={default_ms} recover={recover_ms}\n"
            )),
            Step::Loop { key, step_ms, on_timeout } => out.push_str(&format!(
                "loop key={key} step={step_ms} on_timeout={}\n",
                match on_timeout {
                    OnTimeout::Throw => "throw",
                    OnTimeout::Abort => "abort",
                }
            )),
            Step::Block { key, need_ms } => {
                out.push_str(&format!("block key={key} need={need_ms}\n"))
            }
            Step::Flush { name } => out.push_str(&format!("flush name={name}\n")),
        }
    }
    out
}

fn real_sleep(logical_ms: i64, scale: i64) {
    let real = ((logical_ms.max(0)) / scale.max(1)) as u64;
    std::thread::sleep(Duration::from_millis(real.min(MAX_REAL_SLEEP_MS)));
}

struct Emitter<'a> {
    out: &'a mut dyn Write,
}

impl Emitter<'_> {
    fn line(&mut self, text: &str) {
        let _ = writeln!(self.out, "{text}");
        let _ = self.out.flush();
    }
}

/// Executes the script against the injected configuration.
///
/// `config` maps key to logical milliseconds (absent keys mean no timeout
/// configured). Flush artifacts land in the current working directory.
pub fn run_script(
    script: &Script,
    config: &BTreeMap<String, i64>,
    mode: RunMode,
    out: &mut dyn Write,
) -> ScriptOutcome {
    let mut emit = Emitter { out };
    let mut completed_steps = 0usize;
    for (n, step) in script.steps.iter().enumerate() {
        let n = n + 1;
        match step {
            Step::Sleep { ms } => {
                real_sleep(*ms, script.scale);
            }
            Step::Call { key, default_ms, need_ms, retries } => {
                let timeout = config.get(key).copied().unwrap_or(*default_ms);
                if timeout == 0 || timeout >= *need_ms {
                    // Unbounded or sufficient: the operation completes.
                    real_sleep(*need_ms, script.scale);
                    emit.line(&format!("call {key} completed in {need_ms} ms"));
                } else {
                    for attempt in 1..=*retries {
                        real_sleep(timeout, script.scale);
                        emit.line(&format!(
                            "RETRY FAILURE attempt {attempt}: {key}={timeout} ms expired before {need_ms} ms"
                        ));
                    }
                    emit.line(&format!("call {key} gave up after {retries} attempts"));
                    return ScriptOutcome {
                        completed: false,
                        steps_completed: completed_steps,
                        aborted: Some(format!("call {key} exhausted retries")),
                        exit_code: 1,
                    };
                }
            }
            Step::Wait { key, default_ms, recover_ms } => {
                let timeout = config.get(key).copied().unwrap_or(*default_ms);
                // The primary is dead; nothing happens until the timeout.
                real_sleep(timeout, script.scale);
                emit.line(&format!("wait {key} expired after {timeout} ms, failing over"));
                real_sleep(*recover_ms, script.scale);
                emit.line(&format!("failover completed in {recover_ms} ms"));
            }
            Step::Loop { key, step_ms, on_timeout } => {
                let timeout = config.get(key).copied().unwrap_or(0);
                let mut elapsed = 0i64;
                let mut iterations = 0u64;
                loop {
                    real_sleep(*step_ms, script.scale);
                    elapsed += step_ms;
                    iterations += 1;
                    if iterations % 5 == 0 {
                        emit.line(&format!("HEARTBEAT loop {key} elapsed {elapsed} ms"));
                    }
                    if timeout > 0 && elapsed >= timeout {
                        match on_timeout {
                            OnTimeout::Throw => {
                                emit.line(&format!(
                                    "TimeoutException: {key} bounded the loop at {elapsed} ms"
                                ));
                                break;
                            }
                            OnTimeout::Abort => {
                                emit.line(&format!(
                                    "loop {key} timed out at {elapsed} ms, aborting run"
                                ));
                                return ScriptOutcome {
                                    completed: false,
                                    steps_completed: completed_steps,
                                    aborted: Some(format!("loop {key} abort path")),
                                    exit_code: 0,
                                };
                            }
                        }
                    }
                    if let RunMode::Bounded { max_iterations } = mode {
                        if iterations >= max_iterations {
                            emit.line(&format!(
                                "loop {key} still spinning after {iterations} iterations"
                            ));
                            return ScriptOutcome {
                                completed: false,
                                steps_completed: completed_steps,
                                aborted: Some(format!("loop {key} never terminated")),
                                exit_code: 1,
                            };
                        }
                    }
                }
            }
            Step::Block { key, need_ms } => {
                let timeout = config.get(key).copied().unwrap_or(0);
                if timeout > 0 {
                    real_sleep(timeout.min(*need_ms), script.scale);
                    if timeout < *need_ms {
                        emit.line(&format!(
                            "block {key} interrupted after {timeout} ms, fallback succeeded"
                        ));
                    } else {
                        emit.line(&format!("block {key} returned within {need_ms} ms"));
                    }
                } else {
                    // No bound: the call never returns.
                    let mut iterations = 0u64;
                    loop {
                        real_sleep(*need_ms, script.scale);
                        iterations += 1;
                        emit.line(&format!("HEARTBEAT blocked in {key} ({iterations})"));
                        if let RunMode::Bounded { max_iterations } = mode {
                            if iterations >= max_iterations {
                                emit.line(&format!("block {key} never returned"));
                                return ScriptOutcome {
                                    completed: false,
                                    steps_completed: completed_steps,
                                    aborted: Some(format!("block {key} never returned")),
                                    exit_code: 1,
                                };
                            }
                        }
                    }
                }
            }
            Step::Flush { name } => {
                let path = format!("{name}.ok");
                if std::fs::write(&path, "flushed\n").is_err() {
                    emit.line(&format!("flush {name} failed"));
                    return ScriptOutcome {
                        completed: false,
                        steps_completed: completed_steps,
                        aborted: Some(format!("flush {name} io failure")),
                        exit_code: 1,
                    };
                }
                emit.line(&format!("flush {name} written"));
            }
        }
        completed_steps += 1;
        emit.line(&format!("STEP {n} DONE"));
    }
    ScriptOutcome {
        completed: true,
        steps_completed: completed_steps,
        aborted: None,
        exit_code: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(pairs: &[(&str, i64)]) -> BTreeMap<String, i64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn fast(script_body: &str) -> Script {
        parse_script(&format!("script v1\nscale 10000\n{script_body}")).unwrap()
    }

    #[test]
    fn parse_render_round_trip() {
        let text = "script v1\nscale 100\nsleep 200\ncall key=a.timeout default=0 need=1200 retries=3\nwait key=b.timeout default=600000 recover=500\nloop key=poll.timeout step=100 on_timeout=throw\nblock key=connect.timeout need=1500\nflush name=sink\n";
        let script = parse_script(text).unwrap();
        assert_eq!(render_script(&script), text);
        assert_eq!(script.steps.len(), 6);
    }

    #[test]
    fn header_required() {
        assert!(matches!(parse_script("sleep 5\n"), Err(ScriptError::MissingHeader)));
    }

    #[test]
    fn unknown_verb_rejected() {
        assert!(parse_script("script v1\nfrobnicate x=1\n").is_err());
    }

    #[test]
    fn sufficient_timeout_completes_call() {
        let script = fast("call key=k need=1000 retries=3");
        let mut out = Vec::new();
        let outcome = run_script(&script, &cfg(&[("k", 1000)]), RunMode::Workload, &mut out);
        assert!(outcome.completed);
        assert_eq!(outcome.exit_code, 0);
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("STEP 1 DONE"));
    }

    #[test]
    fn short_timeout_exhausts_retries() {
        let script = fast("call key=k need=1000 retries=3");
        let mut out = Vec::new();
        let outcome = run_script(&script, &cfg(&[("k", 500)]), RunMode::Workload, &mut out);
        assert!(!outcome.completed);
        assert_eq!(outcome.exit_code, 1);
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.matches("RETRY FAILURE").count(), 3);
    }

    #[test]
    fn loop_without_config_is_bounded_only_in_test_mode() {
        let script = fast("loop key=poll.timeout step=100 on_timeout=throw");
        let mut out = Vec::new();
        let outcome = run_script(
            &script,
            &cfg(&[]),
            RunMode::Bounded { max_iterations: 20 },
            &mut out,
        );
        assert!(!outcome.completed);
        assert!(outcome.aborted.unwrap().contains("never terminated"));
    }

    #[test]
    fn configured_guard_breaks_loop() {
        let script = fast("loop key=poll.timeout step=100 on_timeout=throw\nsleep 10");
        let mut out = Vec::new();
        let outcome = run_script(&script, &cfg(&[("poll.timeout", 1130)]), RunMode::Workload, &mut out);
        assert!(outcome.completed);
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("TimeoutException"));
        assert!(text.contains("STEP 2 DONE"));
    }

    #[test]
    fn abort_path_skips_later_steps() {
        let script = fast("loop key=drain.timeout step=100 on_timeout=abort\nflush name=sink");
        let mut out = Vec::new();
        let outcome = run_script(&script, &cfg(&[("drain.timeout", 300)]), RunMode::Workload, &mut out);
        assert!(!outcome.completed);
        assert_eq!(outcome.exit_code, 0, "abort is a clean exit, not a crash");
        assert_eq!(outcome.steps_completed, 0);
    }

    #[test]
    fn block_interrupted_by_positive_timeout() {
        let script = fast("block key=connect.timeout need=1500");
        let mut out = Vec::new();
        let outcome = run_script(&script, &cfg(&[("connect.timeout", 700)]), RunMode::Workload, &mut out);
        assert!(outcome.completed);
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("interrupted after 700 ms"));
    }

    #[test]
    fn flush_writes_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let prev = std::env::current_dir().unwrap();
        std::env::set_current_dir(dir.path()).unwrap();
        let script = fast("flush name=sink");
        let mut out = Vec::new();
        let outcome = run_script(&script, &cfg(&[]), RunMode::Workload, &mut out);
        std::env::set_current_dir(prev).unwrap();
        assert!(outcome.completed);
        assert!(dir.path().join("sink.ok").exists());
    }
}
