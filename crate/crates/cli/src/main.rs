//! Command-line interface.
//!
//! Exit codes: 0 success (or verdict Fixed), 1 input error, 2 inconclusive,
//! 3 partial fix, 4 not fixed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use tdiag_core::drilldown::{
    run_drilldown, AlertDocument, DrilldownInputs, DrilldownPolicy, TimeoutFunctionRegistry,
};
use tdiag_core::faultlab::script::{parse_script, run_script, RunMode};
use tdiag_core::faultlab::{self, ScenarioCategory, ScenarioSpec};
use tdiag_core::patch::ApiCatalog;
use tdiag_core::predict::{
    format_seconds, load_dataset, padding_ratio, predict, select_model, PaddingMode,
    SelectionScorer,
};
use tdiag_core::report::ReportDocument;
use tdiag_core::stack::parse_thread_dump;
use tdiag_core::taint::{load_facts, parse_properties_config, parse_xml_config};
use tdiag_core::trace::parse_span_trace;
use tdiag_core::validate::{validate, AppliedPatch, Outcome, RunContext, Scenario};

const EXIT_OK: u8 = 0;
const EXIT_INPUT: u8 = 1;
const EXIT_INCONCLUSIVE: u8 = 2;
const EXIT_PARTIAL: u8 = 3;
const EXIT_NOT_FIXED: u8 = 4;

/// Environment variable naming a policy file used when --policy is absent.
const POLICY_ENV: &str = "TDIAG_POLICY";

#[derive(Parser)]
#[command(name = "tdiag", about = "Timeout bug diagnosis and repair planning", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PaddingModeArg {
    Safe,
    PaperLiteral,
}

impl From<PaddingModeArg> for PaddingMode {
    fn from(v: PaddingModeArg) -> Self {
        match v {
            PaddingModeArg::Safe => PaddingMode::Safe,
            PaddingModeArg::PaperLiteral => PaddingMode::PaperLiteral,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the full drill-down diagnosis over a bundle of artifacts.
    Diagnose {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        alert: PathBuf,
        /// Thread dumps; repeat the flag for each capture.
        #[arg(long)]
        dumps: Vec<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        facts: Option<PathBuf>,
        #[arg(long)]
        catalog: Option<PathBuf>,
        /// Training dataset for timeout value prediction.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Policy file (JSON); defaults come from TDIAG_POLICY or built-ins.
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Extra timeout-function registry patterns, one per line.
        #[arg(long)]
        registry: Option<PathBuf>,
        /// Write the machine-readable report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the regression model and predict a timeout for query features.
    Predict {
        #[arg(long)]
        dataset: PathBuf,
        /// Comma-separated feature values of the query point.
        #[arg(long)]
        features: String,
        #[arg(long, value_enum, default_value = "safe")]
        padding_mode: PaddingModeArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run a scenario with a patch applied and judge the fix.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
        /// Report document from `diagnose`; supplies the config key.
        #[arg(long)]
        patch: Option<PathBuf>,
        /// Explicit config key, overriding the patch report.
        #[arg(long)]
        key: Option<String>,
        /// Timeout value to inject, in milliseconds.
        #[arg(long)]
        value: Option<i64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate synthetic ground-truth scenario bundles.
    Simulate {
        /// too-large | too-small | missing-loop | missing-blocking |
        /// hardcoded | all
        #[arg(long)]
        category: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Faultlab runtime: execute a workload script (used by scenarios).
    Workload {
        #[arg(long)]
        script: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Faultlab runtime: bounded test-suite execution of a script.
    Testsuite {
        #[arg(long)]
        script: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Diagnose {
            trace,
            baseline,
            alert,
            dumps,
            config,
            facts,
            catalog,
            dataset,
            policy,
            registry,
            out,
        } => cmd_diagnose(
            &trace, &baseline, &alert, &dumps, config.as_deref(), facts.as_deref(),
            catalog.as_deref(), dataset.as_deref(), policy.as_deref(), registry.as_deref(),
            out.as_deref(),
        ),
        Command::Predict { dataset, features, padding_mode, out } => {
            cmd_predict(&dataset, &features, padding_mode.into(), out.as_deref())
        }
        Command::Validate { scenario, patch, key, value, out } => {
            cmd_validate(&scenario, patch.as_deref(), key, value, out.as_deref())
        }
        Command::Simulate { category, seed, out } => cmd_simulate(&category, seed, &out),
        Command::Workload { script, config } => cmd_runtime(&script, &config, RunMode::Workload),
        Command::Testsuite { script, config } => {
            cmd_runtime(&script, &config, RunMode::Bounded { max_iterations: 1000 })
        }
    };
    ExitCode::from(code)
}

fn fail(msg: impl std::fmt::Display) -> u8 {
    eprintln!("error: {msg}");
    EXIT_INPUT
}

fn read(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))
}

fn load_policy(flag: Option<&Path>) -> Result<DrilldownPolicy, String> {
    let path = match flag {
        Some(p) => Some(p.to_path_buf()),
        None => std::env::var_os(POLICY_ENV).map(PathBuf::from),
    };
    match path {
        None => Ok(DrilldownPolicy::default()),
        Some(p) => {
            let text = read(&p)?;
            serde_json::from_str(&text).map_err(|e| format!("bad policy {}: {e}", p.display()))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_diagnose(
    trace: &Path,
    baseline: &Path,
    alert: &Path,
    dumps: &[PathBuf],
    config: Option<&Path>,
    facts: Option<&Path>,
    catalog: Option<&Path>,
    dataset: Option<&Path>,
    policy: Option<&Path>,
    registry: Option<&Path>,
    out: Option<&Path>,
) -> u8 {
    let result = (|| -> Result<ReportDocument, String> {
        let trace = parse_span_trace(&read(trace)?).map_err(|e| e.to_string())?;
        let baseline = parse_span_trace(&read(baseline)?).map_err(|e| e.to_string())?;
        let alert_doc: AlertDocument = serde_json::from_str(&read(alert)?)
            .map_err(|e| format!("bad alert document: {e}"))?;
        if !alert_doc.alert.is_well_formed() {
            return Err("alert time outside its own window".into());
        }
        let mut inputs = DrilldownInputs {
            trace,
            baseline,
            termination_time_ms: alert_doc.termination_time_ms,
            query_features: alert_doc.query_features.clone(),
            ..DrilldownInputs::default()
        };
        for dump in dumps {
            inputs
                .dumps
                .push(parse_thread_dump(&read(dump)?).map_err(|e| e.to_string())?);
        }
        if let Some(facts_path) = facts {
            let entries = match config {
                Some(c) => parse_xml_config(&read(c)?, &c.display().to_string())
                    .map_err(|e| e.to_string())?,
                None => Vec::new(),
            };
            inputs.facts =
                Some(load_facts(entries, &read(facts_path)?).map_err(|e| e.to_string())?);
        }
        if let Some(catalog_path) = catalog {
            inputs.catalog =
                Some(ApiCatalog::from_json(&read(catalog_path)?).map_err(|e| e.to_string())?);
        }
        if let Some(dataset_path) = dataset {
            let (_, samples) = load_dataset(&read(dataset_path)?).map_err(|e| e.to_string())?;
            inputs.samples = samples;
        }
        let mut reg = TimeoutFunctionRegistry::default();
        if let Some(registry_path) = registry {
            reg.extend_with(
                read(registry_path)?
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty() && !l.starts_with('#'))
                    .map(String::from),
            );
        }
        let policy = load_policy(policy)?;
        let diagnosis =
            run_drilldown(&inputs, &alert_doc.alert, &reg, &policy).map_err(|e| e.to_string())?;
        Ok(ReportDocument::new(diagnosis))
    })();
    match result {
        Ok(report) => {
            print!("{}", report.render_human());
            if let Some(out) = out {
                if let Err(e) = fs::write(out, report.to_json()) {
                    return fail(format!("cannot write {}: {e}", out.display()));
                }
            }
            EXIT_OK
        }
        Err(e) => fail(e),
    }
}

fn cmd_predict(dataset: &Path, features: &str, mode: PaddingMode, out: Option<&Path>) -> u8 {
    let result = (|| -> Result<String, String> {
        let (names, samples) = load_dataset(&read(dataset)?).map_err(|e| e.to_string())?;
        let query: Vec<f64> = features
            .split(',')
            .map(|f| f.trim().parse::<f64>().map_err(|_| format!("bad feature {f:?}")))
            .collect::<Result<_, _>>()?;
        if query.len() != names.len() {
            return Err(format!("query has {} features, dataset has {}", query.len(), names.len()));
        }
        let model = select_model(&samples, SelectionScorer::Auto).map_err(|e| e.to_string())?;
        let report = padding_ratio(&model, &samples, mode).map_err(|e| e.to_string())?;
        let historical_max = samples.iter().map(|s| s.observed_ms).fold(0.0f64, f64::max);
        let prediction =
            predict(&model, &report, &query, historical_max).map_err(|e| e.to_string())?;
        println!("degree:    P={}", model.degree);
        println!("mode:      {:?}", mode);
        println!("T_r:       {}", format_seconds(prediction.t_r_ms));
        println!("T_ratio:   {:.4}", prediction.t_ratio);
        println!("T_predict: {}", format_seconds(prediction.t_predict_ms));
        println!("position:  {:?}", prediction.position);
        if report.underestimation_warning {
            println!("warning:   UnderestimationWarning: padding ratio is negative");
        }
        if prediction.fallback_used {
            println!("warning:   unusable model, fell back to 2x historical maximum");
        }
        let machine = serde_json::json!({
            "model": model,
            "padding": report,
            "prediction": prediction,
        });
        Ok(serde_json::to_string_pretty(&machine).expect("serializes"))
    })();
    match result {
        Ok(machine) => {
            if let Some(out) = out {
                if let Err(e) = fs::write(out, machine) {
                    return fail(format!("cannot write {}: {e}", out.display()));
                }
            }
            EXIT_OK
        }
        Err(e) => fail(e),
    }
}

fn cmd_validate(
    scenario_path: &Path,
    patch: Option<&Path>,
    key: Option<String>,
    value: Option<i64>,
    out: Option<&Path>,
) -> u8 {
    let result = (|| -> Result<tdiag_core::validate::Verdict, String> {
        let scenario = Scenario::from_json(&read(scenario_path)?).map_err(|e| e.to_string())?;
        let config_key = match (key, patch) {
            (Some(k), _) => Some(k),
            (None, Some(patch_path)) => {
                let report =
                    ReportDocument::from_json(&read(patch_path)?).map_err(|e| e.to_string())?;
                report
                    .diagnosis
                    .patch_plan
                    .map(|p| p.new_config_key)
                    .or(report.diagnosis.misused_variable.map(|v| v.id))
            }
            (None, None) => None,
        };
        let applied = match (config_key, value) {
            (Some(config_key), Some(value_ms)) => Some(AppliedPatch { config_key, value_ms }),
            (Some(_), None) => return Err("--value required when applying a patch".into()),
            (None, Some(_)) => return Err("no config key: pass --key or --patch".into()),
            (None, None) => None,
        };
        let ctx = RunContext {
            self_path: std::env::current_exe().map_err(|e| e.to_string())?,
            bundle_dir: scenario_path
                .parent()
                .unwrap_or_else(|| Path::new("."))
                .to_path_buf(),
        };
        validate(&scenario, applied.as_ref(), &ctx).map_err(|e| e.to_string())
    })();
    match result {
        Ok(verdict) => {
            println!("outcome:        {:?}", verdict.outcome);
            println!("bug reproduced: {}", verdict.bug_reproduced);
            println!("tests passed:   {}", verdict.tests_passed);
            for line in &verdict.evidence {
                println!("evidence:       {line}");
            }
            if let Some(out) = out {
                let json = serde_json::to_string_pretty(&verdict).expect("serializes");
                if let Err(e) = fs::write(out, json) {
                    return fail(format!("cannot write {}: {e}", out.display()));
                }
            }
            match verdict.outcome {
                Outcome::Fixed => EXIT_OK,
                Outcome::Inconclusive => EXIT_INCONCLUSIVE,
                Outcome::PartialFix => EXIT_PARTIAL,
                Outcome::NotFixed => EXIT_NOT_FIXED,
            }
        }
        Err(e) => fail(e),
    }
}

fn cmd_simulate(category: &str, seed: u64, out: &Path) -> u8 {
    let result = (|| -> Result<Vec<String>, String> {
        if category == "all" {
            let bundles = faultlab::generate_all(seed, out).map_err(|e| e.to_string())?;
            return Ok(bundles
                .into_iter()
                .map(|(dir, _)| dir.display().to_string())
                .collect());
        }
        let cat = ScenarioCategory::parse(category).map_err(|e| e.to_string())?;
        let spec = ScenarioSpec {
            name: format!("{category}-{seed}"),
            category: cat,
            variant: 0,
            seed,
        };
        let dir = out.join(&spec.name);
        faultlab::generate(&spec, &dir).map_err(|e| e.to_string())?;
        Ok(vec![dir.display().to_string()])
    })();
    match result {
        Ok(paths) => {
            for p in paths {
                println!("{p}");
            }
            EXIT_OK
        }
        Err(e) => fail(e),
    }
}

fn cmd_runtime(script_path: &Path, config_path: &Path, mode: RunMode) -> u8 {
    let result = (|| -> Result<u8, String> {
        let script = parse_script(&read(script_path)?).map_err(|e| e.to_string())?;
        let config: BTreeMap<String, i64> =
            parse_properties_config(&read(config_path)?, &config_path.display().to_string())
                .map_err(|e| e.to_string())?
                .into_iter()
                .map(|e| (e.key, e.value_ms))
                .collect();
        let stdout = std::io::stdout();
        let mut out = stdout.lock();
        let outcome = run_script(&script, &config, mode, &mut out);
        if let RunMode::Bounded { .. } = mode {
            if outcome.completed {
                println!("PASS workload-completion");
            } else {
                println!(
                    "FAIL workload-completion ({})",
                    outcome.aborted.as_deref().unwrap_or("incomplete")
                );
            }
            return Ok(if outcome.completed { 0 } else { 1 });
        }
        Ok(outcome.exit_code as u8)
    })();
    match result {
        Ok(code) => code,
        Err(e) => fail(e),
    }
}
