//! Python bindings: bundle diagnosis, timeout prediction, scenario
//! generation, and fix validation, plus a few parsing helpers.
//!
//! Structured results cross the boundary as JSON strings; callers decode
//! them with `json.loads`. This keeps the binding surface small while
//! exposing the full report schema.

use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyFileNotFoundError, PyValueError};
use pyo3::prelude::*;

use tdiag_core::drilldown::{
    run_drilldown, AlertDocument, DrilldownInputs, DrilldownPolicy, TimeoutFunctionRegistry,
};
use tdiag_core::faultlab::{self, ScenarioCategory, ScenarioSpec};
use tdiag_core::patch::ApiCatalog;
use tdiag_core::predict::{
    format_seconds, load_dataset, padding_ratio, predict, select_model, PaddingMode,
    PaddingReport, RegressionModel, SelectionScorer, TrainingSample,
};
use tdiag_core::report::ReportDocument;
use tdiag_core::stack::parse_thread_dump;
use tdiag_core::taint::{load_facts, parse_xml_config};
use tdiag_core::trace::{parse_span_trace, render_span_trace};
use tdiag_core::validate::{validate as run_validate, AppliedPatch, RunContext, Scenario};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn read_file(path: &Path) -> PyResult<String> {
    std::fs::read_to_string(path)
        .map_err(|e| PyFileNotFoundError::new_err(format!("{}: {e}", path.display())))
}

fn parse_mode(mode: &str) -> PyResult<PaddingMode> {
    match mode {
        "safe" => Ok(PaddingMode::Safe),
        "literal" => Ok(PaddingMode::PaperLiteral),
        other => Err(value_err(format!(
            "unknown padding mode {other:?}, expected \"safe\" or \"literal\""
        ))),
    }
}

fn load_bundle(dir: &Path) -> PyResult<(DrilldownInputs, AlertDocument)> {
    let mut inputs = DrilldownInputs {
        trace: parse_span_trace(&read_file(&dir.join("trace.ndjson"))?).map_err(value_err)?,
        baseline: parse_span_trace(&read_file(&dir.join("baseline.ndjson"))?)
            .map_err(value_err)?,
        ..DrilldownInputs::default()
    };
    for dump in ["dump1.txt", "dump2.txt"] {
        let path = dir.join(dump);
        if path.exists() {
            inputs
                .dumps
                .push(parse_thread_dump(&read_file(&path)?).map_err(value_err)?);
        }
    }
    if dir.join("facts.txt").exists() {
        let entries = parse_xml_config(&read_file(&dir.join("config.xml"))?, "config.xml")
            .map_err(value_err)?;
        inputs.facts =
            Some(load_facts(entries, &read_file(&dir.join("facts.txt"))?).map_err(value_err)?);
    }
    if dir.join("catalog.json").exists() {
        inputs.catalog =
            Some(ApiCatalog::from_json(&read_file(&dir.join("catalog.json"))?).map_err(value_err)?);
    }
    let (_, samples) = load_dataset(&read_file(&dir.join("dataset.csv"))?).map_err(value_err)?;
    inputs.samples = samples;
    let alert: AlertDocument =
        serde_json::from_str(&read_file(&dir.join("alert.json"))?).map_err(value_err)?;
    inputs.termination_time_ms = alert.termination_time_ms;
    inputs.query_features = alert.query_features.clone();
    Ok((inputs, alert))
}

/// Runs the full drill-down over a generated or hand-built bundle
/// directory and returns the report document as a JSON string.
#[pyfunction]
fn diagnose_bundle(path: PathBuf) -> PyResult<String> {
    let (inputs, alert) = load_bundle(&path)?;
    let diagnosis = run_drilldown(
        &inputs,
        &alert.alert,
        &TimeoutFunctionRegistry::default(),
        &DrilldownPolicy::default(),
    )
    .map_err(value_err)?;
    Ok(ReportDocument::new(diagnosis).to_json())
}

/// Generates the full synthetic scenario suite under `out_dir`.
/// Returns a list of (bundle_path, manifest_json) pairs.
#[pyfunction]
fn generate_suite(seed: u64, out_dir: PathBuf) -> PyResult<Vec<(String, String)>> {
    let bundles = faultlab::generate_all(seed, &out_dir).map_err(value_err)?;
    let mut out = Vec::new();
    for (dir, manifest) in bundles {
        out.push((
            dir.display().to_string(),
            serde_json::to_string(&manifest).map_err(value_err)?,
        ));
    }
    Ok(out)
}

/// Generates one scenario bundle; `category` is one of too-large,
/// too-small, missing-loop, missing-blocking, hardcoded.
#[pyfunction]
#[pyo3(signature = (category, out_dir, seed=1, variant=0))]
fn generate_scenario(category: &str, out_dir: PathBuf, seed: u64, variant: usize) -> PyResult<String> {
    let spec = ScenarioSpec {
        name: format!("{category}-{seed}"),
        category: ScenarioCategory::parse(category).map_err(value_err)?,
        variant,
        seed,
    };
    let manifest = faultlab::generate(&spec, &out_dir).map_err(value_err)?;
    serde_json::to_string(&manifest).map_err(value_err)
}

/// Re-runs a scenario with a config patch applied and judges the fix.
/// `runner` must point at the tdiag binary, which doubles as the
/// workload interpreter. Returns the verdict as a JSON string.
#[pyfunction]
#[pyo3(signature = (scenario_path, runner, config_key=None, value_ms=None))]
fn validate_scenario(
    scenario_path: PathBuf,
    runner: PathBuf,
    config_key: Option<String>,
    value_ms: Option<i64>,
) -> PyResult<String> {
    let scenario = Scenario::from_json(&read_file(&scenario_path)?).map_err(value_err)?;
    let applied = match (config_key, value_ms) {
        (Some(config_key), Some(value_ms)) => Some(AppliedPatch { config_key, value_ms }),
        (None, None) => None,
        _ => {
            return Err(value_err(
                "config_key and value_ms must be given together",
            ))
        }
    };
    let ctx = RunContext {
        self_path: runner,
        bundle_dir: scenario_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .to_path_buf(),
    };
    let verdict = run_validate(&scenario, applied.as_ref(), &ctx).map_err(value_err)?;
    serde_json::to_string(&verdict).map_err(value_err)
}

/// Parses a span trace and returns it re-rendered; a cheap way to check
/// record well-formedness from Python.
#[pyfunction]
fn normalize_trace(text: &str) -> PyResult<String> {
    Ok(render_span_trace(&parse_span_trace(text).map_err(value_err)?))
}

/// Renders milliseconds the way reports do, for example 138680 -> "138.68s".
#[pyfunction]
fn format_ms(ms: f64) -> String {
    format_seconds(ms)
}

/// A fitted timeout predictor over a CSV dataset (last column observed_ms).
#[pyclass]
struct Predictor {
    model: RegressionModel,
    padding: PaddingReport,
    historical_max_ms: f64,
    samples: Vec<TrainingSample>,
}

#[pymethods]
impl Predictor {
    /// Fits degrees 1 through 3 on the dataset text, keeps the best, and
    /// computes the padding ratio for the given mode.
    #[new]
    #[pyo3(signature = (dataset_csv, mode="safe"))]
    fn new(dataset_csv: &str, mode: &str) -> PyResult<Self> {
        let (_, samples) = load_dataset(dataset_csv).map_err(value_err)?;
        let model = select_model(&samples, SelectionScorer::Auto).map_err(value_err)?;
        let padding = padding_ratio(&model, &samples, parse_mode(mode)?).map_err(value_err)?;
        let historical_max_ms = samples.iter().map(|s| s.observed_ms).fold(0.0f64, f64::max);
        Ok(Predictor {
            model,
            padding,
            historical_max_ms,
            samples,
        })
    }

    #[getter]
    fn degree(&self) -> u32 {
        self.model.degree
    }

    #[getter]
    fn t_ratio(&self) -> f64 {
        self.padding.t_ratio
    }

    #[getter]
    fn sample_count(&self) -> usize {
        self.samples.len()
    }

    /// Padded timeout prediction for the query features, in milliseconds.
    fn predict_ms(&self, features: Vec<f64>) -> PyResult<f64> {
        let p = predict(&self.model, &self.padding, &features, self.historical_max_ms)
            .map_err(value_err)?;
        Ok(p.t_predict_ms)
    }

    /// Full prediction record (raw estimate, ratio, position, fallback
    /// flag) as a JSON string.
    fn predict_json(&self, features: Vec<f64>) -> PyResult<String> {
        let p = predict(&self.model, &self.padding, &features, self.historical_max_ms)
            .map_err(value_err)?;
        serde_json::to_string(&p).map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Predictor(degree={}, samples={}, t_ratio={:.4})",
            self.model.degree,
            self.samples.len(),
            self.padding.t_ratio
        )
    }
}

#[pymodule]
fn tdiag_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Predictor>()?;
    m.add_function(wrap_pyfunction!(diagnose_bundle, m)?)?;
    m.add_function(wrap_pyfunction!(generate_suite, m)?)?;
    m.add_function(wrap_pyfunction!(generate_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(validate_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_trace, m)?)?;
    m.add_function(wrap_pyfunction!(format_ms, m)?)?;
    Ok(())
}
