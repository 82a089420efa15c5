//! The report document: one machine-readable record aggregating diagnosis,
//! prediction and validation, plus a human projection of it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drilldown::{BugCategory, Diagnosis};
use crate::predict::format_seconds;
use crate::validate::{Outcome, Verdict};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("malformed report: {0}")]
    Malformed(String),
    #[error("unsupported schema version {0}")]
    UnsupportedVersion(u32),
}

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub schema_version: u32,
    pub diagnosis: Diagnosis,
    #[serde(default)]
    pub verdict: Option<Verdict>,
}

impl ReportDocument {
    pub fn new(diagnosis: Diagnosis) -> Self {
        ReportDocument {
            schema_version: SCHEMA_VERSION,
            diagnosis,
            verdict: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        let report: ReportDocument =
            serde_json::from_str(text).map_err(|e| ReportError::Malformed(e.to_string()))?;
        if report.schema_version != SCHEMA_VERSION {
            return Err(ReportError::UnsupportedVersion(report.schema_version));
        }
        Ok(report)
    }

    /// Human projection: bug type, impact, buggy value, predicted value,
    /// fixed, diagnosis time. Derived from the record, never the reverse.
    pub fn render_human(&self) -> String {
        let d = &self.diagnosis;
        let bug_type = match d.bug_category {
            BugCategory::MisusedTooLarge => "misused timeout (too large)",
            BugCategory::MisusedTooSmall => "misused timeout (too small)",
            BugCategory::MissingTimeout => "missing timeout",
            BugCategory::HardCodedSuspected => "hard-coded timeout suspected",
        };
        let impact = match (&d.hang_type, d.bug_category) {
            (Some(crate::stack::HangType::InfiniteLoop), _) => "job hangs in a polling loop",
            (Some(crate::stack::HangType::BlockingCall), _) => "job hangs in a blocking call",
            (None, BugCategory::MisusedTooLarge) => "slow failure detection",
            (None, BugCategory::MisusedTooSmall) => "repeated premature expiry",
            (None, _) => "abnormal timeout behavior",
        };
        let buggy_value = d
            .misused_variable
            .as_ref()
            .map(|v| format!("{} = {}", v.id, format_seconds(v.effective_value_ms as f64)))
            .unwrap_or_else(|| "-".into());
        let predicted = d
            .prediction
            .as_ref()
            .map(|p| format_seconds(p.t_predict_ms))
            .unwrap_or_else(|| "-".into());
        let fixed = match self.verdict.as_ref().map(|v| v.outcome) {
            Some(Outcome::Fixed) => "yes",
            Some(Outcome::PartialFix) => "partially",
            Some(Outcome::NotFixed) => "no",
            Some(Outcome::Inconclusive) => "inconclusive",
            None => "not validated",
        };
        let mut out = String::new();
        out.push_str(&format!("bug type:        {bug_type}\n"));
        out.push_str(&format!("impact:          {impact}\n"));
        out.push_str(&format!("root cause:      {}\n", d.root_cause_function));
        out.push_str(&format!("buggy value:     {buggy_value}\n"));
        out.push_str(&format!("predicted value: {predicted}\n"));
        if let Some(plan) = &d.patch_plan {
            out.push_str(&format!(
                "patch:           {:?} via {}\n",
                plan.strategy, plan.new_config_key
            ));
        }
        out.push_str(&format!("fixed:           {fixed}\n"));
        out.push_str(&format!(
            "diagnosis time:  {}\n",
            format_seconds(d.diagnosis_time_ms as f64)
        ));
        for note in &d.notes {
            out.push_str(&format!("note:            {note}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drilldown::Diagnosis;

    fn sample() -> ReportDocument {
        ReportDocument::new(Diagnosis {
            bug_category: BugCategory::MisusedTooSmall,
            root_cause_function: "org.apache.hadoop.hdfs.server.namenode.TransferFsImage.getFileClient"
                .into(),
            misused_variable: Some(crate::taint::TimeoutVariable {
                id: "dfs.image.transfer.timeout".into(),
                origin: crate::taint::VariableOrigin::ConfigKey,
                effective_value_ms: 60_000,
                taint_path: vec![],
            }),
            alternate_variables: vec![],
            hang_type: None,
            patch_plan: None,
            prediction: Some(crate::predict::Prediction {
                t_r_ms: 126_072.7,
                t_ratio: 0.1,
                t_predict_ms: 138_680.0,
                mode: crate::predict::PaddingMode::Safe,
                degree: 2,
                position: crate::predict::QueryPosition::Interpolation,
                fallback_used: false,
            }),
            diagnosis_time_ms: 2_310,
            notes: vec![],
        })
    }

    #[test]
    fn json_round_trip() {
        let report = sample();
        let back = ReportDocument::from_json(&report.to_json()).unwrap();
        assert_eq!(report, back);
    }

    #[test]
    fn version_checked() {
        let mut report = sample();
        report.schema_version = 99;
        let err = ReportDocument::from_json(&report.to_json()).unwrap_err();
        assert!(matches!(err, ReportError::UnsupportedVersion(99)));
    }

    #[test]
    fn human_projection_formats_seconds() {
        let text = sample().render_human();
        assert!(text.contains("138.68s"), "{text}");
        assert!(text.contains("60.00s"));
        assert!(text.contains("2.31s"));
        assert!(text.contains("misused timeout (too small)"));
        assert!(text.contains("not validated"));
    }
}
