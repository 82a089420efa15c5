//! Misused-timeout analysis: identify timeout-affected functions,
//! differentiate too-large vs. too-small misuse, and cross-validate
//! candidate variables against the observed execution times.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taint::TaintedUse;
use crate::trace::{
    compare_against_baseline, AnomalyKind, AnomalyPolicy, FunctionStats, TraceError,
};

#[derive(Debug, Error)]
pub enum MisusedError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("function {0} carries both duration and frequency spikes")]
    AmbiguousAnomaly(String),
}

/// A function whose execution time or invocation frequency is abnormal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffectedFunction {
    pub function: String,
    pub kinds: Vec<AnomalyKind>,
    pub magnitude: f64,
    pub observed_durations_ms: Vec<i64>,
    pub baseline_mean_ms: f64,
    pub baseline_max_ms: i64,
}

impl AffectedFunction {
    pub fn observed_max_ms(&self) -> i64 {
        self.observed_durations_ms.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MisuseDirection {
    TooLarge,
    TooSmall,
}

/// Selected variable (or the hard-coded downgrade) with the evidence that
/// bound its value to the observed execution times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum VariableVerdict {
    Selected {
        variable: crate::taint::TimeoutVariable,
        /// Survivors ranked behind the selection, closest first.
        alternates: Vec<crate::taint::TimeoutVariable>,
    },
    /// No tainted candidate explains the observed times; the value is
    /// likely hard-coded inside the affected function or its callees.
    HardCodedSuspected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisusedVerdict {
    pub direction: MisuseDirection,
    pub affected: AffectedFunction,
    pub variable: VariableVerdict,
    pub evidence: String,
}

/// Wraps the baseline-comparison anomalies with their observed evidence,
/// one entry per flagged function.
pub fn identify_affected_functions(
    current: &BTreeMap<String, FunctionStats>,
    baseline: &BTreeMap<String, FunctionStats>,
    policy: &AnomalyPolicy,
) -> Result<Vec<AffectedFunction>, MisusedError> {
    let anomalies = compare_against_baseline(current, baseline, policy)?;
    let mut by_function: BTreeMap<String, AffectedFunction> = BTreeMap::new();
    for anomaly in anomalies {
        let cur = &current[&anomaly.function];
        let base = &baseline[&anomaly.function];
        by_function
            .entry(anomaly.function.clone())
            .or_insert_with(|| AffectedFunction {
                function: anomaly.function.clone(),
                kinds: Vec::new(),
                magnitude: anomaly.magnitude,
                observed_durations_ms: cur.durations_ms.clone(),
                baseline_mean_ms: base.mean_ms(),
                baseline_max_ms: base.max_ms(),
            })
            .kinds
            .push(anomaly.kind);
    }
    Ok(by_function.into_values().collect())
}

/// DurationSpike means the bug kept the function running, so the value was
/// too large; FrequencySpike means repeated expiries, so too small.
pub fn differentiate(affected: &AffectedFunction) -> Result<MisuseDirection, MisusedError> {
    match affected.kinds.as_slice() {
        [AnomalyKind::DurationSpike] => Ok(MisuseDirection::TooLarge),
        [AnomalyKind::FrequencySpike] => Ok(MisuseDirection::TooSmall),
        _ => Err(MisusedError::AmbiguousAnomaly(affected.function.clone())),
    }
}

/// Relative tolerance for the too-small "execution time matches the value"
/// check.
pub const DEFAULT_MATCH_TOLERANCE: f64 = 0.10;

/// Cross-validates candidate variables against observed execution times.
///
/// Too-large keeps candidates whose value bounds the observed maximum;
/// too-small keeps candidates whose value matches the observed durations
/// within `tolerance`. Survivors are ranked by closeness to the observed
/// evidence with a lexicographic tie-break on the variable id.
pub fn cross_validate(
    affected: &AffectedFunction,
    direction: MisuseDirection,
    candidates: &[TaintedUse],
    tolerance: f64,
) -> MisusedVerdict {
    let observed_max = affected.observed_max_ms();
    let mut survivors: Vec<(f64, crate::taint::TimeoutVariable)> = Vec::new();
    for candidate in candidates {
        let value = candidate.variable.effective_value_ms;
        match direction {
            MisuseDirection::TooLarge => {
                if value >= observed_max {
                    survivors.push(((value - observed_max) as f64, candidate.variable.clone()));
                }
            }
            MisuseDirection::TooSmall => {
                let matched = affected
                    .observed_durations_ms
                    .iter()
                    .any(|&d| (d - value).abs() as f64 <= tolerance * value as f64);
                if matched {
                    let closest = affected
                        .observed_durations_ms
                        .iter()
                        .map(|&d| (d - value).abs())
                        .min()
                        .unwrap_or(i64::MAX);
                    survivors.push((closest as f64, candidate.variable.clone()));
                }
            }
        }
    }
    survivors.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.1.id.cmp(&b.1.id))
    });

    let evidence = match direction {
        MisuseDirection::TooLarge => format!(
            "observed max {observed_max} ms bounded by candidate value"
        ),
        MisuseDirection::TooSmall => format!(
            "observed durations within {:.0}% of candidate value",
            tolerance * 100.0
        ),
    };
    let variable = match survivors.len() {
        0 => VariableVerdict::HardCodedSuspected,
        _ => {
            let mut iter = survivors.into_iter().map(|(_, v)| v);
            let selected = iter.next().unwrap();
            VariableVerdict::Selected {
                variable: selected,
                alternates: iter.collect(),
            }
        }
    };
    MisusedVerdict {
        direction,
        affected: affected.clone(),
        variable,
        evidence,
    }
}

/// Ambiguous-anomaly fallback: run cross-validation for both directions and
/// prefer the one producing a surviving candidate (too-small first, since a
/// matching value is the stronger evidence).
pub fn resolve_ambiguous(
    affected: &AffectedFunction,
    candidates: &[TaintedUse],
    tolerance: f64,
) -> MisusedVerdict {
    let small = cross_validate(affected, MisuseDirection::TooSmall, candidates, tolerance);
    if matches!(small.variable, VariableVerdict::Selected { .. }) {
        return small;
    }
    let large = cross_validate(affected, MisuseDirection::TooLarge, candidates, tolerance);
    if matches!(large.variable, VariableVerdict::Selected { .. }) {
        return large;
    }
    small
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taint::{TimeoutVariable, VariableOrigin};

    fn stats(function: &str, durations: &[i64]) -> (String, FunctionStats) {
        (
            function.to_string(),
            FunctionStats {
                function: function.to_string(),
                durations_ms: durations.to_vec(),
            },
        )
    }

    fn candidate(id: &str, value_ms: i64) -> TaintedUse {
        TaintedUse {
            function: "f".to_string(),
            variable: TimeoutVariable {
                id: id.to_string(),
                origin: VariableOrigin::ConfigKey,
                effective_value_ms: value_ms,
                taint_path: Vec::new(),
            },
        }
    }

    fn affected(kinds: &[AnomalyKind], durations: &[i64]) -> AffectedFunction {
        AffectedFunction {
            function: "f".to_string(),
            kinds: kinds.to_vec(),
            magnitude: 10.0,
            observed_durations_ms: durations.to_vec(),
            baseline_mean_ms: 50.0,
            baseline_max_ms: 60,
        }
    }

    #[test]
    fn frequency_spiked_function_identified() {
        // HDFS-4301 shape: doGetUrl invoked 20x baseline, durations ~60s.
        let baseline: BTreeMap<_, _> =
            [stats("doGetUrl", &[55_000, 56_000, 57_000, 58_000, 59_000])].into();
        let current_durations: Vec<i64> = (0..100).map(|i| 59_800 + (i % 4) * 100).collect();
        let current: BTreeMap<_, _> = [stats("doGetUrl", &current_durations)].into();
        let affected =
            identify_affected_functions(&current, &baseline, &AnomalyPolicy::default()).unwrap();
        assert_eq!(affected.len(), 1);
        assert_eq!(affected[0].kinds, vec![AnomalyKind::FrequencySpike]);
    }

    #[test]
    fn duration_spiked_function_identified() {
        // HBase-13647 shape, desk-scaled: tens-of-ms baseline, one 120 s hang.
        let baseline: BTreeMap<_, _> = [stats("rpcCall", &[20, 30, 25, 35, 30])].into();
        let current: BTreeMap<_, _> = [stats("rpcCall", &[120_000])].into();
        let affected =
            identify_affected_functions(&current, &baseline, &AnomalyPolicy::default()).unwrap();
        assert_eq!(affected.len(), 1);
        assert_eq!(affected[0].kinds, vec![AnomalyKind::DurationSpike]);
    }

    #[test]
    fn no_anomaly_no_affected() {
        let baseline: BTreeMap<_, _> = [stats("f", &[10, 11, 12, 10, 11])].into();
        let affected =
            identify_affected_functions(&baseline, &baseline, &AnomalyPolicy::default()).unwrap();
        assert!(affected.is_empty());
    }

    #[test]
    fn differentiate_is_total_on_unambiguous() {
        assert_eq!(
            differentiate(&affected(&[AnomalyKind::DurationSpike], &[100])).unwrap(),
            MisuseDirection::TooLarge
        );
        assert_eq!(
            differentiate(&affected(&[AnomalyKind::FrequencySpike], &[100])).unwrap(),
            MisuseDirection::TooSmall
        );
    }

    #[test]
    fn both_kinds_is_ambiguous() {
        let err = differentiate(&affected(
            &[AnomalyKind::DurationSpike, AnomalyKind::FrequencySpike],
            &[100],
        ))
        .unwrap_err();
        assert!(matches!(err, MisusedError::AmbiguousAnomaly(_)));
    }

    #[test]
    fn too_small_selects_matching_value() {
        let affected = affected(
            &[AnomalyKind::FrequencySpike],
            &[59_800, 59_900, 60_000, 60_100],
        );
        let verdict = cross_validate(
            &affected,
            MisuseDirection::TooSmall,
            &[candidate("dfs.image.transfer.timeout", 60_000)],
            DEFAULT_MATCH_TOLERANCE,
        );
        match verdict.variable {
            VariableVerdict::Selected { variable, .. } => {
                assert_eq!(variable.id, "dfs.image.transfer.timeout")
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn too_large_keeps_bounding_value() {
        // Observed max 120 s, candidate 2 h.
        let affected = affected(&[AnomalyKind::DurationSpike], &[120_000]);
        let verdict = cross_validate(
            &affected,
            MisuseDirection::TooLarge,
            &[candidate("sasl.timeout", 7_200_000)],
            DEFAULT_MATCH_TOLERANCE,
        );
        assert!(matches!(verdict.variable, VariableVerdict::Selected { .. }));
    }

    #[test]
    fn too_large_bound_is_inclusive_without_slack() {
        let affected = affected(&[AnomalyKind::DurationSpike], &[120_000]);
        let kept = cross_validate(
            &affected,
            MisuseDirection::TooLarge,
            &[candidate("k", 120_000)],
            DEFAULT_MATCH_TOLERANCE,
        );
        assert!(matches!(kept.variable, VariableVerdict::Selected { .. }));
        let dropped = cross_validate(
            &affected,
            MisuseDirection::TooLarge,
            &[candidate("k", 119_999)],
            DEFAULT_MATCH_TOLERANCE,
        );
        assert!(matches!(dropped.variable, VariableVerdict::HardCodedSuspected));
    }

    #[test]
    fn no_candidates_is_hard_coded() {
        let affected = affected(&[AnomalyKind::FrequencySpike], &[60_000]);
        let verdict =
            cross_validate(&affected, MisuseDirection::TooSmall, &[], DEFAULT_MATCH_TOLERANCE);
        assert!(matches!(verdict.variable, VariableVerdict::HardCodedSuspected));
    }

    #[test]
    fn non_matching_candidate_never_changes_selection() {
        let affected = affected(&[AnomalyKind::FrequencySpike], &[60_000]);
        let base = cross_validate(
            &affected,
            MisuseDirection::TooSmall,
            &[candidate("a.timeout", 60_000)],
            DEFAULT_MATCH_TOLERANCE,
        );
        let with_noise = cross_validate(
            &affected,
            MisuseDirection::TooSmall,
            &[candidate("a.timeout", 60_000), candidate("b.timeout", 5)],
            DEFAULT_MATCH_TOLERANCE,
        );
        assert_eq!(base.variable, with_noise.variable);
    }

    #[test]
    fn equal_distance_ties_break_lexicographically() {
        let affected = affected(&[AnomalyKind::FrequencySpike], &[60_000]);
        let verdict = cross_validate(
            &affected,
            MisuseDirection::TooSmall,
            &[candidate("b.timeout", 60_000), candidate("a.timeout", 60_000)],
            DEFAULT_MATCH_TOLERANCE,
        );
        match verdict.variable {
            VariableVerdict::Selected { variable, alternates } => {
                assert_eq!(variable.id, "a.timeout");
                assert_eq!(alternates.len(), 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tolerance_is_symmetric() {
        let value = 1_000i64;
        for d in [900i64, 950, 1_000, 1_050, 1_100] {
            let affected = affected(&[AnomalyKind::FrequencySpike], &[d]);
            let verdict = cross_validate(
                &affected,
                MisuseDirection::TooSmall,
                &[candidate("k", value)],
                DEFAULT_MATCH_TOLERANCE,
            );
            let expect = (d - value).abs() as f64 <= 0.10 * value as f64;
            assert_eq!(
                matches!(verdict.variable, VariableVerdict::Selected { .. }),
                expect,
                "d={d}"
            );
        }
        let affected = affected(&[AnomalyKind::FrequencySpike], &[1_101]);
        let verdict = cross_validate(
            &affected,
            MisuseDirection::TooSmall,
            &[candidate("k", value)],
            DEFAULT_MATCH_TOLERANCE,
        );
        assert!(matches!(verdict.variable, VariableVerdict::HardCodedSuspected));
    }
}
