//! Timeout value prediction.
//!
//! A multivariate polynomial (all multi-exponents with total degree at most
//! P) is fitted to historical runs by least squares, a padding ratio covers
//! the model's worst relative error, and the predicted timeout is the raw
//! estimate inflated by that ratio.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("dataset of {samples} samples cannot determine {terms} terms")]
    Underdetermined { samples: usize, terms: usize },
    #[error("sample {0} has non-positive observed duration")]
    NonPositiveObservation(usize),
    #[error("sample {index} has {got} features, expected {expected}")]
    FeatureCountMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("query has {got} features, model expects {expected}")]
    QueryArity { expected: usize, got: usize },
    #[error("predicted timeout {0} ms is not positive")]
    NegativePrediction(f64),
    #[error("malformed dataset: {0}")]
    MalformedDataset(String),
    #[error("empty dataset")]
    EmptyDataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub features: Vec<f64>,
    pub observed_ms: f64,
}

/// One polynomial term: per-feature exponents plus its coefficient in
/// original feature units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTerm {
    pub exponents: Vec<u32>,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub degree: u32,
    pub feature_count: usize,
    pub terms: Vec<ModelTerm>,
    /// Sum of squared training residuals.
    pub training_sse: f64,
    /// Score used by model selection (holdout or training error).
    pub selection_error: f64,
    /// Set when the design matrix was rank-deficient and a minimum-norm
    /// solution was taken.
    pub degenerate_features: bool,
    /// Per-coordinate training feature ranges, for hull flagging.
    pub feature_min: Vec<f64>,
    pub feature_max: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PaddingMode {
    /// Twice the maximum signed relative error; can be negative when the
    /// model only under-estimates.
    PaperLiteral,
    /// Never negative; covers the worst under-estimate.
    Safe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaddingReport {
    pub mode: PaddingMode,
    /// (T_est - T_hist) / T_hist per sample.
    pub relative_errors: Vec<f64>,
    pub t_ratio: f64,
    /// The literal ratio came out negative: padding would shrink the
    /// prediction below the raw estimate.
    pub underestimation_warning: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QueryPosition {
    Interpolation,
    Extrapolation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub t_r_ms: f64,
    pub t_ratio: f64,
    pub t_predict_ms: f64,
    pub mode: PaddingMode,
    pub degree: u32,
    pub position: QueryPosition,
    /// The model produced a non-positive value and the reported figure is
    /// twice the largest historical observation.
    pub fallback_used: bool,
}

/// All exponent tuples (p1..pN) with sum <= degree, in a deterministic
/// graded order starting from the constant term.
pub fn multi_exponents(feature_count: usize, degree: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut current = vec![0u32; feature_count];
    fn rec(out: &mut Vec<Vec<u32>>, current: &mut Vec<u32>, pos: usize, remaining: u32) {
        if pos == current.len() {
            out.push(current.clone());
            return;
        }
        for p in 0..=remaining {
            current[pos] = p;
            rec(out, current, pos + 1, remaining - p);
        }
        current[pos] = 0;
    }
    rec(&mut out, &mut current, 0, degree);
    out.sort_by_key(|e| (e.iter().sum::<u32>(), e.clone()));
    out
}

pub fn term_count(feature_count: usize, degree: u32) -> usize {
    // C(N + P, P)
    let n = feature_count as u64;
    let p = degree as u64;
    let mut c = 1u64;
    for i in 1..=p {
        c = c * (n + i) / i;
    }
    c as usize
}

fn monomial(features: &[f64], exponents: &[u32]) -> f64 {
    features
        .iter()
        .zip(exponents)
        .map(|(f, e)| f.powi(*e as i32))
        .product()
}

fn check_dataset(dataset: &[TrainingSample]) -> Result<usize, PredictError> {
    let first = dataset.first().ok_or(PredictError::EmptyDataset)?;
    let n = first.features.len();
    for (i, s) in dataset.iter().enumerate() {
        if s.features.len() != n {
            return Err(PredictError::FeatureCountMismatch {
                index: i,
                expected: n,
                got: s.features.len(),
            });
        }
        if !(s.observed_ms > 0.0) {
            return Err(PredictError::NonPositiveObservation(i));
        }
    }
    Ok(n)
}

/// Least-squares fit of the full term set for the given degree.
///
/// Features are standardized internally for conditioning and the solved
/// coefficients are expanded back to original units, so the exported model
/// evaluates raw features directly. Rank-deficient designs take the
/// minimum-norm solution and are flagged.
pub fn fit(dataset: &[TrainingSample], degree: u32) -> Result<RegressionModel, PredictError> {
    let n = check_dataset(dataset)?;
    let exponents = multi_exponents(n, degree);
    let terms = exponents.len();
    if dataset.len() < terms {
        return Err(PredictError::Underdetermined {
            samples: dataset.len(),
            terms,
        });
    }

    // Standardize each feature column; constant columns keep scale 1 so the
    // transform stays invertible.
    let m = dataset.len();
    let mut mean = vec![0.0f64; n];
    let mut scale = vec![1.0f64; n];
    for j in 0..n {
        let mu = dataset.iter().map(|s| s.features[j]).sum::<f64>() / m as f64;
        let var = dataset
            .iter()
            .map(|s| (s.features[j] - mu).powi(2))
            .sum::<f64>()
            / m as f64;
        mean[j] = mu;
        if var.sqrt() > 1e-12 {
            scale[j] = var.sqrt();
        }
    }

    let design = DMatrix::from_fn(m, terms, |i, j| {
        let z: Vec<f64> = dataset[i]
            .features
            .iter()
            .enumerate()
            .map(|(k, f)| (f - mean[k]) / scale[k])
            .collect();
        monomial(&z, &exponents[j])
    });
    let targets = DVector::from_iterator(m, dataset.iter().map(|s| s.observed_ms));

    let svd = design.clone().svd(true, true);
    let max_singular = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let tol = max_singular * 1e-10 * (m.max(terms) as f64);
    let rank_deficient = svd.singular_values.iter().any(|&s| s <= tol);
    let beta_std = svd
        .solve(&targets, tol)
        .map_err(|e| PredictError::MalformedDataset(e.to_string()))?;

    let beta = destandardize(&exponents, beta_std.as_slice(), &mean, &scale);

    let sse: f64 = dataset
        .iter()
        .map(|s| {
            let est: f64 = exponents
                .iter()
                .zip(&beta)
                .map(|(e, b)| b * monomial(&s.features, e))
                .sum();
            (est - s.observed_ms).powi(2)
        })
        .sum();

    let mut fmin = vec![f64::INFINITY; n];
    let mut fmax = vec![f64::NEG_INFINITY; n];
    for s in dataset {
        for j in 0..n {
            fmin[j] = fmin[j].min(s.features[j]);
            fmax[j] = fmax[j].max(s.features[j]);
        }
    }

    Ok(RegressionModel {
        degree,
        feature_count: n,
        terms: exponents
            .into_iter()
            .zip(beta)
            .map(|(exponents, coefficient)| ModelTerm {
                exponents,
                coefficient,
            })
            .collect(),
        training_sse: sse,
        selection_error: sse,
        degenerate_features: rank_deficient,
        feature_min: fmin,
        feature_max: fmax,
    })
}

/// Expands a polynomial in standardized coordinates z_k = (s_k - mu_k)/sd_k
/// into coefficients over the raw features.
fn destandardize(exponents: &[Vec<u32>], beta_std: &[f64], mean: &[f64], scale: &[f64]) -> Vec<f64> {
    let n = mean.len();
    let index_of = |e: &[u32]| exponents.iter().position(|x| x.as_slice() == e);
    let mut beta = vec![0.0f64; exponents.len()];
    for (term, &b) in exponents.iter().zip(beta_std) {
        // Expand prod_k ((s_k - mu_k)/sd_k)^p_k via the binomial theorem.
        // Each factor contributes terms C(p,q) * s^q * (-mu)^(p-q) / sd^p.
        let mut partial: Vec<(Vec<u32>, f64)> = vec![(vec![0u32; n], b)];
        for (k, &p) in term.iter().enumerate() {
            if p == 0 {
                continue;
            }
            let mut next = Vec::new();
            for (exps, coef) in &partial {
                for q in 0..=p {
                    let binom = binomial(p, q);
                    let factor = binom as f64 * (-mean[k]).powi((p - q) as i32)
                        / scale[k].powi(p as i32);
                    let mut e = exps.clone();
                    e[k] = q;
                    next.push((e, coef * factor));
                }
            }
            partial = next;
        }
        for (e, coef) in partial {
            let idx = index_of(&e).expect("expanded exponent stays within degree");
            beta[idx] += coef;
        }
    }
    beta
}

fn binomial(n: u32, k: u32) -> u64 {
    let mut c = 1u64;
    for i in 1..=k as u64 {
        c = c * (n as u64 - k as u64 + i) / i;
    }
    c
}

impl RegressionModel {
    /// Eq.-style raw polynomial evaluation at the query features.
    pub fn evaluate(&self, features: &[f64]) -> Result<f64, PredictError> {
        if features.len() != self.feature_count {
            return Err(PredictError::QueryArity {
                expected: self.feature_count,
                got: features.len(),
            });
        }
        Ok(self
            .terms
            .iter()
            .map(|t| t.coefficient * monomial(features, &t.exponents))
            .sum())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PredictError> {
        serde_json::from_str(text).map_err(|e| PredictError::MalformedDataset(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionScorer {
    /// Leave-one-out cross-validated squared error.
    LeaveOneOut,
    /// Training sum of squared errors.
    TrainingResidual,
    /// LeaveOneOut when the dataset is at least twice the term count,
    /// TrainingResidual otherwise.
    Auto,
}

fn loocv_error(dataset: &[TrainingSample], degree: u32) -> Result<f64, PredictError> {
    let mut total = 0.0;
    for i in 0..dataset.len() {
        let mut rest: Vec<TrainingSample> = dataset.to_vec();
        let held = rest.remove(i);
        let model = fit(&rest, degree)?;
        let est = model.evaluate(&held.features)?;
        total += (est - held.observed_ms).powi(2);
    }
    Ok(total / dataset.len() as f64)
}

/// Fits degrees 1..=3 (skipping underdetermined ones), scores them, and
/// returns the minimizer. Ties go to the smallest degree.
pub fn select_model(
    dataset: &[TrainingSample],
    scorer: SelectionScorer,
) -> Result<RegressionModel, PredictError> {
    let n = check_dataset(dataset)?;
    let mut best: Option<RegressionModel> = None;
    for degree in 1..=3u32 {
        let terms = term_count(n, degree);
        if dataset.len() < terms {
            continue;
        }
        let use_loocv = match scorer {
            SelectionScorer::LeaveOneOut => true,
            SelectionScorer::TrainingResidual => false,
            SelectionScorer::Auto => dataset.len() >= 2 * terms && dataset.len() > terms,
        };
        let mut model = fit(dataset, degree)?;
        model.selection_error = if use_loocv {
            loocv_error(dataset, degree)?
        } else {
            model.training_sse
        };
        // Strict < keeps the smallest degree on ties.
        let better = match &best {
            None => true,
            Some(b) => model.selection_error < b.selection_error - 1e-12 * (1.0 + b.selection_error),
        };
        if better {
            best = Some(model);
        }
    }
    best.ok_or(PredictError::Underdetermined {
        samples: dataset.len(),
        terms: term_count(n, 1),
    })
}

pub fn padding_ratio(
    model: &RegressionModel,
    dataset: &[TrainingSample],
    mode: PaddingMode,
) -> Result<PaddingReport, PredictError> {
    check_dataset(dataset)?;
    let mut relative_errors = Vec::with_capacity(dataset.len());
    let mut max_signed = f64::NEG_INFINITY;
    let mut max_under = f64::NEG_INFINITY;
    for s in dataset {
        let t_est = model.evaluate(&s.features)?;
        let rel = (t_est - s.observed_ms) / s.observed_ms;
        relative_errors.push(rel);
        max_signed = max_signed.max(rel);
        if t_est > 0.0 {
            max_under = max_under.max((s.observed_ms - t_est) / t_est);
        } else {
            // A non-positive estimate under-estimates unboundedly; any
            // finite padding fails, so saturate.
            max_under = f64::INFINITY;
        }
    }
    let literal = 2.0 * max_signed;
    let (t_ratio, warning) = match mode {
        PaddingMode::PaperLiteral => (literal, literal < 0.0),
        PaddingMode::Safe => ((2.0 * max_under).max(0.0), false),
    };
    Ok(PaddingReport {
        mode,
        relative_errors,
        t_ratio,
        underestimation_warning: warning,
    })
}

/// Applies the padding ratio to the raw estimate at the query point.
///
/// `historical_max_ms` feeds the fallback: a non-positive padded value is
/// replaced by twice the largest historical observation and flagged.
pub fn predict(
    model: &RegressionModel,
    padding: &PaddingReport,
    features: &[f64],
    historical_max_ms: f64,
) -> Result<Prediction, PredictError> {
    let t_r = model.evaluate(features)?;
    let raw = t_r * (1.0 + padding.t_ratio);
    let position = if features
        .iter()
        .zip(model.feature_min.iter().zip(&model.feature_max))
        .all(|(f, (lo, hi))| f >= lo && f <= hi)
    {
        QueryPosition::Interpolation
    } else {
        QueryPosition::Extrapolation
    };
    let (t_predict, fallback_used) = if raw > 0.0 && raw.is_finite() {
        (raw, false)
    } else {
        let fb = 2.0 * historical_max_ms;
        if !(fb > 0.0) {
            return Err(PredictError::NegativePrediction(raw));
        }
        (fb, true)
    };
    Ok(Prediction {
        t_r_ms: t_r,
        t_ratio: padding.t_ratio,
        t_predict_ms: t_predict,
        mode: padding.mode,
        degree: model.degree,
        position,
        fallback_used,
    })
}

/// "138680 ms" renders as "138.68s".
pub fn format_seconds(ms: f64) -> String {
    format!("{:.2}s", ms / 1000.0)
}

/// Loads a delimited dataset whose header names the feature columns and
/// ends with `observed_ms`.
pub fn load_dataset(text: &str) -> Result<(Vec<String>, Vec<TrainingSample>), PredictError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| PredictError::MalformedDataset(e.to_string()))?
        .iter()
        .map(|h| h.to_string())
        .collect();
    if headers.last().map(String::as_str) != Some("observed_ms") {
        return Err(PredictError::MalformedDataset(
            "last column must be observed_ms".into(),
        ));
    }
    let features: Vec<String> = headers[..headers.len() - 1].to_vec();
    if features.is_empty() {
        return Err(PredictError::MalformedDataset(
            "at least one feature column required".into(),
        ));
    }
    let mut samples = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| PredictError::MalformedDataset(e.to_string()))?;
        if row.len() != headers.len() {
            return Err(PredictError::MalformedDataset(format!(
                "row {} has {} columns, expected {}",
                i + 1,
                row.len(),
                headers.len()
            )));
        }
        let mut values = Vec::with_capacity(row.len());
        for field in row.iter() {
            values.push(field.parse::<f64>().map_err(|_| {
                PredictError::MalformedDataset(format!("row {}: bad number {field:?}", i + 1))
            })?);
        }
        let observed_ms = values.pop().expect("non-empty row");
        samples.push(TrainingSample {
            features: values,
            observed_ms,
        });
    }
    check_dataset(&samples)?;
    Ok((features, samples))
}

pub fn render_dataset(features: &[String], samples: &[TrainingSample]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{},observed_ms", features.join(","));
    for s in samples {
        let row: Vec<String> = s.features.iter().map(|f| f.to_string()).collect();
        let _ = writeln!(out, "{},{}", row.join(","), s.observed_ms);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn samples_1d(f: impl Fn(f64) -> f64, xs: &[f64]) -> Vec<TrainingSample> {
        xs.iter()
            .map(|&x| TrainingSample {
                features: vec![x],
                observed_ms: f(x),
            })
            .collect()
    }

    #[test]
    fn quadratic_recovered_exactly() {
        let xs: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        let data = samples_1d(|s| 2.0 + 3.0 * s + 0.5 * s * s, &xs);
        let model = fit(&data, 2).unwrap();
        let want = [2.0, 3.0, 0.5];
        for (term, w) in model.terms.iter().zip(want) {
            assert_relative_eq!(term.coefficient, w, max_relative = 1e-9);
        }
        assert!(model.training_sse < 1e-12);
    }

    #[test]
    fn constant_samples_minimum_norm() {
        let data = samples_1d(|_| 100.0, &[5.0, 5.0, 5.0, 5.0, 5.0]);
        let model = fit(&data, 2).unwrap();
        assert!(model.degenerate_features);
        assert_relative_eq!(model.evaluate(&[5.0]).unwrap(), 100.0, max_relative = 1e-9);
        assert!(model.training_sse < 1e-9);
    }

    #[test]
    fn n2_p3_term_count_is_ten() {
        assert_eq!(term_count(2, 3), 10);
        let exps = multi_exponents(2, 3);
        assert_eq!(exps.len(), 10);
        assert!(exps.contains(&vec![1, 2]));
        assert!(exps.contains(&vec![2, 1]));
        assert!(exps.contains(&vec![0, 0]));
    }

    #[test]
    fn cross_term_recovered() {
        let mut data = Vec::new();
        for a in 0..4 {
            for b in 0..4 {
                let (s1, s2) = (a as f64, b as f64);
                data.push(TrainingSample {
                    features: vec![s1, s2],
                    observed_ms: 5.0 + 2.0 * s1 * s2 + s2 * s2 + 1.0,
                });
            }
        }
        let model = fit(&data, 2).unwrap();
        let est = model.evaluate(&[2.5, 1.5]).unwrap();
        assert_relative_eq!(est, 5.0 + 2.0 * 2.5 * 1.5 + 1.5 * 1.5 + 1.0, max_relative = 1e-9);
    }

    #[test]
    fn underdetermined_rejected() {
        let data = samples_1d(|s| s, &[1.0, 2.0]);
        assert!(matches!(
            fit(&data, 2),
            Err(PredictError::Underdetermined { samples: 2, terms: 3 })
        ));
    }

    #[test]
    fn non_positive_observation_rejected() {
        let data = vec![TrainingSample {
            features: vec![1.0],
            observed_ms: 0.0,
        }];
        assert!(matches!(fit(&data, 1), Err(PredictError::NonPositiveObservation(0))));
    }

    #[test]
    fn exact_quadratic_selects_p2() {
        let xs: Vec<f64> = (1..=20).map(|i| i as f64).collect();
        let data = samples_1d(|s| 10.0 + s + 0.25 * s * s, &xs);
        let model = select_model(&data, SelectionScorer::Auto).unwrap();
        assert_eq!(model.degree, 2);
        let trained = select_model(&data, SelectionScorer::TrainingResidual).unwrap();
        assert_eq!(trained.degree, 2, "P=3 ties on residual, smaller P wins");
    }

    #[test]
    fn exact_linear_selects_p1() {
        let xs: Vec<f64> = (1..=12).map(|i| i as f64).collect();
        let data = samples_1d(|s| 7.0 + 2.0 * s, &xs);
        let model = select_model(&data, SelectionScorer::Auto).unwrap();
        assert_eq!(model.degree, 1);
    }

    #[test]
    fn infeasible_degrees_skipped() {
        // 3 samples, N=3: P=2 needs 10 terms, so only P=1 (4 terms) would
        // fit, but 3 < 4 means even P=1 is underdetermined.
        let data = vec![
            TrainingSample { features: vec![1.0, 2.0, 3.0], observed_ms: 10.0 },
            TrainingSample { features: vec![2.0, 1.0, 4.0], observed_ms: 12.0 },
            TrainingSample { features: vec![3.0, 3.0, 1.0], observed_ms: 14.0 },
        ];
        assert!(matches!(
            select_model(&data, SelectionScorer::Auto),
            Err(PredictError::Underdetermined { .. })
        ));
        // With 4 samples P=1 becomes feasible and is selected by default.
        let mut enough = data.clone();
        enough.push(TrainingSample { features: vec![4.0, 2.0, 2.0], observed_ms: 16.0 });
        assert_eq!(select_model(&enough, SelectionScorer::Auto).unwrap().degree, 1);
    }

    fn fixed_error_model(rels: &[f64]) -> (RegressionModel, Vec<TrainingSample>) {
        // One feature, model is identity on the feature; observations are
        // chosen so the relative errors come out as requested.
        let data: Vec<TrainingSample> = rels
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let est = 100.0 + i as f64; // model output at feature value
                TrainingSample {
                    features: vec![est],
                    observed_ms: est / (1.0 + r),
                }
            })
            .collect();
        let model = RegressionModel {
            degree: 1,
            feature_count: 1,
            terms: vec![
                ModelTerm { exponents: vec![0], coefficient: 0.0 },
                ModelTerm { exponents: vec![1], coefficient: 1.0 },
            ],
            training_sse: 0.0,
            selection_error: 0.0,
            degenerate_features: false,
            feature_min: vec![100.0],
            feature_max: vec![103.0],
        };
        (model, data)
    }

    #[test]
    fn literal_ratio_is_twice_max_signed_error() {
        let (model, data) = fixed_error_model(&[0.05, -0.02, 0.01]);
        let report = padding_ratio(&model, &data, PaddingMode::PaperLiteral).unwrap();
        assert_relative_eq!(report.t_ratio, 0.10, max_relative = 1e-9);
        assert!(!report.underestimation_warning);
    }

    #[test]
    fn perfect_fit_zero_ratio() {
        let (model, data) = fixed_error_model(&[0.0, 0.0]);
        for mode in [PaddingMode::PaperLiteral, PaddingMode::Safe] {
            let report = padding_ratio(&model, &data, mode).unwrap();
            assert_relative_eq!(report.t_ratio, 0.0, epsilon = 1e-12);
            let p = predict(&model, &report, &[100.0], 200.0).unwrap();
            assert_relative_eq!(p.t_predict_ms, p.t_r_ms, epsilon = 1e-12);
        }
    }

    #[test]
    fn all_negative_errors_warn_in_literal_mode() {
        let (model, data) = fixed_error_model(&[-0.05, -0.01]);
        let report = padding_ratio(&model, &data, PaddingMode::PaperLiteral).unwrap();
        assert_relative_eq!(report.t_ratio, -0.02, max_relative = 1e-9);
        assert!(report.underestimation_warning);

        let safe = padding_ratio(&model, &data, PaddingMode::Safe).unwrap();
        // Worst under-estimate in T_est convention: rel = -0.05 means
        // hist = est/(0.95), so (hist - est)/est = 1/0.95 - 1.
        assert_relative_eq!(safe.t_ratio, 2.0 * (1.0 / 0.95 - 1.0), max_relative = 1e-9);
        assert!(!safe.underestimation_warning);
    }

    #[test]
    fn safe_mode_covers_all_training_samples() {
        let (model, data) = fixed_error_model(&[-0.08, 0.03, -0.01]);
        let report = padding_ratio(&model, &data, PaddingMode::Safe).unwrap();
        for s in &data {
            let est = model.evaluate(&s.features).unwrap();
            assert!(est * (1.0 + report.t_ratio) >= s.observed_ms - 1e-9);
        }
    }

    #[test]
    fn eq3_arithmetic() {
        let (model, _) = fixed_error_model(&[0.0]);
        let report = PaddingReport {
            mode: PaddingMode::PaperLiteral,
            relative_errors: vec![],
            t_ratio: 0.10,
            underestimation_warning: false,
        };
        let p = predict(&model, &report, &[100.0], 1.0).unwrap();
        assert_relative_eq!(p.t_r_ms, 100.0, epsilon = 1e-12);
        assert_relative_eq!(p.t_predict_ms, 110.0, epsilon = 1e-9);
        assert_relative_eq!(p.t_predict_ms / p.t_r_ms - 1.0, report.t_ratio, epsilon = 1e-9);
    }

    #[test]
    fn negative_prediction_falls_back() {
        let (model, _) = fixed_error_model(&[0.0]);
        let report = PaddingReport {
            mode: PaddingMode::PaperLiteral,
            relative_errors: vec![],
            t_ratio: -1.5,
            underestimation_warning: true,
        };
        let p = predict(&model, &report, &[100.0], 60_000.0).unwrap();
        assert!(p.fallback_used);
        assert_relative_eq!(p.t_predict_ms, 120_000.0, epsilon = 1e-9);
        assert!(matches!(
            predict(&model, &report, &[100.0], 0.0),
            Err(PredictError::NegativePrediction(_))
        ));
    }

    #[test]
    fn hull_flagging() {
        let (model, _) = fixed_error_model(&[0.0, 0.0]);
        let report = PaddingReport {
            mode: PaddingMode::Safe,
            relative_errors: vec![],
            t_ratio: 0.0,
            underestimation_warning: false,
        };
        let inside = predict(&model, &report, &[101.0], 1.0).unwrap();
        assert_eq!(inside.position, QueryPosition::Interpolation);
        let outside = predict(&model, &report, &[250.0], 1.0).unwrap();
        assert_eq!(outside.position, QueryPosition::Extrapolation);
    }

    #[test]
    fn seconds_formatting() {
        assert_eq!(format_seconds(138_680.0), "138.68s");
        assert_eq!(format_seconds(1_000.0), "1.00s");
    }

    #[test]
    fn dataset_round_trip() {
        let text = "size_mb,bandwidth,observed_ms\n1,10,120\n2,10,260\n3,8,455.5\n";
        let (features, samples) = load_dataset(text).unwrap();
        assert_eq!(features, vec!["size_mb", "bandwidth"]);
        assert_eq!(samples.len(), 3);
        assert_eq!(samples[2].observed_ms, 455.5);
        let rendered = render_dataset(&features, &samples);
        let (f2, s2) = load_dataset(&rendered).unwrap();
        assert_eq!(features, f2);
        assert_eq!(samples, s2);
    }

    #[test]
    fn dataset_header_validated() {
        assert!(load_dataset("a,b\n1,2\n").is_err());
        assert!(load_dataset("observed_ms\n5\n").is_err());
        assert!(load_dataset("s,observed_ms\n1,zero\n").is_err());
    }

    #[test]
    fn model_json_round_trip() {
        let xs: Vec<f64> = (1..=8).map(|i| i as f64).collect();
        let data = samples_1d(|s| 3.0 * s + 1.0, &xs);
        let model = fit(&data, 1).unwrap();
        let back = RegressionModel::from_json(&model.to_json()).unwrap();
        assert_eq!(model, back);
    }
}
