use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{fit_biexponential, fit_deformed_exponential, fit_superradiant, DecayTrace, FitConfig, FitResult};
use crate::error::{invalid, Error, Result};

/// Scores of the collective model and the baselines on one trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    /// Final loss per model.
    pub scores: BTreeMap<String, f64>,
    /// Sum of squared residuals per model.
    pub sum_squares: BTreeMap<String, f64>,
    /// Each model's loss over the collective model's.
    pub ratios: BTreeMap<String, f64>,
    /// Each model's sum of squares over the collective model's.
    pub sum_squares_ratios: BTreeMap<String, f64>,
    pub results: BTreeMap<String, FitResult>,
    /// Models whose fit failed, with the reason.
    pub errors: BTreeMap<String, String>,
}

/// Runs the collective fit and both baselines with the same loss and
/// detector response. A failing sub-fit is recorded rather than returned;
/// a fit that stopped on its budget still contributes its best point.
pub fn compare_models(trace: &DecayTrace, config: &FitConfig) -> Result<ModelComparison> {
    trace.validate()?;
    config.validate()?;
    if trace.counts.iter().all(|&c| c == 0.0) {
        return invalid("trace holds no counts");
    }
    let loss = config.loss;
    let (sr, (bi, de)) = rayon::join(
        || fit_superradiant(trace, config),
        || rayon::join(|| fit_biexponential(trace, loss), || fit_deformed_exponential(trace, None, loss)),
    );
    let mut cmp = ModelComparison {
        scores: BTreeMap::new(),
        sum_squares: BTreeMap::new(),
        ratios: BTreeMap::new(),
        sum_squares_ratios: BTreeMap::new(),
        results: BTreeMap::new(),
        errors: BTreeMap::new(),
    };
    for (name, r) in [("superradiant", sr), ("biexponential", bi), ("deformed_exponential", de)] {
        let fitted = match r {
            Ok(f) => Some(f),
            Err(e) => {
                cmp.errors.insert(name.to_string(), e.to_string());
                match e.root() {
                    Error::Fit { best: Some(b), .. } => Some((**b).clone()),
                    _ => None,
                }
            }
        };
        if let Some(f) = fitted {
            cmp.scores.insert(name.to_string(), f.residual);
            cmp.sum_squares.insert(name.to_string(), f.sum_squares);
            cmp.results.insert(name.to_string(), f);
        }
    }
    if let (Some(&s), Some(&q)) = (cmp.scores.get("superradiant"), cmp.sum_squares.get("superradiant")) {
        for (k, v) in &cmp.scores {
            cmp.ratios.insert(k.clone(), v / s);
        }
        for (k, v) in &cmp.sum_squares {
            cmp.sum_squares_ratios.insert(k.clone(), v / q);
        }
    }
    let scores = cmp.scores.clone();
    for r in cmp.results.values_mut() {
        r.per_model_scores = scores.clone();
    }
    Ok(cmp)
}
