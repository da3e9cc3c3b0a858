//! Precision / recall of detector output against failure labels.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{AnomalyReport, DetectError, DetectionConfig, ScoredPopulation};
use crate::model::PageModel;
use crate::types::{UserId, UserTrace};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("no label for user {0}")]
    MissingLabel(UserId),
    #[error("at least one threshold is required")]
    NoThresholds,
    #[error(transparent)]
    Detect(#[from] DetectError),
}

/// Confusion counts and derived ratios. Zero denominators yield 0.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            tp,
            fp,
            tn,
            fn_,
            precision,
            recall,
            f1,
        }
    }

    pub fn population(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn flagged(&self) -> usize {
        self.tp + self.fp
    }
}

/// Tallies `(user, flagged)` verdicts against labels.
pub fn evaluate_verdicts<'a, I>(verdicts: I, labels: &BTreeMap<UserId, bool>) -> Result<Metrics, EvalError>
where
    I: IntoIterator<Item = (&'a UserId, bool)>,
{
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (user, flagged) in verdicts {
        let label = *labels
            .get(user)
            .ok_or_else(|| EvalError::MissingLabel(user.clone()))?;
        match (flagged, label) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(Metrics::from_counts(tp, fp, tn, fn_))
}

pub fn evaluate(reports: &[AnomalyReport], labels: &BTreeMap<UserId, bool>) -> Result<Metrics, EvalError> {
    evaluate_verdicts(reports.iter().map(|r| (&r.user, r.flagged)), labels)
}

/// Metrics at each threshold, fitting features and CDFs only once.
pub fn sweep_threshold(
    traces: &[UserTrace],
    model: &PageModel,
    labels: &BTreeMap<UserId, bool>,
    config: &DetectionConfig,
    epsilons: &[f64],
) -> Result<Vec<(f64, Metrics)>, EvalError> {
    if epsilons.is_empty() {
        return Err(EvalError::NoThresholds);
    }
    let scored = ScoredPopulation::score(
        traces,
        model,
        config.score_formula,
        config.feature_combine,
        config.window_ms,
    )?;
    sweep_scored(&scored, labels, epsilons)
}

pub fn sweep_scored(
    scored: &ScoredPopulation,
    labels: &BTreeMap<UserId, bool>,
    epsilons: &[f64],
) -> Result<Vec<(f64, Metrics)>, EvalError> {
    if epsilons.is_empty() {
        return Err(EvalError::NoThresholds);
    }
    epsilons
        .iter()
        .map(|&eps| evaluate(&scored.flag(eps), labels).map(|m| (eps, m)))
        .collect()
}
