//! Backtrack-pattern features and empirical-CDF rarity scoring.
//!
//! The pattern anchored at page B is a consecutive triple `A → B → C` where
//! the user advances into B (`progress(A) < progress(B)`) and then backtracks
//! out of it (`progress(C) < progress(B)`). Per trace and candidate page we
//! extract the number of such occurrences and their intensity, the longest
//! run of occurrences whose neighbouring timestamps are closer than the
//! window.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{PageModel, ProgressMap};
use crate::types::{PageId, Timestamp, UserId, UserTrace};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectError {
    #[error("page {0} has no progress value")]
    UnknownPage(PageId),
    #[error("cannot score an empty population")]
    EmptyPopulation,
    #[error("every task page is excluded from detection")]
    NoCandidatePages,
    #[error("invalid detection config: {0}")]
    InvalidConfig(String),
}

/// One advance-then-backtrack occurrence around `page_b`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternOccurrence {
    pub page_b: PageId,
    /// Index of the B visit in the trace's event list.
    pub trace_index: usize,
    /// Arrival time at C, i.e. when the backtrack happened.
    pub ts: Timestamp,
}

/// Returns every occurrence of the pattern anchored at `page_b`, in trace
/// order. Events on pages without a progress value are skipped over.
pub fn find_patterns(
    trace: &UserTrace,
    progress: &ProgressMap,
    page_b: &PageId,
) -> Result<Vec<PatternOccurrence>, DetectError> {
    let anchor = progress
        .get(page_b)
        .ok_or_else(|| DetectError::UnknownPage(page_b.clone()))?;
    let visible: Vec<(usize, f64)> = trace
        .events()
        .iter()
        .enumerate()
        .filter_map(|(i, e)| progress.get(&e.page).map(|v| (i, v)))
        .collect();
    let events = trace.events();
    Ok(visible
        .windows(3)
        .filter(|w| {
            events[w[1].0].page == *page_b && w[0].1 < anchor && w[2].1 < anchor
        })
        .map(|w| PatternOccurrence {
            page_b: page_b.clone(),
            trace_index: w[1].0,
            ts: events[w[2].0].ts,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    pub count: u32,
    pub intensity: u32,
}

impl FeatureVector {
    pub fn get(&self, feature: Feature) -> u32 {
        match feature {
            Feature::Count => self.count,
            Feature::Intensity => self.intensity,
        }
    }
}

/// Longest run of timestamps whose neighbouring gaps are strictly below
/// `window_ms`.
fn longest_run(ts: &[Timestamp], window_ms: u64) -> u32 {
    if ts.is_empty() {
        return 0;
    }
    let mut best = 1;
    let mut run = 1;
    for pair in ts.windows(2) {
        if pair[1].saturating_sub(pair[0]) < window_ms {
            run += 1;
            best = best.max(run);
        } else {
            run = 1;
        }
    }
    best
}

pub fn compute_features(
    trace: &UserTrace,
    progress: &ProgressMap,
    page_b: &PageId,
    window_ms: u64,
) -> Result<FeatureVector, DetectError> {
    let occurrences = find_patterns(trace, progress, page_b)?;
    let ts: Vec<Timestamp> = occurrences.iter().map(|o| o.ts).collect();
    Ok(FeatureVector {
        count: ts.len() as u32,
        intensity: longest_run(&ts, window_ms),
    })
}

/// Empirical distribution of one feature over the scored population.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf {
    sorted_values: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn sorted_values(&self) -> &[f64] {
        &self.sorted_values
    }

    pub fn n(&self) -> usize {
        self.sorted_values.len()
    }

    /// Number of population values strictly below `v`.
    pub fn count_below(&self, v: f64) -> usize {
        self.sorted_values.partition_point(|&x| x < v)
    }

    /// Number of population values at or below `v`.
    pub fn count_at_or_below(&self, v: f64) -> usize {
        self.sorted_values.partition_point(|&x| x <= v)
    }
}

pub fn fit_cdf(values: &[f64]) -> Result<EmpiricalCdf, DetectError> {
    if values.is_empty() {
        return Err(DetectError::EmptyPopulation);
    }
    let mut sorted_values = values.to_vec();
    sorted_values.sort_by(f64::total_cmp);
    Ok(EmpiricalCdf { sorted_values })
}

/// How a feature value becomes a score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreFormula {
    /// Fraction of the population strictly below `v`: rare, large values
    /// score high.
    #[default]
    Consistent,
    /// `1 − CDF(v)` with `CDF(v) = P(X ≤ v)`.
    Literal,
}

impl FromStr for ScoreFormula {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "consistent" => Ok(Self::Consistent),
            "literal" => Ok(Self::Literal),
            other => Err(format!("unknown score formula {other:?}")),
        }
    }
}

pub fn score_at(cdf: &EmpiricalCdf, v: f64, formula: ScoreFormula) -> f64 {
    let n = cdf.n() as f64;
    match formula {
        ScoreFormula::Consistent => cdf.count_below(v) as f64 / n,
        ScoreFormula::Literal => 1.0 - cdf.count_at_or_below(v) as f64 / n,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Count,
    Intensity,
}

impl Feature {
    pub const ALL: [Feature; 2] = [Feature::Count, Feature::Intensity];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Count => "count",
            Feature::Intensity => "intensity",
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How per-(page, feature) scores merge into the trace score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureCombine {
    #[default]
    Max,
    CountOnly,
    IntensityOnly,
}

impl FeatureCombine {
    fn uses(self, feature: Feature) -> bool {
        match self {
            FeatureCombine::Max => true,
            FeatureCombine::CountOnly => feature == Feature::Count,
            FeatureCombine::IntensityOnly => feature == Feature::Intensity,
        }
    }
}

impl FromStr for FeatureCombine {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "max" => Ok(Self::Max),
            "count_only" => Ok(Self::CountOnly),
            "intensity_only" => Ok(Self::IntensityOnly),
            other => Err(format!("unknown feature combination {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    pub epsilon: f64,
    pub window_ms: u64,
    pub score_formula: ScoreFormula,
    pub feature_combine: FeatureCombine,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.8,
            window_ms: 120_000,
            score_formula: ScoreFormula::Consistent,
            feature_combine: FeatureCombine::Max,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<(), DetectError> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(DetectError::InvalidConfig(format!(
                "epsilon must lie in [0, 1], got {}",
                self.epsilon
            )));
        }
        if self.window_ms == 0 {
            return Err(DetectError::InvalidConfig("window_ms must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyReport {
    pub user: UserId,
    pub per_page_features: BTreeMap<PageId, FeatureVector>,
    pub per_page_scores: BTreeMap<(PageId, Feature), f64>,
    pub score: f64,
    pub flagged: bool,
}

impl AnomalyReport {
    /// Candidate page holding the highest contributing score; `None` when the
    /// trace scores zero. Ties go to the smallest page id.
    pub fn top_page(&self) -> Option<&PageId> {
        if self.score <= 0.0 {
            return None;
        }
        self.per_page_scores
            .iter()
            .find(|(_, &s)| s == self.score)
            .map(|((page, _), _)| page)
    }
}

/// Pages that can anchor a pattern: reachable, not excluded, and below the
/// maximum progress.
pub fn candidate_pages(model: &PageModel) -> Vec<PageId> {
    model
        .progress
        .values()
        .iter()
        .filter(|(p, &v)| v < 1.0 && **p != model.task.final_page && !model.excluded.contains(*p))
        .map(|(p, _)| p.clone())
        .collect()
}

/// Features and per-(page, feature) scores for a population; the threshold
/// is applied afterwards so the same scores can be cut at many ε.
#[derive(Debug, Clone)]
pub struct ScoredPopulation {
    reports: Vec<AnomalyReport>,
}

impl ScoredPopulation {
    /// Extracts features for every trace, fits one CDF per (page, feature)
    /// across the population, and scores each trace.
    pub fn score(
        traces: &[UserTrace],
        model: &PageModel,
        formula: ScoreFormula,
        combine: FeatureCombine,
        window_ms: u64,
    ) -> Result<Self, DetectError> {
        if traces.is_empty() {
            return Err(DetectError::EmptyPopulation);
        }
        let pages = candidate_pages(model);
        if pages.is_empty() {
            return Err(DetectError::NoCandidatePages);
        }

        let features: Vec<BTreeMap<PageId, FeatureVector>> = traces
            .iter()
            .map(|t| {
                pages
                    .iter()
                    .map(|b| compute_features(t, &model.progress, b, window_ms).map(|f| (b.clone(), f)))
                    .collect()
            })
            .collect::<Result<_, _>>()?;

        let mut cdfs = BTreeMap::new();
        for page in &pages {
            for feature in Feature::ALL {
                let column: Vec<f64> = features
                    .iter()
                    .map(|f| f64::from(f[page].get(feature)))
                    .collect();
                cdfs.insert((page.clone(), feature), fit_cdf(&column)?);
            }
        }

        let reports = traces
            .iter()
            .zip(features)
            .map(|(trace, per_page_features)| {
                let per_page_scores: BTreeMap<(PageId, Feature), f64> = cdfs
                    .iter()
                    .map(|(key, cdf)| {
                        let v = f64::from(per_page_features[&key.0].get(key.1));
                        (key.clone(), score_at(cdf, v, formula))
                    })
                    .collect();
                let score = per_page_scores
                    .iter()
                    .filter(|((_, f), _)| combine.uses(*f))
                    .map(|(_, &s)| s)
                    .fold(0.0, f64::max);
                AnomalyReport {
                    user: trace.user().clone(),
                    per_page_features,
                    per_page_scores,
                    score,
                    flagged: false,
                }
            })
            .collect();
        Ok(Self { reports })
    }

    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    /// Flags traces with `score ≥ epsilon`, ordered by score descending then
    /// user id ascending.
    pub fn flag(&self, epsilon: f64) -> Vec<AnomalyReport> {
        let mut reports: Vec<AnomalyReport> = self
            .reports
            .iter()
            .cloned()
            .map(|mut r| {
                r.flagged = r.score >= epsilon;
                r
            })
            .collect();
        reports.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.user.cmp(&b.user)));
        reports
    }

    pub fn flagged_users(&self, epsilon: f64) -> BTreeSet<UserId> {
        self.reports
            .iter()
            .filter(|r| r.score >= epsilon)
            .map(|r| r.user.clone())
            .collect()
    }
}

/// Scores and flags every trace against the model.
pub fn detect(
    traces: &[UserTrace],
    model: &PageModel,
    config: &DetectionConfig,
) -> Result<Vec<AnomalyReport>, DetectError> {
    config.validate()?;
    let scored = ScoredPopulation::score(
        traces,
        model,
        config.score_formula,
        config.feature_combine,
        config.window_ms,
    )?;
    Ok(scored.flag(config.epsilon))
}
