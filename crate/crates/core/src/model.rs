//! Markov page model built from projected traces.
//!
//! Pages are nodes carrying a progress value (closeness to task completion);
//! edges carry the empirical transition probability. The final page is
//! treated as absorbing for every linear solve, while its observed outgoing
//! counts stay in [`TransitionModel`] for rendering.
//!
//! Two progress orderings are available:
//!
//! * [`ProgressMethod::ShortestPath`]: hop distance to the final page.
//! * [`ProgressMethod::HittingTime`]: expected steps to the final page under
//!   the estimated chain, from `(I − Q) h = 1`.
//!
//! Only the order the values induce matters downstream.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, Matrix, SolveError};
use crate::types::{PageId, TaskSpec, UserTrace};

/// Maximum accepted `‖A x − b‖∞` for the absorbing-chain solves.
pub const RESIDUAL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("no trace contains a transition between task pages")]
    NoTransitions,
    #[error("final page {final_page} is unreachable from begin page {begin}")]
    FinalUnreachableFromBegin { begin: PageId, final_page: PageId },
    #[error("singular absorbing-chain system: {0}")]
    SingularSystem(SolveError),
    #[error("solve residual {0:e} exceeds tolerance")]
    ResidualTooLarge(f64),
    #[error("unknown page {0}")]
    UnknownPage(PageId),
    #[error("invalid transition model: {0}")]
    InvalidModel(String),
    #[error("exclusion threshold must be positive, got {0}")]
    InvalidTau(f64),
}

impl From<SolveError> for ModelError {
    fn from(e: SolveError) -> Self {
        ModelError::SingularSystem(e)
    }
}

/// Transition counts and row-normalised probabilities over a sorted page list.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    pages: Vec<PageId>,
    counts: Vec<Vec<u64>>,
    probs: Vec<Vec<f64>>,
}

impl TransitionModel {
    /// Builds a model from raw counts. `pages` is sorted and deduplicated;
    /// `counts` is indexed in the caller's original page order.
    pub fn from_counts(pages: Vec<PageId>, counts: Vec<Vec<u64>>) -> Result<Self, ModelError> {
        let n = pages.len();
        if counts.len() != n || counts.iter().any(|r| r.len() != n) {
            return Err(ModelError::InvalidModel(format!(
                "counts must be {n}x{n} to match the page list"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| pages[a].cmp(&pages[b]));
        if order.windows(2).any(|w| pages[w[0]] == pages[w[1]]) {
            return Err(ModelError::InvalidModel("duplicate page".into()));
        }
        let sorted_pages = order.iter().map(|&i| pages[i].clone()).collect();
        let sorted_counts: Vec<Vec<u64>> = order
            .iter()
            .map(|&i| order.iter().map(|&j| counts[i][j]).collect())
            .collect();
        let probs = sorted_counts
            .iter()
            .map(|row| {
                let total: u64 = row.iter().sum();
                row.iter()
                    .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
                    .collect()
            })
            .collect();
        Ok(Self {
            pages: sorted_pages,
            counts: sorted_counts,
            probs,
        })
    }

    pub fn pages(&self) -> &[PageId] {
        &self.pages
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn probs(&self) -> &[Vec<f64>] {
        &self.probs
    }

    pub fn index_of(&self, page: &PageId) -> Option<usize> {
        self.pages.binary_search(page).ok()
    }

    /// Probability of `from → to`; zero for unknown pages.
    pub fn prob(&self, from: &PageId, to: &PageId) -> f64 {
        match (self.index_of(from), self.index_of(to)) {
            (Some(i), Some(j)) => self.probs[i][j],
            _ => 0.0,
        }
    }

    pub fn out_degree(&self, i: usize) -> usize {
        self.counts[i].iter().filter(|&&c| c > 0).count()
    }
}

/// Counts adjacent page pairs across all traces and row-normalises them.
///
/// Pairs touching a page outside the task are skipped.
pub fn estimate_transitions(
    traces: &[UserTrace],
    task: &TaskSpec,
) -> Result<TransitionModel, ModelError> {
    let pages: Vec<PageId> = task.pages.iter().cloned().collect();
    let n = pages.len();
    let mut counts = vec![vec![0u64; n]; n];
    let index = |p: &PageId| pages.binary_search(p).ok();
    let mut total = 0u64;
    for trace in traces {
        for pair in trace.events().windows(2) {
            if let (Some(i), Some(j)) = (index(&pair[0].page), index(&pair[1].page)) {
                counts[i][j] += 1;
                total += 1;
            }
        }
    }
    if total == 0 {
        return Err(ModelError::NoTransitions);
    }
    TransitionModel::from_counts(pages, counts)
}

/// Per-page progress in `[0, 1]`, defined only for pages that can reach the
/// final page.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProgressMap {
    values: BTreeMap<PageId, f64>,
}

impl ProgressMap {
    pub fn from_values(values: BTreeMap<PageId, f64>) -> Self {
        Self { values }
    }

    pub fn get(&self, page: &PageId) -> Option<f64> {
        self.values.get(page).copied()
    }

    pub fn is_reachable(&self, page: &PageId) -> bool {
        self.values.contains_key(page)
    }

    pub fn reachable(&self) -> impl Iterator<Item = &PageId> {
        self.values.keys()
    }

    pub fn values(&self) -> &BTreeMap<PageId, f64> {
        &self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProgressMethod {
    #[default]
    HittingTime,
    ShortestPath,
}

impl FromStr for ProgressMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hitting_time" => Ok(Self::HittingTime),
            "shortest_path" => Ok(Self::ShortestPath),
            other => Err(format!("unknown progress method {other:?}")),
        }
    }
}

fn task_indices(model: &TransitionModel, task: &TaskSpec) -> Result<(usize, usize), ModelError> {
    let begin = model
        .index_of(&task.begin)
        .ok_or_else(|| ModelError::UnknownPage(task.begin.clone()))?;
    let fin = model
        .index_of(&task.final_page)
        .ok_or_else(|| ModelError::UnknownPage(task.final_page.clone()))?;
    Ok((begin, fin))
}

/// Hop distance to the final page along positive-probability edges, ignoring
/// the final page's own outgoing edges. `None` means unreachable.
fn hops_to_final(model: &TransitionModel, fin: usize) -> Vec<Option<usize>> {
    let n = model.pages.len();
    let mut dist = vec![None; n];
    dist[fin] = Some(0);
    let mut queue = VecDeque::from([fin]);
    while let Some(target) = queue.pop_front() {
        let d = dist[target].expect("queued pages have a distance");
        for source in 0..n {
            if source != fin && dist[source].is_none() && model.probs[source][target] > 0.0 {
                dist[source] = Some(d + 1);
                queue.push_back(source);
            }
        }
    }
    dist
}

fn unreachable_error(task: &TaskSpec) -> ModelError {
    ModelError::FinalUnreachableFromBegin {
        begin: task.begin.clone(),
        final_page: task.final_page.clone(),
    }
}

/// Progress as `(D − d(p)) / D`, with `d` the hop distance to the final page
/// and `D` the largest finite distance.
pub fn shortest_path_progress(
    model: &TransitionModel,
    task: &TaskSpec,
) -> Result<ProgressMap, ModelError> {
    let (begin, fin) = task_indices(model, task)?;
    let dist = hops_to_final(model, fin);
    if dist[begin].is_none() {
        return Err(unreachable_error(task));
    }
    let max_d = dist.iter().flatten().copied().max().unwrap_or(0);
    let values = dist
        .iter()
        .enumerate()
        .filter_map(|(i, d)| {
            let d = (*d)?;
            let progress = if max_d == 0 {
                1.0
            } else {
                (max_d - d) as f64 / max_d as f64
            };
            Some((model.pages[i].clone(), progress))
        })
        .collect();
    Ok(ProgressMap { values })
}

/// Values solved over the transient pages that can reach the final page.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSolution {
    pub values: BTreeMap<PageId, f64>,
    pub residual: f64,
}

/// Transient pages (those that reach the final page, final excluded) and
/// `I − Q` over them. Probability mass leaking to pages that cannot reach
/// the final page leaves the system like absorption does.
fn absorbing_system(
    model: &TransitionModel,
    task: &TaskSpec,
) -> Result<(Vec<usize>, usize, Matrix), ModelError> {
    let (begin, fin) = task_indices(model, task)?;
    let dist = hops_to_final(model, fin);
    if dist[begin].is_none() {
        return Err(unreachable_error(task));
    }
    let transient: Vec<usize> = (0..model.pages.len())
        .filter(|&i| i != fin && dist[i].is_some())
        .collect();
    let k = transient.len();
    let mut a = Matrix::identity(k);
    for (r, &i) in transient.iter().enumerate() {
        for (c, &j) in transient.iter().enumerate() {
            a[(r, c)] -= model.probs[i][j];
        }
    }
    let begin_pos = transient
        .iter()
        .position(|&i| i == begin)
        .expect("begin reaches final so it is transient");
    Ok((transient, begin_pos, a))
}

fn checked(sol: linalg::Solution) -> Result<linalg::Solution, ModelError> {
    if sol.residual > RESIDUAL_TOLERANCE || sol.x.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::ResidualTooLarge(sol.residual));
    }
    Ok(sol)
}

/// Expected number of steps to reach the final page from each transient page,
/// solving `(I − Q) h = 1`. The final page itself maps to 0.
pub fn hitting_times(model: &TransitionModel, task: &TaskSpec) -> Result<ChainSolution, ModelError> {
    let (transient, _, a) = absorbing_system(model, task)?;
    let sol = checked(linalg::solve(&a, &vec![1.0; transient.len()])?)?;
    let mut values: BTreeMap<PageId, f64> = transient
        .iter()
        .zip(&sol.x)
        .map(|(&i, &h)| (model.pages[i].clone(), h))
        .collect();
    values.insert(task.final_page.clone(), 0.0);
    Ok(ChainSolution {
        values,
        residual: sol.residual,
    })
}

/// Progress as `(H − h(p)) / H`, with `h` the expected hitting time of the
/// final page and `H` its maximum.
pub fn hitting_time_progress(
    model: &TransitionModel,
    task: &TaskSpec,
) -> Result<ProgressMap, ModelError> {
    let h = hitting_times(model, task)?;
    let max_h = h.values.values().copied().fold(0.0, f64::max);
    let values = h
        .values
        .into_iter()
        .map(|(page, t)| {
            let progress = if t == max_h {
                0.0
            } else if t == 0.0 {
                1.0
            } else {
                ((max_h - t) / max_h).clamp(0.0, 1.0)
            };
            (page, progress)
        })
        .collect();
    Ok(ProgressMap { values })
}

/// Begin-page row of the fundamental matrix `N = (I − Q)⁻¹`: expected visits
/// to each transient page per session started at the begin page.
pub fn expected_visits(model: &TransitionModel, task: &TaskSpec) -> Result<ChainSolution, ModelError> {
    let (transient, begin_pos, a) = absorbing_system(model, task)?;
    let mut e = vec![0.0; transient.len()];
    e[begin_pos] = 1.0;
    // row of the inverse: solve (I − Q)ᵀ x = e_begin
    let sol = checked(linalg::solve(&a.transpose(), &e)?)?;
    let values = transient
        .iter()
        .zip(&sol.x)
        .map(|(&i, &v)| (model.pages[i].clone(), v))
        .collect();
    Ok(ChainSolution {
        values,
        residual: sol.residual,
    })
}

/// Probability that a step out of `page` lands on a strictly lower-progress
/// page.
pub fn backtrack_probability(
    model: &TransitionModel,
    progress: &ProgressMap,
    page: &PageId,
) -> Result<f64, ModelError> {
    let own = progress
        .get(page)
        .ok_or_else(|| ModelError::UnknownPage(page.clone()))?;
    let i = model
        .index_of(page)
        .ok_or_else(|| ModelError::UnknownPage(page.clone()))?;
    let beta: f64 = model
        .pages
        .iter()
        .zip(&model.probs[i])
        .filter(|(q, _)| progress.get(q).is_some_and(|v| v < own))
        .map(|(_, &p)| p)
        .sum();
    Ok(beta.min(1.0))
}

/// Expected-backtrack statistics of the average session.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BacktrackStats {
    pub expected_visits: BTreeMap<PageId, f64>,
    pub backtrack_prob: BTreeMap<PageId, f64>,
    pub expected_backtracks: BTreeMap<PageId, f64>,
}

impl BacktrackStats {
    pub fn new(
        expected_visits: BTreeMap<PageId, f64>,
        backtrack_prob: BTreeMap<PageId, f64>,
    ) -> Self {
        let expected_backtracks = expected_visits
            .iter()
            .filter_map(|(p, &v)| backtrack_prob.get(p).map(|&b| (p.clone(), v * b)))
            .collect();
        Self {
            expected_visits,
            backtrack_prob,
            expected_backtracks,
        }
    }
}

/// Pages whose expected per-session backtrack count exceeds `tau`.
pub fn exclusion_set(stats: &BacktrackStats, tau: f64) -> BTreeSet<PageId> {
    stats
        .expected_backtracks
        .iter()
        .filter(|(_, &b)| b > tau)
        .map(|(p, _)| p.clone())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub progress_method: ProgressMethod,
    pub exclusion_tau: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            progress_method: ProgressMethod::HittingTime,
            exclusion_tau: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.exclusion_tau > 0.0) {
            return Err(ModelError::InvalidTau(self.exclusion_tau));
        }
        Ok(())
    }
}

/// Everything the detector needs to know about the task's page graph.
#[derive(Debug, Clone, PartialEq)]
pub struct PageModel {
    pub task: TaskSpec,
    pub transitions: TransitionModel,
    pub progress: ProgressMap,
    /// Ordering actually used; differs from the configured one after a
    /// singular hitting-time solve.
    pub progress_method: ProgressMethod,
    pub stats: BacktrackStats,
    pub excluded: BTreeSet<PageId>,
}

/// Estimates transitions, progress, backtrack statistics and the excluded
/// page set from projected traces.
pub fn build_page_model(
    traces: &[UserTrace],
    task: &TaskSpec,
    config: &ModelConfig,
) -> Result<PageModel, ModelError> {
    config.validate()?;
    let transitions = estimate_transitions(traces, task)?;

    let (progress, progress_method) = match config.progress_method {
        ProgressMethod::ShortestPath => (
            shortest_path_progress(&transitions, task)?,
            ProgressMethod::ShortestPath,
        ),
        ProgressMethod::HittingTime => match hitting_time_progress(&transitions, task) {
            Ok(p) => (p, ProgressMethod::HittingTime),
            Err(ModelError::SingularSystem(_) | ModelError::ResidualTooLarge(_)) => (
                shortest_path_progress(&transitions, task)?,
                ProgressMethod::ShortestPath,
            ),
            Err(e) => return Err(e),
        },
    };

    let visits = expected_visits(&transitions, task)?.values;
    let beta = progress
        .reachable()
        .map(|p| backtrack_probability(&transitions, &progress, p).map(|b| (p.clone(), b)))
        .collect::<Result<BTreeMap<_, _>, _>>()?;
    let stats = BacktrackStats::new(visits, beta);

    let mut excluded = exclusion_set(&stats, config.exclusion_tau);
    excluded.extend(
        transitions
            .pages()
            .iter()
            .filter(|p| !progress.is_reachable(p))
            .cloned(),
    );

    Ok(PageModel {
        task: task.clone(),
        transitions,
        progress,
        progress_method,
        stats,
        excluded,
    })
}
