//! Synthetic labelled datasets.
//!
//! Normal users are random walks over a ground-truth chain from the begin
//! page. Failure users walk until they first reach the failure page, then
//! repeatedly backtrack to the page they came from and re-advance, and
//! finally abandon the task.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::ingest::{write_events, EventLogFormat};
use crate::model::TransitionModel;
use crate::types::{NavigationEvent, PageId, TaskSpec, Timestamp, UserId, UserTrace};

/// 2026-01-01T00:00:00Z; simulated sessions start within this day.
pub const DAY_START_MS: Timestamp = 1_767_225_600_000;
const DAY_MS: u64 = 86_400_000;
/// Walk attempts per failure user before giving up on reaching the failure page.
const PREFIX_ATTEMPTS: usize = 1_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("failure page has no distinct predecessor in the trace")]
    NoPredecessor,
    #[error("trace does not end at the failure page {0}")]
    PrefixMissesFailurePage(PageId),
    #[error("failure page {page} not reached in {attempts} walks")]
    FailurePageUnreachable { page: PageId, attempts: usize },
}

/// Inter-event time model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GapSampler {
    /// Exponential with the given mean, rounded and floored at 1 ms.
    Exponential { mean_ms: u64 },
    /// Uniform on `1..=max_ms`.
    Uniform { max_ms: u64 },
    Fixed(u64),
}

impl GapSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match *self {
            GapSampler::Exponential { mean_ms } => {
                let exp = Exp::new(1.0 / mean_ms as f64).expect("positive rate");
                (exp.sample(rng).round() as u64).max(1)
            }
            GapSampler::Uniform { max_ms } => rng.gen_range(1..=max_ms),
            GapSampler::Fixed(ms) => ms,
        }
    }
}

fn next_page<R: Rng + ?Sized>(model: &TransitionModel, from: usize, rng: &mut R) -> Option<usize> {
    let row = &model.probs()[from];
    let last = row.iter().rposition(|&p| p > 0.0)?;
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (j, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return Some(j);
        }
    }
    Some(last)
}

/// Walks from `start` until `stop` holds, a dead end, or `max_steps`
/// transitions.
fn walk<R: Rng + ?Sized>(
    model: &TransitionModel,
    user: &UserId,
    start: usize,
    start_ts: Timestamp,
    max_steps: usize,
    gaps: GapSampler,
    stop: impl Fn(usize) -> bool,
    rng: &mut R,
) -> Vec<NavigationEvent> {
    let pages = model.pages();
    let mut at = start;
    let mut ts = start_ts;
    let mut events = vec![NavigationEvent::new(user.clone(), pages[at].clone(), ts)];
    for _ in 0..max_steps {
        if stop(at) {
            break;
        }
        let Some(next) = next_page(model, at, rng) else {
            break;
        };
        ts += gaps.sample(rng);
        at = next;
        events.push(NavigationEvent::new(user.clone(), pages[at].clone(), ts));
    }
    events
}

/// Samples one session from the begin page until the final page, a dead end,
/// or `max_steps` transitions. Timestamps strictly increase.
pub fn random_walk<R: Rng + ?Sized>(
    model: &TransitionModel,
    task: &TaskSpec,
    user: &UserId,
    start_ts: Timestamp,
    max_steps: usize,
    gaps: GapSampler,
    rng: &mut R,
) -> UserTrace {
    let begin = model.index_of(&task.begin).expect("begin page in model");
    let fin = model.index_of(&task.final_page);
    let events = walk(model, user, begin, start_ts, max_steps, gaps, |i| Some(i) == fin, rng);
    UserTrace::from_sorted(user.clone(), events)
}

/// Everything needed to generate a labelled dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub ground_truth: TransitionModel,
    pub task: TaskSpec,
    pub n_users: usize,
    pub failure_rate: f64,
    pub failure_page: PageId,
    pub retry_min: u32,
    pub retry_max: u32,
    pub retry_gap_ms_max: u64,
    pub normal_gap_mean_ms: u64,
    pub max_steps: usize,
    pub seed: u64,
}

impl SimConfig {
    /// Config with the stated defaults for timing, retries and walk length.
    pub fn new(ground_truth: TransitionModel, task: TaskSpec, failure_page: PageId) -> Self {
        Self {
            ground_truth,
            task,
            n_users: 1_000,
            failure_rate: 0.0,
            failure_page,
            retry_min: 3,
            retry_max: 8,
            retry_gap_ms_max: 60_000,
            normal_gap_mean_ms: 20_000,
            max_steps: 200,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidConfig(msg));
        if !self.task.contains(&self.failure_page) {
            return bad(format!("failure page {} is not a task page", self.failure_page));
        }
        if self.failure_page == self.task.begin {
            return bad("failure page must differ from the begin page".into());
        }
        if !(0.0..=1.0).contains(&self.failure_rate) {
            return bad(format!("failure_rate {} outside [0, 1]", self.failure_rate));
        }
        if self.retry_min < 1 || self.retry_min > self.retry_max {
            return bad(format!(
                "retry range {}..={} must satisfy 1 <= retry_min <= retry_max",
                self.retry_min, self.retry_max
            ));
        }
        if self.n_users == 0 || self.max_steps == 0 {
            return bad("n_users and max_steps must be positive".into());
        }
        if self.retry_gap_ms_max == 0 || self.normal_gap_mean_ms == 0 {
            return bad("gap parameters must be positive".into());
        }
        if !self.ground_truth.pages().iter().eq(self.task.pages.iter()) {
            return bad("ground-truth pages differ from the task pages".into());
        }
        let begin = self.ground_truth.index_of(&self.task.begin).expect("checked above");
        if self.ground_truth.out_degree(begin) == 0 {
            return bad("begin page has no outgoing transitions".into());
        }
        Ok(())
    }

    fn normal_gaps(&self) -> GapSampler {
        GapSampler::Exponential {
            mean_ms: self.normal_gap_mean_ms,
        }
    }
}

/// Appends `r ∈ retry_min..=retry_max` backtrack/re-advance cycles to a
/// trace that ends on the failure page. The backtrack target is the closest
/// earlier page different from the failure page.
pub fn inject_failure<R: Rng + ?Sized>(
    prefix: UserTrace,
    config: &SimConfig,
    rng: &mut R,
) -> Result<UserTrace, SimError> {
    let user = prefix.user().clone();
    let mut events = prefix.into_events();
    let last = events.last().ok_or(SimError::NoPredecessor)?;
    if last.page != config.failure_page {
        return Err(SimError::PrefixMissesFailurePage(config.failure_page.clone()));
    }
    let mut ts = last.ts;
    let predecessor = events
        .iter()
        .rev()
        .find(|e| e.page != config.failure_page)
        .map(|e| e.page.clone())
        .ok_or(SimError::NoPredecessor)?;

    let retries = rng.gen_range(config.retry_min..=config.retry_max);
    let gaps = GapSampler::Uniform {
        max_ms: config.retry_gap_ms_max,
    };
    for _ in 0..retries {
        for page in [&predecessor, &config.failure_page] {
            ts += gaps.sample(rng);
            events.push(NavigationEvent::new(user.clone(), page.clone(), ts));
        }
    }
    Ok(UserTrace::from_sorted(user, events))
}

/// Traces plus ground-truth failure labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub traces: Vec<UserTrace>,
    pub labels: BTreeMap<UserId, bool>,
}

impl LabeledDataset {
    pub fn failures(&self) -> usize {
        self.labels.values().filter(|&&l| l).count()
    }

    pub fn write_events<W: Write>(&self, out: W) -> io::Result<()> {
        write_events(
            out,
            self.traces.iter().flat_map(|t| t.events()),
            EventLogFormat::Jsonl,
        )
    }

    pub fn write_labels<W: Write>(&self, out: W) -> io::Result<()> {
        write_labels(out, &self.labels)
    }
}

fn user_id(index: usize, n_users: usize) -> UserId {
    let width = n_users.to_string().len().max(5);
    UserId::new(format!("u{index:0width$}")).expect("non-empty")
}

/// Per-user RNG: stream `index` of the seeded generator, so users can be
/// generated in any order with identical results.
pub fn user_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn failure_prefix<R: Rng + ?Sized>(
    config: &SimConfig,
    user: &UserId,
    start_ts: Timestamp,
    rng: &mut R,
) -> Result<UserTrace, SimError> {
    let model = &config.ground_truth;
    let begin = model.index_of(&config.task.begin).expect("validated");
    let fail = model.index_of(&config.failure_page).expect("validated");
    let fin = model.index_of(&config.task.final_page).expect("validated");
    for _ in 0..PREFIX_ATTEMPTS {
        let gaps = config.normal_gaps();
        let events = walk(model, user, begin, start_ts, config.max_steps, gaps, |i| i == fail || i == fin, rng);
        if events.last().map(|e| &e.page) == Some(&config.failure_page) {
            return Ok(UserTrace::from_sorted(user.clone(), events));
        }
    }
    Err(SimError::FailurePageUnreachable {
        page: config.failure_page.clone(),
        attempts: PREFIX_ATTEMPTS,
    })
}

fn generate_user(config: &SimConfig, index: usize) -> Result<(UserTrace, bool), SimError> {
    let user = user_id(index, config.n_users);
    let mut rng = user_rng(config.seed, index);
    let start_ts = DAY_START_MS + rng.gen_range(0..DAY_MS / 2);
    let failed = rng.gen_bool(config.failure_rate);
    let trace = if failed {
        let prefix = failure_prefix(config, &user, start_ts, &mut rng)?;
        inject_failure(prefix, config, &mut rng)?
    } else {
        random_walk(
            &config.ground_truth,
            &config.task,
            &user,
            start_ts,
            config.max_steps,
            config.normal_gaps(),
            &mut rng,
        )
    };
    Ok((trace, failed))
}

/// Generates `n_users` labelled traces; fully determined by the config.
pub fn generate_dataset(config: &SimConfig) -> Result<LabeledDataset, SimError> {
    config.validate()?;
    let mut traces = Vec::with_capacity(config.n_users);
    let mut labels = BTreeMap::new();
    for index in 0..config.n_users {
        let (trace, failed) = generate_user(config, index)?;
        labels.insert(trace.user().clone(), failed);
        traces.push(trace);
    }
    Ok(LabeledDataset { traces, labels })
}

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("unreadable labels: {0}")]
    Io(#[from] io::Error),
    #[error("labels file must start with header user_id,label")]
    BadHeader,
    #[error("malformed label row {row}: {reason}")]
    Malformed { row: usize, reason: String },
}

/// Writes `user_id,label` rows with label 1 for failure users.
pub fn write_labels<W: Write>(out: W, labels: &BTreeMap<UserId, bool>) -> io::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["user_id", "label"])?;
    for (user, &label) in labels {
        writer.write_record([user.as_str(), if label { "1" } else { "0" }])?;
    }
    writer.flush()
}

pub fn read_labels<R: Read>(input: R) -> Result<BTreeMap<UserId, bool>, LabelError> {
    let mut reader = csv::Reader::from_reader(input);
    let header_ok = reader
        .headers()
        .map_err(|e| LabelError::Malformed { row: 0, reason: e.to_string() })?
        .iter()
        .eq(["user_id", "label"]);
    if !header_ok {
        return Err(LabelError::BadHeader);
    }
    let mut labels = BTreeMap::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 2;
        let malformed = |reason: String| LabelError::Malformed { row: row_no, reason };
        let row = row.map_err(|e| malformed(e.to_string()))?;
        if row.len() != 2 {
            return Err(malformed(format!("expected 2 fields, got {}", row.len())));
        }
        let user = UserId::new(&row[0]).map_err(|e| malformed(e.to_string()))?;
        let label = match &row[1] {
            "0" => false,
            "1" => true,
            other => return Err(malformed(format!("label {other:?} is not 0 or 1"))),
        };
        labels.insert(user, label);
    }
    Ok(labels)
}
