//! Detection of user-perceived failure from app navigation traces.
//!
//! The pipeline has three stages:
//!
//! 1. [`ingest`]: parse exported event logs, build one trace per user and
//!    keep only the pages of the analysed task.
//! 2. [`model`]: estimate a Markov page model with per-page progress values
//!    and exclude pages where ordinary users already backtrack a lot.
//! 3. [`detect`]: count advance-then-backtrack patterns per page, score each
//!    trace by how rare its counts are in the population, and flag traces
//!    whose score reaches the threshold.
//!
//! [`simulate`] produces labelled synthetic datasets and [`eval`] measures
//! precision and recall against them.

pub mod config;
pub mod detect;
pub mod dot;
pub mod eval;
pub mod ingest;
pub mod linalg;
pub mod model;
pub mod report;
pub mod simulate;
pub mod types;

pub use detect::{detect, AnomalyReport, DetectionConfig, FeatureCombine, FeatureVector, ScoreFormula};
pub use eval::{evaluate, sweep_threshold, Metrics};
pub use ingest::{parse_events, project_trace, sessionize, EventLogFormat, IngestStats};
pub use model::{build_page_model, ModelConfig, PageModel, ProgressMethod};
pub use simulate::{generate_dataset, LabeledDataset, SimConfig};
pub use types::{NavigationEvent, PageId, TaskSpec, UserId, UserTrace};
