//! Shared domain vocabulary: page and user identifiers, navigation events,
//! per-user traces and task definitions.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rejected identifier text.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdError {
    #[error("identifier is empty")]
    Empty,
    #[error("identifier {0:?} has leading or trailing whitespace")]
    Whitespace(String),
}

/// Opaque identifier of an app page.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PageId(String);

impl PageId {
    pub fn new(value: impl Into<String>) -> Result<Self, IdError> {
        let value = value.into();
        if value.is_empty() {
            return Err(IdError::Empty);
        }
        if value.trim() != value {
            return Err(IdError::Whitespace(value));
        }
        Ok(Self(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// Opaque identifier of a user.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct UserId(String);

impl UserId {
    pub fn new(value: impl Into<String>) -> Result<Self, IdError> {
        let value = value.into();
        if value.is_empty() {
            return Err(IdError::Empty);
        }
        Ok(Self(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

macro_rules! id_conversions {
    ($ty:ident) => {
        impl TryFrom<String> for $ty {
            type Error = IdError;
            fn try_from(value: String) -> Result<Self, Self::Error> {
                Self::new(value)
            }
        }

        impl TryFrom<&str> for $ty {
            type Error = IdError;
            fn try_from(value: &str) -> Result<Self, Self::Error> {
                Self::new(value)
            }
        }

        impl From<$ty> for String {
            fn from(id: $ty) -> String {
                id.0
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }
    };
}

id_conversions!(PageId);
id_conversions!(UserId);

/// Epoch milliseconds.
pub type Timestamp = u64;

/// One navigation: `user` opened `page` at `ts`. Page parameters are never
/// carried.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NavigationEvent {
    pub user: UserId,
    pub page: PageId,
    pub ts: Timestamp,
}

impl NavigationEvent {
    pub fn new(user: UserId, page: PageId, ts: Timestamp) -> Self {
        Self { user, page, ts }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("event for user {found} does not belong to trace of user {expected}")]
pub struct ForeignEventError {
    pub expected: UserId,
    pub found: UserId,
}

/// Time-ordered navigation events of a single user.
///
/// Construction stably sorts by timestamp, so events sharing a timestamp keep
/// their input order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserTrace {
    user: UserId,
    events: Vec<NavigationEvent>,
}

impl UserTrace {
    pub fn new(user: UserId, mut events: Vec<NavigationEvent>) -> Result<Self, ForeignEventError> {
        if let Some(bad) = events.iter().find(|e| e.user != user) {
            return Err(ForeignEventError {
                expected: user,
                found: bad.user.clone(),
            });
        }
        events.sort_by_key(|e| e.ts);
        Ok(Self { user, events })
    }

    /// Builds a trace from pages and timestamps; timestamps are sorted along
    /// with their pages.
    pub fn from_pages<I>(user: UserId, visits: I) -> Self
    where
        I: IntoIterator<Item = (PageId, Timestamp)>,
    {
        let events = visits
            .into_iter()
            .map(|(page, ts)| NavigationEvent::new(user.clone(), page, ts))
            .collect();
        Self::new(user, events).expect("events built for this user")
    }

    /// Caller guarantees `events` belong to `user` and are sorted by `ts`.
    pub(crate) fn from_sorted(user: UserId, events: Vec<NavigationEvent>) -> Self {
        debug_assert!(events.windows(2).all(|w| w[0].ts <= w[1].ts));
        debug_assert!(events.iter().all(|e| e.user == user));
        Self { user, events }
    }

    pub fn user(&self) -> &UserId {
        &self.user
    }

    pub fn events(&self) -> &[NavigationEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn into_events(self) -> Vec<NavigationEvent> {
        self.events
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaskError {
    #[error("begin page {0} is not among the task pages")]
    BeginNotInPages(PageId),
    #[error("final page {0} is not among the task pages")]
    FinalNotInPages(PageId),
    #[error("begin and final page are both {0}")]
    BeginEqualsFinal(PageId),
    #[error("a task needs at least two pages, got {0}")]
    TooFewPages(usize),
}

/// The pages involved in one task, with its entry and completion pages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub pages: BTreeSet<PageId>,
    pub begin: PageId,
    #[serde(rename = "final")]
    pub final_page: PageId,
}

impl TaskSpec {
    /// Builds and validates a task in one step.
    pub fn new<I>(pages: I, begin: PageId, final_page: PageId) -> Result<Self, TaskError>
    where
        I: IntoIterator<Item = PageId>,
    {
        validate_task(Self {
            pages: pages.into_iter().collect(),
            begin,
            final_page,
        })
    }

    pub fn contains(&self, page: &PageId) -> bool {
        self.pages.contains(page)
    }
}

/// Returns `spec` unchanged when every task invariant holds.
pub fn validate_task(spec: TaskSpec) -> Result<TaskSpec, TaskError> {
    if !spec.pages.contains(&spec.begin) {
        return Err(TaskError::BeginNotInPages(spec.begin));
    }
    if !spec.pages.contains(&spec.final_page) {
        return Err(TaskError::FinalNotInPages(spec.final_page));
    }
    if spec.begin == spec.final_page {
        return Err(TaskError::BeginEqualsFinal(spec.begin));
    }
    if spec.pages.len() < 2 {
        return Err(TaskError::TooFewPages(spec.pages.len()));
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(s: &str) -> PageId {
        PageId::new(s).unwrap()
    }

    fn raw_task(pages: &[&str], begin: &str, final_page: &str) -> TaskSpec {
        TaskSpec {
            pages: pages.iter().map(|s| p(s)).collect(),
            begin: p(begin),
            final_page: p(final_page),
        }
    }

    #[test]
    fn minimal_task_is_valid() {
        let spec = raw_task(&["A", "B"], "A", "B");
        assert_eq!(validate_task(spec.clone()), Ok(spec));
    }

    #[test]
    fn begin_equal_to_final_is_rejected() {
        let spec = raw_task(&["A", "B"], "A", "A");
        assert_eq!(validate_task(spec), Err(TaskError::BeginEqualsFinal(p("A"))));
    }

    #[test]
    fn final_outside_pages_is_rejected() {
        let spec = raw_task(&["A"], "A", "B");
        assert_eq!(validate_task(spec), Err(TaskError::FinalNotInPages(p("B"))));
    }

    #[test]
    fn begin_outside_pages_is_rejected() {
        let spec = raw_task(&["B", "C"], "A", "B");
        assert_eq!(validate_task(spec), Err(TaskError::BeginNotInPages(p("A"))));
    }

    #[test]
    fn page_id_rejects_empty_and_padded() {
        assert_eq!(PageId::new(""), Err(IdError::Empty));
        assert!(matches!(PageId::new(" home"), Err(IdError::Whitespace(_))));
        assert!(matches!(PageId::new("home\n"), Err(IdError::Whitespace(_))));
        assert!(UserId::new("").is_err());
        assert!(UserId::new(" u1 ").is_ok());
    }

    #[test]
    fn trace_rejects_foreign_events() {
        let u1 = UserId::new("u1").unwrap();
        let u2 = UserId::new("u2").unwrap();
        let err = UserTrace::new(u1.clone(), vec![NavigationEvent::new(u2, p("A"), 0)]).unwrap_err();
        assert_eq!(err.expected, u1);
    }

    #[test]
    fn equal_timestamps_keep_input_order() {
        let u = UserId::new("u").unwrap();
        let trace = UserTrace::from_pages(u, [(p("B"), 5), (p("A"), 5), (p("C"), 1)]);
        let pages: Vec<_> = trace.events().iter().map(|e| e.page.as_str()).collect();
        assert_eq!(pages, ["C", "B", "A"]);
    }

    proptest! {
        #[test]
        fn traces_are_sorted_after_construction(ts in proptest::collection::vec(0u64..1_000, 0..40)) {
            let u = UserId::new("u").unwrap();
            let trace = UserTrace::from_pages(u, ts.iter().map(|&t| (p("A"), t)));
            prop_assert!(trace.events().windows(2).all(|w| w[0].ts <= w[1].ts));
            prop_assert_eq!(trace.len(), ts.len());
        }

        #[test]
        fn accepted_tasks_satisfy_invariants(
            pages in proptest::collection::btree_set("[a-d]", 0..5),
            begin in "[a-e]",
            final_page in "[a-e]",
        ) {
            let spec = TaskSpec {
                pages: pages.iter().map(|s| p(s)).collect(),
                begin: p(&begin),
                final_page: p(&final_page),
            };
            if let Ok(ok) = validate_task(spec) {
                prop_assert!(ok.pages.contains(&ok.begin));
                prop_assert!(ok.pages.contains(&ok.final_page));
                prop_assert_ne!(&ok.begin, &ok.final_page);
                prop_assert!(ok.pages.len() >= 2);
            }
        }
    }
}
