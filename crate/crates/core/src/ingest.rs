//! Event-log ingestion: JSONL / CSV parsing, per-user sessionization and
//! projection onto a task's page set.
//!
//! Malformed records never abort a run. They are counted in [`IngestStats`]
//! and skipped.

use std::collections::HashMap;
use std::io::{self, BufRead, Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{NavigationEvent, PageId, TaskSpec, UserId, UserTrace};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("unreadable input: {0}")]
    UnreadableInput(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventLogFormat {
    #[default]
    Jsonl,
    Csv,
}

impl FromStr for EventLogFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(Self::Jsonl),
            "csv" => Ok(Self::Csv),
            other => Err(format!("unknown event log format {other:?} (expected jsonl or csv)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct IngestStats {
    pub events_read: usize,
    pub events_dropped_offtask: usize,
    pub events_malformed: usize,
    pub traces_built: usize,
}

/// Wire shape shared by both formats. Unknown JSON keys are ignored.
#[derive(Debug, Serialize, Deserialize)]
struct EventRecord {
    user_id: String,
    page_id: String,
    ts: u64,
}

impl EventRecord {
    fn into_event(self) -> Option<NavigationEvent> {
        let user = UserId::new(self.user_id).ok()?;
        let page = PageId::new(self.page_id).ok()?;
        Some(NavigationEvent::new(user, page, self.ts))
    }
}

impl From<&NavigationEvent> for EventRecord {
    fn from(e: &NavigationEvent) -> Self {
        Self {
            user_id: e.user.as_str().to_owned(),
            page_id: e.page.as_str().to_owned(),
            ts: e.ts,
        }
    }
}

/// Parses every well-formed record of `input` into an event.
///
/// `events_read` counts accepted records; rejected ones land in
/// `events_malformed`. Blank JSONL lines are ignored. A CSV input whose header
/// is not `user_id,page_id,ts` has every data row counted as malformed.
pub fn parse_events<R: Read>(
    input: R,
    format: EventLogFormat,
) -> Result<(Vec<NavigationEvent>, IngestStats), IngestError> {
    match format {
        EventLogFormat::Jsonl => parse_jsonl(io::BufReader::new(input)),
        EventLogFormat::Csv => parse_csv(input),
    }
}

fn parse_jsonl<R: BufRead>(reader: R) -> Result<(Vec<NavigationEvent>, IngestStats), IngestError> {
    let mut events = Vec::new();
    let mut stats = IngestStats::default();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<EventRecord>(&line)
            .ok()
            .and_then(EventRecord::into_event)
        {
            Some(event) => {
                events.push(event);
                stats.events_read += 1;
            }
            None => stats.events_malformed += 1,
        }
    }
    Ok((events, stats))
}

fn parse_csv<R: Read>(input: R) -> Result<(Vec<NavigationEvent>, IngestStats), IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(input);
    let mut stats = IngestStats::default();
    let mut events = Vec::new();

    let header_ok = match reader.headers() {
        Ok(h) => h.iter().eq(["user_id", "page_id", "ts"]),
        Err(e) => return Err(csv_io_error(e)),
    };

    for row in reader.records() {
        let row = match row {
            Ok(row) => row,
            Err(e) if e.is_io_error() => return Err(csv_io_error(e)),
            Err(_) => {
                stats.events_malformed += 1;
                continue;
            }
        };
        let parsed = if header_ok && row.len() == 3 {
            row[2]
                .parse::<u64>()
                .ok()
                .and_then(|ts| {
                    EventRecord {
                        user_id: row[0].to_owned(),
                        page_id: row[1].to_owned(),
                        ts,
                    }
                    .into_event()
                })
        } else {
            None
        };
        match parsed {
            Some(event) => {
                events.push(event);
                stats.events_read += 1;
            }
            None => stats.events_malformed += 1,
        }
    }
    Ok((events, stats))
}

fn csv_io_error(e: csv::Error) -> IngestError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => IngestError::UnreadableInput(io),
        other => IngestError::UnreadableInput(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("{other:?}"),
        )),
    }
}

/// Writes events in the given format, one record per line.
pub fn write_events<'a, W, I>(out: W, events: I, format: EventLogFormat) -> io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a NavigationEvent>,
{
    match format {
        EventLogFormat::Jsonl => {
            let mut out = io::BufWriter::new(out);
            for event in events {
                serde_json::to_writer(&mut out, &EventRecord::from(event))?;
                out.write_all(b"\n")?;
            }
            out.flush()
        }
        EventLogFormat::Csv => {
            let mut writer = csv::Writer::from_writer(out);
            writer.write_record(["user_id", "page_id", "ts"])?;
            for event in events {
                writer.write_record([event.user.as_str(), event.page.as_str(), &event.ts.to_string()])?;
            }
            writer.flush()
        }
    }
}

/// Groups events into one trace per user, each stably sorted by timestamp.
/// Traces come out ordered by user id.
pub fn sessionize(events: Vec<NavigationEvent>) -> Vec<UserTrace> {
    let mut by_user: HashMap<UserId, Vec<NavigationEvent>> = HashMap::new();
    for event in events {
        by_user.entry(event.user.clone()).or_default().push(event);
    }
    let mut traces: Vec<UserTrace> = by_user
        .into_iter()
        .map(|(user, mut events)| {
            events.sort_by_key(|e| e.ts);
            UserTrace::from_sorted(user, events)
        })
        .collect();
    traces.sort_by(|a, b| a.user().cmp(b.user()));
    traces
}

/// Keeps only the events on task pages, preserving order.
pub fn project_trace(trace: &UserTrace, task: &TaskSpec) -> UserTrace {
    let events = trace
        .events()
        .iter()
        .filter(|e| task.contains(&e.page))
        .cloned()
        .collect();
    UserTrace::from_sorted(trace.user().clone(), events)
}

/// Traces for one task, ready for modelling, with the stats gathered on the way.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub traces: Vec<UserTrace>,
    pub stats: IngestStats,
}

/// parse → sessionize → project.
///
/// Users whose every event is off-task still get an (empty) trace, so the
/// scored population matches the users in the log.
pub fn ingest<R: Read>(
    input: R,
    format: EventLogFormat,
    task: &TaskSpec,
) -> Result<Ingested, IngestError> {
    let (events, mut stats) = parse_events(input, format)?;
    let traces: Vec<UserTrace> = sessionize(events)
        .iter()
        .map(|t| {
            let projected = project_trace(t, task);
            stats.events_dropped_offtask += t.len() - projected.len();
            projected
        })
        .collect();
    stats.traces_built = traces.len();
    Ok(Ingested { traces, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(s: &str) -> PageId {
        PageId::new(s).unwrap()
    }

    fn u(s: &str) -> UserId {
        UserId::new(s).unwrap()
    }

    fn pages(trace: &UserTrace) -> Vec<&str> {
        trace.events().iter().map(|e| e.page.as_str()).collect()
    }

    #[test]
    fn single_jsonl_record() {
        let input = br#"{"user_id":"u1","page_id":"home","ts":0}"#;
        let (events, stats) = parse_events(&input[..], EventLogFormat::Jsonl).unwrap();
        assert_eq!(events, vec![NavigationEvent::new(u("u1"), p("home"), 0)]);
        assert_eq!(stats.events_read, 1);
        assert_eq!(stats.events_malformed, 0);
    }

    #[test]
    fn string_negative_ts_is_malformed() {
        let input = br#"{"user_id":"u1","page_id":"home","ts":"-5"}"#;
        let (events, stats) = parse_events(&input[..], EventLogFormat::Jsonl).unwrap();
        assert!(events.is_empty());
        assert_eq!(stats.events_malformed, 1);
    }

    #[test]
    fn other_malformed_jsonl_shapes() {
        let input = concat!(
            "{\"user_id\":\"u1\",\"page_id\":\"home\",\"ts\":-5}\n",
            "{\"user_id\":\"u1\",\"page_id\":\"home\",\"ts\":1.5}\n",
            "{\"user_id\":\"\",\"page_id\":\"home\",\"ts\":1}\n",
            "{\"user_id\":\"u1\",\"page_id\":\" home\",\"ts\":1}\n",
            "not json\n",
            "\n",
            "{\"user_id\":\"u1\",\"page_id\":\"home\",\"ts\":7,\"extra\":true}\n",
        );
        let (events, stats) = parse_events(input.as_bytes(), EventLogFormat::Jsonl).unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].ts, 7);
        assert_eq!(stats.events_malformed, 5);
    }

    #[test]
    fn three_valid_lines_and_one_without_page() {
        let input = concat!(
            "{\"user_id\":\"u1\",\"page_id\":\"S\",\"ts\":1}\n",
            "{\"user_id\":\"u1\",\"ts\":2}\n",
            "{\"user_id\":\"u2\",\"page_id\":\"S\",\"ts\":3}\n",
            "{\"user_id\":\"u1\",\"page_id\":\"M\",\"ts\":4}\n",
        );
        let (events, stats) = parse_events(input.as_bytes(), EventLogFormat::Jsonl).unwrap();
        assert_eq!(events.len(), 3);
        assert_eq!(stats.events_read, 3);
        assert_eq!(stats.events_malformed, 1);
    }

    #[test]
    fn empty_input_is_not_an_error() {
        let (events, stats) = parse_events(&b""[..], EventLogFormat::Jsonl).unwrap();
        assert!(events.is_empty());
        assert_eq!(stats, IngestStats::default());
        let (events, _) = parse_events(&b""[..], EventLogFormat::Csv).unwrap();
        assert!(events.is_empty());
    }

    #[test]
    fn csv_records_and_malformed_rows() {
        let input = "user_id,page_id,ts\nu1,home,0\nu1,pay,-3\nu2,,4\nu2,home\nu2,pay,10\n";
        let (events, stats) = parse_events(input.as_bytes(), EventLogFormat::Csv).unwrap();
        assert_eq!(events.len(), 2);
        assert_eq!(stats.events_malformed, 3);
        assert_eq!(events[1], NavigationEvent::new(u("u2"), p("pay"), 10));
    }

    #[test]
    fn csv_with_wrong_header_rejects_rows() {
        let input = "user,page,time\nu1,home,0\n";
        let (events, stats) = parse_events(input.as_bytes(), EventLogFormat::Csv).unwrap();
        assert!(events.is_empty());
        assert_eq!(stats.events_malformed, 1);
    }

    #[test]
    fn sessionize_sorts_each_user() {
        let events = vec![
            NavigationEvent::new(u("u1"), p("c"), 30),
            NavigationEvent::new(u("u1"), p("a"), 10),
            NavigationEvent::new(u("u1"), p("b"), 20),
        ];
        let traces = sessionize(events);
        assert_eq!(traces.len(), 1);
        let ts: Vec<_> = traces[0].events().iter().map(|e| e.ts).collect();
        assert_eq!(ts, [10, 20, 30]);
    }

    #[test]
    fn sessionize_partitions_interleaved_users() {
        let events = vec![
            NavigationEvent::new(u("u2"), p("a"), 5),
            NavigationEvent::new(u("u1"), p("a"), 1),
            NavigationEvent::new(u("u2"), p("b"), 2),
            NavigationEvent::new(u("u1"), p("b"), 9),
            NavigationEvent::new(u("u2"), p("c"), 7),
        ];
        let mut expected = events.clone();
        let traces = sessionize(events);
        assert_eq!(traces.len(), 2);
        assert_eq!(traces[0].user(), &u("u1"));
        assert_eq!(traces[0].len(), 2);
        assert_eq!(traces[1].len(), 3);
        let mut flat: Vec<_> = traces.into_iter().flat_map(UserTrace::into_events).collect();
        let key = |e: &NavigationEvent| (e.user.clone(), e.ts, e.page.clone());
        flat.sort_by_key(key);
        expected.sort_by_key(key);
        assert_eq!(flat, expected);
    }

    #[test]
    fn sessionize_empty() {
        assert!(sessionize(Vec::new()).is_empty());
    }

    fn task(pages: &[&str], begin: &str, final_page: &str) -> TaskSpec {
        TaskSpec::new(pages.iter().map(|s| p(s)), p(begin), p(final_page)).unwrap()
    }

    #[test]
    fn projection_filters_offtask_pages() {
        let t = UserTrace::from_pages(u("u"), [(p("home"), 0), (p("settings"), 1), (p("pay"), 2)]);
        let projected = project_trace(&t, &task(&["home", "pay"], "home", "pay"));
        assert_eq!(pages(&projected), ["home", "pay"]);

        let off = UserTrace::from_pages(u("u"), [(p("x"), 0), (p("y"), 1)]);
        assert!(project_trace(&off, &task(&["home", "pay"], "home", "pay")).is_empty());

        let t = UserTrace::from_pages(
            u("u"),
            [(p("S"), 0), (p("X"), 1), (p("M"), 2), (p("X"), 3), (p("F"), 4)],
        );
        let projected = project_trace(&t, &task(&["S", "M", "F"], "S", "F"));
        assert_eq!(pages(&projected), ["S", "M", "F"]);
    }

    #[test]
    fn ingest_counts_offtask_drops() {
        let input = concat!(
            "{\"user_id\":\"u1\",\"page_id\":\"S\",\"ts\":1}\n",
            "{\"user_id\":\"u1\",\"page_id\":\"X\",\"ts\":2}\n",
            "{\"user_id\":\"u2\",\"page_id\":\"X\",\"ts\":3}\n",
            "garbage\n",
        );
        let got = ingest(input.as_bytes(), EventLogFormat::Jsonl, &task(&["S", "F"], "S", "F")).unwrap();
        assert_eq!(
            got.stats,
            IngestStats {
                events_read: 3,
                events_dropped_offtask: 2,
                events_malformed: 1,
                traces_built: 2,
            }
        );
        assert!(got.traces[1].is_empty());
    }

    fn arb_event() -> impl Strategy<Value = NavigationEvent> {
        ("[a-z][a-z0-9]{0,5}", "[A-Za-z][A-Za-z_.]{0,6}", any::<u64>())
            .prop_map(|(user, page, ts)| NavigationEvent::new(u(&user), p(&page), ts))
    }

    proptest! {
        #[test]
        fn write_then_parse_is_identity(
            events in proptest::collection::vec(arb_event(), 0..30),
            csv in any::<bool>(),
        ) {
            let format = if csv { EventLogFormat::Csv } else { EventLogFormat::Jsonl };
            let mut buf = Vec::new();
            write_events(&mut buf, &events, format).unwrap();
            let (parsed, stats) = parse_events(&buf[..], format).unwrap();
            prop_assert_eq!(stats.events_malformed, 0);
            prop_assert_eq!(parsed, events);
        }

        #[test]
        fn projection_is_idempotent(
            visits in proptest::collection::vec(("[A-E]", 0u64..100), 0..30),
        ) {
            let trace = UserTrace::from_pages(u("u"), visits.iter().map(|(pg, ts)| (p(pg), *ts)));
            let t = task(&["A", "C", "E"], "A", "E");
            let once = project_trace(&trace, &t);
            let twice = project_trace(&once, &t);
            prop_assert!(once.events().iter().all(|e| t.contains(&e.page)));
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn sessionize_covers_input_disjointly(
            raw in proptest::collection::vec(("u[0-4]", "[A-C]", 0u64..50), 0..60),
        ) {
            let events: Vec<_> = raw
                .iter()
                .map(|(us, pg, ts)| NavigationEvent::new(u(us), p(pg), *ts))
                .collect();
            let traces = sessionize(events.clone());
            let users: std::collections::BTreeSet<_> = traces.iter().map(|t| t.user().clone()).collect();
            prop_assert_eq!(users.len(), traces.len());
            prop_assert_eq!(traces.iter().map(UserTrace::len).sum::<usize>(), events.len());
            for t in &traces {
                prop_assert!(t.events().iter().all(|e| e.user == *t.user()));
            }
        }
    }
}
