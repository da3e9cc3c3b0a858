//! JSON report file: one object per trace, score-descending.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::detect::{AnomalyReport, FeatureVector};
use crate::types::{PageId, UserId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub user_id: UserId,
    pub score: f64,
    pub flagged: bool,
    pub top_page: Option<PageId>,
    pub features: BTreeMap<PageId, FeatureVector>,
}

impl From<&AnomalyReport> for ReportRecord {
    fn from(r: &AnomalyReport) -> Self {
        Self {
            user_id: r.user.clone(),
            score: r.score,
            flagged: r.flagged,
            top_page: r.top_page().cloned(),
            features: r.per_page_features.clone(),
        }
    }
}

pub fn to_records(reports: &[AnomalyReport]) -> Vec<ReportRecord> {
    reports.iter().map(ReportRecord::from).collect()
}

pub fn write_report<W: Write>(mut out: W, records: &[ReportRecord]) -> serde_json::Result<()> {
    serde_json::to_writer_pretty(&mut out, records)?;
    out.write_all(b"\n").map_err(serde_json::Error::io)
}

pub fn read_report<R: Read>(input: R) -> serde_json::Result<Vec<ReportRecord>> {
    serde_json::from_reader(input)
}
