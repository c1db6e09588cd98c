//! Driver-facing board messages: composition from a segment snapshot,
//! text rendering for a rows x cols sign, and duplicate suppression.

use alloc::borrow::ToOwned;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Reverse;

use thiserror::Error;

use crate::congestion::CongestionLevel;
use crate::forecast::Forecast;
use crate::ingest::ObjectClass;
use crate::routing::{best_route, bpr_travel_time, RatioSnapshot, RoadGraph};
use crate::TimestampMs;

pub const QUIET_TEXT: &str = "TRAFFIC NORMAL";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DisplayError {
    #[error("board `{board_id}`: {reason}")]
    InvalidBoard { board_id: String, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoardSpec {
    pub board_id: String,
    /// Graph node where the sign stands.
    pub location: String,
    pub rows: u32,
    pub cols: u32,
    /// `tcp://host:port` or `file://path`.
    pub endpoint: String,
}

impl BoardSpec {
    pub fn validate(&self) -> Result<(), DisplayError> {
        let invalid = |reason: &str| DisplayError::InvalidBoard {
            board_id: self.board_id.clone(),
            reason: reason.into(),
        };
        if self.rows < 1 {
            return Err(invalid("rows must be at least 1"));
        }
        if self.cols < 8 {
            return Err(invalid("cols must be at least 8"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum EntryKind {
    /// The quiet-state line shown when nothing qualifies.
    Normal,
    /// Forecast says the segment is about to become congested.
    Advisory,
    /// Segment is currently overcrowded.
    Threshold,
    /// A debounced anomaly (accident, sudden stop, congestion) is active.
    Anomaly,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AlertEntry {
    pub segment: String,
    pub segment_id: String,
    pub level: CongestionLevel,
    pub delay_s: f64,
    pub alt_route: Option<Vec<String>>,
    pub kind: EntryKind,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub anomaly: Option<ObjectClass>,
}

impl AlertEntry {
    pub fn normal() -> Self {
        AlertEntry {
            segment: String::new(),
            segment_id: String::new(),
            level: CongestionLevel::Free,
            delay_s: 0.0,
            alt_route: None,
            kind: EntryKind::Normal,
            anomaly: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AlertMessage {
    pub board_id: String,
    pub issued_at: TimestampMs,
    pub expires_at: TimestampMs,
    pub entries: Vec<AlertEntry>,
    pub severity: CongestionLevel,
}

impl AlertMessage {
    /// Equal apart from the issue and expiry times.
    pub fn same_content(&self, other: &AlertMessage) -> bool {
        self.board_id == other.board_id && self.severity == other.severity && self.entries == other.entries
    }

    /// What a driver would notice changing: which streets, at what level,
    /// for which reason. Delay drift alone does not count.
    pub fn signature(&self) -> Vec<(String, CongestionLevel, EntryKind, Option<ObjectClass>)> {
        self.entries
            .iter()
            .map(|e| (e.segment_id.clone(), e.level, e.kind, e.anomaly))
            .collect()
    }

    pub fn is_quiet(&self) -> bool {
        self.entries.iter().all(|e| e.kind == EntryKind::Normal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DisplayConfig {
    pub max_entries: usize,
    pub refresh_s: u32,
}

impl Default for DisplayConfig {
    fn default() -> Self {
        DisplayConfig {
            max_entries: 3,
            refresh_s: 30,
        }
    }
}

/// What the composer needs to know about one monitored segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentView {
    pub segment_id: String,
    pub name: String,
    pub level: CongestionLevel,
    pub ratio: f64,
    pub free_flow_time_s: f64,
    pub forecast: Option<Forecast>,
    /// Level the forecast ratio falls in, when the forecast is an advisory.
    pub forecast_level: Option<CongestionLevel>,
    pub anomalies: Vec<ObjectClass>,
}

impl SegmentView {
    fn delay_at(&self, ratio: f64) -> f64 {
        bpr_travel_time(self.free_flow_time_s, ratio) - self.free_flow_time_s
    }

    fn entry(&self) -> Option<AlertEntry> {
        let base = |level, delay_s, kind, anomaly| AlertEntry {
            segment: self.name.clone(),
            segment_id: self.segment_id.clone(),
            level,
            delay_s,
            alt_route: None,
            kind,
            anomaly,
        };
        if let Some(&class) = self.anomalies.first() {
            // an incident on an otherwise free road still warrants a warning
            let level = self.level.max(CongestionLevel::Heavy);
            return Some(base(level, self.delay_at(self.ratio), EntryKind::Anomaly, Some(class)));
        }
        if self.level == CongestionLevel::Overcrowded {
            return Some(base(self.level, self.delay_at(self.ratio), EntryKind::Threshold, None));
        }
        match (&self.forecast, self.forecast_level) {
            (Some(f), Some(level)) if f.advisory && level > CongestionLevel::Free => {
                Some(base(level, self.delay_at(f.predicted_ratio), EntryKind::Advisory, None))
            }
            _ => None,
        }
    }
}

fn sort_entries(entries: &mut [AlertEntry]) {
    entries.sort_by(|a, b| {
        Reverse(a.level)
            .cmp(&Reverse(b.level))
            .then_with(|| Reverse(a.kind).cmp(&Reverse(b.kind)))
            .then_with(|| b.delay_s.total_cmp(&a.delay_s))
            .then_with(|| a.segment.cmp(&b.segment))
            .then_with(|| a.segment_id.cmp(&b.segment_id))
    });
}

/// Alternative route from the board to the downstream end of a flagged
/// segment, as the nodes after the board. `None` when the best route still
/// runs through the segment or the segment is not on the graph.
pub fn alternative_route(
    graph: &RoadGraph,
    board_location: &str,
    segment_id: &str,
    ratios: &RatioSnapshot,
) -> Option<Vec<String>> {
    let downstream = graph.edges_of_segment(segment_id).next()?.to.clone();
    if downstream == board_location {
        return None;
    }
    let route = best_route(graph, board_location, &downstream, ratios).ok()?;
    if route.uses_segment(graph, segment_id) {
        return None;
    }
    Some(route.nodes[1..].to_vec())
}

pub fn compose_message(
    views: &[SegmentView],
    graph: Option<&RoadGraph>,
    board: &BoardSpec,
    ts: TimestampMs,
    config: &DisplayConfig,
) -> AlertMessage {
    let mut entries: Vec<AlertEntry> = views.iter().filter_map(SegmentView::entry).collect();
    sort_entries(&mut entries);
    entries.truncate(config.max_entries.max(1));

    if let Some(graph) = graph {
        let ratios: RatioSnapshot = views.iter().map(|v| (v.segment_id.clone(), v.ratio)).collect();
        for entry in &mut entries {
            entry.alt_route = alternative_route(graph, &board.location, &entry.segment_id, &ratios);
        }
    }
    if entries.is_empty() {
        entries.push(AlertEntry::normal());
    }
    let severity = entries.iter().map(|e| e.level).max().unwrap_or_default();
    AlertMessage {
        board_id: board.board_id.clone(),
        issued_at: ts,
        expires_at: ts + i64::from(config.refresh_s.max(1)) * 1000,
        entries,
        severity,
    }
}

fn sanitize(text: &str) -> String {
    text.chars()
        .map(|c| {
            if c.is_ascii() && !c.is_ascii_control() {
                c.to_ascii_uppercase()
            } else if c.is_whitespace() {
                ' '
            } else {
                '?'
            }
        })
        .collect()
}

fn entry_label(entry: &AlertEntry) -> String {
    match (entry.kind, entry.anomaly) {
        (EntryKind::Anomaly, Some(class)) => class.as_str().replace('_', " "),
        (EntryKind::Advisory, _) => alloc::format!("{} SOON", entry.level.as_str()),
        _ => entry.level.as_str().to_owned(),
    }
}

fn render_entry(entry: &AlertEntry, cols: usize) -> String {
    if entry.kind == EntryKind::Normal {
        return QUIET_TEXT.chars().take(cols).collect();
    }
    let delay = libm::round(entry.delay_s.max(0.0)) as u64;
    let mut suffix = alloc::format!(" {} +{}s", entry_label(entry), delay);
    if let Some(first) = entry.alt_route.as_ref().and_then(|r| r.first()) {
        suffix.push_str(" VIA ");
        suffix.push_str(first);
    }
    let name = sanitize(&entry.segment);
    let suffix = sanitize(&suffix);
    let line = if suffix.len() < cols {
        let budget = cols - suffix.len();
        let mut name: String = name.chars().take(budget).collect();
        name.push_str(&suffix);
        name
    } else {
        let mut whole = name;
        whole.push_str(&suffix);
        whole
    };
    line.chars().take(cols).collect::<String>().trim_end().to_string()
}

/// Exactly `rows` lines of at most `cols` uppercase ASCII characters.
pub fn render_board(message: &AlertMessage, rows: usize, cols: usize) -> Vec<String> {
    let mut lines: Vec<String> = message
        .entries
        .iter()
        .take(rows)
        .map(|e| render_entry(e, cols))
        .collect();
    lines.resize(rows, String::new());
    lines
}

/// Suppresses re-publication of an identical message while the previously
/// published copy is still valid.
#[derive(Debug, Clone, Default)]
pub struct PublishGate {
    last: Option<AlertMessage>,
}

impl PublishGate {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn should_publish(&self, message: &AlertMessage) -> bool {
        match &self.last {
            Some(last) => !(last.same_content(message) && message.issued_at < last.expires_at),
            None => true,
        }
    }

    pub fn mark_published(&mut self, message: &AlertMessage) {
        self.last = Some(message.clone());
    }

    pub fn last(&self) -> Option<&AlertMessage> {
        self.last.as_ref()
    }
}
