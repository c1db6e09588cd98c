//! The monitoring pipeline as a pure state machine: frames in, transitions,
//! anomaly events, history samples and board messages out.
//!
//! Frames of one segment that share a timestamp (several cameras on the
//! same street) are gathered into one tick; the tick is committed when a
//! later frame for the segment arrives or when the stream ends. The segment
//! count of a tick is the sum of each camera's latest count.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::congestion::{step_segment_state, Bands, SegmentState, StreetSegment, Transition};
use crate::counting::{count_vehicles, smooth_count, AnomalyDebouncer, AnomalyEvent, CountWindow};
use crate::display::{compose_message, AlertMessage, BoardSpec, DisplayConfig, SegmentView};
use crate::forecast::{Forecast, ForecastConfig, HistoryRecord, HistoryStore};
use crate::ingest::{validate_frame, CameraRegistry, Detection, DetectionFrame, FrameSequencer, IngestError};
use crate::routing::RoadGraph;
use crate::TimestampMs;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MonitorError {
    #[error("configuration error: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MonitorConfig {
    pub conf_threshold: f64,
    pub window: usize,
    pub debounce_k: usize,
    pub debounce_n: usize,
    pub bands: Bands,
    pub forecast: ForecastConfig,
    pub display: DisplayConfig,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig {
            conf_threshold: crate::counting::DEFAULT_CONF_THRESHOLD,
            window: crate::counting::DEFAULT_WINDOW,
            debounce_k: crate::counting::DEFAULT_DEBOUNCE_K,
            debounce_n: crate::counting::DEFAULT_DEBOUNCE_N,
            bands: Bands::default(),
            forecast: ForecastConfig::default(),
            display: DisplayConfig::default(),
        }
    }
}

impl MonitorConfig {
    pub fn validate(&self) -> Result<(), MonitorError> {
        let err = |m: String| Err(MonitorError::Config(m));
        if !(0.0..=1.0).contains(&self.conf_threshold) {
            return err("conf_threshold must lie in [0, 1]".into());
        }
        if self.window == 0 {
            return err("window must be at least 1".into());
        }
        if self.debounce_k == 0 || self.debounce_k > self.debounce_n {
            return err("debounce needs 1 <= k <= n".into());
        }
        if self.display.max_entries == 0 || self.display.refresh_s == 0 {
            return err("max_entries and refresh_s must be positive".into());
        }
        self.bands.validate().map_err(|e| MonitorError::Config(alloc::format!("{e}")))?;
        self.forecast
            .validate()
            .map_err(|e| MonitorError::Config(alloc::format!("{e}")))
    }
}

/// Why a frame did not reach segment state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum RejectKind {
    Malformed,
    InvalidValue,
    OutOfBounds,
    UnknownCamera,
    Stale,
}

impl RejectKind {
    pub fn of(err: &IngestError) -> Self {
        match err {
            IngestError::MalformedRecord(_) => RejectKind::Malformed,
            IngestError::InvalidValue { .. } => RejectKind::InvalidValue,
            IngestError::BoxOutOfBounds { .. } => RejectKind::OutOfBounds,
            IngestError::UnknownCamera(_) => RejectKind::UnknownCamera,
            IngestError::StaleFrame { .. } => RejectKind::Stale,
        }
    }
}

/// Frame accounting. `received == applied + rejected` at all times.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Counters {
    pub received: u64,
    pub applied: u64,
    pub rejected: BTreeMap<RejectKind, u64>,
}

impl Counters {
    pub fn rejected_total(&self) -> u64 {
        self.rejected.values().sum()
    }

    pub fn reconciles(&self) -> bool {
        self.received == self.applied + self.rejected_total()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MonitorOutput {
    pub transitions: Vec<Transition>,
    pub anomalies: Vec<AnomalyEvent>,
    pub history: Vec<HistoryRecord>,
    pub messages: Vec<AlertMessage>,
}

impl MonitorOutput {
    fn extend(&mut self, other: MonitorOutput) {
        self.transitions.extend(other.transitions);
        self.anomalies.extend(other.anomalies);
        self.history.extend(other.history);
        self.messages.extend(other.messages);
    }
}

struct SlotMean {
    occurrence: i64,
    sum: f64,
    n: u32,
}

struct SegmentRuntime {
    segment: StreetSegment,
    window: CountWindow,
    state: SegmentState,
    debouncer: AnomalyDebouncer,
    camera_counts: BTreeMap<String, u32>,
    pending_ts: Option<TimestampMs>,
    pending_anomalies: Vec<Detection>,
    forecast: Option<Forecast>,
    slot: Option<SlotMean>,
}

struct BoardRuntime {
    spec: BoardSpec,
    last: Option<AlertMessage>,
}

pub struct Monitor {
    config: MonitorConfig,
    registry: CameraRegistry,
    graph: Option<RoadGraph>,
    sequencer: FrameSequencer,
    segments: BTreeMap<String, SegmentRuntime>,
    boards: Vec<BoardRuntime>,
    history: HistoryStore,
    counters: Counters,
    clock: Option<TimestampMs>,
}

impl Monitor {
    pub fn new(
        config: MonitorConfig,
        segments: Vec<StreetSegment>,
        registry: CameraRegistry,
        graph: Option<RoadGraph>,
        boards: Vec<BoardSpec>,
        history: HistoryStore,
    ) -> Result<Self, MonitorError> {
        config.validate()?;
        let cfg_err = |m: String| MonitorError::Config(m);
        let mut runtimes = BTreeMap::new();
        for segment in segments {
            segment.validate().map_err(|e| cfg_err(alloc::format!("{e}")))?;
            let id = segment.segment_id.clone();
            let runtime = SegmentRuntime {
                window: CountWindow::new(id.clone(), config.window).map_err(|e| cfg_err(alloc::format!("{e}")))?,
                state: SegmentState::initial(id.clone()),
                debouncer: AnomalyDebouncer::new(id.clone(), config.conf_threshold, config.debounce_k, config.debounce_n)
                    .map_err(|e| cfg_err(alloc::format!("{e}")))?,
                camera_counts: BTreeMap::new(),
                pending_ts: None,
                pending_anomalies: Vec::new(),
                forecast: None,
                slot: None,
                segment,
            };
            if runtimes.insert(id.clone(), runtime).is_some() {
                return Err(cfg_err(alloc::format!("duplicate segment `{id}`")));
            }
        }
        for (camera, segment) in registry.iter() {
            if !runtimes.contains_key(segment) {
                return Err(cfg_err(alloc::format!("camera `{camera}` maps to unknown segment `{segment}`")));
            }
        }
        for board in &boards {
            board.validate().map_err(|e| cfg_err(alloc::format!("{e}")))?;
            if let Some(g) = &graph {
                if !g.contains_node(&board.location) {
                    return Err(cfg_err(alloc::format!(
                        "board `{}` stands at unknown node `{}`",
                        board.board_id, board.location
                    )));
                }
            }
        }
        let history_config = *history.config();
        if history_config != config.forecast {
            return Err(cfg_err("history store and monitor disagree on forecast settings".into()));
        }
        Ok(Monitor {
            config,
            registry,
            graph,
            sequencer: FrameSequencer::new(),
            segments: runtimes,
            boards: boards.into_iter().map(|spec| BoardRuntime { spec, last: None }).collect(),
            history,
            counters: Counters::default(),
            clock: None,
        })
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn states(&self) -> impl Iterator<Item = &SegmentState> {
        self.segments.values().map(|rt| &rt.state)
    }

    pub fn state(&self, segment_id: &str) -> Option<&SegmentState> {
        self.segments.get(segment_id).map(|rt| &rt.state)
    }

    pub fn history(&self) -> &HistoryStore {
        &self.history
    }

    /// Records a frame the caller could not even decode.
    pub fn reject_undecodable(&mut self, err: &IngestError) {
        self.counters.received += 1;
        *self.counters.rejected.entry(RejectKind::of(err)).or_default() += 1;
    }

    pub fn ingest(&mut self, frame: DetectionFrame) -> (MonitorOutput, Option<IngestError>) {
        self.counters.received += 1;
        match self.admit(frame) {
            Ok(out) => {
                self.counters.applied += 1;
                (out, None)
            }
            Err(err) => {
                *self.counters.rejected.entry(RejectKind::of(&err)).or_default() += 1;
                (MonitorOutput::default(), Some(err))
            }
        }
    }

    fn admit(&mut self, frame: DetectionFrame) -> Result<MonitorOutput, IngestError> {
        frame.check_values()?;
        let frame = validate_frame(frame)?;
        let segment_id = String::from(self.registry.resolve(&frame.camera_id)?);
        let rt = self
            .segments
            .get(&segment_id)
            .ok_or_else(|| IngestError::UnknownCamera(frame.camera_id.clone()))?;
        if let Some(pending) = rt.pending_ts {
            if frame.timestamp_ms < pending {
                return Err(IngestError::StaleFrame {
                    camera_id: frame.camera_id.clone(),
                    timestamp_ms: frame.timestamp_ms,
                    last_ms: pending,
                });
            }
        }
        self.sequencer.admit(&frame)?;

        let mut out = MonitorOutput::default();
        let ts = frame.timestamp_ms;
        let rt = self.segments.get_mut(&segment_id).expect("checked above");
        if rt.pending_ts.is_some_and(|p| ts > p) {
            out.extend(Self::commit(rt, &self.config, &mut self.history));
        }
        rt.pending_ts = Some(ts);
        rt.camera_counts
            .insert(frame.camera_id.clone(), count_vehicles(&frame, self.config.conf_threshold).total());
        rt.pending_anomalies
            .extend(frame.detections.into_iter().filter(|d| d.class.is_anomaly()));

        self.clock = Some(self.clock.map_or(ts, |c| c.max(ts)));
        let changed = !out.transitions.is_empty() || !out.anomalies.is_empty();
        out.messages = self.poll_boards(changed);
        Ok(out)
    }

    fn commit(rt: &mut SegmentRuntime, config: &MonitorConfig, history: &mut HistoryStore) -> MonitorOutput {
        let mut out = MonitorOutput::default();
        let Some(ts) = rt.pending_ts.take() else {
            return out;
        };
        let total: u32 = rt.camera_counts.values().sum();
        rt.window.push(ts, total).expect("tick timestamps increase");
        let smoothed = smooth_count(&rt.window).expect("window just received a sample");
        let (next, transition) = step_segment_state(&rt.state, smoothed, ts, &rt.segment, &config.bands)
            .expect("tick timestamps increase and threshold validated");
        rt.state = next;
        out.transitions.extend(transition);

        let tick = DetectionFrame {
            camera_id: String::new(),
            timestamp_ms: ts,
            image_w: 1,
            image_h: 1,
            detections: core::mem::take(&mut rt.pending_anomalies),
        };
        out.anomalies.extend(rt.debouncer.observe(&tick));

        let slot_ms = config.forecast.slot_width_ms();
        let occurrence = (ts + i64::from(config.forecast.tz_offset_s) * 1000).div_euclid(slot_ms);
        match &mut rt.slot {
            Some(slot) if slot.occurrence == occurrence => {
                slot.sum += rt.state.ratio;
                slot.n += 1;
            }
            _ => {
                if let Some(done) = rt.slot.take() {
                    out.history.extend(Self::close_slot(&rt.segment.segment_id, done, config, history));
                }
                rt.slot = Some(SlotMean {
                    occurrence,
                    sum: rt.state.ratio,
                    n: 1,
                });
            }
        }
        rt.forecast = Some(history.forecast(&rt.segment.segment_id, rt.state.ratio, ts));
        out
    }

    fn close_slot(
        segment_id: &str,
        slot: SlotMean,
        config: &MonitorConfig,
        history: &mut HistoryStore,
    ) -> Option<HistoryRecord> {
        let record = HistoryRecord {
            segment_id: segment_id.into(),
            ts: slot.occurrence * config.forecast.slot_width_ms() - i64::from(config.forecast.tz_offset_s) * 1000,
            ratio: slot.sum / f64::from(slot.n),
        };
        history.apply(&record).ok()?;
        Some(record)
    }

    fn views(&self) -> Vec<SegmentView> {
        self.segments
            .values()
            .map(|rt| {
                let forecast_level = rt
                    .forecast
                    .as_ref()
                    .filter(|f| f.advisory)
                    .map(|f| self.config.bands.lookup(f.predicted_ratio));
                SegmentView {
                    segment_id: rt.segment.segment_id.clone(),
                    name: rt.segment.name.clone(),
                    level: rt.state.level,
                    ratio: rt.state.ratio,
                    free_flow_time_s: rt.segment.free_flow_time_s(),
                    forecast: rt.forecast.clone(),
                    forecast_level,
                    anomalies: rt.debouncer.active().map(|e| e.class).collect(),
                }
            })
            .collect()
    }

    /// Composes each board's message and returns those due: first message,
    /// a change in what drivers would see, or the heartbeat refresh.
    fn poll_boards(&mut self, state_changed: bool) -> Vec<AlertMessage> {
        let now = self.clock.unwrap_or(0);
        let heartbeat_due = self
            .boards
            .iter()
            .any(|b| b.last.as_ref().is_none_or(|m| now >= m.expires_at));
        if !state_changed && !heartbeat_due {
            return Vec::new();
        }
        let views = self.views();
        let mut due = Vec::new();
        for board in &mut self.boards {
            let msg = compose_message(&views, self.graph.as_ref(), &board.spec, now, &self.config.display);
            let publish = match &board.last {
                None => true,
                Some(last) => now >= last.expires_at || last.signature() != msg.signature(),
            };
            if publish {
                board.last = Some(msg.clone());
                due.push(msg);
            }
        }
        due
    }

    /// Commits every pending tick, closes open history slots and makes sure
    /// every board has shown at least one message.
    pub fn finish(&mut self) -> MonitorOutput {
        let mut out = MonitorOutput::default();
        for rt in self.segments.values_mut() {
            out.extend(Self::commit(rt, &self.config, &mut self.history));
        }
        for rt in self.segments.values_mut() {
            if let Some(done) = rt.slot.take() {
                out.history
                    .extend(Self::close_slot(&rt.segment.segment_id, done, &self.config, &mut self.history));
            }
        }
        let changed = !out.transitions.is_empty() || !out.anomalies.is_empty();
        out.messages = self.poll_boards(changed);
        out
    }
}
