//! Per-frame vehicle counts, sliding-median smoothing and k-of-n debounced
//! anomaly events.

use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::ingest::{DetectionFrame, ObjectClass};
use crate::TimestampMs;

pub const DEFAULT_CONF_THRESHOLD: f64 = 0.5;
pub const DEFAULT_WINDOW: usize = 5;
pub const DEFAULT_DEBOUNCE_K: usize = 3;
pub const DEFAULT_DEBOUNCE_N: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CountingError {
    #[error("count window is empty")]
    EmptyWindow,
    #[error("window timestamps must increase: {timestamp_ms} after {last_ms}")]
    NonIncreasing {
        timestamp_ms: TimestampMs,
        last_ms: TimestampMs,
    },
    #[error("debounce needs 1 <= k <= n, got k={k}, n={n}")]
    BadDebounce { k: usize, n: usize },
    #[error("window capacity must be at least 1")]
    ZeroCapacity,
}

/// Vehicle counts of one frame. Anomaly classes are never counted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassCounts {
    counts: [u32; 6],
}

impl ClassCounts {
    fn slot(class: ObjectClass) -> Option<usize> {
        ObjectClass::VEHICLES.iter().position(|c| *c == class)
    }

    pub fn get(&self, class: ObjectClass) -> u32 {
        Self::slot(class).map_or(0, |i| self.counts[i])
    }

    pub fn total(&self) -> u32 {
        self.counts.iter().sum()
    }

    pub fn add(&mut self, class: ObjectClass) {
        if let Some(i) = Self::slot(class) {
            self.counts[i] += 1;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ObjectClass, u32)> + '_ {
        ObjectClass::VEHICLES.into_iter().zip(self.counts)
    }
}

pub fn count_vehicles(frame: &DetectionFrame, conf_threshold: f64) -> ClassCounts {
    let mut counts = ClassCounts::default();
    frame
        .detections
        .iter()
        .filter(|d| d.class.is_vehicle() && d.confidence >= conf_threshold)
        .for_each(|d| counts.add(d.class));
    counts
}

/// Ring of the most recent `(timestamp, total)` samples of one segment.
#[derive(Debug, Clone)]
pub struct CountWindow {
    pub segment_id: String,
    capacity: usize,
    samples: VecDeque<(TimestampMs, u32)>,
}

impl CountWindow {
    pub fn new(segment_id: impl Into<String>, capacity: usize) -> Result<Self, CountingError> {
        if capacity == 0 {
            return Err(CountingError::ZeroCapacity);
        }
        Ok(CountWindow {
            segment_id: segment_id.into(),
            capacity,
            samples: VecDeque::with_capacity(capacity),
        })
    }

    pub fn push(&mut self, timestamp_ms: TimestampMs, total: u32) -> Result<(), CountingError> {
        if let Some(&(last_ms, _)) = self.samples.back() {
            if timestamp_ms <= last_ms {
                return Err(CountingError::NonIncreasing { timestamp_ms, last_ms });
            }
        }
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back((timestamp_ms, total));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn totals(&self) -> impl Iterator<Item = u32> + '_ {
        self.samples.iter().map(|&(_, total)| total)
    }
}

/// Median of the window totals; mean of the middle pair for even lengths.
pub fn smooth_count(window: &CountWindow) -> Result<f64, CountingError> {
    let mut totals: Vec<u32> = window.totals().collect();
    if totals.is_empty() {
        return Err(CountingError::EmptyWindow);
    }
    totals.sort_unstable();
    let mid = totals.len() / 2;
    Ok(if totals.len() % 2 == 1 {
        f64::from(totals[mid])
    } else {
        (f64::from(totals[mid - 1]) + f64::from(totals[mid])) / 2.0
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AnomalyEvent {
    pub segment_id: String,
    pub class: ObjectClass,
    pub start_ts: TimestampMs,
    pub peak_confidence: f64,
}

#[derive(Debug, Clone, Default)]
struct ClassTrack {
    /// Peak confidence of the class in each of the last `n` frames, `None`
    /// when the class was absent.
    recent: VecDeque<Option<f64>>,
    active: Option<AnomalyEvent>,
}

/// Streaming k-of-n debounce for the anomaly classes of one segment.
#[derive(Debug, Clone)]
pub struct AnomalyDebouncer {
    segment_id: String,
    conf_threshold: f64,
    k: usize,
    n: usize,
    tracks: [ClassTrack; 3],
}

impl AnomalyDebouncer {
    pub fn new(
        segment_id: impl Into<String>,
        conf_threshold: f64,
        k: usize,
        n: usize,
    ) -> Result<Self, CountingError> {
        if k == 0 || k > n {
            return Err(CountingError::BadDebounce { k, n });
        }
        Ok(AnomalyDebouncer {
            segment_id: segment_id.into(),
            conf_threshold,
            k,
            n,
            tracks: Default::default(),
        })
    }

    /// Feeds one frame and returns the events that open on it.
    pub fn observe(&mut self, frame: &DetectionFrame) -> Vec<AnomalyEvent> {
        let mut opened = Vec::new();
        for (track, class) in self.tracks.iter_mut().zip(ObjectClass::ANOMALIES) {
            let peak = frame
                .detections
                .iter()
                .filter(|d| d.class == class && d.confidence >= self.conf_threshold)
                .map(|d| d.confidence)
                .fold(None, |acc: Option<f64>, c| Some(acc.map_or(c, |a| a.max(c))));
            if track.recent.len() == self.n {
                track.recent.pop_front();
            }
            track.recent.push_back(peak);

            let hits = track.recent.iter().filter(|p| p.is_some()).count();
            if hits >= self.k {
                let window_peak = track.recent.iter().flatten().fold(0.0f64, |a, &c| a.max(c));
                match &mut track.active {
                    Some(event) => event.peak_confidence = event.peak_confidence.max(window_peak),
                    None => {
                        let event = AnomalyEvent {
                            segment_id: self.segment_id.clone(),
                            class,
                            start_ts: frame.timestamp_ms,
                            peak_confidence: window_peak,
                        };
                        opened.push(event.clone());
                        track.active = Some(event);
                    }
                }
            } else {
                track.active = None;
            }
        }
        opened
    }

    /// Events whose k-of-n condition currently holds.
    pub fn active(&self) -> impl Iterator<Item = &AnomalyEvent> {
        self.tracks.iter().filter_map(|t| t.active.as_ref())
    }
}

/// Batch form of [`AnomalyDebouncer`] over a time-ordered frame sequence.
pub fn detect_anomaly_events(
    segment_id: &str,
    frames: &[DetectionFrame],
    conf_threshold: f64,
    k: usize,
    n: usize,
) -> Result<Vec<AnomalyEvent>, CountingError> {
    let mut debouncer = AnomalyDebouncer::new(segment_id, conf_threshold, k, n)?;
    Ok(frames.iter().flat_map(|f| debouncer.observe(f)).collect())
}
