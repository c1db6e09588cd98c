//! Capacity thresholds, occupancy ratios and congestion levels.
//!
//! A segment's level follows its occupancy ratio (smoothed count over
//! capacity) through the bands `Free < moderate <= Moderate < heavy <= Heavy
//! < overcrowded <= Overcrowded`. Rising through an edge takes effect
//! immediately; falling back requires the ratio to drop below
//! `edge - margin`, so a count hovering at an edge cannot flap the level.

use alloc::string::String;
use core::fmt;

use thiserror::Error;

use crate::TimestampMs;

/// Jam spacing per vehicle: 4.5 m average length plus 2.5 m headway.
pub const DEFAULT_SLOT_M: f64 = 7.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CongestionError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("capacity threshold must be at least 1")]
    ZeroThreshold,
    #[error("stale update for `{segment_id}`: {timestamp_ms} <= {last_ms}")]
    StaleUpdate {
        segment_id: String,
        timestamp_ms: TimestampMs,
        last_ms: TimestampMs,
    },
    #[error("invalid bands: {0}")]
    InvalidBands(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CongestionLevel {
    #[default]
    Free,
    Moderate,
    Heavy,
    Overcrowded,
}

impl CongestionLevel {
    const ORDERED: [CongestionLevel; 4] = [
        CongestionLevel::Free,
        CongestionLevel::Moderate,
        CongestionLevel::Heavy,
        CongestionLevel::Overcrowded,
    ];

    fn from_rank(rank: usize) -> Self {
        Self::ORDERED[rank.min(3)]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CongestionLevel::Free => "free",
            CongestionLevel::Moderate => "moderate",
            CongestionLevel::Heavy => "heavy",
            CongestionLevel::Overcrowded => "overcrowded",
        }
    }
}

impl fmt::Display for CongestionLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Band edges on the occupancy ratio plus the downward hysteresis margin.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Bands {
    pub moderate: f64,
    pub heavy: f64,
    pub overcrowded: f64,
    pub margin: f64,
}

impl Default for Bands {
    fn default() -> Self {
        Bands {
            moderate: 0.5,
            heavy: 0.8,
            overcrowded: 1.0,
            margin: 0.05,
        }
    }
}

impl Bands {
    pub fn validate(&self) -> Result<(), CongestionError> {
        let ok = self.moderate > 0.0
            && self.moderate < self.heavy
            && self.heavy < self.overcrowded
            && self.margin >= 0.0
            && self.overcrowded.is_finite();
        if ok {
            Ok(())
        } else {
            Err(CongestionError::InvalidBands(alloc::format!(
                "need 0 < moderate < heavy < overcrowded and margin >= 0, got {self:?}"
            )))
        }
    }

    fn edges(&self) -> [f64; 3] {
        [self.moderate, self.heavy, self.overcrowded]
    }

    /// Plain band lookup with no hysteresis.
    pub fn lookup(&self, ratio: f64) -> CongestionLevel {
        CongestionLevel::from_rank(self.edges().iter().filter(|&&e| ratio >= e).count())
    }
}

pub fn capacity_threshold(lanes: u32, length_m: f64, slot_m: f64) -> Result<u32, CongestionError> {
    if lanes == 0 {
        return Err(CongestionError::InvalidGeometry("lanes must be at least 1".into()));
    }
    if !(length_m > 0.0 && length_m.is_finite()) {
        return Err(CongestionError::InvalidGeometry(alloc::format!(
            "length_m must be positive, got {length_m}"
        )));
    }
    if !(slot_m > 0.0) {
        return Err(CongestionError::InvalidGeometry("slot length must be positive".into()));
    }
    let slots = libm::floor(length_m / slot_m) as u32;
    Ok(lanes.saturating_mul(slots).max(1))
}

pub fn occupancy_ratio(smoothed_count: f64, threshold: u32) -> Result<f64, CongestionError> {
    if threshold == 0 {
        return Err(CongestionError::ZeroThreshold);
    }
    Ok(smoothed_count / f64::from(threshold))
}

pub fn classify_level(ratio: f64, previous: CongestionLevel, bands: &Bands) -> CongestionLevel {
    let up = bands.lookup(ratio);
    if up >= previous {
        return up;
    }
    let held = bands
        .edges()
        .iter()
        .filter(|&&e| ratio >= e - bands.margin)
        .count();
    previous.min(CongestionLevel::from_rank(held))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StreetSegment {
    pub segment_id: String,
    pub name: String,
    pub lanes: u32,
    pub length_m: f64,
    pub free_flow_speed_mps: f64,
    pub threshold: u32,
}

impl StreetSegment {
    pub fn validate(&self) -> Result<(), CongestionError> {
        let geometry = |msg: &str| {
            Err(CongestionError::InvalidGeometry(alloc::format!(
                "segment `{}`: {msg}",
                self.segment_id
            )))
        };
        if self.lanes == 0 {
            return geometry("lanes must be at least 1");
        }
        if !(self.length_m > 0.0 && self.length_m.is_finite()) {
            return geometry("length_m must be positive");
        }
        if !(self.free_flow_speed_mps > 0.0 && self.free_flow_speed_mps.is_finite()) {
            return geometry("free_flow_speed_mps must be positive");
        }
        if self.threshold == 0 {
            return Err(CongestionError::ZeroThreshold);
        }
        Ok(())
    }

    /// Free-flow traversal time in seconds.
    pub fn free_flow_time_s(&self) -> f64 {
        self.length_m / self.free_flow_speed_mps
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SegmentState {
    pub segment_id: String,
    pub smoothed_count: f64,
    pub ratio: f64,
    pub level: CongestionLevel,
    pub overcrowded: bool,
    pub since_ts: TimestampMs,
    pub updated_ts: Option<TimestampMs>,
}

impl SegmentState {
    pub fn initial(segment_id: impl Into<String>) -> Self {
        SegmentState {
            segment_id: segment_id.into(),
            smoothed_count: 0.0,
            ratio: 0.0,
            level: CongestionLevel::Free,
            overcrowded: false,
            since_ts: 0,
            updated_ts: None,
        }
    }
}

/// Level change record, one line of the transition log.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Transition {
    pub ts: TimestampMs,
    pub segment_id: String,
    pub from: CongestionLevel,
    pub to: CongestionLevel,
    pub ratio: f64,
}

pub fn step_segment_state(
    state: &SegmentState,
    smoothed_count: f64,
    ts: TimestampMs,
    segment: &StreetSegment,
    bands: &Bands,
) -> Result<(SegmentState, Option<Transition>), CongestionError> {
    if let Some(last_ms) = state.updated_ts {
        if ts <= last_ms {
            return Err(CongestionError::StaleUpdate {
                segment_id: state.segment_id.clone(),
                timestamp_ms: ts,
                last_ms,
            });
        }
    }
    let ratio = occupancy_ratio(smoothed_count, segment.threshold)?;
    let level = classify_level(ratio, state.level, bands);
    let changed = level != state.level;
    let next = SegmentState {
        segment_id: state.segment_id.clone(),
        smoothed_count,
        ratio,
        level,
        overcrowded: level == CongestionLevel::Overcrowded,
        since_ts: if changed { ts } else { state.since_ts },
        updated_ts: Some(ts),
    };
    let transition = changed.then(|| Transition {
        ts,
        segment_id: state.segment_id.clone(),
        from: state.level,
        to: level,
        ratio,
    });
    Ok((next, transition))
}
