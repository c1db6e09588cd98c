//! Time-of-week occupancy baselines and short-horizon prediction.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::string::String;

use thiserror::Error;

use crate::TimestampMs;

const MS_PER_DAY: i64 = 86_400_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ForecastError {
    #[error("no history for `{segment_id}` in bucket {bucket:?}")]
    NoHistory { segment_id: String, bucket: BucketId },
    #[error("occupancy ratio must be finite and non-negative, got {0}")]
    InvalidRatio(f64),
    #[error("invalid forecast configuration: {0}")]
    InvalidConfig(String),
}

/// Day of week (0 = Monday .. 6 = Sunday) and slot index within the day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BucketId {
    pub weekday: u8,
    pub slot: u16,
}

pub const MONDAY: u8 = 0;
pub const SUNDAY: u8 = 6;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ForecastConfig {
    pub alpha: f64,
    pub slot_width_s: u32,
    pub retention_days: u32,
    pub advisory_edge: f64,
    /// Offset of the local timezone from UTC, seconds.
    pub tz_offset_s: i32,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        ForecastConfig {
            alpha: 0.5,
            slot_width_s: 900,
            retention_days: 28,
            advisory_edge: 1.0,
            tz_offset_s: 0,
        }
    }
}

impl ForecastConfig {
    pub fn validate(&self) -> Result<(), ForecastError> {
        let bad = |msg: &str| Err(ForecastError::InvalidConfig(msg.into()));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if self.slot_width_s == 0 || 86_400 % self.slot_width_s != 0 {
            return bad("slot width must be a positive divisor of 86400 s");
        }
        if self.retention_days == 0 {
            return bad("retention must be at least one day");
        }
        if !(self.advisory_edge > 0.0) {
            return bad("advisory edge must be positive");
        }
        Ok(())
    }

    pub fn slot_width_ms(&self) -> i64 {
        i64::from(self.slot_width_s) * 1000
    }
}

pub fn bucket_of(ts: TimestampMs, slot_width_s: u32, tz_offset_s: i32) -> BucketId {
    let local_ms = ts + i64::from(tz_offset_s) * 1000;
    let day = local_ms.div_euclid(MS_PER_DAY);
    let ms_of_day = local_ms.rem_euclid(MS_PER_DAY);
    // 1970-01-01 was a Thursday.
    let weekday = (day + 3).rem_euclid(7) as u8;
    let slot = (ms_of_day / (i64::from(slot_width_s) * 1000)) as u16;
    BucketId { weekday, slot }
}

/// One persisted history sample.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HistoryRecord {
    pub segment_id: String,
    pub ts: TimestampMs,
    pub ratio: f64,
}

/// Occupancy ratios per segment and bucket, keeping the last
/// `retention_days` of samples in each bucket.
#[derive(Debug, Clone)]
pub struct HistoryStore {
    config: ForecastConfig,
    buckets: BTreeMap<String, BTreeMap<BucketId, VecDeque<(TimestampMs, f64)>>>,
}

impl HistoryStore {
    pub fn new(config: ForecastConfig) -> Self {
        HistoryStore {
            config,
            buckets: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &ForecastConfig {
        &self.config
    }

    pub fn record(&mut self, segment_id: &str, ts: TimestampMs, ratio: f64) -> Result<(), ForecastError> {
        if !(ratio >= 0.0 && ratio.is_finite()) {
            return Err(ForecastError::InvalidRatio(ratio));
        }
        let bucket = bucket_of(ts, self.config.slot_width_s, self.config.tz_offset_s);
        let samples = self
            .buckets
            .entry(segment_id.into())
            .or_default()
            .entry(bucket)
            .or_default();
        let pos = samples.partition_point(|&(t, _)| t <= ts);
        samples.insert(pos, (ts, ratio));
        let newest = samples.back().map_or(ts, |&(t, _)| t);
        let horizon = newest - i64::from(self.config.retention_days) * MS_PER_DAY;
        while samples.front().is_some_and(|&(t, _)| t <= horizon) {
            samples.pop_front();
        }
        Ok(())
    }

    pub fn apply(&mut self, record: &HistoryRecord) -> Result<(), ForecastError> {
        self.record(&record.segment_id, record.ts, record.ratio)
    }

    pub fn samples(&self, segment_id: &str, bucket: BucketId) -> impl Iterator<Item = f64> + '_ {
        self.buckets
            .get(segment_id)
            .and_then(|b| b.get(&bucket))
            .into_iter()
            .flat_map(|s| s.iter().map(|&(_, r)| r))
    }

    pub fn bucket_len(&self, segment_id: &str, bucket: BucketId) -> usize {
        self.samples(segment_id, bucket).count()
    }

    /// Arithmetic mean of the bucket's samples.
    pub fn baseline_ratio(&self, segment_id: &str, bucket: BucketId) -> Result<f64, ForecastError> {
        let (sum, n) = self
            .samples(segment_id, bucket)
            .fold((0.0, 0usize), |(s, n), r| (s + r, n + 1));
        if n == 0 {
            return Err(ForecastError::NoHistory {
                segment_id: segment_id.into(),
                bucket,
            });
        }
        Ok(sum / n as f64)
    }

    /// Forecast for the bucket following `ts`. Falls back to the current
    /// ratio when that bucket has no history.
    pub fn forecast(&self, segment_id: &str, current: f64, ts: TimestampMs) -> Forecast {
        let next = bucket_of(
            ts + self.config.slot_width_ms(),
            self.config.slot_width_s,
            self.config.tz_offset_s,
        );
        let baseline = self.baseline_ratio(segment_id, next).unwrap_or(current);
        let predicted_ratio = predict_ratio(current, baseline, self.config.alpha);
        Forecast {
            segment_id: segment_id.into(),
            horizon_s: self.config.slot_width_s,
            predicted_ratio,
            advisory: predicted_ratio >= self.config.advisory_edge,
        }
    }
}

/// Convex blend of the current ratio and the next bucket's baseline.
pub fn predict_ratio(current: f64, baseline_next: f64, alpha: f64) -> f64 {
    alpha * current + (1.0 - alpha) * baseline_next
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Forecast {
    pub segment_id: String,
    pub horizon_s: u32,
    pub predicted_ratio: f64,
    pub advisory: bool,
}
