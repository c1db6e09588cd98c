//! Detection frames as they arrive from cameras, their validation, and the
//! camera to street-segment attribution.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use thiserror::Error;

use crate::TimestampMs;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IngestError {
    #[error("malformed record: {0}")]
    MalformedRecord(String),
    #[error("invalid value for `{field}`: {reason}")]
    InvalidValue { field: String, reason: String },
    #[error("detection {index} does not fit inside the {image_w}x{image_h} image")]
    BoxOutOfBounds { index: usize, image_w: u32, image_h: u32 },
    #[error("camera `{0}` is not registered to any segment")]
    UnknownCamera(String),
    #[error("stale frame from `{camera_id}`: {timestamp_ms} < last accepted {last_ms}")]
    StaleFrame {
        camera_id: String,
        timestamp_ms: TimestampMs,
        last_ms: TimestampMs,
    },
}

impl IngestError {
    pub(crate) fn invalid(field: &str, reason: impl Into<String>) -> Self {
        IngestError::InvalidValue {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// Axis-aligned box in absolute pixels, origin at the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BoundingBox { x, y, w, h }
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Checks positivity and containment in a `image_w` x `image_h` canvas.
    pub fn fits(&self, image_w: f64, image_h: f64) -> bool {
        self.w > 0.0
            && self.h > 0.0
            && self.x >= 0.0
            && self.y >= 0.0
            && self.right() <= image_w
            && self.bottom() <= image_h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ObjectClass {
    Car,
    Motorcycle,
    Truck,
    Bus,
    Van,
    Other,
    Accident,
    SuddenStop,
    Congestion,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 9] = [
        ObjectClass::Car,
        ObjectClass::Motorcycle,
        ObjectClass::Truck,
        ObjectClass::Bus,
        ObjectClass::Van,
        ObjectClass::Other,
        ObjectClass::Accident,
        ObjectClass::SuddenStop,
        ObjectClass::Congestion,
    ];

    pub const VEHICLES: [ObjectClass; 6] = [
        ObjectClass::Car,
        ObjectClass::Motorcycle,
        ObjectClass::Truck,
        ObjectClass::Bus,
        ObjectClass::Van,
        ObjectClass::Other,
    ];

    pub const ANOMALIES: [ObjectClass; 3] = [
        ObjectClass::Accident,
        ObjectClass::SuddenStop,
        ObjectClass::Congestion,
    ];

    pub fn is_vehicle(self) -> bool {
        !self.is_anomaly()
    }

    pub fn is_anomaly(self) -> bool {
        matches!(
            self,
            ObjectClass::Accident | ObjectClass::SuddenStop | ObjectClass::Congestion
        )
    }

    /// Wire name, as used in the JSONL schemas.
    pub fn as_str(self) -> &'static str {
        match self {
            ObjectClass::Car => "car",
            ObjectClass::Motorcycle => "motorcycle",
            ObjectClass::Truck => "truck",
            ObjectClass::Bus => "bus",
            ObjectClass::Van => "van",
            ObjectClass::Other => "other",
            ObjectClass::Accident => "accident",
            ObjectClass::SuddenStop => "sudden_stop",
            ObjectClass::Congestion => "congestion",
        }
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObjectClass {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ObjectClass::ALL
            .into_iter()
            .find(|class| class.as_str() == s)
            .ok_or_else(|| IngestError::invalid("class", alloc::format!("unknown class `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Detection {
    pub class: ObjectClass,
    pub confidence: f64,
    #[cfg_attr(feature = "serde", serde(rename = "box"))]
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DetectionFrame {
    pub camera_id: String,
    pub timestamp_ms: TimestampMs,
    pub image_w: u32,
    pub image_h: u32,
    pub detections: Vec<Detection>,
}

impl DetectionFrame {
    /// Field-level checks that do not depend on box placement: image size,
    /// confidence range and non-negative box geometry.
    pub fn check_values(&self) -> Result<(), IngestError> {
        if self.image_w == 0 || self.image_h == 0 {
            return Err(IngestError::invalid("image_w/image_h", "image dimensions must be positive"));
        }
        for det in &self.detections {
            if !(0.0..=1.0).contains(&det.confidence) {
                return Err(IngestError::invalid(
                    "confidence",
                    alloc::format!("{} outside [0, 1]", det.confidence),
                ));
            }
            let b = &det.bbox;
            if !(b.w > 0.0 && b.h > 0.0) {
                return Err(IngestError::invalid("box", "width and height must be positive"));
            }
            if !(b.x >= 0.0 && b.y >= 0.0) {
                return Err(IngestError::invalid("box", "coordinates must be non-negative"));
            }
        }
        Ok(())
    }
}

/// Accepts the frame unchanged when every box fits its image.
pub fn validate_frame(frame: DetectionFrame) -> Result<DetectionFrame, IngestError> {
    let (w, h) = (f64::from(frame.image_w), f64::from(frame.image_h));
    if let Some(index) = frame.detections.iter().position(|d| !d.bbox.fits(w, h)) {
        return Err(IngestError::BoxOutOfBounds {
            index,
            image_w: frame.image_w,
            image_h: frame.image_h,
        });
    }
    Ok(frame)
}

/// Camera to segment attribution. Many cameras may watch one segment.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct CameraRegistry {
    cameras: BTreeMap<String, String>,
}

impl CameraRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, camera_id: impl Into<String>, segment_id: impl Into<String>) {
        self.cameras.insert(camera_id.into(), segment_id.into());
    }

    pub fn resolve(&self, camera_id: &str) -> Result<&str, IngestError> {
        self.cameras
            .get(camera_id)
            .map(String::as_str)
            .ok_or_else(|| IngestError::UnknownCamera(camera_id.into()))
    }

    pub fn cameras_of<'a>(&'a self, segment_id: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.cameras
            .iter()
            .filter(move |(_, seg)| seg.as_str() == segment_id)
            .map(|(cam, _)| cam.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.cameras.iter().map(|(c, s)| (c.as_str(), s.as_str()))
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }
}

impl<C: Into<String>, S: Into<String>> FromIterator<(C, S)> for CameraRegistry {
    fn from_iter<I: IntoIterator<Item = (C, S)>>(iter: I) -> Self {
        let mut registry = CameraRegistry::new();
        for (c, s) in iter {
            registry.insert(c, s);
        }
        registry
    }
}

pub fn resolve_segment<'a>(camera_id: &str, registry: &'a CameraRegistry) -> Result<&'a str, IngestError> {
    registry.resolve(camera_id)
}

/// Tracks the last accepted timestamp per camera. Frames that go back in
/// time are rejected, never reordered.
#[derive(Debug, Clone, Default)]
pub struct FrameSequencer {
    last: BTreeMap<String, TimestampMs>,
}

impl FrameSequencer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn admit(&mut self, frame: &DetectionFrame) -> Result<(), IngestError> {
        match self.last.get_mut(&frame.camera_id) {
            Some(last) if frame.timestamp_ms < *last => Err(IngestError::StaleFrame {
                camera_id: frame.camera_id.clone(),
                timestamp_ms: frame.timestamp_ms,
                last_ms: *last,
            }),
            Some(last) => {
                *last = frame.timestamp_ms;
                Ok(())
            }
            None => {
                self.last.insert(frame.camera_id.clone(), frame.timestamp_ms);
                Ok(())
            }
        }
    }
}
