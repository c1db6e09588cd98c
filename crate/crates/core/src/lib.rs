//! Core of the roadwatch congestion monitor.
//!
//! Everything here is pure computation over owned data and only needs
//! `alloc`: detection-frame validation, per-segment vehicle counting,
//! congestion levels with hysteresis, historical baselines, congestion-aware
//! routing, board message composition, the synthetic traffic generator,
//! detection metrics and annotation geometry. File formats, sockets and the
//! command line live in the `roadwatch` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod congestion;
pub mod counting;
pub mod dataset;
pub mod display;
pub mod forecast;
pub mod ingest;
pub mod metrics;
pub mod monitor;
pub mod routing;
pub mod simulator;

mod rng;

pub use congestion::{Bands, CongestionLevel, SegmentState, StreetSegment, Transition};
pub use counting::{AnomalyEvent, ClassCounts, CountWindow};
pub use display::{AlertEntry, AlertMessage, BoardSpec, EntryKind};
pub use ingest::{BoundingBox, CameraRegistry, Detection, DetectionFrame, ObjectClass};
pub use monitor::{Monitor, MonitorConfig};
pub use routing::{Edge, RoadGraph, Route};

/// Milliseconds since the Unix epoch.
pub type TimestampMs = i64;
