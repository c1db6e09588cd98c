//! Seeded synthetic traffic: M/M/inf occupancy per segment, rendered into
//! noisy detection frames, with the ground truth kept alongside.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};
use thiserror::Error;

use crate::ingest::{BoundingBox, Detection, DetectionFrame, ObjectClass};
use crate::rng::named_stream;
use crate::TimestampMs;

/// Side of the square grid cell each rendered object occupies.
pub const SLOT_PX: u32 = 32;
const BOX_W: f64 = 24.0;
const BOX_H: f64 = 16.0;

/// Share of each vehicle class among rendered vehicles.
const CLASS_MIX: [(ObjectClass, f64); 6] = [
    (ObjectClass::Car, 0.70),
    (ObjectClass::Motorcycle, 0.10),
    (ObjectClass::Truck, 0.08),
    (ObjectClass::Bus, 0.05),
    (ObjectClass::Van, 0.05),
    (ObjectClass::Other, 0.02),
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error("{needed} objects do not fit the {slots} grid slots of the image")]
    CapacityExceeded { needed: usize, slots: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RatePiece {
    /// Start of the piece, seconds from scenario start.
    pub from_s: f64,
    pub per_min: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SegmentProfile {
    pub segment_id: String,
    pub camera_id: String,
    pub dwell_s: f64,
    /// Piecewise-constant arrival rate; zero before the first piece.
    pub rates: Vec<RatePiece>,
}

impl SegmentProfile {
    fn rate_at(&self, t_s: f64) -> f64 {
        self.rates
            .iter()
            .take_while(|p| p.from_s <= t_s)
            .last()
            .map_or(0.0, |p| p.per_min)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Incident {
    pub segment_id: String,
    pub start_s: f64,
    pub duration_s: f64,
    pub class: ObjectClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct NoiseModel {
    pub p_miss: f64,
    /// Mean number of spurious vehicle detections per frame.
    pub p_false: f64,
    pub jitter_px: u32,
    pub conf_spread: f64,
}

impl NoiseModel {
    pub fn validate(&self) -> Result<(), SimError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if unit(self.p_miss) && unit(self.p_false) && unit(self.conf_spread) {
            Ok(())
        } else {
            Err(SimError::InvalidConfig("noise probabilities must lie in [0, 1]".into()))
        }
    }
}

#[cfg(feature = "serde")]
fn default_image_side() -> u32 {
    640
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScenarioConfig {
    pub seed: u64,
    pub duration_s: f64,
    pub frame_interval_ms: u64,
    #[cfg_attr(feature = "serde", serde(default))]
    pub start_ts_ms: TimestampMs,
    #[cfg_attr(feature = "serde", serde(default = "default_image_side"))]
    pub image_w: u32,
    #[cfg_attr(feature = "serde", serde(default = "default_image_side"))]
    pub image_h: u32,
    pub segments: Vec<SegmentProfile>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub incidents: Vec<Incident>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub noise: NoiseModel,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidConfig(msg));
        if !(self.duration_s >= 0.0 && self.duration_s.is_finite()) {
            return bad("duration_s must be non-negative".into());
        }
        if self.frame_interval_ms == 0 {
            return bad("frame_interval_ms must be positive".into());
        }
        if self.image_w < SLOT_PX || self.image_h < SLOT_PX {
            return bad(alloc::format!("image must be at least {SLOT_PX} px on each side"));
        }
        for seg in &self.segments {
            if !(seg.dwell_s > 0.0 && seg.dwell_s.is_finite()) {
                return bad(alloc::format!("segment `{}`: dwell_s must be positive", seg.segment_id));
            }
            if seg.rates.iter().any(|p| !(p.per_min >= 0.0 && p.per_min.is_finite())) {
                return bad(alloc::format!("segment `{}`: rates must be non-negative", seg.segment_id));
            }
            if seg.rates.windows(2).any(|w| w[1].from_s <= w[0].from_s) {
                return bad(alloc::format!("segment `{}`: rate pieces must be increasing in time", seg.segment_id));
            }
        }
        for inc in &self.incidents {
            if !inc.class.is_anomaly() {
                return bad(alloc::format!("incident class `{}` is not an anomaly class", inc.class));
            }
            if !self.segments.iter().any(|s| s.segment_id == inc.segment_id) {
                return bad(alloc::format!("incident on unknown segment `{}`", inc.segment_id));
            }
            if !(inc.duration_s >= 0.0 && inc.start_s >= 0.0) {
                return bad("incident times must be non-negative".into());
            }
        }
        self.noise.validate()
    }

    pub fn duration_ms(&self) -> u64 {
        libm::round(self.duration_s * 1000.0) as u64
    }

    /// Frame offsets from the scenario start, in ms.
    pub fn frame_offsets(&self) -> impl Iterator<Item = u64> + '_ {
        let end = self.duration_ms();
        (0..)
            .map(move |k: u64| k * self.frame_interval_ms)
            .take_while(move |&t| t < end)
    }
}

/// True occupancy of one segment at each frame offset.
pub fn gen_arrivals(profile: &SegmentProfile, frame_offsets_ms: &[u64], horizon_s: f64, rng: &mut ChaCha8Rng) -> Vec<u32> {
    let dwell = Exp::new(1.0 / profile.dwell_s).expect("dwell validated positive");
    // (arrival, departure) in seconds
    let mut stays: Vec<(f64, f64)> = Vec::new();

    // start from the stationary distribution of the first rate
    let initial_mean = profile.rate_at(0.0) / 60.0 * profile.dwell_s;
    if initial_mean > 0.0 {
        let n: f64 = Poisson::new(initial_mean).expect("positive mean").sample(rng);
        for _ in 0..n as u64 {
            stays.push((f64::NEG_INFINITY, dwell.sample(rng)));
        }
    }

    let mut pieces: Vec<(f64, f64, f64)> = Vec::new();
    for (i, p) in profile.rates.iter().enumerate() {
        let end = profile.rates.get(i + 1).map_or(horizon_s, |n| n.from_s.min(horizon_s));
        let start = p.from_s.max(0.0);
        if end > start {
            pieces.push((start, end, p.per_min / 60.0));
        }
    }
    for (start, end, rate) in pieces {
        if rate <= 0.0 {
            continue;
        }
        let gap = Exp::new(rate).expect("positive rate");
        let mut t = start;
        loop {
            t += gap.sample(rng);
            if t >= end {
                break;
            }
            stays.push((t, t + dwell.sample(rng)));
        }
    }

    // occupancy at t = #(arrival <= t) - #(departure <= t)
    let mut arrivals: Vec<f64> = stays.iter().map(|s| s.0).collect();
    let mut departures: Vec<f64> = stays.iter().map(|s| s.1).collect();
    arrivals.sort_by(f64::total_cmp);
    departures.sort_by(f64::total_cmp);
    frame_offsets_ms
        .iter()
        .map(|&ms| {
            let t = ms as f64 / 1000.0;
            let arrived = arrivals.partition_point(|&a| a <= t);
            let departed = departures.partition_point(|&d| d <= t);
            (arrived - departed) as u32
        })
        .collect()
}

/// A rendered frame plus the bookkeeping behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFrame {
    pub frame: DetectionFrame,
    pub true_count: u32,
    pub missed: u32,
    pub false_positives: u32,
}

impl RenderedFrame {
    pub fn vehicle_detections(&self) -> usize {
        self.frame.detections.iter().filter(|d| d.class.is_vehicle()).count()
    }
}

fn vehicle_class(rng: &mut ChaCha8Rng) -> ObjectClass {
    let mut u: f64 = rng.random();
    for (class, share) in CLASS_MIX {
        if u < share {
            return class;
        }
        u -= share;
    }
    ObjectClass::Car
}

pub struct FrameSpec<'a> {
    pub camera_id: &'a str,
    pub timestamp_ms: TimestampMs,
    pub image_w: u32,
    pub image_h: u32,
}

pub fn render_detections(
    true_count: u32,
    active_incidents: &[ObjectClass],
    noise: &NoiseModel,
    spec: &FrameSpec<'_>,
    rng: &mut ChaCha8Rng,
) -> Result<RenderedFrame, SimError> {
    let cols = (spec.image_w / SLOT_PX) as usize;
    let rows = (spec.image_h / SLOT_PX) as usize;
    let slots = cols * rows;
    if true_count as usize > slots {
        return Err(SimError::CapacityExceeded {
            needed: true_count as usize,
            slots,
        });
    }

    let mut missed = 0u32;
    let mut objects: Vec<ObjectClass> = Vec::new();
    for _ in 0..true_count {
        let class = vehicle_class(rng);
        if rng.random_bool(noise.p_miss) {
            missed += 1;
        } else {
            objects.push(class);
        }
    }
    let false_positives = if noise.p_false > 0.0 {
        let n: f64 = Poisson::new(noise.p_false).expect("positive mean").sample(rng);
        n as u32
    } else {
        0
    };
    for _ in 0..false_positives {
        objects.push(vehicle_class(rng));
    }
    objects.extend_from_slice(active_incidents);
    if objects.len() > slots {
        return Err(SimError::CapacityExceeded {
            needed: objects.len(),
            slots,
        });
    }

    let (w, h) = (f64::from(spec.image_w), f64::from(spec.image_h));
    let jitter = i64::from(noise.jitter_px);
    let chosen = index::sample(rng, slots, objects.len()).into_vec();
    let detections = objects
        .into_iter()
        .zip(chosen)
        .map(|(class, slot)| {
            let cell_x = ((slot % cols) as u32 * SLOT_PX) as f64;
            let cell_y = ((slot / cols) as u32 * SLOT_PX) as f64;
            let (dx, dy) = if jitter > 0 {
                (rng.random_range(-jitter..=jitter), rng.random_range(-jitter..=jitter))
            } else {
                (0, 0)
            };
            let x = (cell_x + (f64::from(SLOT_PX) - BOX_W) / 2.0 + dx as f64).clamp(0.0, w - BOX_W);
            let y = (cell_y + (f64::from(SLOT_PX) - BOX_H) / 2.0 + dy as f64).clamp(0.0, h - BOX_H);
            let confidence = if noise.conf_spread > 0.0 {
                rng.random_range((1.0 - noise.conf_spread)..=1.0)
            } else {
                1.0
            };
            Detection {
                class,
                confidence,
                bbox: BoundingBox::new(x, y, BOX_W, BOX_H),
            }
        })
        .collect();

    Ok(RenderedFrame {
        frame: DetectionFrame {
            camera_id: spec.camera_id.into(),
            timestamp_ms: spec.timestamp_ms,
            image_w: spec.image_w,
            image_h: spec.image_h,
            detections,
        },
        true_count,
        missed,
        false_positives,
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TruthCount {
    pub ts: TimestampMs,
    pub segment_id: String,
    pub count: u32,
    pub detected: u32,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IncidentInterval {
    pub segment_id: String,
    pub class: ObjectClass,
    pub start_ts: TimestampMs,
    pub end_ts: TimestampMs,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    pub counts: Vec<TruthCount>,
    pub incidents: Vec<IncidentInterval>,
}

impl GroundTruth {
    pub fn series(&self, segment_id: &str) -> impl Iterator<Item = &TruthCount> + '_ {
        let id = String::from(segment_id);
        self.counts.iter().filter(move |c| c.segment_id == id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutput {
    pub frames: Vec<DetectionFrame>,
    pub truth: GroundTruth,
}

/// Runs the whole scenario: frames ordered by time, then by segment in
/// configuration order.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioOutput, SimError> {
    config.validate()?;
    let offsets: Vec<u64> = config.frame_offsets().collect();
    let horizon_s = config.duration_s;
    let series: Vec<Vec<u32>> = config
        .segments
        .iter()
        .map(|seg| {
            let mut rng = named_stream(config.seed, &alloc::format!("arrivals:{}", seg.segment_id));
            gen_arrivals(seg, &offsets, horizon_s, &mut rng)
        })
        .collect();
    let mut render_rngs: Vec<ChaCha8Rng> = config
        .segments
        .iter()
        .map(|seg| named_stream(config.seed, &alloc::format!("detections:{}", seg.segment_id)))
        .collect();

    let end_ms = config.duration_ms();
    let incidents: Vec<IncidentInterval> = config
        .incidents
        .iter()
        .map(|inc| {
            let start = (libm::round(inc.start_s * 1000.0) as u64).min(end_ms);
            let end = (libm::round((inc.start_s + inc.duration_s) * 1000.0) as u64).min(end_ms);
            IncidentInterval {
                segment_id: inc.segment_id.clone(),
                class: inc.class,
                start_ts: config.start_ts_ms + start as i64,
                end_ts: config.start_ts_ms + end as i64,
            }
        })
        .collect();

    let mut frames = Vec::with_capacity(offsets.len() * config.segments.len());
    let mut counts = Vec::with_capacity(frames.capacity());
    for (k, &offset) in offsets.iter().enumerate() {
        let ts = config.start_ts_ms + offset as i64;
        for (si, seg) in config.segments.iter().enumerate() {
            let active: Vec<ObjectClass> = incidents
                .iter()
                .filter(|i| i.segment_id == seg.segment_id && i.start_ts <= ts && ts < i.end_ts)
                .map(|i| i.class)
                .collect();
            let spec = FrameSpec {
                camera_id: &seg.camera_id,
                timestamp_ms: ts,
                image_w: config.image_w,
                image_h: config.image_h,
            };
            let rendered = render_detections(series[si][k], &active, &config.noise, &spec, &mut render_rngs[si])?;
            counts.push(TruthCount {
                ts,
                segment_id: seg.segment_id.clone(),
                count: rendered.true_count,
                detected: rendered.vehicle_detections() as u32,
            });
            frames.push(rendered.frame);
        }
    }
    Ok(ScenarioOutput {
        frames,
        truth: GroundTruth { counts, incidents },
    })
}
