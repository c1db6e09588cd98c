//! JSONL record formats: detection frames, annotations, simulator truth and
//! the transition log.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use roadwatch_core::congestion::{CongestionLevel, Transition};
use roadwatch_core::dataset::{AnnotationItem, Label};
use roadwatch_core::ingest::{BoundingBox, Detection, DetectionFrame, IngestError, ObjectClass};
use roadwatch_core::metrics::{LabeledBox, LabeledImage, ScoredBox};
use roadwatch_core::simulator::{GroundTruth, IncidentInterval, TruthCount};
use roadwatch_core::TimestampMs;

#[derive(Deserialize)]
struct RawBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

#[derive(Deserialize)]
struct RawDetection {
    class: String,
    confidence: f64,
    #[serde(rename = "box")]
    bbox: RawBox,
}

#[derive(Deserialize)]
struct RawFrame {
    camera_id: String,
    timestamp_ms: i64,
    image_w: i64,
    image_h: i64,
    detections: Vec<RawDetection>,
}

fn image_side(field: &str, value: i64) -> Result<u32, IngestError> {
    match u32::try_from(value) {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(IngestError::InvalidValue {
            field: field.into(),
            reason: format!("{value} is not a positive pixel count"),
        }),
    }
}

/// Decodes one line of the frame stream. Syntax errors and missing or
/// mistyped fields are `MalformedRecord`; out-of-range values are
/// `InvalidValue`. Box placement is left to `validate_frame`.
pub fn parse_frame(line: &[u8]) -> Result<DetectionFrame, IngestError> {
    let raw: RawFrame = serde_json::from_slice(line).map_err(|e| IngestError::MalformedRecord(e.to_string()))?;
    let detections = raw
        .detections
        .into_iter()
        .map(|d| {
            Ok(Detection {
                class: d.class.parse::<ObjectClass>()?,
                confidence: d.confidence,
                bbox: BoundingBox::new(d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h),
            })
        })
        .collect::<Result<Vec<_>, IngestError>>()?;
    let frame = DetectionFrame {
        camera_id: raw.camera_id,
        timestamp_ms: raw.timestamp_ms,
        image_w: image_side("image_w", raw.image_w)?,
        image_h: image_side("image_h", raw.image_h)?,
        detections,
    };
    frame.check_values()?;
    Ok(frame)
}

pub fn frame_line(frame: &DetectionFrame) -> String {
    serde_json::to_string(frame).expect("frames always serialize")
}

/// Reads a JSONL file, naming the file and line on failure. Blank lines are
/// skipped.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("cannot read {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let value =
            serde_json::from_str(&line).with_context(|| format!("{}:{}: bad record", path.display(), i + 1))?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut out = std::io::BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// One label of an annotation line. Predictions carry a confidence,
/// ground truth does not.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationLabel {
    pub class: ObjectClass,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationLine {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
    pub image_w: u32,
    pub image_h: u32,
    pub labels: Vec<AnnotationLabel>,
}

impl AnnotationLine {
    pub fn into_item(self) -> AnnotationItem {
        AnnotationItem {
            image_id: self.image_id,
            source_id: self.source_id,
            image_w: self.image_w,
            image_h: self.image_h,
            labels: self
                .labels
                .into_iter()
                .map(|l| Label {
                    class: l.class,
                    bbox: l.bbox,
                })
                .collect(),
        }
    }

    pub fn from_item(item: &AnnotationItem) -> Self {
        AnnotationLine {
            image_id: item.image_id.clone(),
            source_id: item.source_id.clone(),
            image_w: item.image_w,
            image_h: item.image_h,
            labels: item
                .labels
                .iter()
                .map(|l| AnnotationLabel {
                    class: l.class,
                    bbox: l.bbox,
                    confidence: None,
                })
                .collect(),
        }
    }

    fn check(&self, path: &Path) -> Result<()> {
        let (w, h) = (f64::from(self.image_w), f64::from(self.image_h));
        if self.image_w == 0 || self.image_h == 0 {
            bail!("{}: image `{}` has a zero dimension", path.display(), self.image_id);
        }
        for (i, label) in self.labels.iter().enumerate() {
            let b = &label.bbox;
            if !(b.w > 0.0 && b.h > 0.0 && b.fits(w, h)) {
                bail!("{}: image `{}` label {i} is not a valid box inside the image", path.display(), self.image_id);
            }
            if let Some(c) = label.confidence {
                if !(0.0..=1.0).contains(&c) {
                    bail!("{}: image `{}` label {i} has confidence {c} outside [0, 1]", path.display(), self.image_id);
                }
            }
        }
        Ok(())
    }
}

pub fn read_annotations(path: &Path) -> Result<Vec<AnnotationLine>> {
    let lines: Vec<AnnotationLine> = read_jsonl(path)?;
    let mut seen = std::collections::BTreeSet::new();
    for line in &lines {
        line.check(path)?;
        if !seen.insert(line.image_id.as_str()) {
            bail!("{}: duplicate image_id `{}`", path.display(), line.image_id);
        }
    }
    Ok(lines)
}

/// Joins ground truth and predictions by image id. Images that only appear
/// in the predictions are kept; their predictions are all false positives.
/// A prediction without a confidence counts as certain, so a ground-truth
/// file can be scored against itself.
pub fn join_for_eval(gt: &[AnnotationLine], preds: &[AnnotationLine]) -> Vec<LabeledImage> {
    let mut images: BTreeMap<&str, LabeledImage> = BTreeMap::new();
    for line in gt {
        let image = images.entry(&line.image_id).or_insert_with(|| LabeledImage {
            image_id: line.image_id.clone(),
            ..Default::default()
        });
        image.ground_truth.extend(line.labels.iter().map(|l| LabeledBox {
            class: l.class,
            bbox: l.bbox,
        }));
    }
    for line in preds {
        let image = images.entry(&line.image_id).or_insert_with(|| LabeledImage {
            image_id: line.image_id.clone(),
            ..Default::default()
        });
        image.predictions.extend(line.labels.iter().map(|l| ScoredBox {
            class: l.class,
            confidence: l.confidence.unwrap_or(1.0),
            bbox: l.bbox,
        }));
    }
    images.into_values().collect()
}

/// One line of the simulator's ground-truth file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TruthRecord {
    Count(TruthCount),
    Incident(IncidentInterval),
}

pub fn truth_records(truth: &GroundTruth) -> Vec<TruthRecord> {
    truth
        .incidents
        .iter()
        .cloned()
        .map(TruthRecord::Incident)
        .chain(truth.counts.iter().cloned().map(TruthRecord::Count))
        .collect()
}

/// Transition log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub ts: TimestampMs,
    pub segment_id: String,
    pub from: CongestionLevel,
    pub to: CongestionLevel,
    pub ratio: f64,
}

impl From<&Transition> for TransitionRecord {
    fn from(t: &Transition) -> Self {
        TransitionRecord {
            ts: t.ts,
            segment_id: t.segment_id.clone(),
            from: t.from,
            to: t.to,
            ratio: t.ratio,
        }
    }
}
