//! Detection metrics: IoU matching, precision/recall, 101-point
//! interpolated AP, mAP50 and mAP50-95.
//!
//! Matching is greedy per image and class: predictions in descending
//! confidence each claim the unmatched ground truth with the highest IoU at
//! or above the threshold (lower index on ties). Matched predictions of all
//! images are then pooled per class in descending confidence (stable in
//! image order) to form the precision/recall curve.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::ingest::{BoundingBox, ObjectClass};

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_thresholds() -> [f64; 10] {
    core::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("dataset has no ground-truth boxes")]
    EmptyDataset,
    #[error("class has predictions but no ground truth")]
    NoGroundTruth,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LabeledBox {
    pub class: ObjectClass,
    #[cfg_attr(feature = "serde", serde(rename = "box"))]
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScoredBox {
    pub class: ObjectClass,
    pub confidence: f64,
    #[cfg_attr(feature = "serde", serde(rename = "box"))]
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledImage {
    pub image_id: String,
    pub ground_truth: Vec<LabeledBox>,
    pub predictions: Vec<ScoredBox>,
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.right().min(b.right()) - a.x.max(b.x)).max(0.0);
    let ih = (a.bottom().min(b.bottom()) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).min(1.0)
}

/// TP/FP flag per prediction, in the given (confidence-descending) order.
pub fn match_detections(predictions: &[BoundingBox], ground_truth: &[BoundingBox], iou_min: f64) -> Vec<bool> {
    let mut taken = alloc::vec![false; ground_truth.len()];
    predictions
        .iter()
        .map(|p| {
            let mut best: Option<(usize, f64)> = None;
            for (gi, g) in ground_truth.iter().enumerate() {
                if taken[gi] {
                    continue;
                }
                let overlap = iou(p, g);
                if overlap >= iou_min && best.is_none_or(|(_, b)| overlap > b) {
                    best = Some((gi, overlap));
                }
            }
            match best {
                Some((gi, _)) => {
                    taken[gi] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// `(recall, precision)` after each prefix of the flag sequence.
pub fn pr_curve(flags: &[bool], num_gt: usize) -> Result<Vec<(f64, f64)>, MetricsError> {
    if num_gt == 0 {
        return if flags.is_empty() {
            Ok(Vec::new())
        } else {
            Err(MetricsError::NoGroundTruth)
        };
    }
    let mut tp = 0usize;
    Ok(flags
        .iter()
        .enumerate()
        .map(|(k, &hit)| {
            tp += usize::from(hit);
            (tp as f64 / num_gt as f64, tp as f64 / (k + 1) as f64)
        })
        .collect())
}

/// Mean over the recall grid 0.00, 0.01, ..., 1.00 of the best precision
/// reached at or beyond each grid recall (0 where the curve never gets
/// there).
pub fn average_precision(points: &[(f64, f64)]) -> f64 {
    // precision envelope, scanned from the high-recall end
    let mut envelope: Vec<(f64, f64)> = points.to_vec();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i].1 = envelope[i].1.max(envelope[i + 1].1);
    }
    let mut sum = 0.0;
    let mut cursor = 0;
    for step in 0..=100u32 {
        let grid = f64::from(step) / 100.0;
        while cursor < envelope.len() && envelope[cursor].0 < grid {
            cursor += 1;
        }
        if cursor < envelope.len() {
            sum += envelope[cursor].1;
        }
    }
    sum / 101.0
}

/// Pooled `(confidence, is_tp)` for one class plus its ground-truth count.
pub fn class_flags(dataset: &[LabeledImage], class: ObjectClass, iou_min: f64) -> (Vec<(f64, bool)>, usize) {
    let mut pooled = Vec::new();
    let mut num_gt = 0;
    for image in dataset {
        let gts: Vec<BoundingBox> = image
            .ground_truth
            .iter()
            .filter(|g| g.class == class)
            .map(|g| g.bbox)
            .collect();
        num_gt += gts.len();
        let mut preds: Vec<&ScoredBox> = image.predictions.iter().filter(|p| p.class == class).collect();
        preds.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        let boxes: Vec<BoundingBox> = preds.iter().map(|p| p.bbox).collect();
        let flags = match_detections(&boxes, &gts, iou_min);
        pooled.extend(preds.iter().zip(flags).map(|(p, f)| (p.confidence, f)));
    }
    pooled.sort_by(|a, b| b.0.total_cmp(&a.0));
    (pooled, num_gt)
}

fn class_ap(dataset: &[LabeledImage], class: ObjectClass, iou_min: f64) -> Result<f64, MetricsError> {
    let (pooled, num_gt) = class_flags(dataset, class, iou_min);
    let flags: Vec<bool> = pooled.iter().map(|&(_, f)| f).collect();
    Ok(average_precision(&pr_curve(&flags, num_gt)?))
}

fn classes_with_gt(dataset: &[LabeledImage]) -> BTreeSet<ObjectClass> {
    dataset
        .iter()
        .flat_map(|img| img.ground_truth.iter().map(|g| g.class))
        .collect()
}

fn classes_with_predictions(dataset: &[LabeledImage]) -> BTreeSet<ObjectClass> {
    dataset
        .iter()
        .flat_map(|img| img.predictions.iter().map(|p| p.class))
        .collect()
}

/// `(mAP50, mAP50-95)` as unweighted means over classes with ground truth.
pub fn map_range(dataset: &[LabeledImage]) -> Result<(f64, f64), MetricsError> {
    let classes = classes_with_gt(dataset);
    if classes.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    let mut map50 = 0.0;
    let mut map50_95 = 0.0;
    for &class in &classes {
        let aps: Vec<f64> = coco_thresholds()
            .iter()
            .map(|&t| class_ap(dataset, class, t))
            .collect::<Result<_, _>>()?;
        map50 += aps[0];
        map50_95 += aps.iter().sum::<f64>() / aps.len() as f64;
    }
    let n = classes.len() as f64;
    Ok((map50 / n, map50_95 / n))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OperatingPoint {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Lowest confidence kept; `None` when there are no predictions.
    pub threshold: Option<f64>,
}

/// Best-F1 cut over a confidence-sorted flag list. Cuts fall only between
/// distinct confidences; on equal F1 the higher threshold wins.
pub fn best_f1(pooled: &[(f64, bool)], num_gt: usize) -> OperatingPoint {
    let mut best = OperatingPoint {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
        threshold: None,
    };
    let mut tp = 0usize;
    for (i, &(conf, hit)) in pooled.iter().enumerate() {
        tp += usize::from(hit);
        let group_end = pooled.get(i + 1).is_none_or(|next| next.0 < conf);
        if !group_end {
            continue;
        }
        let precision = tp as f64 / (i + 1) as f64;
        let recall = if num_gt == 0 { 0.0 } else { tp as f64 / num_gt as f64 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        if best.threshold.is_none() || f1 > best.f1 {
            best = OperatingPoint {
                precision,
                recall,
                f1,
                threshold: Some(conf),
            };
        }
    }
    best
}

/// Headline precision/recall at the max-F1 confidence over all classes
/// pooled together.
pub fn headline_pr(dataset: &[LabeledImage], iou_min: f64) -> Result<OperatingPoint, MetricsError> {
    let gt_classes = classes_with_gt(dataset);
    if gt_classes.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    let mut pooled = Vec::new();
    let mut num_gt = 0;
    for class in gt_classes.union(&classes_with_predictions(dataset)) {
        let (flags, n) = class_flags(dataset, *class, iou_min);
        pooled.extend(flags);
        num_gt += n;
    }
    pooled.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(best_f1(&pooled, num_gt))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassReport {
    pub class: ObjectClass,
    pub num_gt: usize,
    pub num_pred: usize,
    pub precision: f64,
    pub recall: f64,
    pub ap50: f64,
    pub ap50_95: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub conf_threshold: Option<f64>,
    pub map50: f64,
    pub map50_95: f64,
    pub classes: Vec<ClassReport>,
    /// Classes that had predictions but no ground truth.
    pub excluded_classes: Vec<ObjectClass>,
}

pub fn evaluate(dataset: &[LabeledImage]) -> Result<EvalReport, MetricsError> {
    let gt_classes = classes_with_gt(dataset);
    if gt_classes.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    let thresholds = coco_thresholds();
    let mut classes = Vec::new();
    for &class in &gt_classes {
        let mut aps = [0.0; 10];
        let mut at50 = (Vec::new(), 0);
        for (slot, &t) in aps.iter_mut().zip(&thresholds) {
            let (pooled, num_gt) = class_flags(dataset, class, t);
            let flags: Vec<bool> = pooled.iter().map(|&(_, f)| f).collect();
            *slot = average_precision(&pr_curve(&flags, num_gt)?);
            if t == thresholds[0] {
                at50 = (pooled, num_gt);
            }
        }
        let op = best_f1(&at50.0, at50.1);
        classes.push(ClassReport {
            class,
            num_gt: at50.1,
            num_pred: at50.0.len(),
            precision: op.precision,
            recall: op.recall,
            ap50: aps[0],
            ap50_95: aps.iter().sum::<f64>() / aps.len() as f64,
        });
    }
    let n = classes.len() as f64;
    let headline = headline_pr(dataset, thresholds[0])?;
    Ok(EvalReport {
        precision: headline.precision,
        recall: headline.recall,
        conf_threshold: headline.threshold,
        map50: classes.iter().map(|c| c.ap50).sum::<f64>() / n,
        map50_95: classes.iter().map(|c| c.ap50_95).sum::<f64>() / n,
        excluded_classes: classes_with_predictions(dataset)
            .difference(&gt_classes)
            .copied()
            .collect(),
        classes,
    })
}
