//! Brute-force reference for mAP on small integer-grid instances.
//!
//! Boxes live on a 16x16 cell grid, so IoU is an exact ratio of cell
//! counts. For every (image, class, IoU threshold) the oracle enumerates
//! all partial one-to-one assignments of predictions to ground truth and
//! keeps the one that is lexicographically best when predictions are taken
//! in confidence order (a matched prediction beats an unmatched one, higher
//! IoU beats lower, lower ground-truth index breaks ties). AP is then
//! evaluated straight from its definition in exact integer arithmetic.
//!
//! Shared conventions: predictions are ordered by confidence, descending,
//! with ties kept in input order, and pooled across images in image order.

use std::cmp::Ordering;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use roadwatch_core::ingest::{BoundingBox, ObjectClass};
use roadwatch_core::metrics::{
    average_precision, headline_pr, iou, map_range, match_detections, pr_curve, LabeledBox, LabeledImage,
    MetricsError, ScoredBox,
};

use crate::{ensure, within_budget};

const GRID: i64 = 16;
const INSTANCES: usize = 400;
const MAX_BOXES_PER_CLASS: usize = 10;
const CLASSES: [ObjectClass; 3] = [ObjectClass::Car, ObjectClass::Bus, ObjectClass::Truck];
/// lcm(1..=10): every prefix precision TP/k has k <= 10.
const LCM: u64 = 2520;

#[derive(Debug, Clone, Copy)]
struct CellBox {
    x: i64,
    y: i64,
    w: i64,
    h: i64,
}

impl CellBox {
    fn covers(&self, cx: i64, cy: i64) -> bool {
        cx >= self.x && cx < self.x + self.w && cy >= self.y && cy < self.y + self.h
    }

    fn to_box(self) -> BoundingBox {
        BoundingBox::new(self.x as f64, self.y as f64, self.w as f64, self.h as f64)
    }
}

/// (intersection cells, union cells).
fn overlap(a: &CellBox, b: &CellBox) -> (u64, u64) {
    let (mut inter, mut union) = (0, 0);
    for cx in 0..GRID {
        for cy in 0..GRID {
            let (ia, ib) = (a.covers(cx, cy), b.covers(cx, cy));
            inter += u64::from(ia && ib);
            union += u64::from(ia || ib);
        }
    }
    (inter, union)
}

struct Pred {
    conf_tenths: u32,
    cell: CellBox,
}

struct Image {
    gts: Vec<(ObjectClass, CellBox)>,
    preds: Vec<(ObjectClass, Pred)>,
}

fn random_box(rng: &mut ChaCha8Rng) -> CellBox {
    let w = rng.random_range(1..=8);
    let h = rng.random_range(1..=8);
    CellBox {
        x: rng.random_range(0..=GRID - w),
        y: rng.random_range(0..=GRID - h),
        w,
        h,
    }
}

fn nudge(rng: &mut ChaCha8Rng, b: &CellBox) -> CellBox {
    let w = (b.w + rng.random_range(-2..=2)).clamp(1, GRID);
    let h = (b.h + rng.random_range(-2..=2)).clamp(1, GRID);
    CellBox {
        x: (b.x + rng.random_range(-2..=2)).clamp(0, GRID - w),
        y: (b.y + rng.random_range(-2..=2)).clamp(0, GRID - h),
        w,
        h,
    }
}

fn random_instance(rng: &mut ChaCha8Rng) -> Vec<Image> {
    let n_classes = rng.random_range(1..=CLASSES.len());
    let n_images = rng.random_range(1..=3);
    let mut images: Vec<Image> = (0..n_images)
        .map(|_| Image {
            gts: Vec::new(),
            preds: Vec::new(),
        })
        .collect();
    for &class in &CLASSES[..n_classes] {
        let mut budget = rng.random_range(1..=MAX_BOXES_PER_CLASS);
        for image in images.iter_mut() {
            let n_gt = rng.random_range(0..=3).min(budget);
            budget -= n_gt;
            let start = image.gts.len();
            for _ in 0..n_gt {
                image.gts.push((class, random_box(rng)));
            }
            let n_pred = rng.random_range(0..=3).min(budget);
            budget -= n_pred;
            for _ in 0..n_pred {
                let cell = if n_gt > 0 && rng.random_bool(0.7) {
                    let target = image.gts[start + rng.random_range(0..n_gt)].1;
                    nudge(rng, &target)
                } else {
                    random_box(rng)
                };
                // coarse confidences make ties common
                let conf_tenths = rng.random_range(1..=10);
                image.preds.push((class, Pred { conf_tenths, cell }));
            }
        }
    }
    images
}

fn to_dataset(images: &[Image]) -> Vec<LabeledImage> {
    images
        .iter()
        .enumerate()
        .map(|(i, img)| LabeledImage {
            image_id: format!("img{i}"),
            ground_truth: img
                .gts
                .iter()
                .map(|(class, c)| LabeledBox {
                    class: *class,
                    bbox: c.to_box(),
                })
                .collect(),
            predictions: img
                .preds
                .iter()
                .map(|(class, p)| ScoredBox {
                    class: *class,
                    confidence: f64::from(p.conf_tenths) / 10.0,
                    bbox: p.cell.to_box(),
                })
                .collect(),
        })
        .collect()
}

/// How a prediction fared in an assignment: unmatched, or matched to a
/// ground truth with a given exact overlap.
#[derive(Clone, Copy)]
struct Claim {
    gt: usize,
    inter: u64,
    union: u64,
}

/// Larger is better.
fn compare_claims(a: Option<Claim>, b: Option<Claim>) -> Ordering {
    match (a, b) {
        (None, None) => Ordering::Equal,
        (None, Some(_)) => Ordering::Less,
        (Some(_), None) => Ordering::Greater,
        (Some(a), Some(b)) => (a.inter * b.union)
            .cmp(&(b.inter * a.union))
            .then(b.gt.cmp(&a.gt)),
    }
}

fn compare_assignments(a: &[Option<Claim>], b: &[Option<Claim>]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| compare_claims(*x, *y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn enumerate(
    k: usize,
    options: &[Vec<Claim>],
    used: &mut Vec<bool>,
    current: &mut Vec<Option<Claim>>,
    best: &mut Option<Vec<Option<Claim>>>,
) {
    if k == options.len() {
        if best.as_ref().is_none_or(|b| compare_assignments(current, b) == Ordering::Greater) {
            *best = Some(current.clone());
        }
        return;
    }
    current.push(None);
    enumerate(k + 1, options, used, current, best);
    current.pop();
    for claim in &options[k] {
        if !used[claim.gt] {
            used[claim.gt] = true;
            current.push(Some(*claim));
            enumerate(k + 1, options, used, current, best);
            current.pop();
            used[claim.gt] = false;
        }
    }
}

/// Sum over the 101 recall points of the best precision reachable at or
/// beyond that recall, scaled by `LCM` so it stays an integer.
fn scaled_ap_sum(images: &[Image], class: ObjectClass, iou_percent: u64) -> u64 {
    // (confidence, image, rank within image, hit)
    let mut pooled: Vec<(u32, usize, usize, bool)> = Vec::new();
    let mut num_gt = 0u64;
    for (ii, img) in images.iter().enumerate() {
        let gts: Vec<&CellBox> = img.gts.iter().filter(|(c, _)| *c == class).map(|(_, b)| b).collect();
        num_gt += gts.len() as u64;
        let mut preds: Vec<(usize, &Pred)> = img
            .preds
            .iter()
            .filter(|(c, _)| *c == class)
            .map(|(_, p)| p)
            .enumerate()
            .collect();
        preds.sort_by_key(|&(idx, p)| (std::cmp::Reverse(p.conf_tenths), idx));
        let options: Vec<Vec<Claim>> = preds
            .iter()
            .map(|(_, p)| {
                gts.iter()
                    .enumerate()
                    .filter_map(|(gi, g)| {
                        let (inter, union) = overlap(&p.cell, g);
                        (inter * 100 >= iou_percent * union && inter > 0).then_some(Claim { gt: gi, inter, union })
                    })
                    .collect()
            })
            .collect();
        let mut best = None;
        enumerate(0, &options, &mut vec![false; gts.len()], &mut Vec::new(), &mut best);
        let best = best.expect("the empty assignment always exists");
        for (rank, ((_, p), claim)) in preds.iter().zip(best).enumerate() {
            pooled.push((p.conf_tenths, ii, rank, claim.is_some()));
        }
    }
    pooled.sort_by_key(|&(conf, ii, rank, _)| (std::cmp::Reverse(conf), ii, rank));
    let mut prefix = Vec::new();
    let mut tp = 0u64;
    for (k, &(_, _, _, hit)) in pooled.iter().enumerate() {
        tp += u64::from(hit);
        prefix.push((tp, k as u64 + 1));
    }
    (0..=100u64)
        .map(|r| {
            prefix
                .iter()
                .filter(|&&(tp, _)| 100 * tp >= r * num_gt)
                .map(|&(tp, k)| tp * LCM / k)
                .max()
                .unwrap_or(0)
        })
        .sum()
}

/// Exact `(mAP50, mAP50-95)`.
fn oracle_map(images: &[Image]) -> Option<(f64, f64)> {
    let classes: Vec<ObjectClass> = CLASSES
        .iter()
        .copied()
        .filter(|c| images.iter().any(|img| img.gts.iter().any(|(g, _)| g == c)))
        .collect();
    if classes.is_empty() {
        return None;
    }
    let mut at50 = 0u64;
    let mut all = 0u64;
    for &class in &classes {
        for step in 0..10u64 {
            let s = scaled_ap_sum(images, class, 50 + 5 * step);
            if step == 0 {
                at50 += s;
            }
            all += s;
        }
    }
    let denom = (LCM * 101 * classes.len() as u64) as f64;
    Some((at50 as f64 / denom, all as f64 / (denom * 10.0)))
}

pub fn criterion() -> Result<String, String> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x00c0_ffee);
    let mut worst = 0.0f64;
    let mut empty = 0;
    let mut boxes = 0;
    for n in 0..INSTANCES {
        let images = random_instance(&mut rng);
        boxes += images.iter().map(|i| i.gts.len() + i.preds.len()).sum::<usize>();
        let dataset = to_dataset(&images);
        match (oracle_map(&images), map_range(&dataset)) {
            (None, Err(MetricsError::EmptyDataset)) => empty += 1,
            (Some((o50, o5095)), Ok((m50, m5095))) => {
                let diff = (o50 - m50).abs().max((o5095 - m5095).abs());
                worst = worst.max(diff);
                ensure(diff <= 1e-9, || {
                    format!("instance {n}: oracle ({o50}, {o5095}) vs library ({m50}, {m5095})")
                })?;
            }
            (o, m) => return Err(format!("instance {n}: oracle {o:?} vs library {m:?}")),
        }
    }
    within_budget(start, Duration::from_secs(30))?;
    Ok(format!(
        "{INSTANCES} instances ({boxes} boxes, {empty} without ground truth), max |diff| = {worst:.1e}"
    ))
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

pub fn fixtures() -> Result<String, String> {
    let a = BoundingBox::new(0.0, 0.0, 10.0, 10.0);
    let b = BoundingBox::new(5.0, 0.0, 10.0, 10.0);
    let third = iou(&a, &b);
    ensure(third == 1.0 / 3.0, || format!("iou = {third}, expected 1/3"))?;

    let curve = pr_curve(&[true, false], 1).map_err(|e| e.to_string())?;
    ensure(curve == vec![(1.0, 1.0), (1.0, 0.5)], || format!("[TP, FP] curve = {curve:?}"))?;
    let ap = average_precision(&curve);
    ensure(ap == 1.0, || format!("[TP, FP] AP = {ap}"))?;
    let curve = pr_curve(&[false, true], 1).map_err(|e| e.to_string())?;
    ensure(curve == vec![(0.0, 0.0), (1.0, 0.5)], || format!("[FP, TP] curve = {curve:?}"))?;

    // one ground truth; first prediction overlaps 0.6, second 0.9
    let gt = BoundingBox::new(0.0, 0.0, 10.0, 10.0);
    let p1 = BoundingBox::new(0.0, 0.0, 6.0, 10.0);
    let p2 = BoundingBox::new(0.0, 0.0, 9.0, 10.0);
    ensure(close(iou(&p1, &gt), 0.6) && close(iou(&p2, &gt), 0.9), || "fixture boxes off".into())?;
    let flags = match_detections(&[p1, p2], &[gt], 0.5);
    ensure(flags == vec![true, false], || format!("greedy flags = {flags:?}"))?;

    // one TP, one lower-confidence FP, two ground truths
    let image = LabeledImage {
        image_id: "x".into(),
        ground_truth: vec![
            LabeledBox {
                class: ObjectClass::Car,
                bbox: gt,
            },
            LabeledBox {
                class: ObjectClass::Car,
                bbox: BoundingBox::new(50.0, 50.0, 10.0, 10.0),
            },
        ],
        predictions: vec![
            ScoredBox {
                class: ObjectClass::Car,
                confidence: 0.9,
                bbox: gt,
            },
            ScoredBox {
                class: ObjectClass::Car,
                confidence: 0.4,
                bbox: BoundingBox::new(80.0, 0.0, 10.0, 10.0),
            },
        ],
    };
    let op = headline_pr(&[image], 0.5).map_err(|e| e.to_string())?;
    ensure(op.precision == 1.0 && op.recall == 0.5, || format!("headline = {op:?}"))?;
    Ok("IoU 1/3, [TP,FP] and [FP,TP] curves, greedy [TP,FP], max-F1 cut (1.0, 0.5) all exact".into())
}
