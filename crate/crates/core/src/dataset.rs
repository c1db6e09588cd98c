//! Annotation geometry for dataset preparation: letterbox resize to the
//! detector canvas, seeded augmentation variants, and group-aware splits.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::ingest::{BoundingBox, ObjectClass};
use crate::rng::named_stream;

pub const DEFAULT_TARGET: u32 = 640;
pub const DEFAULT_VARIANTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("bad split ratios: {0}")]
    BadRatios(String),
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Label {
    pub class: ObjectClass,
    #[cfg_attr(feature = "serde", serde(rename = "box"))]
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AnnotationItem {
    pub image_id: String,
    /// Source image this item was derived from; absent for originals.
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub source_id: Option<String>,
    pub image_w: u32,
    pub image_h: u32,
    pub labels: Vec<Label>,
}

impl AnnotationItem {
    pub fn source(&self) -> &str {
        self.source_id.as_deref().unwrap_or(&self.image_id)
    }

    pub fn is_valid(&self) -> bool {
        let (w, h) = (f64::from(self.image_w), f64::from(self.image_h));
        self.image_w > 0 && self.image_h > 0 && self.labels.iter().all(|l| l.bbox.fits(w, h))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LetterboxParams {
    pub scale: f64,
    pub pad_x: f64,
    pub pad_y: f64,
}

/// Clamps a box into `[0, w] x [0, h]`; `None` once nothing is left.
fn clip(b: BoundingBox, w: f64, h: f64) -> Option<BoundingBox> {
    let x0 = b.x.clamp(0.0, w);
    let y0 = b.y.clamp(0.0, h);
    let x1 = b.right().clamp(0.0, w);
    let y1 = b.bottom().clamp(0.0, h);
    (x1 > x0 && y1 > y0).then(|| BoundingBox::new(x0, y0, x1 - x0, y1 - y0))
}

/// Aspect-preserving resize onto a `target` x `target` canvas with
/// centered padding.
pub fn letterbox_transform(item: &AnnotationItem, target: u32) -> (AnnotationItem, LetterboxParams) {
    let (w, h) = (f64::from(item.image_w), f64::from(item.image_h));
    let t = f64::from(target);
    let scale = t / w.max(h);
    let pad_x = (t - w * scale) / 2.0;
    let pad_y = (t - h * scale) / 2.0;
    let labels = item
        .labels
        .iter()
        .map(|l| {
            let b = &l.bbox;
            let mut mapped = BoundingBox::new(b.x * scale + pad_x, b.y * scale + pad_y, b.w * scale, b.h * scale);
            // rounding can push the far edge a hair past the canvas
            if mapped.right() > t {
                mapped.x = t - mapped.w;
            }
            if mapped.bottom() > t {
                mapped.y = t - mapped.h;
            }
            Label { class: l.class, bbox: mapped }
        })
        .collect();
    (
        AnnotationItem {
            image_id: item.image_id.clone(),
            source_id: item.source_id.clone(),
            image_w: target,
            image_h: target,
            labels,
        },
        LetterboxParams { scale, pad_x, pad_y },
    )
}

/// Horizontal mirror: `x' = W - x - w`.
pub fn hflip(item: &AnnotationItem) -> AnnotationItem {
    let w = f64::from(item.image_w);
    let mut out = item.clone();
    for l in &mut out.labels {
        l.bbox.x = w - l.bbox.x - l.bbox.w;
    }
    out
}

/// Zoom by `factor` about the image center, clipping to the canvas.
pub fn scale_about_center(item: &AnnotationItem, factor: f64) -> AnnotationItem {
    let (w, h) = (f64::from(item.image_w), f64::from(item.image_h));
    let (cx, cy) = (w / 2.0, h / 2.0);
    map_boxes(item, |b| {
        BoundingBox::new(cx + (b.x - cx) * factor, cy + (b.y - cy) * factor, b.w * factor, b.h * factor)
    })
}

/// Shift by `(dx, dy)` pixels, clipping to the canvas.
pub fn translate(item: &AnnotationItem, dx: f64, dy: f64) -> AnnotationItem {
    map_boxes(item, |b| BoundingBox::new(b.x + dx, b.y + dy, b.w, b.h))
}

fn map_boxes(item: &AnnotationItem, f: impl Fn(&BoundingBox) -> BoundingBox) -> AnnotationItem {
    let (w, h) = (f64::from(item.image_w), f64::from(item.image_h));
    let mut out = item.clone();
    out.labels = item
        .labels
        .iter()
        .filter_map(|l| clip(f(&l.bbox), w, h).map(|bbox| Label { class: l.class, bbox }))
        .collect();
    out
}

/// The transform drawn for one augmentation variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentOps {
    pub flip: bool,
    pub scale: f64,
    /// Translation as a fraction of image width / height, within ±0.05.
    pub shift_x: f64,
    pub shift_y: f64,
}

impl AugmentOps {
    pub fn draw(seed: u64, image_id: &str, variant: usize) -> Self {
        let mut rng = named_stream(seed, &alloc::format!("augment:{image_id}:{variant}"));
        AugmentOps {
            flip: rng.random_bool(0.5),
            scale: rng.random_range(0.9..=1.1),
            shift_x: rng.random_range(-0.05..=0.05),
            shift_y: rng.random_range(-0.05..=0.05),
        }
    }

    pub fn apply(&self, item: &AnnotationItem) -> AnnotationItem {
        let flipped = if self.flip { hflip(item) } else { item.clone() };
        let scaled = scale_about_center(&flipped, self.scale);
        translate(
            &scaled,
            self.shift_x * f64::from(item.image_w),
            self.shift_y * f64::from(item.image_h),
        )
    }
}

/// `n_variants` items: the original first, then seeded flip / scale /
/// translate compositions. Variant ids are `<image_id>_aug<k>`.
pub fn augment_variants(item: &AnnotationItem, n_variants: usize, seed: u64) -> Vec<AnnotationItem> {
    (0..n_variants)
        .map(|k| {
            let mut variant = if k == 0 {
                item.clone()
            } else {
                let mut v = AugmentOps::draw(seed, &item.image_id, k).apply(item);
                v.image_id = alloc::format!("{}_aug{k}", item.image_id);
                v
            };
            variant.source_id = Some(item.source().into());
            variant
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(DatasetError::BadRatios("ratios must be finite and non-negative".into()));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DatasetError::BadRatios(alloc::format!("ratios sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Largest-remainder apportionment of `n` units.
    pub fn apportion(&self, n: usize) -> [usize; 3] {
        let quotas = [self.train, self.validation, self.test].map(|r| r * n as f64);
        let mut counts = quotas.map(|q| libm::floor(q) as usize);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            let ra = quotas[a] - counts[a] as f64;
            let rb = quotas[b] - counts[b] as f64;
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let assigned: usize = counts.iter().sum();
        for &i in order.iter().take(n.saturating_sub(assigned)) {
            counts[i] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SplitManifest {
    pub seed: u64,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

/// Seeded shuffle of source groups, then partition. All variants of one
/// source land in the same split.
pub fn split_dataset(items: &[AnnotationItem], ratios: SplitRatios, seed: u64) -> Result<SplitManifest, DatasetError> {
    ratios.validate()?;
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for item in items {
        let members = groups.entry(item.source()).or_insert_with(|| {
            order.push(item.source());
            Vec::new()
        });
        members.push(item.image_id.clone());
    }
    let mut rng = named_stream(seed, "split");
    order.shuffle(&mut rng);

    let [n_train, n_val, _] = ratios.apportion(order.len());
    let mut manifest = SplitManifest {
        seed,
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for (i, source) in order.iter().enumerate() {
        let bucket = if i < n_train {
            &mut manifest.train
        } else if i < n_train + n_val {
            &mut manifest.validation
        } else {
            &mut manifest.test
        };
        bucket.extend(groups.remove(source).unwrap_or_default());
    }
    Ok(manifest)
}
