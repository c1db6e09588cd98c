//! 300 sources x 10 variants split 0.8 / 0.1 / 0.1 over 20 seeds.

use std::collections::{BTreeMap, BTreeSet};

use roadwatch_core::dataset::{augment_variants, split_dataset, AnnotationItem, Label, SplitRatios};
use roadwatch_core::ingest::{BoundingBox, ObjectClass};

use crate::ensure;

fn sources() -> Vec<AnnotationItem> {
    (0..300)
        .map(|i| AnnotationItem {
            image_id: format!("src{i:03}"),
            source_id: None,
            image_w: 640,
            image_h: 640,
            labels: vec![Label {
                class: ObjectClass::ALL[i % ObjectClass::ALL.len()],
                bbox: BoundingBox::new(100.0 + (i % 50) as f64, 200.0, 120.0, 80.0),
            }],
        })
        .collect()
}

pub fn criterion() -> Result<String, String> {
    let mut manifests = Vec::new();
    for seed in 0..20u64 {
        let items: Vec<AnnotationItem> = sources().iter().flat_map(|s| augment_variants(s, 10, seed)).collect();
        ensure(items.len() == 3000, || format!("seed {seed}: {} items", items.len()))?;
        let source_of: BTreeMap<&str, &str> = items.iter().map(|i| (i.image_id.as_str(), i.source())).collect();
        ensure(source_of.len() == 3000, || format!("seed {seed}: duplicate image ids"))?;

        let m = split_dataset(&items, SplitRatios::default(), seed).map_err(|e| e.to_string())?;
        let sizes = (m.train.len(), m.validation.len(), m.test.len());
        ensure(sizes == (2400, 300, 300), || format!("seed {seed}: sizes {sizes:?}"))?;

        let mut split_of_source: BTreeMap<&str, usize> = BTreeMap::new();
        let mut seen = BTreeSet::new();
        for (split, ids) in [&m.train, &m.validation, &m.test].into_iter().enumerate() {
            for id in ids {
                ensure(seen.insert(id.as_str()), || format!("seed {seed}: {id} appears twice"))?;
                let source = source_of.get(id.as_str()).ok_or_else(|| format!("seed {seed}: unknown id {id}"))?;
                let first = *split_of_source.entry(source).or_insert(split);
                ensure(first == split, || format!("seed {seed}: variants of {source} leak across splits"))?;
            }
        }
        ensure(seen.len() == 3000, || format!("seed {seed}: manifest covers {} items", seen.len()))?;
        manifests.push(m.train);
    }
    let distinct: BTreeSet<&Vec<String>> = manifests.iter().collect();
    Ok(format!(
        "20 seeds: 2400/300/300 every time, no leakage, {} distinct train sets",
        distinct.len()
    ))
}
