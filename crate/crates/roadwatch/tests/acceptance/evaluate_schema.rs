//! `evaluate` on a synthetic dataset: one report row per prediction file
//! with exactly the Precision / Recall / mAP50 / mAP50-95 columns.

use std::fmt::Write as _;
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common::{write, BIN};
use crate::ensure;

const COLUMNS: [&str; 5] = ["Model", "Precision", "Recall", "mAP50", "mAP50-95"];
const CLASSES: [&str; 5] = ["car", "motorcycle", "truck", "bus", "van"];

/// Ground truth plus a degraded copy: jittered boxes, some misses, some
/// spurious boxes.
fn synthetic(rng: &mut ChaCha8Rng) -> (String, String) {
    let (mut gt, mut pred) = (String::new(), String::new());
    for i in 0..40 {
        let mut gt_labels = Vec::new();
        let mut pred_labels = Vec::new();
        for _ in 0..rng.random_range(1..=6) {
            let class = CLASSES[rng.random_range(0..CLASSES.len())];
            let (w, h) = (rng.random_range(20.0..120.0f64), rng.random_range(20.0..90.0f64));
            let (x, y) = (rng.random_range(0.0..640.0 - w), rng.random_range(0.0..640.0 - h));
            gt_labels.push(format!(r#"{{"class":"{class}","box":{{"x":{x},"y":{y},"w":{w},"h":{h}}}}}"#));
            if rng.random_bool(0.8) {
                let dx = rng.random_range(-6.0..6.0f64);
                let px = (x + dx).clamp(0.0, 640.0 - w);
                let conf = rng.random_range(0.3..1.0f64);
                pred_labels.push(format!(
                    r#"{{"class":"{class}","confidence":{conf},"box":{{"x":{px},"y":{y},"w":{w},"h":{h}}}}}"#
                ));
            }
        }
        if rng.random_bool(0.3) {
            let conf = rng.random_range(0.05..0.6f64);
            pred_labels.push(format!(
                r#"{{"class":"car","confidence":{conf},"box":{{"x":600,"y":600,"w":30,"h":30}}}}"#
            ));
        }
        let _ = writeln!(
            gt,
            r#"{{"image_id":"im{i}","image_w":640,"image_h":640,"labels":[{}]}}"#,
            gt_labels.join(",")
        );
        let _ = writeln!(
            pred,
            r#"{{"image_id":"im{i}","image_w":640,"image_h":640,"labels":[{}]}}"#,
            pred_labels.join(",")
        );
    }
    (gt, pred)
}

pub fn criterion() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (gt, degraded) = synthetic(&mut ChaCha8Rng::seed_from_u64(42));
    let gt_path = dir.path().join("ground_truth.jsonl");
    let perfect = dir.path().join("model-perfect.jsonl");
    let weaker = dir.path().join("model-degraded.jsonl");
    write(&gt_path, &gt);
    write(&perfect, &gt);
    write(&weaker, &degraded);
    let json = dir.path().join("report.json");
    let out = Command::new(BIN)
        .arg("evaluate")
        .arg("--gt")
        .arg(&gt_path)
        .arg("--pred")
        .arg(&perfect)
        .arg("--pred")
        .arg(&weaker)
        .arg("--json")
        .arg(&json)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("exit {:?}: {}", out.status, String::from_utf8_lossy(&out.stderr)))?;

    let table = String::from_utf8_lossy(&out.stdout).into_owned();
    let lines: Vec<Vec<&str>> = table.lines().map(|l| l.split_whitespace().collect()).collect();
    ensure(lines.len() == 3, || format!("expected header + 2 rows, got:\n{table}"))?;
    ensure(lines[0] == COLUMNS, || format!("table header {:?}", lines[0]))?;
    ensure(lines[1][0] == "model-perfect" && lines[2][0] == "model-degraded", || {
        format!("row labels {:?} / {:?}", lines[1][0], lines[2][0])
    })?;

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let rows = report["rows"].as_array().ok_or("report has no rows")?;
    ensure(rows.len() == 2, || format!("{} rows", rows.len()))?;
    for row in rows {
        let obj = row.as_object().ok_or("row is not an object")?;
        let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
        keys.sort_unstable();
        let mut expected = COLUMNS.to_vec();
        expected.sort_unstable();
        ensure(keys == expected, || format!("row keys {keys:?}"))?;
    }
    for col in &COLUMNS[1..] {
        let v = rows[0][col].as_f64().ok_or_else(|| format!("{col} missing"))?;
        ensure((v - 1.0).abs() <= 1e-12, || format!("identical input: {col} = {v}"))?;
    }
    let degraded_map = rows[1]["mAP50"].as_f64().unwrap_or(1.0);
    ensure(degraded_map < 1.0, || "degraded model scored a perfect mAP50".into())?;
    Ok(format!(
        "2 rows with columns {:?}; identical input reads 1.0 everywhere; degraded mAP50 = {degraded_map:.3}",
        &COLUMNS[1..]
    ))
}
