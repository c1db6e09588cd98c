//! `simulate`, `evaluate` and `prep`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use roadwatch_core::dataset::{augment_variants, letterbox_transform, split_dataset, SplitManifest, SplitRatios};
use roadwatch_core::metrics::{evaluate as evaluate_dataset, ClassReport};
use roadwatch_core::simulator::{run_scenario, ScenarioConfig};

use crate::wire::{frame_line, read_annotations, truth_records, write_jsonl, AnnotationLine};
use crate::Failure;

pub const FRAMES_FILE: &str = "frames.jsonl";
pub const TRUTH_FILE: &str = "truth.jsonl";

/// Runs a scenario file and writes `frames.jsonl` and `truth.jsonl` into
/// `out_dir`.
pub fn simulate(scenario: &Path, out_dir: &Path) -> Result<(), Failure> {
    let text = fs::read_to_string(scenario)
        .with_context(|| format!("cannot read scenario {}", scenario.display()))
        .map_err(Failure::Config)?;
    let config: ScenarioConfig = serde_json::from_str(&text)
        .with_context(|| format!("{}: bad scenario", scenario.display()))
        .map_err(Failure::Config)?;
    let output = run_scenario(&config)
        .with_context(|| format!("{}: bad scenario", scenario.display()))
        .map_err(Failure::Config)?;
    (|| {
        fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
        let mut frames = String::new();
        for frame in &output.frames {
            frames.push_str(&frame_line(frame));
            frames.push('\n');
        }
        let frames_path = out_dir.join(FRAMES_FILE);
        fs::write(&frames_path, frames).with_context(|| format!("cannot write {}", frames_path.display()))?;
        write_jsonl(&out_dir.join(TRUTH_FILE), truth_records(&output.truth))
    })()
    .map_err(Failure::Runtime)
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    #[serde(rename = "Model")]
    pub model: String,
    #[serde(rename = "Precision")]
    pub precision: f64,
    #[serde(rename = "Recall")]
    pub recall: f64,
    #[serde(rename = "mAP50")]
    pub map50: f64,
    #[serde(rename = "mAP50-95")]
    pub map50_95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDetail {
    pub model: String,
    pub conf_threshold: Option<f64>,
    pub classes: Vec<ClassReport>,
    pub excluded_classes: Vec<roadwatch_core::ObjectClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub ground_truth: String,
    pub rows: Vec<ModelRow>,
    pub details: Vec<ModelDetail>,
}

fn model_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn evaluate_files(gt: &Path, preds: &[PathBuf]) -> Result<EvaluationReport> {
    let truth = read_annotations(gt)?;
    let mut rows = Vec::new();
    let mut details = Vec::new();
    for pred_path in preds {
        let pred = read_annotations(pred_path)?;
        let dataset = crate::wire::join_for_eval(&truth, &pred);
        let report = evaluate_dataset(&dataset).with_context(|| format!("{}", gt.display()))?;
        let model = model_name(pred_path);
        rows.push(ModelRow {
            model: model.clone(),
            precision: report.precision,
            recall: report.recall,
            map50: report.map50,
            map50_95: report.map50_95,
        });
        details.push(ModelDetail {
            model,
            conf_threshold: report.conf_threshold,
            classes: report.classes,
            excluded_classes: report.excluded_classes,
        });
    }
    Ok(EvaluationReport {
        ground_truth: gt.display().to_string(),
        rows,
        details,
    })
}

/// Aligned text table: Model, Precision, Recall, mAP50, mAP50-95.
pub fn render_table(rows: &[ModelRow]) -> String {
    let headers = ["Model", "Precision", "Recall", "mAP50", "mAP50-95"];
    let cells: Vec<[String; 5]> = rows
        .iter()
        .map(|r| {
            [
                r.model.clone(),
                format!("{:.3}", r.precision),
                format!("{:.3}", r.recall),
                format!("{:.3}", r.map50),
                format!("{:.3}", r.map50_95),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..5)
        .map(|i| cells.iter().map(|c| c[i].len()).chain([headers[i].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let mut line = |cols: [&str; 5]| {
        let mut text = format!("{:<w$}", cols[0], w = widths[0]);
        for i in 1..5 {
            let _ = write!(text, "  {:>w$}", cols[i], w = widths[i]);
        }
        out.push_str(text.trim_end());
        out.push('\n');
    };
    line(headers);
    for c in &cells {
        line([&c[0], &c[1], &c[2], &c[3], &c[4]]);
    }
    out
}

#[derive(Debug, Clone)]
pub struct PrepOptions {
    pub target_size: u32,
    pub variants: usize,
    pub ratios: SplitRatios,
    pub seed: u64,
}

/// Letterboxes every item, expands it into variants, splits by source and
/// writes `annotations.jsonl` plus `manifest.json`.
pub fn prep(input: &Path, out_dir: &Path, options: &PrepOptions) -> Result<SplitManifest, Failure> {
    options
        .ratios
        .validate()
        .map_err(|e| Failure::Config(anyhow::anyhow!("--ratios: {e}")))?;
    if options.target_size == 0 || options.variants == 0 {
        return Err(Failure::Config(anyhow::anyhow!("--target-size and --variants must be positive")));
    }
    (|| {
        let lines = read_annotations(input)?;
        let mut items = Vec::with_capacity(lines.len() * options.variants);
        for line in lines {
            let (boxed, _) = letterbox_transform(&line.into_item(), options.target_size);
            items.extend(augment_variants(&boxed, options.variants, options.seed));
        }
        let manifest = split_dataset(&items, options.ratios, options.seed)?;
        fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
        write_jsonl(&out_dir.join("annotations.jsonl"), items.iter().map(AnnotationLine::from_item))?;
        fs::write(out_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(manifest)
    })()
    .map_err(Failure::Runtime)
}

pub fn parse_ratios(raw: &str) -> Result<SplitRatios, String> {
    let parts: Vec<f64> = raw
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("`{p}` is not a number")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [train, validation, test] => {
            let ratios = SplitRatios { train, validation, test };
            ratios.validate().map_err(|e| e.to_string())?;
            Ok(ratios)
        }
        _ => Err("expected three comma-separated ratios, e.g. 0.8,0.1,0.1".into()),
    }
}
