//! Run configuration: file references, input source and tunables.
//!
//! Relative paths are resolved against the directory of the configuration
//! file. Every tunable can be overridden through an environment variable
//! named `ROADWATCH_<KEY>` in upper case, e.g. `ROADWATCH_CONF_THRESHOLD`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use roadwatch_core::congestion::{capacity_threshold, Bands, StreetSegment, DEFAULT_SLOT_M};
use roadwatch_core::display::{BoardSpec, DisplayConfig};
use roadwatch_core::forecast::{ForecastConfig, HistoryRecord, HistoryStore};
use roadwatch_core::ingest::CameraRegistry;
use roadwatch_core::monitor::MonitorConfig;
use roadwatch_core::routing::{Edge, RoadGraph};

pub const ENV_PREFIX: &str = "ROADWATCH_";

/// A startup problem, pinned to the file and key that caused it.
#[derive(Debug, Error)]
#[error("{}{}: {message}", .path.display(), .key.as_ref().map(|k| format!(" [{k}]")).unwrap_or_default())]
pub struct ConfigError {
    pub path: PathBuf,
    pub key: Option<String>,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: &Path, key: Option<&str>, message: impl Into<String>) -> Self {
        ConfigError {
            path: path.to_path_buf(),
            key: key.map(String::from),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InputSource {
    File(PathBuf),
    Tcp(String),
}

impl InputSource {
    pub fn parse(uri: &str, base: &Path) -> Option<Self> {
        if let Some(path) = uri.strip_prefix("file://") {
            Some(InputSource::File(base.join(path)))
        } else {
            uri.strip_prefix("tcp://").map(|addr| InputSource::Tcp(addr.to_string()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tunables {
    pub conf_threshold: f64,
    pub window: usize,
    pub debounce_k: usize,
    pub debounce_n: usize,
    pub band_moderate: f64,
    pub band_heavy: f64,
    pub band_overcrowded: f64,
    pub hysteresis: f64,
    pub alpha: f64,
    pub slot_width_s: u32,
    pub retention_days: u32,
    pub advisory_edge: f64,
    pub tz_offset_s: i32,
    pub refresh_s: u32,
    pub max_entries: usize,
    /// Road length one queued vehicle occupies, for derived thresholds.
    pub vehicle_slot_m: f64,
    pub publish_retries: u32,
    pub publish_backoff_ms: u64,
}

impl Default for Tunables {
    fn default() -> Self {
        let m = MonitorConfig::default();
        Tunables {
            conf_threshold: m.conf_threshold,
            window: m.window,
            debounce_k: m.debounce_k,
            debounce_n: m.debounce_n,
            band_moderate: m.bands.moderate,
            band_heavy: m.bands.heavy,
            band_overcrowded: m.bands.overcrowded,
            hysteresis: m.bands.margin,
            alpha: m.forecast.alpha,
            slot_width_s: m.forecast.slot_width_s,
            retention_days: m.forecast.retention_days,
            advisory_edge: m.forecast.advisory_edge,
            tz_offset_s: m.forecast.tz_offset_s,
            refresh_s: m.display.refresh_s,
            max_entries: m.display.max_entries,
            vehicle_slot_m: DEFAULT_SLOT_M,
            publish_retries: 3,
            publish_backoff_ms: 100,
        }
    }
}

fn set<T: std::str::FromStr>(slot: &mut T, key: &str, raw: &str) -> Result<(), String> {
    *slot = raw
        .trim()
        .parse()
        .map_err(|_| format!("cannot parse `{raw}` for {ENV_PREFIX}{}", key.to_uppercase()))?;
    Ok(())
}

impl Tunables {
    /// Applies `ROADWATCH_*` overrides found through `lookup`.
    pub fn apply_overrides(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), String> {
        macro_rules! fields {
            ($($name:ident),*) => {
                $(
                    let key = stringify!($name);
                    if let Some(raw) = lookup(&format!("{ENV_PREFIX}{}", key.to_uppercase())) {
                        set(&mut self.$name, key, &raw)?;
                    }
                )*
            };
        }
        fields!(
            conf_threshold, window, debounce_k, debounce_n, band_moderate, band_heavy, band_overcrowded,
            hysteresis, alpha, slot_width_s, retention_days, advisory_edge, tz_offset_s, refresh_s,
            max_entries, vehicle_slot_m, publish_retries, publish_backoff_ms
        );
        Ok(())
    }

    pub fn monitor_config(&self) -> MonitorConfig {
        MonitorConfig {
            conf_threshold: self.conf_threshold,
            window: self.window,
            debounce_k: self.debounce_k,
            debounce_n: self.debounce_n,
            bands: Bands {
                moderate: self.band_moderate,
                heavy: self.band_heavy,
                overcrowded: self.band_overcrowded,
                margin: self.hysteresis,
            },
            forecast: ForecastConfig {
                alpha: self.alpha,
                slot_width_s: self.slot_width_s,
                retention_days: self.retention_days,
                advisory_edge: self.advisory_edge,
                tz_offset_s: self.tz_offset_s,
            },
            display: DisplayConfig {
                max_entries: self.max_entries,
                refresh_s: self.refresh_s,
            },
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRunConfig {
    streets: PathBuf,
    #[serde(default)]
    graph: Option<PathBuf>,
    boards: PathBuf,
    cameras: PathBuf,
    input: String,
    history: PathBuf,
    #[serde(default = "default_transition_log")]
    transition_log: PathBuf,
    #[serde(default)]
    summary: Option<PathBuf>,
    #[serde(default)]
    tunables: Tunables,
}

fn default_transition_log() -> PathBuf {
    PathBuf::from("transitions.jsonl")
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub streets: PathBuf,
    pub graph: Option<PathBuf>,
    pub boards: PathBuf,
    pub cameras: PathBuf,
    pub input: InputSource,
    pub history: PathBuf,
    pub transition_log: PathBuf,
    pub summary: Option<PathBuf>,
    pub tunables: Tunables,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StreetLine {
    segment_id: String,
    name: String,
    lanes: u32,
    length_m: f64,
    free_flow_speed_mps: f64,
    #[serde(default)]
    threshold: Option<u32>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    nodes: Vec<String>,
    edges: Vec<Edge>,
}

/// Everything `run` needs, loaded and cross-checked.
pub struct Loaded {
    pub config: RunConfig,
    pub monitor: MonitorConfig,
    pub streets: Vec<StreetSegment>,
    pub graph: Option<RoadGraph>,
    pub boards: Vec<BoardSpec>,
    pub cameras: CameraRegistry,
    pub history: HistoryStore,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError::new(path, None, format!("cannot read: {e}")))?;
    serde_json::from_str(&text).map_err(|e| ConfigError::new(path, None, format!("bad JSON: {e}")))
}

impl RunConfig {
    /// Reads the configuration file and applies environment overrides.
    pub fn from_file(path: &Path, env: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let raw: RawRunConfig = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let input = InputSource::parse(&raw.input, base).ok_or_else(|| {
            ConfigError::new(path, Some("input"), "expected a `file://path` or `tcp://host:port` source")
        })?;
        let mut tunables = raw.tunables;
        tunables
            .apply_overrides(env)
            .map_err(|m| ConfigError::new(path, Some("tunables"), m))?;
        Ok(RunConfig {
            streets: base.join(raw.streets),
            graph: raw.graph.map(|g| base.join(g)),
            boards: base.join(raw.boards),
            cameras: base.join(raw.cameras),
            input,
            history: base.join(raw.history),
            transition_log: base.join(raw.transition_log),
            summary: raw.summary.map(|s| base.join(s)),
            tunables,
        })
    }

    /// Loads and validates every referenced file.
    pub fn load(self, config_path: &Path) -> Result<Loaded, ConfigError> {
        let monitor = self.tunables.monitor_config();
        monitor
            .validate()
            .map_err(|e| ConfigError::new(config_path, Some("tunables"), e.to_string()))?;
        if !(self.tunables.vehicle_slot_m > 0.0) {
            return Err(ConfigError::new(config_path, Some("vehicle_slot_m"), "must be positive"));
        }

        let lines: Vec<StreetLine> = read_json(&self.streets)?;
        let mut streets = Vec::with_capacity(lines.len());
        for line in lines {
            let threshold = match line.threshold {
                Some(t) => t,
                None => capacity_threshold(line.lanes, line.length_m, self.tunables.vehicle_slot_m)
                    .map_err(|e| ConfigError::new(&self.streets, Some(&line.segment_id), e.to_string()))?,
            };
            let segment = StreetSegment {
                segment_id: line.segment_id,
                name: line.name,
                lanes: line.lanes,
                length_m: line.length_m,
                free_flow_speed_mps: line.free_flow_speed_mps,
                threshold,
            };
            segment
                .validate()
                .map_err(|e| ConfigError::new(&self.streets, Some(&segment.segment_id), e.to_string()))?;
            streets.push(segment);
        }

        let graph = match &self.graph {
            Some(path) => {
                let file: GraphFile = read_json(path)?;
                Some(RoadGraph::new(file.nodes, file.edges).map_err(|e| ConfigError::new(path, None, e.to_string()))?)
            }
            None => None,
        };

        let boards: Vec<BoardSpec> = read_json(&self.boards)?;
        let mut endpoints = std::collections::BTreeSet::new();
        for board in &boards {
            board
                .validate()
                .map_err(|e| ConfigError::new(&self.boards, Some(&board.board_id), e.to_string()))?;
            if crate::sink::SinkAddress::parse(&board.endpoint, Path::new(".")).is_none() {
                return Err(ConfigError::new(
                    &self.boards,
                    Some(&board.board_id),
                    "endpoint must be `file://path` or `tcp://host:port`",
                ));
            }
            if !endpoints.insert(board.endpoint.as_str()) {
                return Err(ConfigError::new(&self.boards, Some(&board.board_id), "endpoint shared with another board"));
            }
        }

        let cameras: CameraRegistry = read_json(&self.cameras)?;

        let mut history = HistoryStore::new(monitor.forecast);
        if self.history.exists() {
            let records: Vec<HistoryRecord> = crate::wire::read_jsonl(&self.history)
                .map_err(|e| ConfigError::new(&self.history, None, format!("{e:#}")))?;
            for record in &records {
                history
                    .apply(record)
                    .map_err(|e| ConfigError::new(&self.history, Some(&record.segment_id), e.to_string()))?;
            }
        }

        if let InputSource::File(path) = &self.input {
            if !path.is_file() {
                return Err(ConfigError::new(path, None, "input file does not exist"));
            }
        }

        Ok(Loaded {
            config: self,
            monitor,
            streets,
            graph,
            boards,
            cameras,
            history,
        })
    }

    /// Board endpoints are resolved against the boards file's directory.
    pub fn endpoint_base(&self) -> &Path {
        self.boards.parent().unwrap_or(Path::new("."))
    }
}
