//! Simulated streams replayed through the full engine, compared against
//! the simulator's true occupancy.

use std::time::{Duration, Instant};

use roadwatch::wire::TransitionRecord;
use roadwatch_core::congestion::CongestionLevel;
use roadwatch_core::simulator::NoiseModel;

use crate::common::{profile, replay, scenario, MAIN_THRESHOLD};
use crate::{ensure, within_budget};

const WINDOW_FRAMES: i64 = 5;
const FRAME_MS: i64 = 1000;

/// Frames at which the true count reaches the threshold from below.
/// Up-crossings less than a window after the previous down-crossing are
/// treated as one episode.
fn truth_onsets(counts: &[(i64, u32)]) -> Vec<i64> {
    let mut onsets = Vec::new();
    let mut above = false;
    let mut last_down: Option<i64> = None;
    for &(ts, count) in counts {
        let now_above = count >= MAIN_THRESHOLD;
        if now_above && !above {
            let merged = last_down.is_some_and(|d| ts - d < WINDOW_FRAMES * FRAME_MS);
            if !merged {
                onsets.push(ts);
            }
        } else if !now_above && above {
            last_down = Some(ts);
        }
        above = now_above;
    }
    onsets
}

fn entries_to_overcrowded(log: &[TransitionRecord]) -> Vec<i64> {
    log.iter()
        .filter(|t| t.to == CongestionLevel::Overcrowded)
        .map(|t| t.ts)
        .collect()
}

/// Two rush periods: about 10 vehicles in free flow, about 100 at peak,
/// against a threshold of 40.
fn crossings(seed: u64) -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let rates = [(0.0, 60.0), (120.0, 600.0), (300.0, 60.0), (420.0, 600.0), (600.0, 60.0)];
    let cfg = scenario(seed, 720.0, vec![profile("main", 10.0, &rates)], NoiseModel::default());
    let (output, log, summary) = replay(dir.path(), &cfg);
    ensure(summary.frames.reconciles() && summary.frames.applied == 720, || {
        format!("frame accounting {:?}", summary.frames)
    })?;
    let counts: Vec<(i64, u32)> = output.truth.series("main").map(|c| (c.ts, c.count)).collect();
    let onsets = truth_onsets(&counts);
    let entries = entries_to_overcrowded(&log);
    ensure(onsets.len() == 2, || format!("seed {seed}: expected two true onsets, got {onsets:?}"))?;
    ensure(entries.len() == onsets.len(), || {
        format!("seed {seed}: {} true onsets but {} Overcrowded entries", onsets.len(), entries.len())
    })?;
    let mut lags = Vec::new();
    for (onset, entry) in onsets.iter().zip(&entries) {
        let lag = (entry - onset) / FRAME_MS;
        ensure((0..=WINDOW_FRAMES).contains(&lag), || {
            format!("seed {seed}: onset {onset} detected at {entry} ({lag} frames)")
        })?;
        lags.push(lag);
    }
    Ok(format!("{lags:?}"))
}

pub fn criterion() -> Result<String, String> {
    let start = Instant::now();
    let mut lag_report = Vec::new();
    for seed in [101, 202, 303] {
        lag_report.push(crossings(seed)?);
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    // about 5 vehicles against a threshold of 40
    let steady = scenario(7, 600.0, vec![profile("main", 10.0, &[(0.0, 30.0)])], NoiseModel::default());
    let (_, log, _) = replay(dir.path(), &steady);
    ensure(log.is_empty(), || format!("steady free flow produced {} transitions", log.len()))?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let noise = NoiseModel {
        p_miss: 0.1,
        p_false: 0.05,
        jitter_px: 3,
        conf_spread: 0.4,
    };
    // 144 arrivals per minute x 10 s dwell = 24 vehicles, 60 % of 40
    let noisy = scenario(8, 600.0, vec![profile("main", 10.0, &[(0.0, 144.0)])], noise);
    let (output, log, _) = replay(dir.path(), &noisy);
    let mean_true: f64 =
        output.truth.counts.iter().map(|c| f64::from(c.count)).sum::<f64>() / output.truth.counts.len() as f64;
    let spurious = entries_to_overcrowded(&log).len();
    ensure(spurious == 0, || format!("{spurious} spurious Overcrowded transitions under noise"))?;

    within_budget(start, Duration::from_secs(60))?;
    Ok(format!(
        "onset lags in frames per seed {}; steady: 0 transitions; noisy at {:.0}% occupancy: 0 Overcrowded ({} other transitions)",
        lag_report.join(" "),
        100.0 * mean_true / f64::from(MAIN_THRESHOLD),
        log.len()
    ))
}
