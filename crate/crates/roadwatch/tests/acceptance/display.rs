//! Board rendering bounds and publish-on-change suppression.

use std::fs;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use roadwatch::sink::{Outcome, Publisher, SinkAddress};
use roadwatch::wire::read_jsonl;
use roadwatch_core::congestion::CongestionLevel;
use roadwatch_core::display::{render_board, AlertEntry, AlertMessage, EntryKind};
use roadwatch_core::ingest::ObjectClass;
use roadwatch_core::simulator::{run_scenario, NoiseModel};

use crate::common::{profile, scenario, write, write_frames, write_setup, run_engine};
use crate::ensure;

const NAMES: [&str; 6] = [
    "Chaharbagh Abbasi",
    "kharazi highway southbound approach to the interchange",
    "Sheikh Sadoogh Shomali",
    "خیابان چهارباغ",
    "Ring-road Exit 7 (west) / überführung",
    "",
];
const LEVELS: [CongestionLevel; 4] = [
    CongestionLevel::Free,
    CongestionLevel::Moderate,
    CongestionLevel::Heavy,
    CongestionLevel::Overcrowded,
];
const KINDS: [EntryKind; 4] = [EntryKind::Normal, EntryKind::Advisory, EntryKind::Threshold, EntryKind::Anomaly];

fn random_message(rng: &mut ChaCha8Rng) -> AlertMessage {
    let entries = (0..rng.random_range(0..8))
        .map(|_| {
            let kind = KINDS[rng.random_range(0..KINDS.len())];
            let delay_s = match rng.random_range(0..3) {
                0 => 0.0,
                1 => rng.random_range(0.0..600.0),
                _ => rng.random_range(0.0..1e9),
            };
            AlertEntry {
                segment: NAMES[rng.random_range(0..NAMES.len())].into(),
                segment_id: format!("s{}", rng.random_range(0..20)),
                level: LEVELS[rng.random_range(0..LEVELS.len())],
                delay_s,
                alt_route: rng
                    .random_bool(0.5)
                    .then(|| vec!["Bozorgmehr bridge".into(), "D".into()]),
                kind,
                anomaly: (kind == EntryKind::Anomaly)
                    .then(|| ObjectClass::ALL[rng.random_range(6..ObjectClass::ALL.len())]),
            }
        })
        .collect();
    AlertMessage {
        board_id: "b".into(),
        issued_at: 0,
        expires_at: 30_000,
        entries,
        severity: CongestionLevel::Heavy,
    }
}

fn render_bounds() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..1000 {
        let msg = random_message(&mut rng);
        let rows = rng.random_range(1..=6);
        let cols = rng.random_range(8..=80);
        let lines = render_board(&msg, rows, cols);
        ensure(lines.len() == rows, || format!("message {i}: {} lines for {rows} rows", lines.len()))?;
        for line in &lines {
            ensure(line.chars().count() <= cols, || format!("message {i}: {line:?} exceeds {cols} columns"))?;
            ensure(line.is_ascii() && !line.chars().any(|c| c.is_ascii_lowercase()), || {
                format!("message {i}: {line:?} is not uppercase ASCII")
            })?;
        }
        ensure(render_board(&msg, rows, cols) == lines, || format!("message {i}: rendering not deterministic"))?;
    }
    Ok(())
}

/// Identical content inside the validity window is written once.
fn publisher_suppression() -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("board.jsonl");
    let mut publisher = Publisher::new(SinkAddress::File(path.clone()), 0, Duration::ZERO);
    let mut msg = random_message(&mut ChaCha8Rng::seed_from_u64(3));
    let mut outcomes = Vec::new();
    for issued_at in [0, 10_000, 29_999, 30_000] {
        msg.issued_at = issued_at;
        msg.expires_at = issued_at + 30_000;
        outcomes.push(publisher.publish(&msg).map_err(|e| e.to_string())?);
    }
    let expected = [Outcome::Published, Outcome::Suppressed, Outcome::Suppressed, Outcome::Published];
    ensure(outcomes == expected, || format!("outcomes {outcomes:?}"))?;
    let written: Vec<AlertMessage> = read_jsonl(&path).map_err(|e| e.to_string())?;
    ensure(written.len() == 2, || format!("{} records written", written.len()))
}

/// A replayed free-flow run: no consecutive duplicates inside validity and
/// roughly one record per refresh period.
fn replay_cadence() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let duration_s = 300.0;
    let refresh_s = 30.0;
    let cfg = scenario(5, duration_s, vec![profile("main", 10.0, &[(0.0, 30.0)])], NoiseModel::default());
    let output = run_scenario(&cfg).map_err(|e| e.to_string())?;
    let config = write_setup(dir.path(), &["main"]);
    let text = fs::read_to_string(&config).map_err(|e| e.to_string())?;
    write(&config, &text.replacen('{', r#"{"tunables":{"refresh_s":30},"#, 1));
    write_frames(dir.path(), &output);
    let summary = run_engine(&config);

    let records: Vec<AlertMessage> = read_jsonl(&dir.path().join("board-entry.jsonl")).map_err(|e| e.to_string())?;
    for pair in records.windows(2) {
        ensure(!(pair[0].same_content(&pair[1]) && pair[1].issued_at < pair[0].expires_at), || {
            format!("duplicate published at {} within validity of {}", pair[1].issued_at, pair[0].issued_at)
        })?;
    }
    let bound = (duration_s / refresh_s).ceil() as usize + summary.transitions as usize + 1;
    ensure(records.len() <= bound, || format!("{} records over {duration_s} s, bound {bound}", records.len()))?;
    Ok(format!("{} board records over {duration_s} s at refresh {refresh_s} s (bound {bound})", records.len()))
}

pub fn criterion() -> Result<String, String> {
    render_bounds()?;
    publisher_suppression()?;
    let cadence = replay_cadence()?;
    Ok(format!(
        "1000 random messages fit rows x cols in uppercase ASCII; duplicates suppressed until expiry; {cadence}"
    ))
}
