//! Repeated `simulate` and `run` invocations produce identical bytes.

use std::fs;
use std::path::Path;
use std::process::Command;

use roadwatch::commands::{FRAMES_FILE, TRUTH_FILE};
use roadwatch_core::ingest::ObjectClass;
use roadwatch_core::simulator::{Incident, NoiseModel};

use crate::common::{profile, scenario, write, write_setup, BIN};
use crate::ensure;

fn invoke(args: &[&std::ffi::OsStr]) -> Result<(), String> {
    let out = Command::new(BIN).args(args).output().map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("{args:?} exited {:?}: {}", out.status, String::from_utf8_lossy(&out.stderr))
    })
}

fn same_bytes(a: &Path, b: &Path) -> Result<usize, String> {
    let x = fs::read(a).map_err(|e| format!("{}: {e}", a.display()))?;
    let y = fs::read(b).map_err(|e| format!("{}: {e}", b.display()))?;
    ensure(x == y, || format!("{} and {} differ", a.display(), b.display()))?;
    Ok(x.len())
}

pub fn criterion() -> Result<String, String> {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = scenario(
        99,
        900.0,
        vec![
            profile("main", 12.0, &[(0.0, 60.0), (200.0, 400.0), (500.0, 80.0)]),
            profile("side", 15.0, &[(0.0, 40.0)]),
        ],
        NoiseModel {
            p_miss: 0.1,
            p_false: 0.05,
            jitter_px: 4,
            conf_spread: 0.3,
        },
    );
    cfg.incidents.push(Incident {
        segment_id: "main".into(),
        start_s: 300.0,
        duration_s: 60.0,
        class: ObjectClass::Accident,
    });
    let scenario_path = root.path().join("scenario.json");
    write(&scenario_path, &serde_json::to_string_pretty(&cfg).map_err(|e| e.to_string())?);

    let sims: Vec<_> = ["sim-a", "sim-b"].iter().map(|d| root.path().join(d)).collect();
    for dir in &sims {
        invoke(&["simulate".as_ref(), scenario_path.as_os_str(), "--out-dir".as_ref(), dir.as_os_str()])?;
    }
    let mut checked = Vec::new();
    for file in [FRAMES_FILE, TRUTH_FILE] {
        let n = same_bytes(&sims[0].join(file), &sims[1].join(file))?;
        checked.push(format!("{file} ({n} B)"));
    }

    let runs: Vec<_> = ["run-a", "run-b"].iter().map(|d| root.path().join(d)).collect();
    for dir in &runs {
        fs::create_dir_all(dir).map_err(|e| e.to_string())?;
        let config = write_setup(dir, &["main", "side"]);
        fs::copy(sims[0].join(FRAMES_FILE), dir.join(FRAMES_FILE)).map_err(|e| e.to_string())?;
        invoke(&["run".as_ref(), "--config".as_ref(), config.as_os_str()])?;
    }
    for file in ["transitions.jsonl", "board-entry.jsonl", "history.jsonl", "summary.json"] {
        let n = same_bytes(&runs[0].join(file), &runs[1].join(file))?;
        ensure(n > 0, || format!("{file} is empty"))?;
        checked.push(format!("{file} ({n} B)"));
    }
    Ok(format!("identical across two invocations: {}", checked.join(", ")))
}
