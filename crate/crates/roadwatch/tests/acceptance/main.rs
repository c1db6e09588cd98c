//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any failed.

#[path = "../common/mod.rs"]
mod common;

mod determinism;
mod display;
mod end_to_end;
mod evaluate_schema;
mod metrics_oracle;
mod split;

use std::panic;
use std::process::ExitCode;
use std::time::{Duration, Instant};

/// A criterion body returns a one-line summary of what it measured.
type Check = fn() -> Result<String, String>;

pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn within_budget(start: Instant, budget: Duration) -> Result<(), String> {
    let spent = start.elapsed();
    ensure(spent < budget, || format!("took {spent:.2?}, budget {budget:?}"))
}

fn main() -> ExitCode {
    let criteria: [(u8, &str, Check); 9] = [
        (1, "metrics oracle equivalence", metrics_oracle::criterion),
        (2, "hand-checkable metrics fixtures", metrics_oracle::fixtures),
        (3, "evaluate report schema", evaluate_schema::criterion),
        (4, "end-to-end congestion detection", end_to_end::criterion),
        (5, "split reproduction", split::criterion),
        (6, "routing oracle", routing_oracle::criterion),
        (7, "simulator occupancy statistics", simulator_stats::criterion),
        (8, "determinism", determinism::criterion),
        (9, "display contract", display::criterion),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (id, name, check) in criteria {
        let start = Instant::now();
        let result = panic::catch_unwind(check).unwrap_or_else(|payload| {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        let elapsed = start.elapsed();
        match result {
            Ok(detail) => println!("PASS  criterion {id}: {name} ({elapsed:.2?}) - {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  criterion {id}: {name} ({elapsed:.2?}) - {detail}");
            }
        }
    }
    let _ = panic::take_hook();
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
