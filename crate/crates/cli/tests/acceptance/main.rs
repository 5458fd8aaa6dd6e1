//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

mod chart;
mod csv;
mod e2e;
mod fixture;
mod guard;
mod persistence;
mod prompts;
mod retry;
mod trigger;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

type Check = fn() -> Result<String, String>;

fn main() -> ExitCode {
    let criteria: [(&str, Check); 8] = [
        ("guard-soundness", guard::run),
        ("trigger-law", trigger::run),
        ("retry-semantics", retry::run),
        ("prompt-determinism", prompts::run),
        ("csv-round-trip", csv::run),
        ("chart-validation", chart::run),
        ("end-to-end", e2e::run),
        ("persistence", persistence::run),
    ];
    // Panics are reported on the FAIL line instead of the default hook.
    std::panic::set_hook(Box::new(|_| {}));

    let mut failed = 0;
    for (name, check) in criteria {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} ({secs:.2}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name} ({secs:.2}s): {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
