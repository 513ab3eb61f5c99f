//! Acceptance suite: one PASS/FAIL/SKIP line per criterion. Tolerances live
//! next to each check in `spinmqc_cli::checks`. Pass criterion ids as
//! arguments to run a subset; `MQC_ACCEPTANCE_FULL=1` adds the long variants.

use std::process::ExitCode;

use spinmqc_cli::checks::{self, Check, Outcome};

fn main() -> ExitCode {
    let wanted: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let full = checks::full_requested();
    let all: Vec<(&str, fn() -> Check)> = vec![
        ("1", checks::criterion_1),
        ("2", checks::criterion_2),
        ("3", checks::criterion_3),
        ("4", checks::criterion_4),
        ("5", checks::criterion_5),
        ("6", checks::criterion_6),
        ("7", checks::criterion_7),
        ("7-full", checks::criterion_7_full),
        ("8", checks::criterion_8),
        ("9", checks::criterion_9),
        ("10", checks::criterion_10),
    ];
    let mut failed = Vec::new();
    for (id, f) in all {
        if !wanted.is_empty() && !wanted.iter().any(|w| w == id) {
            continue;
        }
        let long = id == "7-full" || id == "9";
        let c = if long && !full {
            checks::skipped_check(id)
        } else {
            f()
        };
        println!("{}", c.line());
        if c.outcome == Outcome::Fail {
            failed.push(c.id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failing criteria {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
