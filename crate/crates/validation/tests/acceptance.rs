//! Prints one line per acceptance criterion and exits non-zero if any fails.

use eoclab_validation::CRITERIA;
use std::process::ExitCode;

fn main() -> ExitCode {
    let mut failed = Vec::new();
    for c in CRITERIA {
        let v = c.evaluate();
        println!("{}", v.line);
        if !v.pass {
            failed.push(v.id);
        }
    }
    println!("acceptance: {} of {} criteria pass; failing: {failed:?}", CRITERIA.len() - failed.len(), CRITERIA.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
