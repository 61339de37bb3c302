//! Runs the shipped reproduction manifest end to end.

use eoclab::QuadratureConfig;
use eoclab_cli::repro::{coverage, parse_manifest, run_manifest, BUILTIN_MANIFEST};

/// Published values the implementation does not reproduce. Each is analysed
/// in the project notes; the checks stay in the manifest and stay failing.
const KNOWN_FAILURES: &[&str] = &[
    // The published Swish q column is not a fixed point at the published
    // sigma_w; the computed edge of chaos is a fold of F there.
    "fixed-point-swish-0.2",
    "table1-q-0.2",
    "table1-q-0.4",
    "table1-q-0.5",
    "check-swish-ii",
    // sigma_b^2 / q omits the sigma_w^2 E[phi]^2 / q term of f(0).
    "supdev-bound-swish",
    "supdev-bound-elu",
];

#[test]
fn manifest_is_complete_and_well_formed() {
    let checks = parse_manifest(BUILTIN_MANIFEST).unwrap();
    assert!(coverage(&checks).is_empty());
    for id in KNOWN_FAILURES {
        let c = checks.iter().find(|c| c.id == *id).unwrap();
        assert_eq!(c.provenance, "reported", "{id}");
    }
}

#[test]
fn full_reproduction_run() {
    let outcome = run_manifest(BUILTIN_MANIFEST, &QuadratureConfig::default()).unwrap();
    println!("{}", outcome.markdown);
    assert!(outcome.uncovered.is_empty());
    assert_eq!(outcome.failed_ids(), KNOWN_FAILURES);
    assert!(!outcome.all_pass);
    assert!(outcome.markdown.contains("## Failed checks"));
}
