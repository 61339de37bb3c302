//! Every JSON output validates against the schema shipped under `schemas/`.

use eoclab_cli::run;
use serde_json::Value;
use std::path::PathBuf;

fn schema(name: &str) -> jsonschema::Validator {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../schemas").join(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    jsonschema::validator_for(&serde_json::from_str(&text).unwrap()).unwrap()
}

fn output(args: &str) -> (i32, Value, String) {
    let argv = std::iter::once("eoc-lab").chain(args.split_whitespace());
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(argv, &mut out, &mut err);
    let text = if code == 0 { out } else { err.clone() };
    (code, serde_json::from_slice(&text).unwrap(), String::from_utf8(err).unwrap())
}

fn assert_valid(name: &str, args: &str) {
    let (code, value, err) = output(args);
    assert_eq!(code, 0, "{args}: {err}");
    let v = schema(name);
    let errors: Vec<String> = v.iter_errors(&value).map(|e| format!("{e} at {}", e.instance_path)).collect();
    assert!(errors.is_empty(), "{args}: {errors:?}");
}

#[test]
fn eoc_points() {
    assert_valid("eoc.schema.json", "eoc --activation relu --sigma-b-grid 0:0.5:2");
    assert_valid("eoc.schema.json", "eoc --activation swish --sigma-b-grid 0.2:0.2:1");
    assert_valid("eoc.schema.json", "eoc --activation tanh --sigma-b-grid 0:0.5:2");
}

#[test]
fn fixed_points() {
    assert_valid("fixed_point.schema.json", "fixed-point --activation relu --sigma-b 1 --sigma-w 1");
    assert_valid("fixed_point.schema.json", "fixed-point --activation relu --sigma-b 1 --sigma-w 2");
}

#[test]
fn depth_scales() {
    assert_valid("depth_scales.schema.json", "depth-scales --activation tanh --sigma-b 1 --sigma-w 1");
    // eps_c is infinite on the edge of chaos.
    assert_valid("depth_scales.schema.json", "depth-scales --activation relu --on-eoc");
}

#[test]
fn condition_reports() {
    assert_valid("check.schema.json", "check --activation relu --sigma-b-grid 0.1:0.5:3");
    assert_valid("check.schema.json", "check --activation tanh --sigma-b-grid 0.5:1:2 --x-grid 10");
}

#[test]
fn tail_and_bounds() {
    assert_valid("tail.schema.json", "tail --activation arctan --range 10:100");
    assert_valid("bounds.schema.json", "bounds --activation tanh --grid 10 --c-grid 3");
}

#[test]
fn error_diagnostic() {
    let (code, value, _) = output("iterate --activation relu --on-eoc --c0 2 --depth 3");
    assert_eq!(code, 3);
    let v = schema("error.schema.json");
    assert!(v.is_valid(&value), "{value}");
}

#[test]
fn schemas_reject_malformed_documents() {
    let v = schema("fixed_point.schema.json");
    assert!(!v.is_valid(&serde_json::json!({"q": 1.0, "iters": 3})));
    assert!(!v.is_valid(&serde_json::json!({"q": "one", "iters": 3, "status": "converged"})));
}
