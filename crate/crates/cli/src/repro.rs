//! Reproduction harness: runs every check of a tab-separated manifest through
//! the CLI in process and renders a markdown report.
//!
//! Manifest columns: `id`, `invocation` (arguments after the program name),
//! `extractor`, `expected`, `tolerance`, `provenance`. Blank lines and lines
//! starting with `#` are ignored; the first remaining line is the header.
//!
//! Extractors:
//! - `json:POINTER`: RFC 6901 pointer into the JSON output
//! - `csv:ROW:COL`: one cell; negative rows count from the end
//! - `csv-max:COL`, `csv-min:COL`, `csv-std:COL` (population)
//! - `csv-relrange:COL`: `(max - min) / |mean|`
//! - `csv-increasing:COL`: 1 if strictly increasing, else 0
//! - `csv-maxdiff:A:B`: `max(A - B)`; `csv-maxabsdiff:A:B`: `max |A - B|`
//! - `csv-maxz:COL:SE:REF`: `max |COL - REF| / SE`
//!
//! Tolerances: `abs:E`, `rel:E`, `eq`, `le`, `ge` (optionally `le:S` and
//! `ge:S` with slack `S`), `lt`, `gt`. An expected value `@ID` refers to the
//! observed value of an earlier check.

use crate::{invoke, Failure};
use eoclab::QuadratureConfig;
use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

pub const BUILTIN_MANIFEST: &str = include_str!("../../../repro/manifest.tsv");

/// Every published claim the harness must cover, by manifest id. Each id
/// must be present with provenance `reported`.
pub const REQUIRED_CLAIMS: &[(&str, &str)] = &[
    ("growth-swish", "Swish satisfies |phi(x)/x| <= 1"),
    ("variance-relu-identity", "ReLU on the edge of chaos has F(x) = x"),
    ("fixed-point-relu-every-point", "every variance is fixed for ReLU on the edge of chaos"),
    ("fixed-point-swish-0.2", "Swish fixed point at sigma_b = 0.2 is q = 0.44"),
    ("corr-relu-origin", "ReLU arc-cosine correlation map at 0 is 1/pi"),
    ("corr-relu-slope-origin", "ReLU f'(0) = 1/2"),
    ("corr-relu-slope-one", "ReLU f'(1) = chi1 = 1"),
    ("corr-relu-one", "f(1) = 1"),
    ("corr-relu-curvature", "ReLU f''(x) = 1 / (pi sqrt(1 - x^2))"),
    ("corr-swish-convex", "Swish correlation map is convex on the edge of chaos"),
    ("chi1-relu", "ReLU with sigma_w^2 = 2 has chi1 = 1 at every q"),
    ("iterate-relu-layerwise-max", "ReLU variance is unchanged across layers on the edge of chaos"),
    ("iterate-relu-layerwise-min", "ReLU variance is unchanged across layers on the edge of chaos"),
    ("iterate-relu-increasing", "ReLU correlations increase towards 1"),
    ("cphi-relu", "C_ReLU,delta <= 1"),
    ("eoc-relu-origin-sigma-w", "ReLU edge of chaos is the single point (0, sqrt 2)"),
    ("eoc-relu-origin-status", "ReLU edge of chaos is the single point (0, sqrt 2)"),
    ("eoc-relu-0.5", "ReLU has no edge-of-chaos point with sigma_b > 0"),
    ("eoc-relu-singleton-0.1", "ReLU has no edge-of-chaos point with sigma_b > 0"),
    ("eoc-relu-singleton-0.3", "ReLU has no edge-of-chaos point with sigma_b > 0"),
    ("eoc-relu-like", "ReLU-like (1, 0) edge of chaos is (0, sqrt 2)"),
    ("table1-sigma-w-0.1", "Swish edge-of-chaos table"),
    ("table1-sigma-w-0.2", "Swish edge-of-chaos table"),
    ("table1-sigma-w-0.3", "Swish edge-of-chaos table"),
    ("table1-sigma-w-0.4", "Swish edge-of-chaos table"),
    ("table1-sigma-w-0.5", "Swish edge-of-chaos table"),
    ("table1-q-0.1", "Swish edge-of-chaos table"),
    ("table1-q-0.2", "Swish edge-of-chaos table"),
    ("table1-q-0.3", "Swish edge-of-chaos table"),
    ("table1-q-0.4", "Swish edge-of-chaos table"),
    ("table1-q-0.5", "Swish edge-of-chaos table"),
    ("relu-rate-limit", "1 - c^l ~ 9 pi^2 / (2 l^2) for ReLU"),
    ("relu-rate-constant", "9 pi^2 / 2 = 44.413"),
    ("hardtanh-convex", "Hard-Tanh f'' > 0"),
    ("check-swish-i", "Swish satisfies all sufficient conditions"),
    ("check-swish-ii", "Swish satisfies all sufficient conditions"),
    ("check-swish-iii-monotone", "Swish satisfies all sufficient conditions"),
    ("check-swish-iii-qlimit", "Swish satisfies all sufficient conditions"),
    ("check-swish-iv", "Swish satisfies all sufficient conditions"),
    ("check-elu-i", "ELU satisfies all sufficient conditions"),
    ("check-elu-ii", "ELU satisfies all sufficient conditions"),
    ("check-elu-iii-monotone", "ELU satisfies all sufficient conditions"),
    ("check-elu-iii-qlimit", "ELU satisfies all sufficient conditions"),
    ("check-elu-iv", "ELU satisfies all sufficient conditions"),
    ("check-relu-ii", "ReLU fails the edge-of-chaos existence condition"),
    ("supdev-swish-increasing", "f approaches the identity as sigma_b decreases"),
    ("supdev-bound-swish", "0 <= f(x) - x <= sigma_b^2 / q"),
    ("supdev-bound-elu", "0 <= f(x) - x <= sigma_b^2 / q"),
    ("supdev-bound-tanh", "0 <= f(x) - x <= sigma_b^2 / q"),
    ("sim-relu-variance", "finite-width ReLU variance is unchanged on the edge of chaos"),
    ("field-tanh-range", "Tanh (1, 1) output field is almost constant"),
    ("field-relu-std", "ReLU edge-of-chaos output field is more variable"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub id: String,
    pub invocation: String,
    pub extractor: String,
    pub expected: String,
    pub tolerance: String,
    pub provenance: String,
}

pub const PROVENANCES: &[&str] = &["reported", "derived", "trivial"];

pub fn parse_manifest(text: &str) -> Result<Vec<Check>, String> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let Some((_, header)) = lines.next() else {
        return Err("manifest is empty".into());
    };
    let want = ["id", "invocation", "extractor", "expected", "tolerance", "provenance"];
    if header.split('\t').map(str::trim).ne(want) {
        return Err(format!("manifest header must be {}", want.join("<TAB>")));
    }
    let mut checks: Vec<Check> = Vec::new();
    for (i, line) in lines {
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        let [id, invocation, extractor, expected, tolerance, provenance] = cols.as_slice() else {
            return Err(format!("manifest line {}: expected 6 tab-separated columns", i + 1));
        };
        if !PROVENANCES.contains(provenance) {
            return Err(format!("manifest line {}: unknown provenance {provenance:?}", i + 1));
        }
        if checks.iter().any(|c| c.id == *id) {
            return Err(format!("manifest line {}: duplicate id {id:?}", i + 1));
        }
        checks.push(Check {
            id: id.to_string(),
            invocation: invocation.to_string(),
            extractor: extractor.to_string(),
            expected: expected.to_string(),
            tolerance: tolerance.to_string(),
            provenance: provenance.to_string(),
        });
    }
    Ok(checks)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Observed {
    Num(f64),
    Text(String),
}

impl Observed {
    fn show(&self) -> String {
        match self {
            Observed::Num(v) => format!("{v}"),
            Observed::Text(s) => s.clone(),
        }
    }
}

fn column(output: &str, name: &str) -> Result<Vec<f64>, String> {
    let mut reader = csv::Reader::from_reader(output.as_bytes());
    let headers = reader.headers().map_err(|e| e.to_string())?.clone();
    let idx = headers.iter().position(|h| h == name).ok_or_else(|| format!("no CSV column {name:?}"))?;
    reader
        .records()
        .map(|r| {
            let r = r.map_err(|e| e.to_string())?;
            r[idx].parse::<f64>().map_err(|_| format!("non-numeric cell {:?} in {name:?}", &r[idx]))
        })
        .collect()
}

fn fold_max(values: impl Iterator<Item = f64>) -> f64 {
    // NaN anywhere makes the result NaN, which fails every comparison.
    values.fold(f64::NEG_INFINITY, |m, v| if v.is_nan() || m.is_nan() { f64::NAN } else { m.max(v) })
}

fn paired(output: &str, a: &str, b: &str) -> Result<Vec<(f64, f64)>, String> {
    Ok(column(output, a)?.into_iter().zip(column(output, b)?).collect())
}

pub fn extract(output: &str, extractor: &str) -> Result<Observed, String> {
    let (kind, arg) = extractor.split_once(':').ok_or_else(|| format!("bad extractor {extractor:?}"))?;
    let parts: Vec<&str> = arg.split(':').collect();
    let num = |v: f64| Ok(Observed::Num(v));
    match (kind, parts.as_slice()) {
        ("json", _) => {
            let doc: serde_json::Value = serde_json::from_str(output).map_err(|e| e.to_string())?;
            let v = doc.pointer(arg).ok_or_else(|| format!("no JSON value at {arg:?}"))?;
            match v {
                serde_json::Value::Number(n) => num(n.as_f64().unwrap_or(f64::NAN)),
                serde_json::Value::String(s) => Ok(Observed::Text(s.clone())),
                serde_json::Value::Bool(b) => Ok(Observed::Text(b.to_string())),
                other => Err(format!("JSON value at {arg:?} is not a scalar: {other}")),
            }
        }
        ("csv", [row, col]) => {
            let values = column(output, col)?;
            let row: i64 = row.parse().map_err(|_| format!("bad row {row:?}"))?;
            let idx = if row < 0 { values.len() as i64 + row } else { row };
            let v = usize::try_from(idx).ok().and_then(|i| values.get(i)).ok_or_else(|| format!("no row {row}"))?;
            num(*v)
        }
        ("csv-max", [col]) => num(fold_max(column(output, col)?.into_iter())),
        ("csv-min", [col]) => num(-fold_max(column(output, col)?.into_iter().map(|v| -v))),
        ("csv-std", [col]) => {
            let v = column(output, col)?;
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            num((v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt())
        }
        ("csv-relrange", [col]) => {
            let v = column(output, col)?;
            let hi = fold_max(v.iter().copied());
            let lo = -fold_max(v.iter().map(|x| -x));
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            num((hi - lo) / mean.abs())
        }
        ("csv-increasing", [col]) => {
            let v = column(output, col)?;
            num(if v.windows(2).all(|w| w[1] > w[0]) { 1.0 } else { 0.0 })
        }
        ("csv-maxdiff", [a, b]) => num(fold_max(paired(output, a, b)?.into_iter().map(|(x, y)| x - y))),
        ("csv-maxabsdiff", [a, b]) => {
            num(fold_max(paired(output, a, b)?.into_iter().map(|(x, y)| (x - y).abs())))
        }
        ("csv-maxz", [col, se, reference]) => {
            let values = column(output, col)?;
            let ses = column(output, se)?;
            let refs = column(output, reference)?;
            num(fold_max(values.iter().zip(&ses).zip(&refs).map(|((v, s), r)| (v - r).abs() / s)))
        }
        _ => Err(format!("unknown extractor {extractor:?}")),
    }
}

/// Whether `observed` meets `expected` under `tolerance`.
pub fn compare(observed: &Observed, expected: &Observed, tolerance: &str) -> Result<bool, String> {
    let (kind, arg) = match tolerance.split_once(':') {
        Some((k, a)) => (k, Some(a)),
        None => (tolerance, None),
    };
    let param = |default: Option<f64>| -> Result<f64, String> {
        match arg {
            Some(a) => a.parse().map_err(|_| format!("bad tolerance {tolerance:?}")),
            None => default.ok_or_else(|| format!("tolerance {tolerance:?} needs a value")),
        }
    };
    if kind == "eq" {
        return Ok(match (observed, expected) {
            (Observed::Num(o), Observed::Num(e)) => o == e,
            (o, e) => o.show() == e.show(),
        });
    }
    let (Observed::Num(o), Observed::Num(e)) = (observed, expected) else {
        return Err(format!("tolerance {tolerance:?} needs numeric values"));
    };
    let (o, e) = (*o, *e);
    Ok(match kind {
        "abs" => (o - e).abs() <= param(None)?,
        "rel" => (o - e).abs() <= param(None)? * e.abs(),
        "le" => o <= e + param(Some(0.0))?,
        "ge" => o >= e - param(Some(0.0))?,
        "lt" => o < e,
        "gt" => o > e,
        _ => return Err(format!("unknown tolerance {tolerance:?}")),
    })
}

fn parse_expected(text: &str, earlier: &HashMap<String, Observed>) -> Result<Observed, String> {
    if let Some(id) = text.strip_prefix('@') {
        return earlier.get(id).cloned().ok_or_else(|| format!("expected value refers to unknown check {id:?}"));
    }
    Ok(match text.parse::<f64>() {
        Ok(v) => Observed::Num(v),
        Err(_) => Observed::Text(text.to_string()),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub id: String,
    pub pass: bool,
    pub observed: Option<Observed>,
    pub detail: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ReproOutcome {
    pub results: Vec<CheckResult>,
    /// Required claim ids that are absent or not tagged `reported`.
    pub uncovered: Vec<String>,
    pub all_pass: bool,
    pub markdown: String,
}

impl ReproOutcome {
    pub fn failed_ids(&self) -> Vec<&str> {
        self.results.iter().filter(|r| !r.pass).map(|r| r.id.as_str()).collect()
    }
}

pub fn coverage(checks: &[Check]) -> Vec<String> {
    REQUIRED_CLAIMS
        .iter()
        .filter(|(id, _)| !checks.iter().any(|c| c.id == *id && c.provenance == "reported"))
        .map(|(id, _)| id.to_string())
        .collect()
}

/// Runs every check in manifest order; each distinct invocation runs once.
pub fn run_manifest(text: &str, quad: &QuadratureConfig) -> Result<ReproOutcome, Failure> {
    let checks = parse_manifest(text).map_err(Failure::Usage)?;
    let mut outputs: BTreeMap<&str, Result<String, String>> = BTreeMap::new();
    let mut seen: HashMap<String, Observed> = HashMap::new();
    let mut results = Vec::with_capacity(checks.len());
    for check in &checks {
        let output = outputs.entry(check.invocation.as_str()).or_insert_with(|| {
            let argv = std::iter::once("eoc-lab").chain(check.invocation.split_whitespace());
            invoke(argv, quad).map_err(|f| match f {
                Failure::Usage(m) => format!("usage error: {}", m.trim()),
                Failure::Numeric(e) => format!("numeric failure: {e}"),
                Failure::Checks(_) => "nested reproduction run".into(),
            })
        });
        let evaluated = output.clone().and_then(|out| {
            let observed = extract(&out, &check.extractor)?;
            let expected = parse_expected(&check.expected, &seen)?;
            Ok((compare(&observed, &expected, &check.tolerance)?, observed))
        });
        results.push(match evaluated {
            Ok((pass, observed)) => {
                seen.insert(check.id.clone(), observed.clone());
                CheckResult { id: check.id.clone(), pass, observed: Some(observed), detail: None }
            }
            Err(msg) => CheckResult { id: check.id.clone(), pass: false, observed: None, detail: Some(msg) },
        });
    }
    let uncovered = coverage(&checks);
    let all_pass = uncovered.is_empty() && results.iter().all(|r| r.pass);
    let markdown = render(&checks, &results, &uncovered);
    Ok(ReproOutcome { results, uncovered, all_pass, markdown })
}

fn render(checks: &[Check], results: &[CheckResult], uncovered: &[String]) -> String {
    let passed = results.iter().filter(|r| r.pass).count();
    let mut md = String::new();
    let _ = writeln!(md, "# Reproduction report\n");
    let _ = writeln!(md, "{passed} of {} checks passed.\n", results.len());
    let _ = writeln!(md, "| id | provenance | invocation | extractor | expected | tolerance | observed | result |");
    let _ = writeln!(md, "|---|---|---|---|---|---|---|---|");
    for (c, r) in checks.iter().zip(results) {
        let observed = r.observed.as_ref().map(Observed::show).unwrap_or_else(|| "-".into());
        let verdict = if r.pass { "pass" } else { "FAIL" };
        let _ = writeln!(
            md,
            "| {} | {} | `{}` | `{}` | {} | {} | {} | {} |",
            c.id, c.provenance, c.invocation, c.extractor, c.expected, c.tolerance, observed, verdict
        );
    }
    let failed: Vec<_> = checks.iter().zip(results).filter(|(_, r)| !r.pass).collect();
    if !failed.is_empty() {
        let _ = writeln!(md, "\n## Failed checks\n");
        for (c, r) in failed {
            let why = match (&r.detail, &r.observed) {
                (Some(d), _) => d.clone(),
                (None, Some(o)) => format!("observed {} against expected {} ({})", o.show(), c.expected, c.tolerance),
                (None, None) => "no observation".into(),
            };
            let _ = writeln!(md, "- `{}`: {why}", c.id);
        }
    }
    let _ = writeln!(md, "\n## Coverage of published claims\n");
    let _ = writeln!(md, "| check | claim | covered |");
    let _ = writeln!(md, "|---|---|---|");
    for (id, claim) in REQUIRED_CLAIMS {
        let covered = if uncovered.iter().any(|u| u == id) { "MISSING" } else { "yes" };
        let _ = writeln!(md, "| {id} | {claim} | {covered} |");
    }
    md
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV: &str = "l,v,se,ref\n1,1.0,0.5,1.5\n2,3.0,1.0,2.0\n3,2.0,0.5,2.0\n";

    #[test]
    fn csv_extractors() {
        assert_eq!(extract(CSV, "csv:-1:v").unwrap(), Observed::Num(2.0));
        assert_eq!(extract(CSV, "csv:0:v").unwrap(), Observed::Num(1.0));
        assert_eq!(extract(CSV, "csv-max:v").unwrap(), Observed::Num(3.0));
        assert_eq!(extract(CSV, "csv-min:v").unwrap(), Observed::Num(1.0));
        assert_eq!(extract(CSV, "csv-increasing:l").unwrap(), Observed::Num(1.0));
        assert_eq!(extract(CSV, "csv-increasing:v").unwrap(), Observed::Num(0.0));
        assert_eq!(extract(CSV, "csv-maxdiff:v:ref").unwrap(), Observed::Num(1.0));
        assert_eq!(extract(CSV, "csv-maxabsdiff:v:ref").unwrap(), Observed::Num(1.0));
        assert_eq!(extract(CSV, "csv-maxz:v:se:ref").unwrap(), Observed::Num(1.0));
        assert_eq!(extract(CSV, "csv-relrange:v").unwrap(), Observed::Num(1.0));
        assert!(extract(CSV, "csv:5:v").is_err());
        assert!(extract(CSV, "csv-max:nope").is_err());
        assert!(extract(CSV, "median:v").is_err());
    }

    #[test]
    fn nan_cells_fail_comparisons() {
        let out = "a\n1\nnan\n";
        let Observed::Num(v) = extract(out, "csv-max:a").unwrap() else { panic!() };
        assert!(v.is_nan());
        assert!(!compare(&Observed::Num(v), &Observed::Num(0.0), "ge").unwrap());
    }

    #[test]
    fn json_extractor() {
        let out = r#"[{"sigma_w":1.5,"status":"numeric","ok":true}]"#;
        assert_eq!(extract(out, "json:/0/sigma_w").unwrap(), Observed::Num(1.5));
        assert_eq!(extract(out, "json:/0/status").unwrap(), Observed::Text("numeric".into()));
        assert_eq!(extract(out, "json:/0/ok").unwrap(), Observed::Text("true".into()));
        assert!(extract(out, "json:/1").is_err());
    }

    #[test]
    fn tolerances() {
        let n = |v| Observed::Num(v);
        assert!(compare(&n(1.004), &n(1.0), "abs:0.005").unwrap());
        assert!(!compare(&n(1.006), &n(1.0), "abs:0.005").unwrap());
        assert!(compare(&n(0.96), &n(1.0), "rel:0.05").unwrap());
        assert!(!compare(&n(0.94), &n(1.0), "rel:0.05").unwrap());
        assert!(compare(&n(1.0), &n(1.0), "le").unwrap());
        assert!(compare(&n(1.0 + 1e-10), &n(1.0), "le:1e-9").unwrap());
        assert!(!compare(&n(1.0), &n(1.0), "lt").unwrap());
        assert!(compare(&n(2.0), &n(1.0), "gt").unwrap());
        assert!(compare(&Observed::Text("exact".into()), &Observed::Text("exact".into()), "eq").unwrap());
        assert!(compare(&n(1.0), &n(1.0), "median").is_err());
        assert!(compare(&n(1.0), &n(1.0), "abs").is_err());
    }

    #[test]
    fn manifest_parsing() {
        let ok = "# comment\nid\tinvocation\textractor\texpected\ttolerance\tprovenance\n\
                  a\trelu-rate --depth 3\tcsv:-1:layer\t3\teq\ttrivial\n";
        assert_eq!(parse_manifest(ok).unwrap().len(), 1);
        assert!(parse_manifest("id\tinvocation\n").is_err());
        let dup = format!("{ok}a\trelu-rate --depth 3\tcsv:-1:layer\t3\teq\ttrivial\n");
        assert!(parse_manifest(&dup).is_err());
        let bad = ok.replace("trivial", "guessed");
        assert!(parse_manifest(&bad).is_err());
    }

    #[test]
    fn builtin_manifest_covers_required_claims() {
        let checks = parse_manifest(BUILTIN_MANIFEST).unwrap();
        assert_eq!(coverage(&checks), Vec::<String>::new());
    }

    #[test]
    fn references_resolve_to_earlier_checks() {
        let text = "id\tinvocation\textractor\texpected\ttolerance\tprovenance\n\
                    a\trelu-rate --depth 4\tcsv:-1:layer\t4\teq\ttrivial\n\
                    b\trelu-rate --depth 5\tcsv:-1:layer\t@a\tgt\ttrivial\n\
                    c\trelu-rate --depth 5\tcsv:-1:layer\t@zzz\tgt\ttrivial\n\
                    d\tno-such-command\tcsv:-1:layer\t1\teq\ttrivial\n";
        let out = run_manifest(text, &QuadratureConfig::default()).unwrap();
        assert_eq!(out.failed_ids(), vec!["c", "d"]);
        assert!(!out.all_pass);
        assert!(out.markdown.contains("usage error"));
    }
}
