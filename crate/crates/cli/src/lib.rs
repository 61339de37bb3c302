//! Command-line front end for `eoclab`.
//!
//! [`run`] is the whole program behind `main`, taking the argument vector and
//! output streams so that tests and the reproduction harness can call it in
//! process. Exit codes: 0 success, 1 failed reproduction checks, 2 usage or
//! configuration error, 3 numeric failure (with a JSON diagnostic on stderr).

pub mod args;
mod commands;
pub mod output;
pub mod repro;

use clap::Parser;
use eoclab::{Error, QuadratureConfig};
use std::ffi::OsString;
use std::io::Write;

/// Overrides the default Gauss-Hermite order.
pub const QUAD_ORDER_ENV: &str = "EOC_LAB_QUAD_ORDER";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECKS_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Numeric(Error),
    /// Reproduction report with at least one failed check.
    Checks(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => Failure::Usage(msg),
            other => Failure::Numeric(other),
        }
    }
}

pub fn quadrature_from_env() -> Result<QuadratureConfig, Failure> {
    match std::env::var(QUAD_ORDER_ENV) {
        Ok(v) => {
            let order: usize =
                v.trim().parse().map_err(|_| Failure::Usage(format!("{QUAD_ORDER_ENV} must be an integer, got {v:?}")))?;
            Ok(QuadratureConfig::with_order(order)?)
        }
        Err(std::env::VarError::NotPresent) => Ok(QuadratureConfig::default()),
        Err(e) => Err(Failure::Usage(format!("{QUAD_ORDER_ENV}: {e}"))),
    }
}

/// Parses and runs one invocation, returning its standard output.
pub fn invoke<I, T>(argv: I, quad: &QuadratureConfig) -> Result<String, Failure>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = args::Cli::try_parse_from(argv).map_err(|e| Failure::Usage(e.to_string()))?;
    commands::execute(cli.command, quad)
}

fn diagnostic(e: &Error) -> String {
    let (kind, node) = match e {
        Error::Domain(_) => ("domain", None),
        Error::NonFinite { node } => ("non_finite", Some(*node)),
        Error::Config(_) => ("config", None),
    };
    output::to_json(&serde_json::json!({
        "error": kind,
        "message": e.to_string(),
        "node": node.filter(|v| v.is_finite()),
    }))
}

pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    // Help and version requests are not errors.
    if let Err(e) = args::Cli::try_parse_from(&argv) {
        if !e.use_stderr() {
            let _ = write!(stdout, "{e}");
            return EXIT_OK;
        }
    }
    let result = quadrature_from_env().and_then(|quad| invoke(&argv, &quad));
    let (code, out, err) = match result {
        Ok(text) => (EXIT_OK, text, String::new()),
        Err(Failure::Usage(msg)) => (EXIT_USAGE, String::new(), ensure_newline(msg)),
        Err(Failure::Numeric(e)) => (EXIT_NUMERIC, String::new(), diagnostic(&e)),
        Err(Failure::Checks(report)) => {
            (EXIT_CHECKS_FAILED, report, "reproduction checks failed\n".to_string())
        }
    };
    if stdout.write_all(out.as_bytes()).and_then(|_| stdout.flush()).is_err() {
        return EXIT_USAGE;
    }
    let _ = stderr.write_all(err.as_bytes());
    code
}

fn ensure_newline(mut s: String) -> String {
    if !s.ends_with('\n') {
        s.push('\n');
    }
    s
}
