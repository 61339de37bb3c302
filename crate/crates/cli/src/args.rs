use clap::{Args, Parser, Subcommand};
use eoclab::Activation;
use std::path::PathBuf;
use std::str::FromStr;

#[derive(Debug, Parser)]
#[command(name = "eoc-lab", version, about = "Mean-field analysis of wide random networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// `LO:HI:N`, `N` points with both ends included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        if self.n == 1 {
            return vec![self.lo];
        }
        let span = self.hi - self.lo;
        let last = (self.n - 1) as f64;
        (0..self.n).map(|i| self.lo + span * i as f64 / last).collect()
    }
}

impl FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let [lo, hi, n] = parts.as_slice() else {
            return Err(format!("expected LO:HI:N, got {s:?}"));
        };
        let lo: f64 = lo.parse().map_err(|_| format!("bad grid start {lo:?}"))?;
        let hi: f64 = hi.parse().map_err(|_| format!("bad grid end {hi:?}"))?;
        let n: usize = n.parse().map_err(|_| format!("bad grid count {n:?}"))?;
        if !lo.is_finite() || !hi.is_finite() || n == 0 || lo > hi || (n == 1 && lo != hi) {
            return Err(format!("grid {s:?} needs finite LO <= HI, N >= 1, and LO = HI when N = 1"));
        }
        Ok(Self { lo, hi, n })
    }
}

/// `LO:HI`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl FromStr for Range {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (lo, hi) = s.split_once(':').ok_or_else(|| format!("expected LO:HI, got {s:?}"))?;
        let lo: f64 = lo.parse().map_err(|_| format!("bad range start {lo:?}"))?;
        let hi: f64 = hi.parse().map_err(|_| format!("bad range end {hi:?}"))?;
        Ok(Self { lo, hi })
    }
}

pub fn parse_activation(s: &str) -> Result<Activation, String> {
    s.parse().map_err(|e: eoclab::Error| e.to_string())
}

/// Comma-separated list of values.
pub fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>, String> {
    s.split(',')
        .map(|v| v.trim().parse().map_err(|_| format!("bad list entry {v:?}")))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloatList(pub Vec<f64>);

impl FromStr for FloatList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        parse_list(s).map(Self)
    }
}

#[derive(Debug, Clone, Args)]
pub struct ActivationArg {
    /// relu, relu_like:<lambda>:<beta>, tanh, hard_tanh, swish, elu, arctan or linear.
    #[arg(long, value_parser = parse_activation)]
    pub activation: Activation,
}

/// Initialisation as standard deviations.
#[derive(Debug, Clone, Args)]
pub struct ParamArgs {
    #[arg(long, default_value_t = 0.0)]
    pub sigma_b: f64,
    /// Required unless --on-eoc is given.
    #[arg(long, conflicts_with = "on_eoc")]
    pub sigma_w: Option<f64>,
    /// Take sigma_w, and the default q, from the edge of chaos at --sigma-b.
    #[arg(long)]
    pub on_eoc: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Edge-of-chaos points over a sigma_b grid (JSON list).
    Eoc {
        #[command(flatten)]
        act: ActivationArg,
        #[arg(long)]
        sigma_b_grid: Grid,
    },
    /// Fixed point of the variance map (JSON).
    FixedPoint {
        #[command(flatten)]
        act: ActivationArg,
        #[command(flatten)]
        params: ParamArgs,
        /// Starting variance; defaults to the minimal-fixed-point start.
        #[arg(long)]
        x0: Option<f64>,
    },
    /// Correlation map and its first two derivatives on [0, x-max] (CSV).
    CorrFn {
        #[command(flatten)]
        act: ActivationArg,
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long, default_value_t = 101)]
        grid: usize,
        #[arg(long, default_value_t = 1.0)]
        x_max: f64,
        /// Variance; defaults to the fixed point.
        #[arg(long)]
        q: Option<f64>,
    },
    /// Kernel recursion from layer-1 correlation c0 (CSV).
    Iterate {
        #[command(flatten)]
        act: ActivationArg,
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long)]
        c0: f64,
        #[arg(long)]
        depth: usize,
        /// Propagate variances jointly instead of holding q at its fixed point.
        #[arg(long)]
        layerwise: bool,
        /// Layer-1 variance; defaults to the fixed point.
        #[arg(long)]
        q0: Option<f64>,
    },
    /// chi1, alpha and the two depth scales (JSON).
    DepthScales {
        #[command(flatten)]
        act: ActivationArg,
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long)]
        q: Option<f64>,
    },
    /// Scaled ReLU correlation gap l^2 (1 - c^l) on the edge of chaos (CSV).
    ReluRate {
        #[arg(long)]
        depth: usize,
        #[arg(long, default_value_t = 0.1)]
        c0: f64,
        /// Emit every stride-th layer; layers 1 and depth are always emitted.
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
    /// Sufficient-condition report over a sigma_b grid (JSON).
    Check {
        #[command(flatten)]
        act: ActivationArg,
        #[arg(long)]
        sigma_b_grid: Grid,
        #[arg(long, default_value_t = 50)]
        x_grid: usize,
    },
    /// Finite-width Monte-Carlo moments (CSV) or an output field (CSV).
    Simulate {
        #[command(flatten)]
        act: ActivationArg,
        #[command(flatten)]
        params: ParamArgs,
        /// One width for every layer, or a comma-separated list.
        #[arg(long)]
        widths: String,
        /// Required with a single width; must match a list.
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long, default_value_t = 1)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        input_dim: usize,
        /// Layer-1 variance of both inputs.
        #[arg(long, default_value_t = 1.0)]
        q1: f64,
        /// Layer-1 correlation of the two inputs.
        #[arg(long, default_value_t = 0.2)]
        c1: f64,
        /// Emit the last-layer output of neuron 0 over the square LO:HI:N grid.
        #[arg(long)]
        field: Option<Grid>,
    },
    /// sup |f(x) - x| with the sigma_b^2/q bound over a sigma_b grid (CSV).
    SupDev {
        #[command(flatten)]
        act: ActivationArg,
        #[arg(long)]
        sigma_b_grid: Grid,
        #[arg(long, default_value_t = 101)]
        x_grid: usize,
    },
    /// Hard-Tanh variance map: closed forms against quadrature (CSV).
    HardtanhVariance {
        #[arg(long, default_value = "0.25,0.5,1,2,4,8")]
        x: FloatList,
        #[arg(long, default_value_t = 0.0)]
        sigma_b: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma_w: f64,
    },
    /// Hard-Tanh f'': closed form against a central difference of f' (CSV).
    HardtanhCurvature {
        #[arg(long, default_value_t = 1.0)]
        q: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma_w: f64,
        #[arg(long, default_value = "0:0.9:10")]
        x_grid: Grid,
    },
    /// Growth constants M_phi and C_phi,delta (JSON).
    Bounds {
        #[command(flatten)]
        act: ActivationArg,
        #[arg(long, default_value_t = 0.5)]
        delta: f64,
        #[arg(long, default_value_t = 10.0)]
        x_max: f64,
        #[arg(long, default_value_t = 400)]
        grid: usize,
        /// Points per axis for C_phi,delta (cubic cost).
        #[arg(long, default_value_t = 21)]
        c_grid: usize,
    },
    /// Tail exponent of E[phi'(xZ)^2] (JSON).
    Tail {
        #[command(flatten)]
        act: ActivationArg,
        #[arg(long, default_value = "10:1000")]
        range: Range,
    },
    /// Runs the reproduction manifest and prints a markdown report.
    Repro {
        /// Defaults to the manifest compiled into the binary.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Also write the report to this file.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}
