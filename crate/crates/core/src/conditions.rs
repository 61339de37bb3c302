//! Numerical checks of the sufficient conditions under which the correlation
//! map on the edge of chaos approaches the identity as `sigma_b -> 0`:
//!
//! 1. `phi(0) = 0`, one-sided derivatives at 0 not both zero, `|phi(x)| <= k|x|`;
//! 2. an edge-of-chaos point exists for every `sigma_b` on the grid;
//! 3. `F` is non-decreasing there and `q -> 0` as `sigma_b -> 0`;
//! 4. `f` is convex on `[0, 1]`.
//!
//! Every verdict is stored next to the evidence it was derived from.

use crate::activation::{growth_bound, Activation};
use crate::eoc::{EocPoint, EocSolver, EocStatus};
use crate::error::{domain, Result};
use crate::meanfield::MeanField;
use crate::quadrature::{expect1_wide, Fun, QuadratureConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Lowest accepted `F'` on `[0, 2q]`.
pub const MONOTONE_TOLERANCE: f64 = -1e-8;
/// Lowest accepted `f''` on `[0, CONVEX_X_MAX]`.
pub const CONVEX_TOLERANCE: f64 = -1e-6;
/// `f''` is singular at one for kinked activations; the check stops here.
pub const CONVEX_X_MAX: f64 = 0.99;
/// Minimum log-log slope of `q` against `sigma_b` between the two smallest
/// grid values accepted as evidence that `q -> 0`.
pub const QLIMIT_MIN_SLOPE: f64 = 0.5;
/// Half width of the grid on which `|phi(x)/x|` is bounded.
pub const GROWTH_DOMAIN: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginCondition {
    pub pass: bool,
    pub zero_at_zero: bool,
    pub d1_right: f64,
    pub d1_left: f64,
    /// Grid supremum of `|phi(x)/x|` on `[-GROWTH_DOMAIN, GROWTH_DOMAIN]`.
    pub growth_bound_k: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExistenceCondition {
    /// Every point has status exact or numeric.
    pub pass: bool,
    pub points: Vec<EocPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneCondition {
    pub pass: bool,
    /// Smallest `F'` seen over all checked points.
    #[serde(with = "crate::nonfinite")]
    pub min_derivative: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QLimitCondition {
    pub pass: bool,
    /// `(sigma_b, q)` for the points with an edge-of-chaos solution.
    pub table: Vec<(f64, f64)>,
    /// `q` strictly decreasing as `sigma_b` decreases.
    pub monotone: bool,
    /// `d log q / d log sigma_b` between the two smallest `sigma_b`.
    pub slope: Option<f64>,
    pub min_slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexCondition {
    pub pass: bool,
    #[serde(with = "crate::nonfinite")]
    pub min_second_derivative: f64,
    pub x_max: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupDeviation {
    pub sigma_b: f64,
    /// `max_x |f(x) - x|` over the grid.
    pub sup_dev: f64,
    /// `sigma_b^2 / q`. Equals `f(0)` only when `E[phi(sqrt(q) Z)] = 0`.
    pub bound: f64,
    /// `f(0) = (sigma_b^2 + sigma_w^2 E[phi(sqrt(q) Z)]^2) / q`, the supremum
    /// of `f(x) - x` whenever `f' <= 1` on `[0, 1]`.
    pub f_at_zero: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub activation_id: String,
    pub cond_i: OriginCondition,
    pub cond_ii: ExistenceCondition,
    pub cond_iii_monotone: MonotoneCondition,
    pub cond_iii_qlimit: QLimitCondition,
    pub cond_iv_convex: ConvexCondition,
    pub sup_dev: Vec<SupDeviation>,
    /// `sup_dev` strictly increasing in `sigma_b`.
    pub sup_dev_increasing: bool,
}

impl ConditionReport {
    pub fn all_pass(&self) -> bool {
        self.cond_i.pass
            && self.cond_ii.pass
            && self.cond_iii_monotone.pass
            && self.cond_iii_qlimit.pass
            && self.cond_iv_convex.pass
    }
}

fn grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
}

pub fn origin_condition(phi: &Activation) -> OriginCondition {
    let k = growth_bound(phi, GROWTH_DOMAIN).ok().filter(|k| k.is_finite());
    let nonzero = phi.d1_at_zero_right != 0.0 || phi.d1_at_zero_left != 0.0;
    OriginCondition {
        pass: phi.zero_at_zero && nonzero && k.is_some(),
        zero_at_zero: phi.zero_at_zero,
        d1_right: phi.d1_at_zero_right,
        d1_left: phi.d1_at_zero_left,
        growth_bound_k: k,
    }
}

/// `max |f(x) - x|` over `grid_size` points of `[0, 1]` at the given point.
pub fn sup_deviation(
    phi: &Activation,
    point: &EocPoint,
    grid_size: usize,
    quad: &QuadratureConfig,
) -> Result<SupDeviation> {
    if !point.found() || !(point.q > 0.0) {
        return domain(format!("sup deviation needs a solved point with q > 0 (sigma_b = {})", point.sigma_b));
    }
    if grid_size < 2 {
        return domain("grid size must be >= 2");
    }
    let mf = MeanField::new(phi.clone(), point.params()?).with_quadrature(*quad);
    let mut sup: f64 = 0.0;
    let mut f_at_zero = f64::NAN;
    for x in grid(0.0, 1.0, grid_size) {
        let fx = mf.correlation_map(x, point.q)?;
        if x == 0.0 {
            f_at_zero = fx;
        }
        sup = sup.max((fx - x).abs());
    }
    Ok(SupDeviation {
        sigma_b: point.sigma_b,
        sup_dev: sup,
        bound: point.sigma_b.powi(2) / point.q,
        f_at_zero,
    })
}

struct PointEvidence {
    min_derivative: f64,
    min_second: f64,
    sup: SupDeviation,
}

fn point_evidence(
    phi: &Activation,
    point: &EocPoint,
    grid_size: usize,
    quad: &QuadratureConfig,
) -> Result<PointEvidence> {
    let mf = MeanField::new(phi.clone(), point.params()?).with_quadrature(*quad);
    let mut min_derivative = f64::INFINITY;
    for x in grid(0.0, 2.0 * point.q, grid_size + 1).skip(1) {
        min_derivative = min_derivative.min(mf.variance_map_derivative(x)?);
    }
    let mut min_second = f64::INFINITY;
    for x in grid(0.0, CONVEX_X_MAX, grid_size) {
        min_second = min_second.min(mf.correlation_map_second(x, point.q)?.value);
    }
    let sup = sup_deviation(phi, point, grid_size, quad)?;
    Ok(PointEvidence { min_derivative, min_second, sup })
}

/// Runs all four checks over an ascending `sigma_b` grid. Dependent checks
/// are skipped at points without an edge-of-chaos solution.
pub fn check_conditions(
    phi: &Activation,
    sigma_b_grid: &[f64],
    x_grid_size: usize,
    quad: &QuadratureConfig,
) -> Result<ConditionReport> {
    if sigma_b_grid.is_empty() {
        return domain("sigma_b grid must be nonempty");
    }
    if x_grid_size < 2 {
        return domain("x grid size must be >= 2");
    }
    let curve = EocSolver::with_quadrature(*quad).curve(phi, sigma_b_grid)?;
    let found: Vec<&EocPoint> = curve.points.iter().filter(|p| p.found() && p.q > 0.0).collect();
    let evidence = found
        .par_iter()
        .map(|p| point_evidence(phi, p, x_grid_size, quad))
        .collect::<Result<Vec<_>>>()?;

    let existence_pass = curve
        .points
        .iter()
        .all(|p| matches!(p.status, EocStatus::Exact | EocStatus::Numeric));

    let min_derivative = evidence.iter().map(|e| e.min_derivative).fold(f64::INFINITY, f64::min);
    let min_second = evidence.iter().map(|e| e.min_second).fold(f64::INFINITY, f64::min);

    let table: Vec<(f64, f64)> = found.iter().map(|p| (p.sigma_b, p.q)).collect();
    let monotone = table.len() >= 2 && table.windows(2).all(|w| w[1].1 > w[0].1);
    let slope = (table.len() >= 2 && table[0].0 > 0.0)
        .then(|| (table[1].1 / table[0].1).ln() / (table[1].0 / table[0].0).ln());
    let qlimit_pass = monotone && slope.is_some_and(|s| s >= QLIMIT_MIN_SLOPE);

    let sup_dev: Vec<SupDeviation> = evidence.iter().map(|e| e.sup).collect();
    let sup_dev_increasing = sup_dev.windows(2).all(|w| w[1].sup_dev > w[0].sup_dev);
    let have_evidence = !evidence.is_empty();

    Ok(ConditionReport {
        activation_id: phi.id.clone(),
        cond_i: origin_condition(phi),
        cond_ii: ExistenceCondition { pass: existence_pass, points: curve.points.clone() },
        cond_iii_monotone: MonotoneCondition {
            pass: have_evidence && min_derivative >= MONOTONE_TOLERANCE,
            min_derivative,
            tolerance: MONOTONE_TOLERANCE,
        },
        cond_iii_qlimit: QLimitCondition {
            pass: qlimit_pass,
            table,
            monotone,
            slope,
            min_slope: QLIMIT_MIN_SLOPE,
        },
        cond_iv_convex: ConvexCondition {
            pass: have_evidence && min_second >= CONVEX_TOLERANCE,
            min_second_derivative: min_second,
            x_max: CONVEX_X_MAX,
            tolerance: CONVEX_TOLERANCE,
        },
        sup_dev,
        sup_dev_increasing,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    /// `-slope / 2`: the `beta` in `E[phi'(xZ)^2] ~ x^{-2 beta}`.
    pub beta: f64,
    pub slope: f64,
    /// Scales actually used.
    pub x_lo: f64,
    pub x_hi: f64,
    /// Set when scales were dropped because the expectation underflowed.
    pub truncated: bool,
}

/// Least-squares slope of `log E[phi'(xZ)^2]` against `log x` over 41
/// log-spaced scales in `[x_lo, x_hi]`.
pub fn tail_exponent(phi: &Activation, x_lo: f64, x_hi: f64, quad: &QuadratureConfig) -> Result<TailFit> {
    if !(x_lo > 1.0 && x_hi > x_lo && x_hi < 1e3 + 1e-9) {
        return domain(format!("tail fit needs 1 < x_lo < x_hi <= 1e3, got ({x_lo}, {x_hi})"));
    }
    const POINTS: usize = 41;
    let g = Fun::with_breakpoints(|t| phi.d1(t).powi(2), &phi.breakpoints);
    let mut pts = Vec::with_capacity(POINTS);
    let mut truncated = false;
    for i in 0..POINTS {
        let x = x_lo * (x_hi / x_lo).powf(i as f64 / (POINTS - 1) as f64);
        let m = expect1_wide(&g, x, quad)?;
        if m > f64::MIN_POSITIVE {
            pts.push((x.ln(), m.ln()));
        } else {
            truncated = true;
        }
    }
    if pts.len() < 2 {
        return domain(format!("E[phi'(xZ)^2] underflows on the whole range for {}", phi.id));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    Ok(TailFit {
        beta: -0.5 * slope,
        slope,
        x_lo: pts[0].0.exp(),
        x_hi: pts[pts.len() - 1].0.exp(),
        truncated,
    })
}
