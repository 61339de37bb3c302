//! Closed forms for piecewise-linear activations.
//!
//! ReLU on its edge of chaos `(sigma_b^2, sigma_w^2) = (0, 2)` has the
//! arc-cosine correlation map
//! `f(x) = (x asin(x) + sqrt(1 - x^2)) / pi + x / 2`,
//! and Hard-Tanh has closed-form variance map and `f''`.

use crate::error::{domain, Result};
use crate::meanfield::MeanFieldParams;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erfc};
use std::f64::consts::{FRAC_1_SQRT_2, PI};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn check_unit(x: f64) -> Result<()> {
    if !(x.abs() <= 1.0) {
        return domain(format!("argument must lie in [-1, 1], got {x}"));
    }
    Ok(())
}

pub fn relu_corr(x: f64) -> Result<f64> {
    check_unit(x)?;
    Ok((x * x.asin() + (1.0 - x * x).sqrt()) / PI + 0.5 * x)
}

pub fn relu_corr_prime(x: f64) -> Result<f64> {
    check_unit(x)?;
    Ok(x.asin() / PI + 0.5)
}

pub fn relu_corr_second(x: f64) -> Result<f64> {
    if !(x.abs() < 1.0) {
        return domain(format!("second derivative needs |x| < 1, got {x}"));
    }
    Ok(1.0 / (PI * (1.0 - x * x).sqrt()))
}

/// Coefficient `s` of the expansion `f(x) - x = s (1 - x)^{3/2} + O((1 - x)^{5/2})`.
pub fn relu_taylor_coefficient() -> f64 {
    2.0 * std::f64::consts::SQRT_2 / (3.0 * PI)
}

/// Leading term `s (1 - x)^{3/2}` of `f(x) - x` near one.
pub fn relu_gap_taylor(x: f64) -> Result<f64> {
    if !(x > 0.9 && x <= 1.0) {
        return domain(format!("Taylor form is for x in (0.9, 1], got {x}"));
    }
    Ok(relu_taylor_coefficient() * (1.0 - x).powf(1.5))
}

/// `f(1 - gap) - (1 - gap)`, exact and free of cancellation.
///
/// With `theta = acos(1 - gap)` the excess is
/// `(theta (1 - cos theta) - (theta - sin theta)) / pi`; both terms are of
/// order `theta^3` with ratio 3, and `theta - sin theta` is summed as a series
/// for small `theta`.
pub fn relu_excess(gap: f64) -> Result<f64> {
    if !(0.0..=2.0).contains(&gap) {
        return domain(format!("gap must lie in [0, 2], got {gap}"));
    }
    let theta = 2.0 * (0.5 * gap).sqrt().asin();
    let one_minus_cos = gap;
    let theta_minus_sin = if theta < 0.25 {
        // theta^3/3! - theta^5/5! + ...; the 9th-order remainder is < 1e-17 relative.
        let t2 = theta * theta;
        let mut term = theta * t2 / 6.0;
        let mut sum = term;
        for k in 1..8 {
            term *= -t2 / ((2 * k + 2) as f64 * (2 * k + 3) as f64);
            sum += term;
        }
        sum
    } else {
        theta - theta.sin()
    };
    Ok((theta * one_minus_cos - theta_minus_sin) / PI)
}

/// `1 - c^l` for `l = 1..=depth` under `c <- f(c)` from `c^1 = c0`.
pub fn relu_gap_sequence(c0: f64, depth: usize) -> Result<Vec<f64>> {
    check_unit(c0)?;
    let mut gap = 1.0 - c0;
    let mut out = Vec::with_capacity(depth);
    for _ in 0..depth {
        out.push(gap);
        gap -= relu_excess(gap)?;
    }
    Ok(out)
}

/// `lim l^2 (1 - c^l) = 9 pi^2 / 2 = 4 / s^2`.
pub fn relu_rate_constant() -> f64 {
    4.5 * PI * PI
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Hard-Tanh variance map `F(x)` in exact form and in the two approximate
/// forms that circulate for it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardTanhVariance {
    /// `sigma_b^2 + sigma_w^2 (1 - 2 exp(-1/x) / sqrt(2 pi x))`.
    pub approx_exp_inv_x: f64,
    /// `sigma_b^2 + sigma_w^2 (1 - 2 exp(-1/(2x)) / sqrt(2 pi x))`.
    pub approx_exp_inv_2x: f64,
    /// `sigma_b^2 + sigma_w^2 E[HT(sqrt(x) Z)^2]`.
    pub exact: f64,
}

/// `E[HT(sqrt(x) Z)^2] = 2 (1 - Phi(a)) + x (2 Phi(a) - 1) - 2 sqrt(x) phi(a)`
/// with `a = 1 / sqrt(x)`: the saturated tails contribute 1 each, the linear
/// middle `x E[Z^2; |Z| < a]`.
pub fn hardtanh_second_moment(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return domain(format!("Hard-Tanh variance map needs finite x > 0, got {x}"));
    }
    let a = 1.0 / x.sqrt();
    let tail = erfc(a * FRAC_1_SQRT_2);
    let middle = erf(a * FRAC_1_SQRT_2);
    Ok(tail + x * middle - 2.0 * x.sqrt() * normal_pdf(a))
}

pub fn hardtanh_variance_map(x: f64, p: MeanFieldParams) -> Result<HardTanhVariance> {
    let m = hardtanh_second_moment(x)?;
    let scale = 2.0 * INV_SQRT_2PI / x.sqrt();
    Ok(HardTanhVariance {
        approx_exp_inv_x: p.sigma_b2 + p.sigma_w2 * (1.0 - scale * (-1.0 / x).exp()),
        approx_exp_inv_2x: p.sigma_b2 + p.sigma_w2 * (1.0 - scale * (-0.5 / x).exp()),
        exact: p.sigma_b2 + p.sigma_w2 * m,
    })
}

/// `E[HT'(sqrt(q) Z)^2] = 2 Phi(1/sqrt(q)) - 1`.
pub fn hardtanh_mean_square_slope(q: f64) -> Result<f64> {
    if !(q > 0.0) {
        return domain(format!("q must be > 0, got {q}"));
    }
    Ok(erf(FRAC_1_SQRT_2 / q.sqrt()))
}

/// `f''(x) = sigma_w^2 / (pi sqrt(1 - x^2)) (exp(-1/(q(1+x))) - exp(-1/(q(1-x))))`.
pub fn hardtanh_f_second(x: f64, q: f64, sigma_w2: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&x) {
        return domain(format!("Hard-Tanh f'' needs x in [0, 1), got {x}"));
    }
    if !(q > 0.0) {
        return domain(format!("q must be > 0, got {q}"));
    }
    let spread = (-1.0 / (q * (1.0 + x))).exp() - (-1.0 / (q * (1.0 - x))).exp();
    Ok(sigma_w2 / (PI * (1.0 - x * x).sqrt()) * spread)
}
