//! The infinite-width kernel recursions.
//!
//! For bias variance `sigma_b^2` and weight variance `sigma_w^2`:
//!
//! ```text
//! F(x)  = sigma_b^2 + sigma_w^2 E[phi(sqrt(x) Z)^2]                      variance map
//! f(c)  = (sigma_b^2 + sigma_w^2 E[phi(U1) phi(U2(c))]) / q               correlation map
//! f'(c) = sigma_w^2 E[phi'(U1) phi'(U2(c))]
//! f''(c)= sigma_w^2 q E[phi''(U1) phi''(U2(c))]
//! ```
//!
//! with `U1 = sqrt(q) Z1`, `U2(c) = sqrt(q) (c Z1 + sqrt(1 - c^2) Z2)`.
//! `chi1 = f'(1)` and `alpha = F'(q)` set the depth scales.

use crate::activation::Activation;
use crate::error::{domain, Error, Result};
use crate::quadrature::{legendre_rule, Engine, Fun, QuadratureConfig};
use serde::{Deserialize, Serialize};

/// Iteration stops once `|x_{n+1} - x_n| < FIXED_POINT_TOL (1 + x_n)`.
pub const FIXED_POINT_TOL: f64 = 1e-12;
pub const FIXED_POINT_MAX_ITERS: usize = 10_000;
/// Variances above this are reported as divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;
/// Starting point for the least fixed point of `F`.
pub const MINIMAL_START: f64 = 1e-8;
/// Step of the central difference used for `f''` when `phi''` is a measure.
pub const SECOND_DERIVATIVE_STEP: f64 = 1e-4;

const GAP_RULE_ORDER: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldParams {
    pub sigma_b2: f64,
    pub sigma_w2: f64,
}

impl MeanFieldParams {
    pub fn new(sigma_b2: f64, sigma_w2: f64) -> Result<Self> {
        if !sigma_b2.is_finite() || sigma_b2 < 0.0 {
            return Err(Error::Config(format!("sigma_b^2 must be finite and >= 0, got {sigma_b2}")));
        }
        if !sigma_w2.is_finite() || sigma_w2 <= 0.0 {
            return Err(Error::Config(format!("sigma_w^2 must be finite and > 0, got {sigma_w2}")));
        }
        Ok(Self { sigma_b2, sigma_w2 })
    }

    /// From standard deviations `(sigma_b, sigma_w)`.
    pub fn from_std(sigma_b: f64, sigma_w: f64) -> Result<Self> {
        Self::new(sigma_b * sigma_b, sigma_w * sigma_w)
    }

    pub fn sigma_b(&self) -> f64 {
        self.sigma_b2.sqrt()
    }

    pub fn sigma_w(&self) -> f64 {
        self.sigma_w2.sqrt()
    }
}

/// Variances and correlation of two inputs' pre-activations at one layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelState {
    pub layer: usize,
    pub q_a: f64,
    pub q_b: f64,
    pub c_ab: f64,
    /// `1 - c_ab`, tracked separately so it keeps full relative precision
    /// when the correlation is within rounding distance of one.
    pub corr_gap: f64,
}

impl KernelState {
    pub fn new(layer: usize, q_a: f64, q_b: f64, c_ab: f64) -> Result<Self> {
        if !(q_a >= 0.0 && q_b >= 0.0) {
            return domain(format!("variances must be >= 0, got ({q_a}, {q_b})"));
        }
        if !(c_ab.abs() <= 1.0 + 1e-12) {
            return domain(format!("correlation must lie in [-1, 1], got {c_ab}"));
        }
        let c_ab = c_ab.clamp(-1.0, 1.0);
        Ok(Self { layer, q_a, q_b, c_ab, corr_gap: 1.0 - c_ab })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthScales {
    pub chi1: f64,
    pub alpha: f64,
    #[serde(with = "crate::nonfinite")]
    pub eps_c: f64,
    #[serde(with = "crate::nonfinite")]
    pub eps_q: f64,
}

/// Depth over which a perturbation decays at the given per-layer rate:
/// `-1 / log(rate)`, infinite at rate one. For rates above one it is the
/// e-folding depth of the growth.
pub fn depth_scale(rate: f64) -> f64 {
    let r = rate.abs();
    if (r - 1.0).abs() < 1e-9 {
        f64::INFINITY
    } else if r == 0.0 {
        0.0
    } else {
        1.0 / r.ln().abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedPointStatus {
    Converged,
    Diverged,
    MaxIters,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub q: f64,
    pub iters: usize,
    pub status: FixedPointStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropagationMode {
    /// Propagate `(q_a, q_b, c_ab)` jointly through the exact recursion.
    Layerwise,
    /// Hold `q` at a fixed point of `F` and iterate `c <- f(c)`.
    Homogeneous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelTrace {
    pub states: Vec<KernelState>,
    /// Set when a variance exceeded the divergence threshold; `states` then
    /// stops at the last finite layer.
    pub diverged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecondDerivativePath {
    /// `sigma_w^2 q E[phi''(U1) phi''(U2)]`.
    Analytic,
    /// Central difference of `f'`.
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondDerivative {
    pub value: f64,
    pub path: SecondDerivativePath,
}

/// An activation with initialisation variances and a quadrature setting.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanField {
    pub activation: Activation,
    pub params: MeanFieldParams,
    pub quad: QuadratureConfig,
}

impl MeanField {
    pub fn new(activation: Activation, params: MeanFieldParams) -> Self {
        Self { activation, params, quad: QuadratureConfig::default() }
    }

    pub fn with_quadrature(mut self, quad: QuadratureConfig) -> Self {
        self.quad = quad;
        self
    }

    fn engine(&self) -> Result<Engine> {
        Engine::new(&self.quad)
    }

    /// `F(x) = sigma_b^2 + sigma_w^2 E[phi(sqrt(x) Z)^2]`.
    pub fn variance_map(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0) || !x.is_finite() {
            return domain(format!("variance map needs finite x >= 0, got {x}"));
        }
        let phi = &self.activation;
        let g = Fun::with_breakpoints(|t| phi.value(t).powi(2), &phi.breakpoints);
        let m = self.engine()?.affine(&g, 0.0, x.sqrt())?;
        Ok(self.params.sigma_b2 + self.params.sigma_w2 * m)
    }

    /// `F'(x)` in the integration-by-parts form
    /// `sigma_w^2 E[Z phi'(sqrt(x) Z) phi(sqrt(x) Z)] / sqrt(x)`, which needs
    /// only `phi'` and so also covers kinked activations.
    pub fn variance_map_derivative(&self, x: f64) -> Result<f64> {
        if !(x > 0.0) || !x.is_finite() {
            return domain(format!("variance map derivative needs x > 0, got {x}"));
        }
        let phi = &self.activation;
        let g = Fun::with_breakpoints(|t| t * phi.d1(t) * phi.value(t) / x, &phi.breakpoints);
        Ok(self.params.sigma_w2 * self.engine()?.affine(&g, 0.0, x.sqrt())?)
    }

    /// `F'(x) = sigma_w^2 E[phi'^2 + phi'' phi]`; `None` without `phi''`.
    pub fn variance_map_derivative_smooth(&self, x: f64) -> Option<Result<f64>> {
        let phi = &self.activation;
        if !phi.has_d2() {
            return None;
        }
        if !(x >= 0.0) {
            return Some(domain(format!("x must be >= 0, got {x}")));
        }
        let g = Fun::with_breakpoints(
            |t| phi.d1(t).powi(2) + phi.d2(t).unwrap_or(0.0) * phi.value(t),
            &phi.breakpoints,
        );
        Some(
            self.engine()
                .and_then(|e| e.affine(&g, 0.0, x.sqrt()))
                .map(|m| self.params.sigma_w2 * m),
        )
    }

    /// Picard iteration `x <- F(x)` from `x0`.
    pub fn variance_fixed_point(&self, x0: f64) -> Result<FixedPoint> {
        if !(x0 >= 0.0) || !x0.is_finite() {
            return domain(format!("starting variance must be finite and >= 0, got {x0}"));
        }
        let mut x = x0;
        for iters in 1..=FIXED_POINT_MAX_ITERS {
            let next = self.variance_map(x)?;
            if next > DIVERGENCE_THRESHOLD {
                return Ok(FixedPoint { q: next, iters, status: FixedPointStatus::Diverged });
            }
            if (next - x).abs() < FIXED_POINT_TOL * (1.0 + x) {
                return Ok(FixedPoint { q: next, iters, status: FixedPointStatus::Converged });
            }
            x = next;
        }
        Ok(FixedPoint { q: x, iters: FIXED_POINT_MAX_ITERS, status: FixedPointStatus::MaxIters })
    }

    /// Least fixed point of `F`, reached by iterating from just above zero;
    /// `F` is non-decreasing in the regimes of interest so the iterates
    /// increase monotonically towards it.
    pub fn minimal_fixed_point(&self) -> Result<FixedPoint> {
        self.variance_fixed_point(MINIMAL_START)
    }

    fn check_corr(x: f64, q: f64) -> Result<f64> {
        if !(q > 0.0) || !q.is_finite() {
            return domain(format!("correlation map needs q > 0, got {q}"));
        }
        if !(x.abs() <= 1.0 + 1e-12) {
            return domain(format!("correlation must lie in [-1, 1], got {x}"));
        }
        Ok(x.clamp(-1.0, 1.0))
    }

    /// `f(x) = (sigma_b^2 + sigma_w^2 E[phi(U1) phi(U2(x))]) / q`.
    pub fn correlation_map(&self, x: f64, q: f64) -> Result<f64> {
        let x = Self::check_corr(x, q)?;
        let phi = &self.activation;
        let g = Fun::with_breakpoints(|t| phi.value(t), &phi.breakpoints);
        let m = self.engine()?.expect2(&g, &g, q, q, x)?;
        Ok((self.params.sigma_b2 + self.params.sigma_w2 * m) / q)
    }

    /// `f'(x) = sigma_w^2 E[phi'(U1) phi'(U2(x))]`.
    pub fn correlation_map_derivative(&self, x: f64, q: f64) -> Result<f64> {
        let x = Self::check_corr(x, q)?;
        let phi = &self.activation;
        let g = Fun::with_breakpoints(|t| phi.d1(t), &phi.breakpoints);
        Ok(self.params.sigma_w2 * self.engine()?.expect2(&g, &g, q, q, x)?)
    }

    /// `f''(x)`, analytic when `phi''` exists, otherwise a central difference
    /// of [`Self::correlation_map_derivative`].
    pub fn correlation_map_second(&self, x: f64, q: f64) -> Result<SecondDerivative> {
        let x = Self::check_corr(x, q)?;
        if x >= 1.0 {
            return domain("second derivative of the correlation map needs x < 1");
        }
        let phi = &self.activation;
        if phi.has_d2() {
            let g = Fun::with_breakpoints(|t| phi.d2(t).unwrap_or(0.0), &phi.breakpoints);
            let m = self.engine()?.expect2(&g, &g, q, q, x)?;
            return Ok(SecondDerivative {
                value: self.params.sigma_w2 * q * m,
                path: SecondDerivativePath::Analytic,
            });
        }
        let h = SECOND_DERIVATIVE_STEP.min(0.5 * (1.0 - x));
        let up = self.correlation_map_derivative(x + h, q)?;
        let down = self.correlation_map_derivative(x - h, q)?;
        Ok(SecondDerivative { value: (up - down) / (2.0 * h), path: SecondDerivativePath::FiniteDifference })
    }

    /// `1 - f(1 - gap)` computed as `int_{1-gap}^1 f'(t) dt` (substituting
    /// `t = 1 - u^2`), so it keeps full relative precision for tiny gaps.
    /// Assumes `q` is a fixed point of `F`, i.e. `f(1) = 1`.
    pub fn correlation_gap(&self, gap: f64, q: f64) -> Result<f64> {
        if !(0.0..=2.0).contains(&gap) {
            return domain(format!("correlation gap must lie in [0, 2], got {gap}"));
        }
        if gap == 0.0 {
            return Ok(0.0);
        }
        let umax = gap.sqrt();
        let rule = legendre_rule(GAP_RULE_ORDER);
        let mut total = 0.0;
        for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
            let u = 0.5 * umax * (x + 1.0);
            total += w * self.correlation_map_derivative(1.0 - u * u, q)? * 2.0 * u;
        }
        Ok(0.5 * umax * total)
    }

    /// `chi1 = sigma_w^2 E[phi'(sqrt(q) Z)^2]`.
    pub fn chi1(&self, q: f64) -> Result<f64> {
        if !(q >= 0.0) {
            return domain(format!("q must be >= 0, got {q}"));
        }
        let phi = &self.activation;
        if q == 0.0 {
            return Ok(self.params.sigma_w2 * at_origin(phi));
        }
        let g = Fun::with_breakpoints(|t| phi.d1(t).powi(2), &phi.breakpoints);
        Ok(self.params.sigma_w2 * self.engine()?.affine(&g, 0.0, q.sqrt())?)
    }

    /// `alpha = F'(q)`: `chi1 + sigma_w^2 E[phi'' phi]` when `phi''` exists,
    /// the integration-by-parts form otherwise.
    pub fn alpha(&self, q: f64) -> Result<f64> {
        if !(q >= 0.0) {
            return domain(format!("q must be >= 0, got {q}"));
        }
        if q == 0.0 {
            return Ok(self.params.sigma_w2 * at_origin(&self.activation));
        }
        match self.variance_map_derivative_smooth(q) {
            Some(v) => v,
            None => self.variance_map_derivative(q),
        }
    }

    pub fn depth_scales(&self, q: f64) -> Result<DepthScales> {
        let chi1 = self.chi1(q)?;
        let alpha = self.alpha(q)?;
        Ok(DepthScales { chi1, alpha, eps_c: depth_scale(chi1), eps_q: depth_scale(alpha) })
    }

    /// Propagates a kernel state through `depth - 1` further layers.
    pub fn iterate_kernel(
        &self,
        initial: KernelState,
        depth: usize,
        mode: PropagationMode,
    ) -> Result<KernelTrace> {
        if depth == 0 {
            return domain("depth must be >= 1");
        }
        let mut states = Vec::with_capacity(depth);
        states.push(initial);
        match mode {
            PropagationMode::Layerwise => {
                let phi = &self.activation;
                let g = Fun::with_breakpoints(|t| phi.value(t), &phi.breakpoints);
                let engine = self.engine()?;
                let mut cur = initial;
                while states.len() < depth {
                    let q_a = self.variance_map(cur.q_a)?;
                    let q_b = self.variance_map(cur.q_b)?;
                    if q_a > DIVERGENCE_THRESHOLD || q_b > DIVERGENCE_THRESHOLD {
                        return Ok(KernelTrace { states, diverged: true });
                    }
                    let cov = self.params.sigma_b2
                        + self.params.sigma_w2 * engine.expect2(&g, &g, cur.q_a, cur.q_b, cur.c_ab)?;
                    let denom = (q_a * q_b).sqrt();
                    let c = if denom > 0.0 { (cov / denom).clamp(-1.0, 1.0) } else { 1.0 };
                    cur = KernelState { layer: cur.layer + 1, q_a, q_b, c_ab: c, corr_gap: 1.0 - c };
                    states.push(cur);
                }
            }
            PropagationMode::Homogeneous => {
                let q = initial.q_a;
                let fq = self.variance_map(q)?;
                if !(q > 0.0) || (fq - q).abs() > 1e-8 * (1.0 + q) {
                    return domain(format!(
                        "homogeneous propagation needs q at a fixed point of F (F({q}) = {fq})"
                    ));
                }
                let mut cur = KernelState { q_b: q, ..initial };
                cur.corr_gap = initial.corr_gap;
                while states.len() < depth {
                    let (c, gap) = if cur.corr_gap < 0.5 {
                        let gap = self.correlation_gap(cur.corr_gap, q)?;
                        (1.0 - gap, gap)
                    } else {
                        let c = self.correlation_map(cur.c_ab, q)?.clamp(-1.0, 1.0);
                        (c, 1.0 - c)
                    };
                    cur = KernelState { layer: cur.layer + 1, q_a: q, q_b: q, c_ab: c, corr_gap: gap };
                    states.push(cur);
                }
            }
        }
        Ok(KernelTrace { states, diverged: false })
    }
}

/// `lim_{q -> 0} E[phi'(sqrt(q) Z)^2] = (phi'(0+)^2 + phi'(0-)^2) / 2`.
fn at_origin(phi: &Activation) -> f64 {
    0.5 * (phi.d1_at_zero_right.powi(2) + phi.d1_at_zero_left.powi(2))
}

/// Grid supremum of `E|phi'(xZ)^2 + phi''(xZ) phi(xZ)|` over scales
/// `x in (0, x_max]`; activations without `phi''` use the absolute value of
/// the integration-by-parts integrand `Z phi'(xZ) phi(xZ) / x`.
pub fn m_phi_sup(phi: &Activation, x_max: f64, grid: usize, quad: &QuadratureConfig) -> Result<f64> {
    if !(x_max > 0.0) || grid < 2 {
        return domain("m_phi_sup needs x_max > 0 and grid >= 2");
    }
    let engine = Engine::new(quad)?;
    let mut sup: f64 = 0.0;
    for i in 1..=grid {
        let x = x_max * i as f64 / grid as f64;
        let v = if phi.has_d2() {
            let g = Fun::with_breakpoints(
                |t| (phi.d1(t).powi(2) + phi.d2(t).unwrap_or(0.0) * phi.value(t)).abs(),
                &phi.breakpoints,
            );
            engine.affine(&g, 0.0, x)?
        } else {
            let g = Fun::with_breakpoints(|t| (t * phi.d1(t) * phi.value(t)).abs() / (x * x), &phi.breakpoints);
            engine.affine(&g, 0.0, x)?
        };
        sup = sup.max(v);
    }
    Ok(sup)
}

/// Grid supremum of `E|phi'(x Z1) phi'(y (c Z1 + sqrt(1 - c^2) Z2))|` over
/// scales `x, y in [0, q_max]` with `|x - y| <= delta` and `c in [0, 1]`.
pub fn c_phi_sup(
    phi: &Activation,
    delta: f64,
    q_max: f64,
    grid: usize,
    quad: &QuadratureConfig,
) -> Result<f64> {
    if !(q_max > 0.0) || grid < 2 || !(delta >= 0.0) {
        return domain("c_phi_sup needs q_max > 0, delta >= 0 and grid >= 2");
    }
    let engine = Engine::new(quad)?;
    let g = Fun::with_breakpoints(|t| phi.d1(t).abs(), &phi.breakpoints);
    let axis: Vec<f64> = (0..grid).map(|i| q_max * i as f64 / (grid - 1) as f64).collect();
    let mut sup: f64 = 0.0;
    for &x in &axis {
        for &y in axis.iter().filter(|&&y| (x - y).abs() <= delta) {
            for k in 0..grid {
                let c = k as f64 / (grid - 1) as f64;
                // expect2 takes variances; the supremum is over scales.
                sup = sup.max(engine.expect2(&g, &g, x * x, y * y, c)?);
            }
        }
    }
    Ok(sup)
}
