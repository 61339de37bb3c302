//! Edge-of-chaos solver: for a bias scale `sigma_b`, the weight scale
//! `sigma_w` at which `chi1 = sigma_w^2 E[phi'(sqrt(q) Z)^2] = 1`, with `q`
//! the least fixed point of the variance map.
//!
//! Piecewise-linear activations are solved in closed form. Everything else is
//! bracketed on a log-spaced grid of `sigma_w` and refined by bisection on
//! `r(sigma_w) = chi1(q(sigma_w)) - 1`. A candidate whose fixed-point iteration
//! diverges or stalls counts as `r > 0`.
//!
//! The sign change found that way is either a genuine root of `chi1 - 1` or
//! the saddle-node where the least fixed point of `F` merges with an unstable
//! one and disappears (`F(q) = q`, `F'(q) = 1`); beyond it the iteration
//! escapes to a larger fixed point or diverges. The two are told apart by the
//! residual at the converged end of the bracket and reported as
//! [`EocStatus::Numeric`] and [`EocStatus::Fold`] respectively.

use crate::activation::{Activation, ReluLikeParams};
use crate::error::{domain, Result};
use crate::meanfield::{depth_scale, FixedPointStatus, MeanField, MeanFieldParams};
use crate::quadrature::QuadratureConfig;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// `|chi1 - 1|` below which a bracketed sign change is accepted as a root.
pub const ROOT_RESIDUAL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EocStatus {
    /// Closed form.
    Exact,
    /// Bisection converged on a root of `chi1 - 1`.
    Numeric,
    /// Bisection converged on the disappearance of the least fixed point;
    /// `chi1 < 1` there.
    Fold,
    /// No sign change of the residual on the search interval.
    NotFound,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EocDiagnostics {
    /// Bracketing candidates whose fixed-point iteration diverged or hit the
    /// iteration cap.
    pub unconverged_candidates: usize,
    pub bisection_steps: usize,
    /// Picard iterations of the reported fixed point.
    pub fixed_point_iters: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EocPoint {
    pub sigma_b: f64,
    #[serde(with = "crate::nonfinite")]
    pub sigma_w: f64,
    #[serde(with = "crate::nonfinite")]
    pub q: f64,
    #[serde(with = "crate::nonfinite")]
    pub chi1: f64,
    #[serde(with = "crate::nonfinite")]
    pub alpha: f64,
    #[serde(with = "crate::nonfinite")]
    pub eps_q: f64,
    #[serde(with = "crate::nonfinite")]
    pub eps_c: f64,
    pub status: EocStatus,
    pub diagnostics: EocDiagnostics,
}

impl EocPoint {
    fn not_found(sigma_b: f64, diagnostics: EocDiagnostics) -> Self {
        Self {
            sigma_b,
            sigma_w: f64::NAN,
            q: f64::NAN,
            chi1: f64::NAN,
            alpha: f64::NAN,
            eps_q: f64::NAN,
            eps_c: f64::NAN,
            status: EocStatus::NotFound,
            diagnostics,
        }
    }

    pub fn found(&self) -> bool {
        self.status != EocStatus::NotFound
    }

    pub fn params(&self) -> Result<MeanFieldParams> {
        if !self.found() {
            return domain(format!("no edge-of-chaos point at sigma_b = {}", self.sigma_b));
        }
        MeanFieldParams::from_std(self.sigma_b, self.sigma_w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EocCurve {
    pub activation_id: String,
    pub points: Vec<EocPoint>,
    /// `sigma_w` strictly decreasing along the found points.
    pub sigma_w_decreasing: bool,
    /// `q` strictly increasing along the found points.
    pub q_increasing: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EocSolver {
    pub quad: QuadratureConfig,
    pub sigma_w_min: f64,
    pub sigma_w_max: f64,
    pub candidates: usize,
    /// Bisection stops when the bracket is narrower than this.
    pub tolerance: f64,
    /// Reported `q` for piecewise-linear activations, whose every variance is
    /// a fixed point on the edge of chaos.
    pub probe_variance: f64,
}

impl Default for EocSolver {
    fn default() -> Self {
        Self {
            quad: QuadratureConfig::default(),
            sigma_w_min: 1e-3,
            sigma_w_max: 10.0,
            candidates: 40,
            tolerance: 1e-9,
            probe_variance: 1.0,
        }
    }
}

struct Candidate {
    sigma_w: f64,
    residual: f64,
    q: f64,
    iters: usize,
    converged: bool,
}

impl Candidate {
    fn positive(&self) -> bool {
        !self.converged || self.residual > 0.0
    }
}

impl EocSolver {
    pub fn with_quadrature(quad: QuadratureConfig) -> Self {
        Self { quad, ..Self::default() }
    }

    fn field(&self, phi: &Activation, sigma_b: f64, sigma_w: f64) -> Result<MeanField> {
        Ok(MeanField::new(phi.clone(), MeanFieldParams::from_std(sigma_b, sigma_w)?).with_quadrature(self.quad))
    }

    fn evaluate(&self, phi: &Activation, sigma_b: f64, sigma_w: f64) -> Result<Candidate> {
        let mf = self.field(phi, sigma_b, sigma_w)?;
        let fp = mf.minimal_fixed_point()?;
        let converged = fp.status == FixedPointStatus::Converged;
        let residual = if converged { mf.chi1(fp.q)? - 1.0 } else { f64::INFINITY };
        Ok(Candidate { sigma_w, residual, q: fp.q, iters: fp.iters, converged })
    }

    pub fn solve(&self, phi: &Activation, sigma_b: f64) -> Result<EocPoint> {
        if !(sigma_b >= 0.0) || !sigma_b.is_finite() {
            return domain(format!("sigma_b must be finite and >= 0, got {sigma_b}"));
        }
        if let Some(p) = phi.relu_like_params() {
            if sigma_b == 0.0 {
                return self.relu_like(phi, p);
            }
            return Ok(EocPoint::not_found(sigma_b, EocDiagnostics::default()));
        }
        if !(self.sigma_w_min > 0.0 && self.sigma_w_max > self.sigma_w_min && self.candidates >= 2) {
            return domain("invalid sigma_w search interval");
        }
        let mut diag = EocDiagnostics::default();
        let ratio = (self.sigma_w_max / self.sigma_w_min).ln() / (self.candidates - 1) as f64;
        let mut prev: Option<Candidate> = None;
        let mut bracket = None;
        for i in 0..self.candidates {
            let sw = self.sigma_w_min * (ratio * i as f64).exp();
            let cand = self.evaluate(phi, sigma_b, sw)?;
            if !cand.converged {
                diag.unconverged_candidates += 1;
            }
            if let Some(p) = prev.take() {
                if !p.positive() && cand.positive() {
                    bracket = Some((p, cand));
                    break;
                }
            }
            prev = Some(cand);
        }
        let Some((mut lo, mut hi)) = bracket else {
            return Ok(EocPoint::not_found(sigma_b, diag));
        };
        while hi.sigma_w - lo.sigma_w > self.tolerance {
            let mid = self.evaluate(phi, sigma_b, 0.5 * (lo.sigma_w + hi.sigma_w))?;
            diag.bisection_steps += 1;
            if mid.positive() {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        // The converged end carries a genuine fixed point; near a root the
        // other end would do as well, near a fold it has none.
        let end = if hi.converged && hi.residual.abs() < lo.residual.abs() { hi } else { lo };
        let mf = self.field(phi, sigma_b, end.sigma_w)?;
        let chi1 = end.residual + 1.0;
        let alpha = mf.alpha(end.q)?;
        let status = if end.residual.abs() < ROOT_RESIDUAL { EocStatus::Numeric } else { EocStatus::Fold };
        diag.fixed_point_iters = end.iters;
        Ok(EocPoint {
            sigma_b,
            sigma_w: end.sigma_w,
            q: end.q,
            chi1,
            alpha,
            eps_q: depth_scale(alpha),
            eps_c: if status == EocStatus::Numeric { f64::INFINITY } else { depth_scale(chi1) },
            status,
            diagnostics: diag,
        })
    }

    fn relu_like(&self, phi: &Activation, p: ReluLikeParams) -> Result<EocPoint> {
        let sigma_w = (1.0 / p.mean_square_slope()).sqrt();
        let mf = self.field(phi, 0.0, sigma_w)?;
        let q = self.probe_variance;
        let chi1 = mf.chi1(q)?;
        let alpha = mf.alpha(q)?;
        Ok(EocPoint {
            sigma_b: 0.0,
            sigma_w,
            q,
            chi1,
            alpha,
            eps_q: depth_scale(alpha),
            eps_c: f64::INFINITY,
            status: EocStatus::Exact,
            diagnostics: EocDiagnostics::default(),
        })
    }

    /// Solves every grid point (concurrently; results do not depend on
    /// scheduling).
    pub fn curve(&self, phi: &Activation, sigma_b_grid: &[f64]) -> Result<EocCurve> {
        if sigma_b_grid.windows(2).any(|w| !(w[0] < w[1])) {
            return domain("sigma_b grid must be strictly ascending");
        }
        let points = sigma_b_grid
            .par_iter()
            .map(|&sb| self.solve(phi, sb))
            .collect::<Result<Vec<_>>>()?;
        let found: Vec<&EocPoint> = points.iter().filter(|p| p.found()).collect();
        let sigma_w_decreasing = found.windows(2).all(|w| w[1].sigma_w < w[0].sigma_w);
        let q_increasing = found.windows(2).all(|w| w[1].q > w[0].q);
        Ok(EocCurve { activation_id: phi.id.clone(), points, sigma_w_decreasing, q_increasing })
    }
}

/// Closed-form edge of chaos of `lambda x 1{x>0} + beta x 1{x<=0}`:
/// `(sigma_b, sigma_w) = (0, sqrt(2 / (lambda^2 + beta^2)))`.
pub fn relu_like_eoc(params: ReluLikeParams) -> Result<EocPoint> {
    let phi = Activation::relu_like(params.lambda, params.beta)?;
    EocSolver::default().relu_like(&phi, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn relu_closed_form() {
        let p = EocSolver::default().solve(&Activation::relu(), 0.0).unwrap();
        assert_eq!(p.status, EocStatus::Exact);
        assert_abs_diff_eq!(p.sigma_w, std::f64::consts::SQRT_2, epsilon = 1e-15);
        assert_eq!(p.q, 1.0);
        assert!((p.chi1 - 1.0).abs() < 1e-12);
        assert!(p.eps_c.is_infinite());
        for sb in [0.1, 0.5] {
            assert_eq!(EocSolver::default().solve(&Activation::relu(), sb).unwrap().status, EocStatus::NotFound);
        }
    }

    #[test]
    fn relu_like_closed_forms() {
        let lin = relu_like_eoc(ReluLikeParams::new(1.0, 1.0).unwrap()).unwrap();
        assert_abs_diff_eq!(lin.sigma_w, 1.0, epsilon = 1e-15);
        let leaky = relu_like_eoc(ReluLikeParams::new(1.0, 0.25).unwrap()).unwrap();
        assert_abs_diff_eq!(leaky.sigma_w, (2.0f64 / 1.0625).sqrt(), epsilon = 1e-15);
        assert!((leaky.chi1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tanh_zero_bias_is_unit_weight_scale() {
        let p = EocSolver::default().solve(&Activation::tanh(), 0.0).unwrap();
        assert_eq!(p.status, EocStatus::Numeric);
        assert_abs_diff_eq!(p.sigma_w, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn elu_root_is_numeric() {
        let p = EocSolver::default().solve(&Activation::elu(), 0.2).unwrap();
        assert_eq!(p.status, EocStatus::Numeric);
        assert!((p.chi1 - 1.0).abs() < ROOT_RESIDUAL);
        assert!(p.eps_c.is_infinite());
        let mf = MeanField::new(Activation::elu(), p.params().unwrap());
        assert!((mf.variance_map(p.q).unwrap() - p.q).abs() < 1e-9);
    }

    #[test]
    fn unsorted_grid_is_rejected() {
        assert!(EocSolver::default().curve(&Activation::tanh(), &[0.2, 0.1]).is_err());
    }
}
