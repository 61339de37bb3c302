//! Activation functions and their derivatives.
//!
//! At a kink, `d1` reports the right derivative. `d2` is `None` for the
//! piecewise-linear activations, whose second derivative is a sum of Dirac
//! masses; callers must go through a first-derivative identity instead.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Slopes of a piecewise-linear activation: `lambda * x` for `x > 0` and
/// `beta * x` for `x <= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReluLikeParams {
    pub lambda: f64,
    pub beta: f64,
}

impl ReluLikeParams {
    pub fn new(lambda: f64, beta: f64) -> Result<Self> {
        if !lambda.is_finite() || !beta.is_finite() {
            return Err(Error::Config(format!(
                "relu_like slopes must be finite, got ({lambda}, {beta})"
            )));
        }
        if lambda == 0.0 && beta == 0.0 {
            return Err(Error::Config("relu_like slopes must not both be zero".into()));
        }
        Ok(Self { lambda, beta })
    }

    /// `E[phi'(Z)^2]` for a standard Gaussian `Z`.
    pub fn mean_square_slope(&self) -> f64 {
        0.5 * (self.lambda * self.lambda + self.beta * self.beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    ReluLike(ReluLikeParams),
    Tanh,
    HardTanh,
    Swish,
    Elu,
    Arctan,
}

/// An activation together with the metadata the mean-field analysis needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Activation {
    pub id: String,
    pub kind: ActivationKind,
    pub bounded: bool,
    pub zero_at_zero: bool,
    pub d1_at_zero_right: f64,
    pub d1_at_zero_left: f64,
    /// Known `k` with `|phi(x)/x| <= k`, if any.
    pub growth_bound_k: Option<f64>,
    /// Abscissae where the activation is not smooth or turns over. The
    /// quadrature engine splits its panels at these points.
    pub breakpoints: Vec<f64>,
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn new(kind: ActivationKind) -> Self {
        use ActivationKind::*;
        let (id, bounded, d1r, d1l, k, breakpoints) = match kind {
            Relu => ("relu".to_string(), false, 1.0, 0.0, Some(1.0), vec![0.0]),
            ReluLike(p) => (
                format!("relu_like:{}:{}", p.lambda, p.beta),
                false,
                p.lambda,
                p.beta,
                Some(p.lambda.abs().max(p.beta.abs())),
                vec![0.0],
            ),
            Tanh => ("tanh".to_string(), true, 1.0, 1.0, Some(1.0), vec![0.0]),
            HardTanh => ("hard_tanh".to_string(), true, 1.0, 1.0, Some(1.0), vec![-1.0, 1.0]),
            Swish => ("swish".to_string(), false, 0.5, 0.5, Some(1.0), vec![0.0]),
            Elu => ("elu".to_string(), false, 1.0, 1.0, Some(1.0), vec![0.0]),
            Arctan => ("arctan".to_string(), true, 1.0, 1.0, Some(1.0), vec![0.0]),
        };
        Self {
            id,
            kind,
            bounded,
            zero_at_zero: true,
            d1_at_zero_right: d1r,
            d1_at_zero_left: d1l,
            growth_bound_k: k,
            breakpoints,
        }
    }

    pub fn relu() -> Self {
        Self::new(ActivationKind::Relu)
    }

    pub fn relu_like(lambda: f64, beta: f64) -> Result<Self> {
        Ok(Self::new(ActivationKind::ReluLike(ReluLikeParams::new(lambda, beta)?)))
    }

    /// The identity map, as the relu_like activation with equal slopes.
    pub fn linear() -> Self {
        Self::new(ActivationKind::ReluLike(ReluLikeParams { lambda: 1.0, beta: 1.0 }))
    }

    pub fn tanh() -> Self {
        Self::new(ActivationKind::Tanh)
    }

    pub fn hard_tanh() -> Self {
        Self::new(ActivationKind::HardTanh)
    }

    pub fn swish() -> Self {
        Self::new(ActivationKind::Swish)
    }

    pub fn elu() -> Self {
        Self::new(ActivationKind::Elu)
    }

    pub fn arctan() -> Self {
        Self::new(ActivationKind::Arctan)
    }

    /// Slopes for the piecewise-linear family (ReLU is `(1, 0)`).
    pub fn relu_like_params(&self) -> Option<ReluLikeParams> {
        match self.kind {
            ActivationKind::Relu => Some(ReluLikeParams { lambda: 1.0, beta: 0.0 }),
            ActivationKind::ReluLike(p) => Some(p),
            _ => None,
        }
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        use ActivationKind::*;
        match self.kind {
            Relu => x.max(0.0),
            ReluLike(p) => {
                if x > 0.0 {
                    p.lambda * x
                } else {
                    p.beta * x
                }
            }
            Tanh => x.tanh(),
            HardTanh => x.clamp(-1.0, 1.0),
            Swish => x * sigmoid(x),
            Elu => {
                if x < 0.0 {
                    x.exp_m1()
                } else {
                    x
                }
            }
            Arctan => x.atan(),
        }
    }

    #[inline]
    pub fn d1(&self, x: f64) -> f64 {
        use ActivationKind::*;
        match self.kind {
            Relu => {
                if x >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ReluLike(p) => {
                if x >= 0.0 {
                    p.lambda
                } else {
                    p.beta
                }
            }
            Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            HardTanh => {
                if (-1.0..1.0).contains(&x) {
                    1.0
                } else {
                    0.0
                }
            }
            Swish => {
                let s = sigmoid(x);
                s + x * s * (1.0 - s)
            }
            Elu => {
                if x < 0.0 {
                    x.exp()
                } else {
                    1.0
                }
            }
            Arctan => 1.0 / (1.0 + x * x),
        }
    }

    /// Second derivative, `None` for activations whose `phi''` is a measure.
    #[inline]
    pub fn d2(&self, x: f64) -> Option<f64> {
        use ActivationKind::*;
        match self.kind {
            Relu | ReluLike(_) | HardTanh => None,
            Tanh => {
                let t = x.tanh();
                Some(-2.0 * t * (1.0 - t * t))
            }
            Swish => {
                let s = sigmoid(x);
                Some(s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s)))
            }
            Elu => Some(if x < 0.0 { x.exp() } else { 0.0 }),
            Arctan => {
                let d = 1.0 + x * x;
                Some(-2.0 * x / (d * d))
            }
        }
    }

    pub fn has_d2(&self) -> bool {
        self.d2(0.5).is_some()
    }

    /// True where `d1` has a jump, i.e. the activation has a corner.
    pub fn is_kink(&self, x: f64) -> bool {
        use ActivationKind::*;
        match self.kind {
            Relu => x == 0.0,
            ReluLike(p) => x == 0.0 && p.lambda != p.beta,
            HardTanh => x == 1.0 || x == -1.0,
            _ => false,
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    /// Parses the CLI names: `relu`, `relu_like:<lambda>:<beta>`, `tanh`,
    /// `hard_tanh`, `swish`, `elu`, `arctan`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("relu_like:") {
            let mut parts = rest.split(':');
            let (Some(l), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Config(format!(
                    "expected relu_like:<lambda>:<beta>, got {s:?}"
                )));
            };
            let parse = |v: &str| {
                v.parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad slope {v:?} in {s:?}")))
            };
            return Activation::relu_like(parse(l)?, parse(b)?);
        }
        match s {
            "relu" => Ok(Self::relu()),
            "tanh" => Ok(Self::tanh()),
            "hard_tanh" => Ok(Self::hard_tanh()),
            "swish" => Ok(Self::swish()),
            "elu" => Ok(Self::elu()),
            "arctan" => Ok(Self::arctan()),
            "linear" => Ok(Self::linear()),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id)
    }
}

/// Builds an activation from its CLI name.
pub fn make_activation(name: &str) -> Result<Activation> {
    name.parse()
}

/// Supremum of `|phi(x)/x|` over a dense grid of `[-w, w]`.
///
/// At `x = 0` the limit `max(|phi'(0+)|, |phi'(0-)|)` is used.
pub fn growth_bound(phi: &Activation, domain_half_width: f64) -> Result<f64> {
    if !phi.zero_at_zero {
        return Err(Error::Domain(format!("{} does not vanish at zero", phi.id)));
    }
    if !(domain_half_width > 0.0) {
        return Err(Error::Domain("domain half width must be positive".into()));
    }
    const POINTS: usize = 20_001;
    let mut sup = phi.d1_at_zero_right.abs().max(phi.d1_at_zero_left.abs());
    for i in 0..POINTS {
        let x = -domain_half_width + 2.0 * domain_half_width * i as f64 / (POINTS - 1) as f64;
        if x == 0.0 {
            continue;
        }
        sup = sup.max((phi.value(x) / x).abs());
    }
    Ok(sup)
}
