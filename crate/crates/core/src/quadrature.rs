//! Gaussian expectations.
//!
//! Every mean-field quantity is an expectation of the form `E[g(a + bZ)]` or
//! `E[g(sqrt(qa) Z1) h(sqrt(qb) (c Z1 + sqrt(1 - c^2) Z2))]` over independent
//! standard normals. Two rules are available:
//!
//! * Gauss-Hermite with the probabilists' weight, nodes from the Golub-Welsch
//!   eigenvalue problem polished by Newton steps on the three-term recurrence.
//! * Panelled Gauss-Legendre against the explicit normal density on
//!   `[-12, 12]`, with panel edges at the integrand's breakpoints. This is the
//!   default whenever a breakpoint falls inside the truncated domain, because
//!   Gauss-Hermite converges slowly for integrands that are merely `C^0` (and
//!   for steep smooth ones such as `tanh(3z)`).
//!
//! The two-dimensional rule is a tensor product; the inner breakpoints are
//! relocated for every outer node. Rules are computed once per order and
//! cached for the lifetime of the process.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

/// Truncation of the standard-normal domain for panelled integration. The
/// neglected mass is `2 (1 - Phi(12)) < 4e-33`.
pub const TRUNCATION: f64 = 12.0;

/// Gauss-Legendre order used on each panel.
pub const PANEL_ORDER: usize = 100;

/// Rounding slack accepted on `|c| <= 1` before clamping.
pub const CORRELATION_SLACK: f64 = 1e-12;

/// Outer panel edges, in units of the transition width, placed around each
/// relocated inner kink.
const TRANSITION_EDGES: [f64; 3] = [1.0, 3.0, 9.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    /// Gauss-Hermite node count.
    pub order: usize,
    /// Split integrals at breakpoints and use panelled Gauss-Legendre there.
    pub kink_split: bool,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self { order: 200, kink_split: true }
    }
}

impl QuadratureConfig {
    pub fn with_order(order: usize) -> Result<Self> {
        if order < 2 {
            return Err(Error::Config(format!("quadrature order must be >= 2, got {order}")));
        }
        Ok(Self { order, ..Self::default() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McConfig {
    pub samples: usize,
    pub seed: u64,
}

/// A real function of one variable together with its breakpoints.
pub trait Integrand: Sync {
    fn eval(&self, t: f64) -> f64;

    fn breakpoints(&self) -> &[f64] {
        &[]
    }
}

/// Closure-backed [`Integrand`].
pub struct Fun<'a, F> {
    f: F,
    breakpoints: &'a [f64],
}

impl<F: Fn(f64) -> f64 + Sync> Fun<'static, F> {
    pub fn smooth(f: F) -> Self {
        Self { f, breakpoints: &[] }
    }
}

impl<'a, F: Fn(f64) -> f64 + Sync> Fun<'a, F> {
    pub fn with_breakpoints(f: F, breakpoints: &'a [f64]) -> Self {
        Self { f, breakpoints }
    }
}

impl<F: Fn(f64) -> f64 + Sync> Integrand for Fun<'_, F> {
    #[inline]
    fn eval(&self, t: f64) -> f64 {
        (self.f)(t)
    }

    fn breakpoints(&self) -> &[f64] {
        self.breakpoints
    }
}

/// Nodes and weights of a quadrature rule.
#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

type RuleCache = Mutex<HashMap<usize, Arc<Rule>>>;

fn cached(cache: &'static OnceLock<RuleCache>, order: usize, build: fn(usize) -> Rule) -> Arc<Rule> {
    let cache = cache.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().expect("rule cache poisoned");
    map.entry(order).or_insert_with(|| Arc::new(build(order))).clone()
}

/// Gauss-Hermite rule for the standard normal measure: `sum w_i g(x_i)`
/// approximates `E[g(Z)]` and is exact for polynomials of degree `< 2n`.
pub fn hermite_rule(order: usize) -> Arc<Rule> {
    static CACHE: OnceLock<RuleCache> = OnceLock::new();
    cached(&CACHE, order, build_hermite)
}

/// Gauss-Legendre rule on `[-1, 1]`.
pub fn legendre_rule(order: usize) -> Arc<Rule> {
    static CACHE: OnceLock<RuleCache> = OnceLock::new();
    cached(&CACHE, order, build_legendre)
}

/// Orthonormal Hermite polynomials `p_{n-1}(x)`, `p_n(x)` and `sum_{k<n} p_k(x)^2`.
fn hermite_orthonormal(n: usize, x: f64) -> (f64, f64, f64) {
    let mut prev = 0.0;
    let mut cur = 1.0;
    let mut sum_sq = 0.0;
    for k in 0..n {
        sum_sq += cur * cur;
        let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
        prev = cur;
        cur = next;
    }
    (prev, cur, sum_sq)
}

fn build_hermite(n: usize) -> Rule {
    // Golub-Welsch: the Jacobi matrix of the probabilists' Hermite
    // recurrence has zero diagonal and off-diagonal sqrt(k).
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j {
            (j as f64).sqrt()
        } else if j + 1 == i {
            (i as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = jacobi.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Newton polish, then Christoffel weights 1 / sum p_k(x)^2. For the
    // outermost nodes the sum overflows and the weight correctly becomes 0.
    let sqrt_n = (n as f64).sqrt();
    for (x, w) in pairs.iter_mut() {
        for _ in 0..3 {
            let (pm1, pn, _) = hermite_orthonormal(n, *x);
            let step = pn / (sqrt_n * pm1);
            if !step.is_finite() {
                break;
            }
            *x -= step;
        }
        let (_, _, sum_sq) = hermite_orthonormal(n, *x);
        if sum_sq.is_finite() && sum_sq > 0.0 {
            *w = 1.0 / sum_sq;
        } else if sum_sq.is_infinite() {
            *w = 0.0;
        }
    }
    // Enforce exact symmetry.
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (pairs[j].0 - pairs[i].0);
        let w = 0.5 * (pairs[i].1 + pairs[j].1);
        pairs[i] = (-x, w);
        pairs[j] = (x, w);
    }
    if n % 2 == 1 {
        pairs[n / 2].0 = 0.0;
    }
    Rule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

fn build_legendre(n: usize) -> Rule {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pnm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pnm1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    Rule { nodes, weights }
}

#[inline]
fn normal_pdf(z: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Resolved rules for one top-level evaluation.
pub(crate) struct Engine {
    hermite: Arc<Rule>,
    legendre: Arc<Rule>,
    split: bool,
}

impl Engine {
    pub(crate) fn new(cfg: &QuadratureConfig) -> Result<Self> {
        if cfg.order < 2 {
            return Err(Error::Config(format!("quadrature order must be >= 2, got {}", cfg.order)));
        }
        Ok(Self {
            hermite: hermite_rule(cfg.order),
            legendre: legendre_rule(PANEL_ORDER),
            split: cfg.kink_split,
        })
    }

    /// `E[f(Z)]` with panel edges at `zbreaks` (any order, any range).
    pub(crate) fn std_normal<F>(&self, mut f: F, zbreaks: &[f64]) -> Result<f64>
    where
        F: FnMut(f64) -> Result<f64>,
    {
        let mut edges: [f64; 34] = [0.0; 34];
        let mut count = 0;
        if self.split {
            for &b in zbreaks {
                if b.is_finite() && b.abs() < TRUNCATION && count < edges.len() - 2 {
                    edges[count] = b;
                    count += 1;
                }
            }
        }
        let mut total = 0.0;
        if count == 0 {
            for (&z, &w) in self.hermite.nodes.iter().zip(&self.hermite.weights) {
                if w == 0.0 {
                    continue;
                }
                let v = f(z)?;
                if !v.is_finite() {
                    return Err(Error::NonFinite { node: z });
                }
                total += w * v;
            }
            return Ok(total);
        }
        let inner = &mut edges[..count];
        inner.sort_by(f64::total_cmp);
        let mut lo = -TRUNCATION;
        for k in 0..=count {
            let hi = if k < count { edges[k] } else { TRUNCATION };
            if hi > lo {
                let half = 0.5 * (hi - lo);
                let mid = 0.5 * (hi + lo);
                let mut panel = 0.0;
                for (&x, &w) in self.legendre.nodes.iter().zip(&self.legendre.weights) {
                    let z = mid + half * x;
                    let v = f(z)?;
                    if !v.is_finite() {
                        return Err(Error::NonFinite { node: z });
                    }
                    panel += w * v * normal_pdf(z);
                }
                total += half * panel;
            }
            lo = hi;
        }
        Ok(total)
    }

    /// `E[g(shift + scale Z)]`.
    pub(crate) fn affine<G: Integrand + ?Sized>(&self, g: &G, shift: f64, scale: f64) -> Result<f64> {
        if scale == 0.0 {
            let v = g.eval(shift);
            return if v.is_finite() { Ok(v) } else { Err(Error::NonFinite { node: 0.0 }) };
        }
        let mut zb = [0.0; 6];
        let bps = g.breakpoints();
        let n = bps.len().min(zb.len());
        for (dst, &t) in zb.iter_mut().zip(bps) {
            *dst = (t - shift) / scale;
        }
        self.std_normal(|z| Ok(g.eval(shift + scale * z)), &zb[..n])
    }

    pub(crate) fn expect2<G, H>(&self, g: &G, h: &H, qa: f64, qb: f64, c: f64) -> Result<f64>
    where
        G: Integrand + ?Sized,
        H: Integrand + ?Sized,
    {
        let sa = qa.sqrt();
        let sb = qb.sqrt();
        if c.abs() >= 1.0 {
            let sign = c.signum();
            let mut zb = Vec::with_capacity(g.breakpoints().len() + h.breakpoints().len());
            if sa > 0.0 {
                zb.extend(g.breakpoints().iter().map(|t| t / sa));
            }
            if sb > 0.0 {
                zb.extend(h.breakpoints().iter().map(|t| sign * t / sb));
            }
            return self.std_normal(|z| Ok(g.eval(sa * z) * h.eval(sign * sb * z)), &zb);
        }
        let s = ((1.0 - c) * (1.0 + c)).sqrt();
        let mut outer: Vec<f64> = if sa > 0.0 {
            g.breakpoints().iter().map(|t| t / sa).collect()
        } else {
            Vec::new()
        };
        // A kink of h makes the inner expectation a smoothed step in z1 of
        // width s / |c|; panels must resolve it when that width is small.
        let width = s / c.abs();
        if sb > 0.0 && c != 0.0 && width < 0.5 {
            for &b in h.breakpoints() {
                let centre = b / (sb * c);
                outer.push(centre);
                for m in TRANSITION_EDGES {
                    outer.push(centre - m * width);
                    outer.push(centre + m * width);
                }
            }
        }
        self.std_normal(
            |z1| {
                let gv = g.eval(sa * z1);
                if gv == 0.0 {
                    return Ok(0.0);
                }
                let inner = self.affine(h, sb * c * z1, sb * s)?;
                Ok(gv * inner)
            },
            &outer,
        )
    }
}

fn check_scale(scale: f64) -> Result<()> {
    if !(scale >= 0.0) || !scale.is_finite() {
        return Err(Error::Domain(format!("scale must be finite and >= 0, got {scale}")));
    }
    Ok(())
}

fn check_pair(qa: f64, qb: f64, c: f64) -> Result<f64> {
    check_scale(qa)?;
    check_scale(qb)?;
    if !(c.abs() <= 1.0 + CORRELATION_SLACK) {
        return Err(Error::Domain(format!("correlation must lie in [-1, 1], got {c}")));
    }
    Ok(c.clamp(-1.0, 1.0))
}

/// `E[g(scale * Z)]` for a standard normal `Z`.
pub fn expect1<G: Integrand + ?Sized>(g: &G, scale: f64, cfg: &QuadratureConfig) -> Result<f64> {
    check_scale(scale)?;
    Engine::new(cfg)?.affine(g, 0.0, scale)
}

/// `E[g(shift + scale * Z)]` for a standard normal `Z`.
pub fn expect_affine<G: Integrand + ?Sized>(
    g: &G,
    shift: f64,
    scale: f64,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    check_scale(scale)?;
    Engine::new(cfg)?.affine(g, shift, scale)
}

/// `E[g(sqrt(qa) Z1) h(sqrt(qb) (c Z1 + sqrt(1 - c^2) Z2))]`.
pub fn expect2<G, H>(g: &G, h: &H, qa: f64, qb: f64, c: f64, cfg: &QuadratureConfig) -> Result<f64>
where
    G: Integrand + ?Sized,
    H: Integrand + ?Sized,
{
    let c = check_pair(qa, qb, c)?;
    Engine::new(cfg)?.expect2(g, h, qa, qb, c)
}

/// `E[g(scale * Z)]` for large scales, integrated in the activation's own
/// coordinate with dyadic panels `[2^k, 2^(k+1)]` so that features of unit
/// width stay resolved however wide the Gaussian is.
pub fn expect1_wide<G: Integrand + ?Sized>(g: &G, scale: f64, cfg: &QuadratureConfig) -> Result<f64> {
    check_scale(scale)?;
    if scale <= 1.0 {
        return expect1(g, scale, cfg);
    }
    let legendre = legendre_rule(PANEL_ORDER);
    let reach = TRUNCATION * scale;
    let mut edges: Vec<f64> = vec![-reach, 0.0, reach];
    let mut r = 1.0;
    while r < reach {
        edges.push(r);
        edges.push(-r);
        r *= 2.0;
    }
    edges.extend(g.breakpoints().iter().copied().filter(|t| t.abs() < reach));
    edges.sort_by(f64::total_cmp);
    edges.dedup();
    let mut total = 0.0;
    for pair in edges.windows(2) {
        let (lo, hi) = (pair[0], pair[1]);
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        let mut panel = 0.0;
        for (&x, &w) in legendre.nodes.iter().zip(&legendre.weights) {
            let t = mid + half * x;
            let v = g.eval(t);
            if !v.is_finite() {
                return Err(Error::NonFinite { node: t / scale });
            }
            panel += w * v * normal_pdf(t / scale);
        }
        total += half * panel / scale;
    }
    Ok(total)
}

/// Monte-Carlo mean and standard error of the `expect2` integrand.
pub fn mc_expect2<G, H>(g: &G, h: &H, qa: f64, qb: f64, c: f64, cfg: &McConfig) -> Result<(f64, f64)>
where
    G: Integrand + ?Sized,
    H: Integrand + ?Sized,
{
    let c = check_pair(qa, qb, c)?;
    if cfg.samples < 2 {
        return Err(Error::Config("Monte-Carlo estimate needs at least 2 samples".into()));
    }
    let (sa, sb) = (qa.sqrt(), qb.sqrt());
    let s = ((1.0 - c) * (1.0 + c)).max(0.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // Welford accumulation.
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for k in 0..cfg.samples {
        let z1: f64 = StandardNormal.sample(&mut rng);
        let z2: f64 = StandardNormal.sample(&mut rng);
        let v = g.eval(sa * z1) * h.eval(sb * (c * z1 + s * z2));
        let delta = v - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (v - mean);
    }
    let n = cfg.samples as f64;
    let var = m2 / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;
    use approx::assert_abs_diff_eq;

    fn cfg() -> QuadratureConfig {
        QuadratureConfig::default()
    }

    #[test]
    fn hermite_rule_moments() {
        for n in [2usize, 5, 20, 200, 400] {
            let rule = hermite_rule(n);
            let m = |p: i32| -> f64 {
                rule.nodes.iter().zip(&rule.weights).map(|(x, w)| w * x.powi(p)).sum()
            };
            assert_abs_diff_eq!(m(0), 1.0, epsilon = 1e-13);
            assert_abs_diff_eq!(m(1), 0.0, epsilon = 1e-13);
            if n >= 2 {
                assert_abs_diff_eq!(m(2), 1.0, epsilon = 1e-12);
            }
            if n >= 4 {
                assert_abs_diff_eq!(m(6), 15.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn legendre_rule_integrates_polynomials() {
        let rule = legendre_rule(PANEL_ORDER);
        let int = |p: i32| -> f64 {
            rule.nodes.iter().zip(&rule.weights).map(|(x, w)| w * x.powi(p)).sum()
        };
        assert_abs_diff_eq!(int(0), 2.0, epsilon = 1e-13);
        assert_abs_diff_eq!(int(10), 2.0 / 11.0, epsilon = 1e-13);
        assert_abs_diff_eq!(int(7), 0.0, epsilon = 1e-13);
    }

    #[test]
    fn elementary_one_dimensional_expectations() {
        let id = Fun::smooth(|x| x);
        let sq = Fun::smooth(|x| x * x);
        let relu = Activation::relu();
        let relu_sq = Fun::with_breakpoints(|x: f64| x.max(0.0).powi(2), &relu.breakpoints);
        assert_abs_diff_eq!(expect1(&id, 1.0, &cfg()).unwrap(), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(expect1(&sq, 1.0, &cfg()).unwrap(), 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(expect1(&relu_sq, 1.0, &cfg()).unwrap(), 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(expect1(&sq, 3.0, &cfg()).unwrap(), 9.0, epsilon = 1e-11);
        assert_abs_diff_eq!(expect1(&sq, 0.0, &cfg()).unwrap(), 0.0);
        assert!(expect1(&sq, -1.0, &cfg()).is_err());
    }

    #[test]
    fn gauss_hermite_is_exact_for_low_degree_polynomials() {
        let cfg = QuadratureConfig { order: 10, kink_split: false };
        let p = Fun::smooth(|x: f64| x.powi(8) - 3.0 * x.powi(4) + 2.0);
        // E[Z^8] = 105, E[Z^4] = 3
        assert_abs_diff_eq!(expect1(&p, 1.0, &cfg).unwrap(), 105.0 - 9.0 + 2.0, epsilon = 1e-10);
    }

    #[test]
    fn elementary_two_dimensional_expectations() {
        let id = Fun::smooth(|x| x);
        assert_abs_diff_eq!(expect2(&id, &id, 1.0, 1.0, 0.3, &cfg()).unwrap(), 0.3, epsilon = 1e-13);
        let relu = Activation::relu();
        let r = Fun::with_breakpoints(|x: f64| x.max(0.0), &relu.breakpoints);
        assert_abs_diff_eq!(
            expect2(&r, &r, 1.0, 1.0, 0.0, &cfg()).unwrap(),
            1.0 / (2.0 * PI),
            epsilon = 1e-13
        );
        assert_abs_diff_eq!(expect2(&r, &r, 1.0, 1.0, 1.0, &cfg()).unwrap(), 0.5, epsilon = 1e-13);
        assert!(expect2(&r, &r, 1.0, 1.0, 1.5, &cfg()).is_err());
    }

    #[test]
    fn steep_smooth_integrands_stay_accurate() {
        // E[tanh(sZ)^2] against a dyadic reference, for scales where plain
        // Gauss-Hermite would lose digits.
        let tanh = Activation::tanh();
        let g = Fun::with_breakpoints(|x: f64| x.tanh().powi(2), &tanh.breakpoints);
        for s in [2.0, 3.2, 10.0] {
            let a = expect1(&g, s, &cfg()).unwrap();
            let b = expect1_wide(&g, s, &cfg()).unwrap();
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn non_finite_integrand_names_node() {
        let bad = Fun::smooth(|x: f64| if x > 1.0 { f64::NAN } else { x });
        match expect1(&bad, 1.0, &cfg()) {
            Err(Error::NonFinite { node }) => assert!(node > 1.0),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn monte_carlo_identity() {
        let id = Fun::smooth(|x| x);
        let (mean, se) =
            mc_expect2(&id, &id, 1.0, 1.0, 0.5, &McConfig { samples: 1_000_000, seed: 7 }).unwrap();
        assert!((mean - 0.5).abs() < 3.0 * se, "{mean} ± {se}");
        let again =
            mc_expect2(&id, &id, 1.0, 1.0, 0.5, &McConfig { samples: 1_000_000, seed: 7 }).unwrap();
        assert_eq!((mean, se), again);
        assert!(mc_expect2(&id, &id, 1.0, 1.0, 0.5, &McConfig { samples: 1, seed: 7 }).is_err());
    }
}
