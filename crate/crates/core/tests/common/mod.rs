//! Reference integrators for the integration tests.
//!
//! These use composite Simpson rules on a truncated real line, split at the
//! activation's kinks in the integration variable. They share no code with
//! the Gauss-Hermite / Gauss-Legendre engine of the library and serve as an
//! independent oracle for derived values.

#![allow(dead_code)]

use eoclab::Activation;
use std::f64::consts::PI;

pub const TRUNCATION: f64 = 14.0;

pub fn all_activations() -> Vec<Activation> {
    vec![
        Activation::relu(),
        Activation::relu_like(1.0, 0.25).unwrap(),
        Activation::tanh(),
        Activation::hard_tanh(),
        Activation::swish(),
        Activation::elu(),
        Activation::arctan(),
    ]
}

fn pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Composite Simpson on `[a, b]` with `n` (even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + h * i as f64) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Simpson over `[-T, T]` split at the given points.
fn split_simpson(f: impl Fn(f64) -> f64, cuts: &[f64], per_piece: usize) -> f64 {
    let mut edges = vec![-TRUNCATION];
    let mut inner: Vec<f64> = cuts.iter().copied().filter(|c| c.abs() < TRUNCATION).collect();
    inner.sort_by(f64::total_cmp);
    edges.extend(inner);
    edges.push(TRUNCATION);
    edges.windows(2).filter(|w| w[1] > w[0]).map(|w| simpson(&f, w[0], w[1], per_piece)).sum()
}

/// `E[g(s Z)]` with kinks of `g` at `kinks`.
pub fn oracle_expect1(g: impl Fn(f64) -> f64, s: f64, kinks: &[f64]) -> f64 {
    if s == 0.0 {
        return g(0.0);
    }
    let cuts: Vec<f64> = kinks.iter().map(|k| k / s).collect();
    split_simpson(|z| g(s * z) * pdf(z), &cuts, 20_000)
}

/// `E[g(sqrt(qa) Z1) h(sqrt(qb) (c Z1 + sqrt(1 - c^2) Z2))]` by nested Simpson.
pub fn oracle_expect2(
    g: impl Fn(f64) -> f64,
    h: impl Fn(f64) -> f64,
    qa: f64,
    qb: f64,
    c: f64,
    kinks: &[f64],
) -> f64 {
    let (sa, sb) = (qa.sqrt(), qb.sqrt());
    let s = (1.0 - c * c).max(0.0).sqrt();
    let outer_cuts: Vec<f64> = kinks.iter().map(|k| k / sa).collect();
    let outer = |z1: f64| {
        let ga = g(sa * z1);
        if ga == 0.0 {
            return 0.0;
        }
        let inner = if s == 0.0 {
            h(sb * c * z1)
        } else {
            let cuts: Vec<f64> = kinks.iter().map(|k| (k / sb - c * z1) / s).collect();
            split_simpson(|z2| h(sb * (c * z1 + s * z2)) * pdf(z2), &cuts, 1_500)
        };
        ga * inner * pdf(z1)
    };
    split_simpson(outer, &outer_cuts, 2_000)
}

/// Correlation map `f(x)` at variance `q` by the oracle.
pub fn oracle_corr(phi: &Activation, sigma_b2: f64, sigma_w2: f64, x: f64, q: f64) -> f64 {
    let v = |t| phi.value(t);
    (sigma_b2 + sigma_w2 * oracle_expect2(v, v, q, q, x, &phi.breakpoints)) / q
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Least-squares slope of `y` against `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}
