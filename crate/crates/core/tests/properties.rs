//! Randomised invariants of the quadrature engine and the mean-field maps.

mod common;

use common::all_activations;
use eoclab::closedform::relu_corr;
use eoclab::meanfield::m_phi_sup;
use eoclab::quadrature::{expect1, expect2, Fun};
use eoclab::{Activation, FixedPointStatus, MeanField, MeanFieldParams, QuadratureConfig};
use proptest::prelude::*;
use std::sync::OnceLock;

fn quad() -> QuadratureConfig {
    QuadratureConfig::default()
}

fn activation() -> impl Strategy<Value = Activation> {
    (0..all_activations().len()).prop_map(|i| all_activations()[i].clone())
}

/// Activations with non-decreasing `phi`.
fn monotone_activation() -> impl Strategy<Value = Activation> {
    prop_oneof![
        Just(Activation::relu()),
        (0.1f64..2.0, 0.0f64..1.0).prop_map(|(l, b)| Activation::relu_like(l, b).unwrap()),
        Just(Activation::tanh()),
        Just(Activation::hard_tanh()),
        Just(Activation::elu()),
        Just(Activation::arctan()),
    ]
}

fn e2(g: &Activation, h: &Activation, qa: f64, qb: f64, c: f64) -> f64 {
    let fg = Fun::with_breakpoints(|t| g.value(t), &g.breakpoints);
    let fh = Fun::with_breakpoints(|t| h.value(t), &h.breakpoints);
    expect2(&fg, &fh, qa, qb, c, &quad()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 40, ..ProptestConfig::default() })]

    #[test]
    fn expect2_is_symmetric(g in activation(), h in activation(), qa in 0.05f64..5.0, qb in 0.05f64..5.0, c in -1.0f64..=1.0) {
        let ab = e2(&g, &h, qa, qb, c);
        let ba = e2(&h, &g, qb, qa, c);
        prop_assert!((ab - ba).abs() < 1e-10, "{ab} vs {ba}");
    }

    #[test]
    fn cauchy_schwarz(phi in activation(), q in 0.05f64..5.0, c in 0.0f64..=1.0) {
        let cross = e2(&phi, &phi, q, q, c);
        let sq = Fun::with_breakpoints(|t| phi.value(t).powi(2), &phi.breakpoints);
        let m = expect1(&sq, q.sqrt(), &quad()).unwrap();
        prop_assert!(cross * cross <= m * m + 1e-10, "{cross}^2 > {m}^2");
    }

    #[test]
    fn relu_like_cross_moment_is_monotone_in_c(lambda in 0.0f64..2.0, beta in 0.0f64..2.0, q in 0.05f64..5.0) {
        prop_assume!(lambda + beta > 0.0);
        let phi = Activation::relu_like(lambda, beta).unwrap();
        let values: Vec<f64> = (0..50).map(|i| e2(&phi, &phi, q, q, i as f64 / 49.0)).collect();
        for w in values.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-12, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn correlation_map_fixes_one_at_fixed_points(phi in activation(), sb in 0.1f64..1.0, sw in 0.5f64..1.3) {
        let mf = MeanField::new(phi, MeanFieldParams::from_std(sb, sw).unwrap());
        let fp = mf.minimal_fixed_point().unwrap();
        prop_assume!(fp.status == FixedPointStatus::Converged);
        let f1 = mf.correlation_map(1.0, fp.q).unwrap();
        prop_assert!((f1 - 1.0).abs() < 1e-8, "f(1) = {f1}");
    }

    #[test]
    fn relu_arc_cosine_map_lies_above_identity(x in 0.0f64..1.0) {
        prop_assert!(relu_corr(x).unwrap() - x > 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 25, ..ProptestConfig::default() })]

    #[test]
    fn variance_map_derivative_matches_differences(phi in activation(), sw2 in 0.3f64..3.0, x in 0.05f64..5.0) {
        let mf = MeanField::new(phi, MeanFieldParams::new(0.1, sw2).unwrap());
        let h = 1e-4 * x;
        let fd = (mf.variance_map(x + h).unwrap() - mf.variance_map(x - h).unwrap()) / (2.0 * h);
        let d = mf.variance_map_derivative(x).unwrap();
        prop_assert!((d - fd).abs() <= 1e-4 * fd.abs().max(1e-3), "{d} vs {fd}");
    }

    #[test]
    fn correlation_map_derivative_matches_differences(phi in activation(), q in 0.1f64..4.0, x in 0.05f64..0.95) {
        let mf = MeanField::new(phi, MeanFieldParams::new(0.1, 1.2).unwrap());
        let h = 1e-4;
        let fd = (mf.correlation_map(x + h, q).unwrap() - mf.correlation_map(x - h, q).unwrap()) / (2.0 * h);
        let d = mf.correlation_map_derivative(x, q).unwrap();
        prop_assert!((d - fd).abs() <= 1e-4 * fd.abs().max(1e-3), "{d} vs {fd}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, ..ProptestConfig::default() })]

    #[test]
    fn correlation_map_is_non_decreasing_for_monotone_activations(phi in monotone_activation(), sb in 0.0f64..1.0, sw in 0.5f64..2.0, q in 0.1f64..4.0) {
        let mf = MeanField::new(phi, MeanFieldParams::from_std(sb, sw).unwrap());
        for i in 0..=100 {
            let x = i as f64 / 100.0;
            let d = mf.correlation_map_derivative(x, q).unwrap();
            prop_assert!(d >= -1e-8, "f'({x}) = {d}");
        }
    }
}

fn m_phi(phi: &Activation) -> f64 {
    static CACHE: OnceLock<Vec<(String, f64)>> = OnceLock::new();
    let table = CACHE.get_or_init(|| {
        all_activations()
            .iter()
            .map(|a| (a.id.clone(), m_phi_sup(a, 10.0, 400, &quad()).unwrap()))
            .collect()
    });
    table.iter().find(|(id, _)| *id == phi.id).unwrap().1
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 30, ..ProptestConfig::default() })]

    #[test]
    fn contractive_variance_maps_have_one_fixed_point(phi in activation(), frac in 0.05f64..0.95, sb in 0.0f64..1.5) {
        let sw2 = frac / m_phi(&phi);
        let mf = MeanField::new(phi, MeanFieldParams::new(sb * sb, sw2).unwrap());
        let qs: Vec<f64> = [0.01, 1.0, 100.0]
            .iter()
            .map(|&x0| {
                let fp = mf.variance_fixed_point(x0).unwrap();
                assert_eq!(fp.status, FixedPointStatus::Converged);
                fp.q
            })
            .collect();
        for q in &qs[1..] {
            prop_assert!((q - qs[0]).abs() < 1e-9, "{qs:?}");
        }
    }
}

#[test]
fn linear_network_on_its_edge_of_chaos_has_identity_correlation_map() {
    let mf = MeanField::new(Activation::linear(), MeanFieldParams::new(0.0, 1.0).unwrap());
    for q in [0.3, 1.0, 2.5] {
        for i in 0..=100 {
            let x = i as f64 / 100.0;
            assert!((mf.correlation_map(x, q).unwrap() - x).abs() < 1e-9);
        }
    }
}
