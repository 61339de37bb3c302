//! Finite-width networks against mean-field predictions.

mod common;

use common::median;
use eoclab::closedform::relu_gap_sequence;
use eoclab::simulator::{
    field_std, input_kernel, input_pair, output_field, radial_profile, relative_range, simulate, FieldGrid,
    SimConfig,
};
use eoclab::{Activation, EocSolver, MeanField, MeanFieldParams, PropagationMode};
use std::f64::consts::PI;

fn moments(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m = |k: i32| values.iter().map(|v| (v - mean).powi(k)).sum::<f64>() / n;
    let var = m(2);
    (m(3) / var.powf(1.5), m(4) / (var * var) - 3.0)
}

#[test]
fn second_layer_neuron_is_gaussian_at_width_1000() {
    let relu_eoc = MeanFieldParams::new(0.0, 2.0).unwrap();
    let tanh = MeanFieldParams::new(1.0, 1.0).unwrap();
    for (phi, params) in [(Activation::relu(), relu_eoc), (Activation::tanh(), tanh)] {
        let cfg = SimConfig {
            widths: vec![1000, 1],
            input_dim: 8,
            params,
            activation: phi,
            replications: 2000,
            seed: 0,
        };
        let (a, _) = input_pair(params, 8, 2.0, 0.5).unwrap();
        let res = simulate(&cfg, &[a]).unwrap();
        let out: Vec<f64> = res.final_outputs.iter().map(|r| r[0]).collect();
        let (skew, kurt) = moments(&out);
        assert!(skew.abs() < 0.1, "{}: skewness {skew}", cfg.activation.id);
        assert!(kurt.abs() < 0.2, "{}: excess kurtosis {kurt}", cfg.activation.id);
    }
}

/// Simulates two inputs at `(q1, c1)` and compares every layer with the
/// layerwise mean-field recursion.
fn assert_moments_match(phi: Activation, params: MeanFieldParams, q1: f64, c1: f64) {
    let (depth, width, dim) = (10, 500, 8);
    let (a, b) = input_pair(params, dim, q1, c1).unwrap();
    let cfg = SimConfig::uniform(phi.clone(), params, width, depth, dim, 50, 1);
    let sim = simulate(&cfg, &[a.clone(), b.clone()]).unwrap();
    assert!(sim.aborted.is_empty());
    let theory = MeanField::new(phi, params)
        .iterate_kernel(input_kernel(params, &a, &b).unwrap(), depth, PropagationMode::Layerwise)
        .unwrap();
    assert!(!theory.diverged);
    let id = &cfg.activation.id;
    for (m, t) in sim.layers.iter().zip(&theory.states) {
        let z = |est: f64, se: f64, want: f64| (est - want).abs() / se;
        let zs = [
            z(m.q_a, m.q_a_se, t.q_a),
            z(m.q_b.unwrap(), m.q_b_se.unwrap(), t.q_b),
            z(m.c_ab.unwrap(), m.c_ab_se.unwrap(), t.c_ab),
        ];
        assert!(zs.iter().all(|z| *z < 4.0), "{id} layer {}: z = {zs:?}", m.layer);
    }
}

#[test]
fn moments_track_mean_field_recursion() {
    let solver = EocSolver::default();
    let relu = Activation::relu();
    let relu_eoc = solver.solve(&relu, 0.0).unwrap();
    assert_moments_match(relu, relu_eoc.params().unwrap(), 1.0, 0.2);

    let leaky = Activation::relu_like(1.0, 0.25).unwrap();
    let leaky_eoc = solver.solve(&leaky, 0.0).unwrap();
    assert_moments_match(leaky, leaky_eoc.params().unwrap(), 1.0, 0.2);

    // c1 >= sigma_b^2 / q1 is required, hence the large input variance.
    assert_moments_match(Activation::tanh(), MeanFieldParams::new(1.0, 1.0).unwrap(), 10.0, 0.2);

    let swish = Activation::swish();
    let swish_eoc = solver.solve(&swish, 0.2).unwrap();
    assert_moments_match(swish, swish_eoc.params().unwrap(), swish_eoc.q, 0.2);

    let elu = Activation::elu();
    let elu_eoc = solver.solve(&elu, 0.2).unwrap();
    assert_moments_match(elu, elu_eoc.params().unwrap(), elu_eoc.q, 0.2);
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let params = MeanFieldParams::new(1.0, 1.0).unwrap();
    let cfg = SimConfig::uniform(Activation::tanh(), params, 200, 6, 8, 24, 42);
    let (a, b) = input_pair(params, 8, 10.0, 0.3).unwrap();
    let inputs = [a, b];
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| simulate(&cfg, &inputs).unwrap())
    };
    let serial = run(1);
    assert_eq!(serial, run(4));
    assert_eq!(serial, run(16));

    let grid = FieldGrid::new(-1.0, 1.0, 12).unwrap();
    let field_cfg = SimConfig { input_dim: 2, replications: 1, ..cfg.clone() };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let single = pool.install(|| output_field(&field_cfg, &grid).unwrap());
    assert_eq!(single, output_field(&field_cfg, &grid).unwrap());
}

fn field(phi: Activation, params: MeanFieldParams, depth: usize, seed: u64, grid: &FieldGrid) -> Vec<Vec<f64>> {
    output_field(&SimConfig::uniform(phi, params, 100, depth, 2, 1, seed), grid).unwrap()
}

#[test]
fn ordered_tanh_field_is_nearly_constant_and_relu_edge_field_is_not() {
    let grid = FieldGrid::new(-1.0, 1.0, 50).unwrap();
    let tanh = MeanFieldParams::new(1.0, 1.0).unwrap();
    let relu = MeanFieldParams::new(0.0, 2.0).unwrap();
    for seed in 0..4 {
        let t = field(Activation::tanh(), tanh, 10, seed, &grid);
        let r = field(Activation::relu(), relu, 20, seed, &grid);
        assert!(relative_range(&t) < 0.2, "seed {seed}: {}", relative_range(&t));
        assert!(field_std(&r) > field_std(&t), "seed {seed}");
    }
}

/// Mean-field prediction of the median collapse ratio of a depth-`depth`
/// ReLU edge-of-chaos field on the unit disc.
///
/// The output is `|a| u(angle)` with `u` a unit-variance process whose
/// correlation at angle `d` is the `depth`-fold ReLU map applied to `cos d`.
/// Within a ring the spread is about `r sqrt(1 - cbar)`; the ring means are
/// `r ubar` with `ubar ~ N(0, cbar)`, so their spread is `|ubar| sd(r)`. Here
/// `r` has density `2r` on `[0, 1]` and the median of `|N(0, 1)|` is 0.674.
fn predicted_median_ratio(depth: usize) -> f64 {
    let n = 400;
    let cbar = (0..n)
        .map(|i| {
            let d = PI * (i as f64 + 0.5) / n as f64;
            1.0 - relu_gap_sequence(d.cos(), depth).unwrap()[depth - 1]
        })
        .sum::<f64>()
        / n as f64;
    let (mean_r2, sd_r) = (0.5, (1.0f64 / 18.0).sqrt());
    (mean_r2 * (1.0 - cbar)).sqrt() / (0.674 * cbar.sqrt() * sd_r)
}

#[test]
fn deep_relu_edge_field_collapses_onto_the_radius() {
    let params = MeanFieldParams::new(0.0, 2.0).unwrap();
    let grid = FieldGrid::new(-1.0, 1.0, 41).unwrap();
    let ratio = |depth, width, seed| {
        let cfg = SimConfig::uniform(Activation::relu(), params, width, depth, 2, 1, seed);
        let f = output_field(&cfg, &grid).unwrap();
        radial_profile(&f, &grid, 10).unwrap().collapse_ratio.unwrap()
    };
    let predicted = predicted_median_ratio(50);
    assert!(predicted < 0.5, "prediction {predicted}");
    let deep: Vec<f64> = (0..8).map(|s| ratio(50, 500, s)).collect();
    let observed = median(deep.clone());
    assert!(observed < 1.5 * predicted, "median {observed} vs prediction {predicted}: {deep:?}");
    for seed in 0..8 {
        let shallow = ratio(1, 500, seed);
        assert!(shallow > 0.5, "seed {seed}: depth-1 ratio {shallow}");
    }
}

#[test]
fn zero_input_without_bias_gives_zero_first_layer() {
    let params = MeanFieldParams::new(0.0, 2.0).unwrap();
    let cfg = SimConfig::uniform(Activation::relu(), params, 30, 1, 4, 3, 0);
    let res = simulate(&cfg, &[vec![0.0; 4]]).unwrap();
    assert!(res.final_outputs.iter().all(|r| r[0] == 0.0));
    assert_eq!(res.layers[0].q_a, 0.0);
}
