//! Finite-width forward propagation of random fully-connected networks.
//!
//! Layer `l` computes `y^l = W^l phi(y^{l-1}) + B^l` (the first layer takes
//! the raw input), with `W^l_ij ~ N(0, sigma_w^2 / N_{l-1})` and
//! `B^l_i ~ N(0, sigma_b^2)`. Each replication draws its weights from its own
//! ChaCha8 stream `(seed, replication)`, so results do not depend on how
//! replications are scheduled.

use crate::activation::Activation;
use crate::error::{domain, Error, Result};
use crate::meanfield::{KernelState, MeanFieldParams};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// `N_1..N_L`.
    pub widths: Vec<usize>,
    pub input_dim: usize,
    pub params: MeanFieldParams,
    pub activation: Activation,
    pub replications: usize,
    pub seed: u64,
}

impl SimConfig {
    pub fn uniform(
        activation: Activation,
        params: MeanFieldParams,
        width: usize,
        depth: usize,
        input_dim: usize,
        replications: usize,
        seed: u64,
    ) -> Self {
        Self { widths: vec![width; depth], input_dim, params, activation, replications, seed }
    }

    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config("widths must be nonempty and all >= 1".into()));
        }
        if self.input_dim == 0 {
            return Err(Error::Config("input dimension must be >= 1".into()));
        }
        if self.replications == 0 {
            return Err(Error::Config("replications must be >= 1".into()));
        }
        Ok(())
    }

    fn rng(&self, replication: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(replication as u64);
        rng
    }
}

/// Per-layer moment estimates. Standard errors are across replications.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerMoments {
    pub layer: usize,
    pub q_a: f64,
    pub q_a_se: f64,
    /// Second-input fields are `None` when a single input was propagated.
    pub q_b: Option<f64>,
    pub q_b_se: Option<f64>,
    pub c_ab: Option<f64>,
    pub c_ab_se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub layers: Vec<LayerMoments>,
    /// `[replication][input]`: neuron 0 of the last layer.
    pub final_outputs: Vec<Vec<f64>>,
    /// `[replication][layer - 1]`: neuron 0 for the first input.
    pub neuron0_trace: Vec<Vec<f64>>,
    /// Replications dropped because a pre-activation was not finite.
    pub aborted: Vec<usize>,
}

/// Draws all layers of one replication and propagates the columns of `x`.
/// `visit` sees each layer's pre-activations (`N_l x inputs`).
fn forward<V>(cfg: &SimConfig, replication: usize, x: &DMatrix<f64>, mut visit: V) -> Result<DMatrix<f64>>
where
    V: FnMut(usize, &DMatrix<f64>),
{
    let mut rng = cfg.rng(replication);
    let sb = cfg.params.sigma_b();
    let sw = cfg.params.sigma_w();
    let mut fan_in = cfg.input_dim;
    let mut h = x.clone();
    for (l, &width) in cfg.widths.iter().enumerate() {
        let scale = sw / (fan_in as f64).sqrt();
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let w: Vec<f64> = (0..width * fan_in).map(|_| scale * normal()).collect();
        let b: Vec<f64> = (0..width).map(|_| sb * normal()).collect();
        let w = DMatrix::from_row_slice(width, fan_in, &w);
        let input = if l == 0 { h } else { h.map(|v| cfg.activation.value(v)) };
        let mut y = w * input;
        for (i, mut row) in y.row_iter_mut().enumerate() {
            row.add_scalar_mut(b[i]);
        }
        if let Some(&bad) = y.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite { node: bad });
        }
        visit(l + 1, &y);
        h = y;
        fan_in = width;
    }
    Ok(h)
}

fn inputs_matrix(cfg: &SimConfig, inputs: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if inputs.is_empty() {
        return domain("at least one input is required");
    }
    if let Some(bad) = inputs.iter().find(|a| a.len() != cfg.input_dim) {
        return domain(format!("input of dimension {} does not match d = {}", bad.len(), cfg.input_dim));
    }
    Ok(DMatrix::from_fn(cfg.input_dim, inputs.len(), |i, j| inputs[j][i]))
}

struct RepMoments {
    q_a: Vec<f64>,
    q_b: Vec<f64>,
    c_ab: Vec<f64>,
    outputs: Vec<f64>,
    neuron0: Vec<f64>,
}

fn mean_se(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, f64::NAN);
    }
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Propagates `inputs` through `cfg.replications` independent networks.
/// Moments use the first two inputs; per replication they are averaged over
/// neurons, then pooled over replications.
pub fn simulate(cfg: &SimConfig, inputs: &[Vec<f64>]) -> Result<SimResult> {
    cfg.validate()?;
    let x = inputs_matrix(cfg, inputs)?;
    let two = inputs.len() >= 2;
    let reps: Vec<std::result::Result<RepMoments, usize>> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| {
            let depth = cfg.depth();
            let mut m = RepMoments {
                q_a: Vec::with_capacity(depth),
                q_b: Vec::with_capacity(depth),
                c_ab: Vec::with_capacity(depth),
                outputs: Vec::new(),
                neuron0: Vec::with_capacity(depth),
            };
            let last = forward(cfg, r, &x, |_, y| {
                let n = y.nrows() as f64;
                let a = y.column(0);
                let qa = a.dot(&a) / n;
                m.q_a.push(qa);
                m.neuron0.push(a[0]);
                if two {
                    let b = y.column(1);
                    let qb = b.dot(&b) / n;
                    let denom = (qa * qb).sqrt();
                    m.q_b.push(qb);
                    m.c_ab.push(if denom > 0.0 { (a.dot(&b) / n / denom).clamp(-1.0, 1.0) } else { 1.0 });
                }
            })
            .map_err(|_| r)?;
            m.outputs = last.row(0).iter().copied().collect();
            Ok(m)
        })
        .collect();
    let aborted: Vec<usize> = reps.iter().filter_map(|r| r.as_ref().err().copied()).collect();
    let ok: Vec<&RepMoments> = reps.iter().filter_map(|r| r.as_ref().ok()).collect();
    if ok.is_empty() {
        return Err(Error::NonFinite { node: f64::NAN });
    }
    let layers = (0..cfg.depth())
        .map(|l| {
            let (q_a, q_a_se) = mean_se(ok.iter().map(|m| m.q_a[l]));
            let (q_b, q_b_se, c_ab, c_ab_se) = if two {
                let (qb, qbs) = mean_se(ok.iter().map(|m| m.q_b[l]));
                let (c, cs) = mean_se(ok.iter().map(|m| m.c_ab[l]));
                (Some(qb), Some(qbs), Some(c), Some(cs))
            } else {
                (None, None, None, None)
            };
            LayerMoments { layer: l + 1, q_a, q_a_se, q_b, q_b_se, c_ab, c_ab_se }
        })
        .collect();
    Ok(SimResult {
        layers,
        final_outputs: ok.iter().map(|m| m.outputs.clone()).collect(),
        neuron0_trace: ok.iter().map(|m| m.neuron0.clone()).collect(),
        aborted,
    })
}

/// Layer-1 kernel of two inputs: `q = sigma_b^2 + sigma_w^2 |a|^2 / d`,
/// `c = (sigma_b^2 + sigma_w^2 a.b / d) / sqrt(q_a q_b)`.
pub fn input_kernel(params: MeanFieldParams, a: &[f64], b: &[f64]) -> Result<KernelState> {
    if a.len() != b.len() || a.is_empty() {
        return domain("inputs must be nonempty and of equal dimension");
    }
    let d = a.len() as f64;
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| x * y).sum::<f64>();
    let q_a = params.sigma_b2 + params.sigma_w2 * dot(a, a) / d;
    let q_b = params.sigma_b2 + params.sigma_w2 * dot(b, b) / d;
    let cov = params.sigma_b2 + params.sigma_w2 * dot(a, b) / d;
    let denom = (q_a * q_b).sqrt();
    KernelState::new(1, q_a, q_b, if denom > 0.0 { cov / denom } else { 1.0 })
}

/// Rescales `a` so that its layer-1 variance equals `target_q`.
pub fn scale_input(a: &[f64], target_q: f64, params: MeanFieldParams) -> Result<Vec<f64>> {
    let norm2: f64 = a.iter().map(|v| v * v).sum();
    if !(norm2 > 0.0) {
        return domain("cannot rescale a zero input");
    }
    if !(target_q >= params.sigma_b2) {
        return domain(format!("target variance {target_q} is below sigma_b^2 = {}", params.sigma_b2));
    }
    let want = (target_q - params.sigma_b2) * a.len() as f64 / params.sigma_w2;
    let s = (want / norm2).sqrt();
    Ok(a.iter().map(|v| v * s).collect())
}

/// Two inputs in `R^dim` whose layer-1 kernel is `(q1, q1, c1)`: `a` along
/// the first axis, `b` in the plane of the first two.
pub fn input_pair(params: MeanFieldParams, dim: usize, q1: f64, c1: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if dim < 2 {
        return Err(Error::Config("an input pair needs dimension >= 2".into()));
    }
    if !(c1.abs() <= 1.0) {
        return domain(format!("layer-1 correlation must lie in [-1, 1], got {c1}"));
    }
    if !(q1 > params.sigma_b2) {
        return domain(format!("layer-1 variance {q1} must exceed sigma_b^2 = {}", params.sigma_b2));
    }
    // Layer-1 covariance is sigma_b^2 + sigma_w^2 <a, b> / dim.
    let norm2 = (q1 - params.sigma_b2) * dim as f64 / params.sigma_w2;
    let dot = (c1 * q1 - params.sigma_b2) * dim as f64 / params.sigma_w2;
    if dot.abs() > norm2 {
        return domain(format!("correlation {c1} is unreachable at q1 = {q1}: it must be >= sigma_b^2 / q1"));
    }
    let r = norm2.sqrt();
    let along = dot / r;
    let across = (norm2 - along * along).max(0.0).sqrt();
    let mut a = vec![0.0; dim];
    let mut b = vec![0.0; dim];
    a[0] = r;
    b[0] = along;
    b[1] = across;
    Ok((a, b))
}

/// Square grid `[lo, hi]^2` with `n` points per axis, both ends included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldGrid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl FieldGrid {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo < hi) || n < 2 || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Config(format!("invalid field grid {lo}:{hi}:{n}")));
        }
        Ok(Self { lo, hi, n })
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.lo + (self.hi - self.lo) * i as f64 / (self.n - 1) as f64
    }
}

/// Output of neuron 0 of the last layer of replication 0 over a 2-D grid;
/// `field[i][j]` is the output at `(coord(i), coord(j))`.
pub fn output_field(cfg: &SimConfig, grid: &FieldGrid) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    if cfg.input_dim != 2 {
        return Err(Error::Config("output fields need input dimension 2".into()));
    }
    let n = grid.n;
    let x = DMatrix::from_fn(2, n * n, |k, col| grid.coord(if k == 0 { col / n } else { col % n }));
    let last = forward(cfg, 0, &x, |_, _| {})?;
    Ok((0..n).map(|i| (0..n).map(|j| last[(0, i * n + j)]).collect()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialBin {
    pub radius: f64,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    pub bins: Vec<RadialBin>,
    /// Root mean square deviation of points from their bin mean.
    pub within_std: f64,
    /// Root mean square deviation of bin means (weighted by count) from the
    /// overall mean.
    pub across_std: f64,
    /// `within_std / across_std`; `None` when `across_std` is zero.
    pub collapse_ratio: Option<f64>,
}

/// Groups field values by `|a|` into `bins` equal-width rings out to the
/// inscribed radius; corner points beyond it are ignored.
pub fn radial_profile(field: &[Vec<f64>], grid: &FieldGrid, bins: usize) -> Result<RadialProfile> {
    if bins == 0 || field.len() != grid.n || field.iter().any(|r| r.len() != grid.n) {
        return domain("field shape does not match grid, or zero bins");
    }
    let rmax = grid.lo.abs().min(grid.hi.abs());
    if !(grid.lo < 0.0 && grid.hi > 0.0) {
        return domain("radial profile needs a grid containing the origin");
    }
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); bins];
    for (i, row) in field.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let r = grid.coord(i).hypot(grid.coord(j));
            if r <= rmax {
                let k = ((r / rmax) * bins as f64).floor().min((bins - 1) as f64) as usize;
                members[k].push(v);
            }
        }
    }
    let all: Vec<f64> = members.iter().flatten().copied().collect();
    let total = all.len() as f64;
    let overall = all.iter().sum::<f64>() / total;
    let mut within = 0.0;
    let mut across = 0.0;
    let mut out = Vec::with_capacity(bins);
    for (k, vals) in members.iter().enumerate() {
        if vals.is_empty() {
            continue;
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let ss: f64 = vals.iter().map(|v| (v - mean).powi(2)).sum();
        within += ss;
        across += n * (mean - overall).powi(2);
        out.push(RadialBin {
            radius: rmax * (k as f64 + 0.5) / bins as f64,
            mean,
            std: (ss / n).sqrt(),
            count: vals.len(),
        });
    }
    let within_std = (within / total).sqrt();
    let across_std = (across / total).sqrt();
    let collapse_ratio = (across_std > 0.0).then(|| within_std / across_std);
    Ok(RadialProfile { bins: out, within_std, across_std, collapse_ratio })
}

/// `(max - min) / |mean|` of a field.
pub fn relative_range(field: &[Vec<f64>]) -> f64 {
    let vals = field.iter().flatten();
    let (lo, hi, sum, n) = vals.fold((f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize), |(lo, hi, s, n), &v| {
        (lo.min(v), hi.max(v), s + v, n + 1)
    });
    (hi - lo) / (sum / n as f64).abs()
}

/// Population standard deviation of a field.
pub fn field_std(field: &[Vec<f64>]) -> f64 {
    let n = field.iter().map(Vec::len).sum::<usize>() as f64;
    let mean = field.iter().flatten().sum::<f64>() / n;
    (field.iter().flatten().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn relu_eoc() -> MeanFieldParams {
        MeanFieldParams::new(0.0, 2.0).unwrap()
    }

    #[test]
    fn zero_input_without_bias_gives_zero_layer_one() {
        let cfg = SimConfig::uniform(Activation::tanh(), relu_eoc(), 20, 3, 4, 2, 7);
        let r = simulate(&cfg, &[vec![0.0; 4]]).unwrap();
        assert_eq!(r.layers[0].q_a, 0.0);
        assert_eq!(r.neuron0_trace[0][0], 0.0);
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let cfg = SimConfig::uniform(Activation::relu(), relu_eoc(), 30, 4, 3, 6, 11);
        let inputs = [vec![1.0, 0.0, 0.5], vec![0.2, 1.0, -0.3]];
        assert_eq!(simulate(&cfg, &inputs).unwrap(), simulate(&cfg, &inputs).unwrap());
        let other = SimConfig { seed: 12, ..cfg.clone() };
        assert_ne!(simulate(&cfg, &inputs).unwrap(), simulate(&other, &inputs).unwrap());
    }

    #[test]
    fn input_kernel_and_scaling() {
        let p = MeanFieldParams::new(0.25, 2.0).unwrap();
        let a = scale_input(&[3.0, 4.0], 1.5, p).unwrap();
        let k = input_kernel(p, &a, &a).unwrap();
        assert!((k.q_a - 1.5).abs() < 1e-14);
        assert!((k.c_ab - 1.0).abs() < 1e-14);
        assert!(scale_input(&[1.0], 0.1, p).is_err());
        assert!(scale_input(&[0.0], 1.0, p).is_err());
    }

    #[test]
    fn input_pair_hits_requested_kernel() {
        let p = MeanFieldParams::new(1.0, 1.0).unwrap();
        let (a, b) = input_pair(p, 8, 10.0, 0.2).unwrap();
        let k = input_kernel(p, &a, &b).unwrap();
        assert!((k.q_a - 10.0).abs() < 1e-12 && (k.q_b - 10.0).abs() < 1e-12);
        assert!((k.c_ab - 0.2).abs() < 1e-14);
        // With sigma_b^2 = 1 the layer-1 correlation is at least 1 / q1.
        assert!(input_pair(p, 8, 1.5, 0.2).is_err());
        assert!(input_pair(p, 1, 10.0, 0.2).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = SimConfig::uniform(Activation::relu(), relu_eoc(), 3, 2, 2, 1, 0);
        assert!(simulate(&cfg, &[]).is_err());
        assert!(simulate(&cfg, &[vec![1.0]]).is_err());
        cfg.widths = vec![3, 0];
        assert!(simulate(&cfg, &[vec![1.0, 1.0]]).is_err());
    }

    #[test]
    fn constant_field_has_no_collapse_ratio() {
        let grid = FieldGrid::new(-1.0, 1.0, 9).unwrap();
        let field = vec![vec![2.0; 9]; 9];
        let p = radial_profile(&field, &grid, 4).unwrap();
        assert_eq!(p.collapse_ratio, None);
        assert_eq!(p.within_std, 0.0);
        assert_eq!(relative_range(&field), 0.0);
    }

    #[test]
    fn radial_field_collapses() {
        let grid = FieldGrid::new(-1.0, 1.0, 41).unwrap();
        let field: Vec<Vec<f64>> = (0..41)
            .map(|i| (0..41).map(|j| 3.0 * grid.coord(i).hypot(grid.coord(j))).collect())
            .collect();
        let p = radial_profile(&field, &grid, 10).unwrap();
        assert!(p.collapse_ratio.unwrap() < 0.2);
    }

    #[test]
    fn field_layout_matches_coordinates() {
        // Depth-1 linear network without bias: y = w . a.
        let cfg = SimConfig::uniform(Activation::linear(), MeanFieldParams::new(0.0, 1.0).unwrap(), 1, 1, 2, 1, 5);
        let grid = FieldGrid::new(-1.0, 1.0, 3).unwrap();
        let f = output_field(&cfg, &grid).unwrap();
        let w0 = f[2][1];
        let w1 = f[1][2];
        assert_eq!(f[1][1], 0.0);
        assert!((f[0][0] + w0 + w1).abs() < 1e-15);
    }
}
