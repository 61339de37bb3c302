use crate::args::{Command, Grid, ParamArgs};
use crate::output::{to_json, Cell, Table};
use crate::{repro, Failure};
use eoclab::closedform::{hardtanh_f_second, hardtanh_variance_map, relu_gap_sequence, relu_rate_constant};
use eoclab::conditions::{check_conditions, origin_condition, sup_deviation, tail_exponent};
use eoclab::meanfield::{c_phi_sup, m_phi_sup};
use eoclab::simulator::{input_kernel, input_pair, output_field, simulate, FieldGrid, SimConfig};
use eoclab::{
    Activation, DepthScales, EocSolver, Error, FixedPointStatus, KernelState, MeanField, MeanFieldParams,
    PropagationMode, QuadratureConfig,
};
use serde::Serialize;

/// Runs one parsed command and returns its standard output.
pub fn execute(command: Command, quad: &QuadratureConfig) -> Result<String, Failure> {
    Ok(match command {
        Command::Eoc { act, sigma_b_grid } => {
            let curve = EocSolver::with_quadrature(*quad).curve(&act.activation, &sigma_b_grid.values())?;
            to_json(&curve.points)
        }
        Command::FixedPoint { act, params, x0 } => {
            let mf = resolve(&act.activation, &params, quad)?.mean_field;
            let fp = match x0 {
                Some(x0) => mf.variance_fixed_point(x0)?,
                None => mf.minimal_fixed_point()?,
            };
            to_json(&fp)
        }
        Command::CorrFn { act, params, grid, x_max, q } => {
            let r = resolve(&act.activation, &params, quad)?;
            let q = r.variance(q)?;
            if grid < 2 || !(0.0..=1.0).contains(&x_max) {
                return Err(Failure::Usage("corr-fn needs --grid >= 2 and --x-max in [0, 1]".into()));
            }
            let mut t = Table::new(&["x", "f", "f_prime", "f_second", "f_second_path"]);
            for x in (Grid { lo: 0.0, hi: x_max, n: grid }).values() {
                let f = r.mean_field.correlation_map(x, q)?;
                let fp = r.mean_field.correlation_map_derivative(x, q)?;
                // f'' is not evaluated at x = 1, where it is singular for kinked activations.
                let (f2, path) = if x < 1.0 {
                    let s = r.mean_field.correlation_map_second(x, q)?;
                    (s.value, serde_json::to_value(s.path).expect("enum").as_str().unwrap_or("").to_string())
                } else {
                    (f64::NAN, "none".into())
                };
                t.row(vec![x.into(), f.into(), fp.into(), f2.into(), Cell::S(path)]);
            }
            t.finish()
        }
        Command::Iterate { act, params, c0, depth, layerwise, q0 } => {
            let r = resolve(&act.activation, &params, quad)?;
            let q = r.variance(q0)?;
            let mode = if layerwise { PropagationMode::Layerwise } else { PropagationMode::Homogeneous };
            let trace = r.mean_field.iterate_kernel(KernelState::new(1, q, q, c0)?, depth, mode)?;
            let mut t = Table::new(&["layer", "q_a", "q_b", "c", "gap"]);
            for s in &trace.states {
                t.row(vec![s.layer.into(), s.q_a.into(), s.q_b.into(), s.c_ab.into(), s.corr_gap.into()]);
            }
            t.finish()
        }
        Command::DepthScales { act, params, q } => {
            let r = resolve(&act.activation, &params, quad)?;
            let q = r.variance(q)?;
            #[derive(Serialize)]
            struct Out {
                q: f64,
                #[serde(flatten)]
                scales: DepthScales,
            }
            to_json(&Out { q, scales: r.mean_field.depth_scales(q)? })
        }
        Command::ReluRate { depth, c0, stride } => {
            if depth == 0 || stride == 0 {
                return Err(Failure::Usage("relu-rate needs --depth >= 1 and --stride >= 1".into()));
            }
            let gaps = relu_gap_sequence(c0, depth)?;
            let limit = relu_rate_constant();
            let mut t = Table::new(&["layer", "scaled_gap", "limit"]);
            for (i, gap) in gaps.iter().enumerate() {
                let l = i + 1;
                if l == 1 || l == depth || l % stride == 0 {
                    t.row(vec![l.into(), ((l * l) as f64 * gap).into(), limit.into()]);
                }
            }
            t.finish()
        }
        Command::Check { act, sigma_b_grid, x_grid } => {
            to_json(&check_conditions(&act.activation, &sigma_b_grid.values(), x_grid, quad)?)
        }
        Command::Simulate { act, params, widths, depth, reps, seed, input_dim, q1, c1, field } => {
            let p = resolve(&act.activation, &params, quad)?;
            let widths = expand_widths(&widths, depth)?;
            let cfg = SimConfig {
                widths,
                input_dim,
                params: p.mean_field.params,
                activation: act.activation.clone(),
                replications: reps,
                seed,
            };
            match field {
                Some(g) => field_table(&cfg, g)?,
                None => moment_table(&cfg, &p.mean_field, q1, c1)?,
            }
        }
        Command::SupDev { act, sigma_b_grid, x_grid } => {
            let solver = EocSolver::with_quadrature(*quad);
            let mut t = Table::new(&["sigma_b", "status", "sup_dev", "bound", "f_at_zero"]);
            for point in solver.curve(&act.activation, &sigma_b_grid.values())?.points {
                let status = serde_json::to_value(point.status).expect("enum");
                let status = status.as_str().unwrap_or("");
                if point.found() && point.q > 0.0 {
                    let s = sup_deviation(&act.activation, &point, x_grid, quad)?;
                    t.row(vec![s.sigma_b.into(), status.into(), s.sup_dev.into(), s.bound.into(), s.f_at_zero.into()]);
                } else {
                    t.row(vec![point.sigma_b.into(), status.into(), f64::NAN.into(), f64::NAN.into(), f64::NAN.into()]);
                }
            }
            t.finish()
        }
        Command::HardtanhVariance { x, sigma_b, sigma_w } => {
            let p = MeanFieldParams::from_std(sigma_b, sigma_w)?;
            let mf = MeanField::new(Activation::hard_tanh(), p).with_quadrature(*quad);
            let mut t = Table::new(&["x", "approx_exp_inv_x", "approx_exp_inv_2x", "exact", "quadrature"]);
            for x in x.0 {
                let v = hardtanh_variance_map(x, p)?;
                let num = mf.variance_map(x)?;
                t.row(vec![x.into(), v.approx_exp_inv_x.into(), v.approx_exp_inv_2x.into(), v.exact.into(), num.into()]);
            }
            t.finish()
        }
        Command::HardtanhCurvature { q, sigma_w, x_grid } => {
            let mf = MeanField::new(Activation::hard_tanh(), MeanFieldParams::from_std(0.0, sigma_w)?)
                .with_quadrature(*quad);
            let mut t = Table::new(&["x", "closed_form", "numeric"]);
            for x in x_grid.values() {
                let exact = hardtanh_f_second(x, q, sigma_w * sigma_w)?;
                let num = mf.correlation_map_second(x, q)?.value;
                t.row(vec![x.into(), exact.into(), num.into()]);
            }
            t.finish()
        }
        Command::Bounds { act, delta, x_max, grid, c_grid } => {
            #[derive(Serialize)]
            struct Out {
                /// Grid supremum of `|phi(x)/x|`; absent when unbounded.
                growth_k: Option<f64>,
                m_phi: f64,
                c_phi_delta: f64,
                delta: f64,
                x_max: f64,
            }
            let m_phi = m_phi_sup(&act.activation, x_max, grid, quad)?;
            let c_phi_delta = c_phi_sup(&act.activation, delta, x_max, c_grid, quad)?;
            let growth_k = origin_condition(&act.activation).growth_bound_k;
            to_json(&Out { growth_k, m_phi, c_phi_delta, delta, x_max })
        }
        Command::Tail { act, range } => to_json(&tail_exponent(&act.activation, range.lo, range.hi, quad)?),
        Command::Repro { manifest, report } => {
            let text = match manifest {
                Some(path) => std::fs::read_to_string(&path)
                    .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?,
                None => repro::BUILTIN_MANIFEST.to_string(),
            };
            let outcome = repro::run_manifest(&text, quad)?;
            if let Some(path) = report {
                std::fs::write(&path, &outcome.markdown)
                    .map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))?;
            }
            if outcome.all_pass {
                outcome.markdown
            } else {
                return Err(Failure::Checks(outcome.markdown));
            }
        }
    })
}

struct Resolved {
    mean_field: MeanField,
    /// Variance carried by an edge-of-chaos point.
    eoc_q: Option<f64>,
}

impl Resolved {
    /// Explicit variance, else the edge-of-chaos `q`, else the least fixed point.
    fn variance(&self, explicit: Option<f64>) -> Result<f64, Failure> {
        if let Some(q) = explicit.or(self.eoc_q) {
            return Ok(q);
        }
        let fp = self.mean_field.minimal_fixed_point()?;
        if fp.status != FixedPointStatus::Converged {
            return Err(Error::Domain(format!("variance map has no reachable fixed point ({:?})", fp.status)).into());
        }
        Ok(fp.q)
    }
}

fn resolve(phi: &Activation, args: &ParamArgs, quad: &QuadratureConfig) -> Result<Resolved, Failure> {
    if args.on_eoc {
        let point = EocSolver::with_quadrature(*quad).solve(phi, args.sigma_b)?;
        let params = point.params()?;
        return Ok(Resolved {
            mean_field: MeanField::new(phi.clone(), params).with_quadrature(*quad),
            eoc_q: Some(point.q),
        });
    }
    let Some(sigma_w) = args.sigma_w else {
        return Err(Failure::Usage("either --sigma-w or --on-eoc is required".into()));
    };
    let params = MeanFieldParams::from_std(args.sigma_b, sigma_w)?;
    Ok(Resolved { mean_field: MeanField::new(phi.clone(), params).with_quadrature(*quad), eoc_q: None })
}

fn expand_widths(spec: &str, depth: Option<usize>) -> Result<Vec<usize>, Failure> {
    let list: Vec<usize> = crate::args::parse_list(spec).map_err(Failure::Usage)?;
    match (list.as_slice(), depth) {
        ([w], Some(d)) => Ok(vec![*w; d]),
        ([_], None) => Err(Failure::Usage("a single width needs --depth".into())),
        (_, Some(d)) if d != list.len() => {
            Err(Failure::Usage(format!("--depth {d} does not match {} widths", list.len())))
        }
        _ => Ok(list),
    }
}

fn moment_table(cfg: &SimConfig, mf: &MeanField, q1: f64, c1: f64) -> Result<String, Failure> {
    let (a, b) = input_pair(cfg.params, cfg.input_dim, q1, c1)?;
    let sim = simulate(cfg, &[a.clone(), b.clone()])?;
    let theory = mf.iterate_kernel(input_kernel(cfg.params, &a, &b)?, cfg.depth(), PropagationMode::Layerwise)?;
    let mut t = Table::new(&[
        "layer", "q_a", "q_a_se", "q_b", "q_b_se", "c_ab", "c_ab_se", "q_a_theory", "q_b_theory", "c_ab_theory",
    ]);
    for (i, m) in sim.layers.iter().enumerate() {
        let s = theory.states.get(i);
        t.row(vec![
            m.layer.into(),
            m.q_a.into(),
            m.q_a_se.into(),
            m.q_b.into(),
            m.q_b_se.into(),
            m.c_ab.into(),
            m.c_ab_se.into(),
            s.map(|s| s.q_a).into(),
            s.map(|s| s.q_b).into(),
            s.map(|s| s.c_ab).into(),
        ]);
    }
    Ok(t.finish())
}

fn field_table(cfg: &SimConfig, g: Grid) -> Result<String, Failure> {
    let grid = FieldGrid::new(g.lo, g.hi, g.n)?;
    let field = output_field(cfg, &grid)?;
    let mut t = Table::new(&["x", "y", "output"]);
    for (i, row) in field.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            t.row(vec![grid.coord(i).into(), grid.coord(j).into(), (*v).into()]);
        }
    }
    Ok(t.finish())
}
