use rayon::prelude::*;

use sddelab::engine::{driftless_batch, simulate_batch, simulate_path, Ensemble, EnsembleKind, SimulationConfig};
use sddelab::estimates::*;
use sddelab::girsanov::{consistency_check, novikov_estimate, theta_from_coefficients, DriftParts};
use sddelab::model::{euclid, PathSegment};
use sddelab::stats::{McEstimate, DEFAULT_CONFIDENCE};
use sddelab::zvonkin::{
    contraction_window, sandwich, solve_backward_pde, solve_ladder, PdeGrid, PdeOptions, PdeSource,
};
use sddelab::{Error, Result};

use crate::catalog;
use crate::config::*;
use crate::Artifacts;

const CURVE_POINTS: usize = 16;

pub fn dispatch(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<()> {
    match cfg.experiment {
        ExperimentKind::Simulate => simulate(cfg, out),
        ExperimentKind::VerifyBound => verify_bound(cfg, out),
        ExperimentKind::Stability => stability(cfg, out),
        ExperimentKind::Zvonkin => zvonkin(cfg, out),
        ExperimentKind::Maximal => maximal(cfg, out),
        ExperimentKind::Gronwall => gronwall(cfg, out),
        ExperimentKind::Krylov => krylov(cfg, out),
    }
}

fn section<'a, T>(s: &'a Option<T>, name: &str) -> Result<&'a T> {
    s.as_ref().ok_or_else(|| Error::Config(format!("missing section [{name}]")))
}

fn sim_config(cfg: &ExperimentConfig) -> Result<(SimulationConfig, McConfig)> {
    let grid = section(&cfg.grid, "grid")?;
    let coeffs = section(&cfg.coefficients, "coefficients")?;
    let mc = *section(&cfg.mc, "mc")?;
    Ok((catalog::simulation(grid, coeffs, mc.master_seed)?, mc))
}

fn estimate(samples: &[f64]) -> Result<McEstimate> {
    McEstimate::from_samples(samples, DEFAULT_CONFIDENCE)
}

fn simulate(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<()> {
    let (sim, mc) = sim_config(cfg)?;
    let grid = sim.grid;
    let d = grid.d();
    let ens = simulate_batch(sim, mc.n_paths, None)?;
    let rows = ens.map(|_, p| Ok((p.path.values().to_vec(), p.stopping.stopped_early(), p.path.sup_norm())))?;
    let mut curve = Vec::with_capacity(grid.n_points());
    for i in 0..grid.n_points() {
        let t = grid.time(i);
        let mut row = vec![t];
        for c in 0..d {
            let samples: Vec<f64> = rows.iter().map(|r| r.0[i * d + c]).collect();
            let e = estimate(&samples)?;
            out.row(t, format!("mean_x{c}"), e.mean, e.std_error);
            row.push(e.mean);
        }
        let sq: Vec<f64> = rows.iter().map(|r| euclid(&r.0[i * d..(i + 1) * d]).powi(2)).collect();
        let e = estimate(&sq)?;
        out.row(t, "mean_norm_sq", e.mean, e.std_error);
        curve.push(row);
    }
    let mut columns = vec!["time".to_string()];
    columns.extend((0..d).map(|c| format!("mean_x{c}")));
    let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
    out.plot("mean_path", &cols, curve);
    let sups: Vec<f64> = rows.iter().map(|r| r.2).collect();
    out.set("n_paths", mc.n_paths);
    out.set("stopped_early", rows.iter().filter(|r| r.1).count());
    out.set("sup_norm", estimate(&sups)?);
    let finals: Vec<f64> = rows.iter().map(|r| r.0[(grid.n_points() - 1) * d]).collect();
    out.set("final_x0", estimate(&finals)?);
    Ok(())
}

/// `E exp(alpha sup_{[from, t]} |X|^2)` at evenly spaced checkpoints.
fn sup_moment_curve(ens: &Ensemble, alpha: f64, from_zero: bool, out: &mut Artifacts) -> Result<()> {
    let grid = *ens.grid();
    let n = grid.n_steps();
    let m = grid.delay_steps();
    let steps: Vec<usize> = (1..=CURVE_POINTS.min(n)).map(|j| j * n / CURVE_POINTS.min(n)).collect();
    let per_path = ens.map(|_, p| {
        let start = if from_zero { m } else { 0 };
        let mut sup = 0.0f64;
        let mut vals = Vec::with_capacity(steps.len());
        let mut next = 0;
        for i in start..grid.n_points() {
            sup = sup.max(euclid(p.path.state(i)));
            if next < steps.len() && i == m + steps[next] {
                vals.push((alpha * sup * sup).exp());
                next += 1;
            }
        }
        Ok(vals)
    })?;
    let mut rows = Vec::with_capacity(steps.len());
    for (j, &k) in steps.iter().enumerate() {
        let samples: Vec<f64> = per_path.iter().map(|v| v[j]).collect();
        let e = estimate(&samples)?;
        let t = k as f64 * grid.step();
        out.row(t, "exp_sup_moment", e.mean, e.std_error);
        rows.push(vec![t, e.mean, e.std_error]);
    }
    out.plot("sup_moment", &["time", "mean", "std_error"], rows);
    Ok(())
}

fn verify_bound(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<()> {
    let (sim, mc) = sim_config(cfg)?;
    let horizon = sim.grid.horizon();
    match section(&cfg.bound, "bound")? {
        BoundConfig::ExpSupMoment { alpha, variant } => {
            let ens = if *variant == MomentVariant::Driftless {
                driftless_batch(sim, mc.n_paths, None)?
            } else {
                simulate_batch(sim, mc.n_paths, None)?
            };
            let report = exp_sup_moment_check(&ens, *alpha, *variant)?;
            out.row(horizon, "lhs", report.lhs.mean, report.lhs.std_error);
            if let Some(r) = report.rhs {
                out.row(horizon, "rhs", r, 0.0);
            }
            sup_moment_curve(&ens, *alpha, *variant == MomentVariant::Driftless, out)?;
            out.set("bound", &report);
        }
        BoundConfig::Khasminskii { beta, alpha } => {
            let ens = match beta {
                BetaProcess::Constant { .. } => None,
                BetaProcess::CappedBrownianSquare { .. } => Some(driftless_batch(sim, mc.n_paths, None)?),
            };
            let report = khasminskii_check(beta, horizon, *alpha, ens.as_ref())?;
            out.row(horizon, "lhs", report.lhs.mean, report.lhs.std_error);
            out.row(horizon, "rhs", report.rhs.unwrap_or(f64::NAN), 0.0);
            out.set("bound", &report);
        }
        BoundConfig::Girsanov {
            checkpoints,
            tolerance_se,
        } => {
            let ens = simulate_batch(sim, mc.n_paths, None)?;
            let report = consistency_check(&ens, |p| p.state(p.len() - 1)[0], *checkpoints, *tolerance_se)?;
            out.row(horizon, "direct", report.direct.mean, report.direct.std_error);
            out.row(horizon, "reweighted", report.reweighted.mean, report.reweighted.std_error);
            let mut rows = Vec::new();
            for (t, w) in report.checkpoint_times.iter().zip(&report.weight_means) {
                out.row(*t, "weight_mean", w.mean, w.std_error);
                rows.push(vec![*t, w.mean, w.std_error]);
            }
            out.plot("weight_means", &["time", "mean", "std_error"], rows);
            out.set("consistency", &report);
        }
        BoundConfig::Novikov {} => {
            let coeffs = sim.coefficients.clone();
            let ens = driftless_batch(sim, mc.n_paths, None)?;
            let theta = theta_from_coefficients(coeffs, DriftParts::ALL);
            let report = novikov_estimate(&ens, &theta)?;
            out.row(horizon, "novikov", report.estimate.mean, report.estimate.std_error);
            out.set("novikov", &report);
        }
        BoundConfig::Holder {
            alphas,
            levels,
            factor,
            role,
        } => {
            let report = holder_experiment(&sim, (*role).into(), alphas, *levels, *factor, mc.n_paths)?;
            for (a, row) in alphas.iter().zip(&report.medians) {
                let name = format!("holder_median_alpha_{a}");
                let mut rows = Vec::new();
                for (h, m) in report.steps.iter().zip(row) {
                    out.row(*h, name.clone(), *m, f64::NAN);
                    rows.push(vec![*h, *m]);
                }
                out.plot(&name, &["step", "median"], rows);
            }
            out.set("holder", &report);
        }
    }
    Ok(())
}

fn stability(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<()> {
    let (sim, mc) = sim_config(cfg)?;
    let s = section(&cfg.stability, "stability")?;
    let dir = PathSegment::constant(sim.grid, &s.direction)?;
    let report = stability_experiment(&sim, &dir, &s.epsilons, s.gamma, mc.n_paths)?;
    let mut rows = Vec::new();
    for (e, m) in report.epsilons.iter().zip(&report.moments) {
        out.row(*e, "moment", m.mean, m.std_error);
        rows.push(vec![e.ln(), m.mean.ln()]);
    }
    out.plot("stability_loglog", &["log_eps", "log_moment"], rows);
    out.set("stability", &report);
    Ok(())
}

fn zvonkin(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<()> {
    let grid_cfg = section(&cfg.grid, "grid")?;
    let z = section(&cfg.zvonkin, "zvonkin")?;
    let grid = catalog::grid(grid_cfg)?;
    let coeffs = catalog::coefficients(section(&cfg.coefficients, "coefficients")?, &grid)?;
    let horizon = grid.horizon();
    let opts = PdeOptions {
        theta: z.theta,
        ..PdeOptions::default()
    };
    let pde = PdeGrid::new(grid.d(), z.halfwidth, z.nx, 0.0, horizon, z.n_times)?;
    let sol = solve_backward_pde(&coeffs, pde, &PdeSource::Drift, &opts)?;
    let mut dense = Vec::new();
    sol.write_dense(&mut dense)
        .map_err(|e| Error::Config(format!("dense export: {e}")))?;
    out.files.push(("u_tilde.dat".into(), dense));
    let mut rows = Vec::new();
    for j in 0..=z.n_times {
        let t = sol.grid.time(j);
        let l = sol.grid_lipschitz(j);
        out.row(t, "grid_lipschitz", l, 0.0);
        rows.push(vec![t, l]);
    }
    out.plot("grid_lipschitz", &["time", "lipschitz"], rows);
    out.set("boundary", sol.boundary);
    out.set("max_lipschitz", sol.max_lipschitz());

    let family = solve_ladder(&coeffs, horizon, &z.ladder, z.halfwidth, z.nx, pde.dt(), &opts)?;
    let window = contraction_window(&family, z.threshold);
    let window = match window {
        Ok(w) => w,
        Err(e) => {
            out.set("window_error", e.to_string());
            return Err(e);
        }
    };
    out.set("window", &window);
    if let Some(s) = z.sandwich.as_ref() {
        let (sim, _) = sim_config(cfg)?;
        let sol_w = family
            .iter()
            .find(|f| (f.grid.terminal - f.grid.start - window.delta).abs() < 1e-12)
            .expect("window comes from the family");
        let base = sim.initial_segment.value(0).to_vec();
        let shifted: Vec<f64> = base.iter().zip(&s.offset).map(|(a, b)| a + b).collect();
        let hat = sim.with_initial_segment(PathSegment::constant(sim.grid, &shifted)?)?;
        let records = (0..s.n_pairs as u64)
            .into_par_iter()
            .map(|i| {
                let x = simulate_path(&sim, i)?;
                let y = simulate_path(&hat, i)?;
                sandwich(&x.path, &y.path, sol_w, s.lower, s.upper)
            })
            .collect::<Result<Vec<_>>>()?;
        let holding = records.iter().filter(|r| r.holds).count();
        let worst_lower = records.iter().map(|r| r.worst_lower_ratio).fold(f64::INFINITY, f64::min);
        let worst_upper = records.iter().map(|r| r.worst_upper_ratio).fold(0.0, f64::max);
        out.row(horizon, "sandwich_fraction", holding as f64 / records.len() as f64, 0.0);
        out.set(
            "sandwich",
            serde_json::json!({
                "pairs": records.len(),
                "holding": holding,
                "fraction": holding as f64 / records.len() as f64,
                "worst_lower_ratio": worst_lower,
                "worst_upper_ratio": worst_upper,
                "lower": s.lower,
                "upper": s.upper,
            }),
        );
    }
    Ok(())
}

fn maximal(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<()> {
    let m = section(&cfg.maximal, "maximal")?;
    let phi = GridFunction::from_fn(m.d, m.halfwidth, m.nx, |x| catalog::sampled_function(&m.function, x))?;
    let mphi = maximal_function(&phi, &m.ladder)?;
    let mut rows = Vec::new();
    for i in 0..m.nx {
        let idx = if m.d == 1 { i } else { i * m.nx + m.nx / 2 };
        let x = phi.node(idx)[0];
        out.row(x, "maximal", mphi.values[idx], 0.0);
        rows.push(vec![x, phi.values[idx], mphi.values[idx]]);
    }
    out.plot("maximal", &["x", "phi", "maximal"], rows);
    out.set("sup_maximal", mphi.values.iter().fold(0.0f64, |a, &v| a.max(v)));
    if let Some(pairs) = m.pairs {
        let f = catalog::smooth_function(&m.function, m.d)
            .ok_or_else(|| Error::Config("the gradient inequality needs a smooth function".into()))?;
        let seed = m.seed.ok_or_else(|| Error::Config("pair sampling needs a seed".into()))?;
        let report = hardy_littlewood_check(&f, m.halfwidth, m.nx, &m.ladder, pairs, seed, m.given_c, &m.lp_exponents)?;
        out.set("hardy_littlewood", &report);
    }
    Ok(())
}

fn gronwall(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<()> {
    let g = section(&cfg.gronwall, "gronwall")?;
    let mc = *section(&cfg.mc, "mc")?;
    let report = stochastic_gronwall_harness(
        &g.generator,
        g.p,
        g.horizon,
        g.n_steps,
        mc.n_paths,
        mc.master_seed,
        g.scale,
        &g.growth_horizons,
    )?;
    out.row(g.horizon, "sup_moment", report.estimate.mean, report.estimate.std_error);
    out.row(
        g.horizon,
        "scaled_sup_moment",
        report.scaled_estimate.mean,
        report.scaled_estimate.std_error,
    );
    if let Some(growth) = report.growth.as_ref() {
        let rows = growth
            .horizons
            .iter()
            .zip(&growth.log_means)
            .map(|(t, l)| vec![*t, *l])
            .collect();
        out.plot("gronwall_growth", &["horizon", "log_mean"], rows);
    }
    out.set("gronwall", &report);
    Ok(())
}

fn krylov(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<()> {
    let (sim, mc) = sim_config(cfg)?;
    let k = section(&cfg.krylov, "krylov")?;
    let d = sim.grid.d();
    let family = k
        .epsilons
        .iter()
        .map(|&e| KrylovTestFunction::shrinking_indicator(d, e, k.p_prime, k.q_prime))
        .collect::<Result<Vec<_>>>()?;
    let ens = simulate_batch(sim, mc.n_paths, None)?;
    debug_assert_eq!(ens.kind(), EnsembleKind::Drifted);
    let report = krylov_check(&ens, &family)?;
    let mut rows = Vec::new();
    for (e, r) in k.epsilons.iter().zip(&report.reports) {
        out.row(*e, "occupation", r.lhs.mean, r.lhs.std_error);
        rows.push(vec![*e, r.lhs.mean, r.parameters.get("norm").copied().unwrap_or(f64::NAN)]);
    }
    out.plot("krylov", &["eps", "occupation", "norm"], rows);
    out.set("krylov", &report);
    Ok(())
}
