use serde::{Deserialize, Serialize};

use sddelab::estimates::{alpha_limit, BetaProcess, RadiiLadder};
use sddelab::model::pq_index;

use crate::catalog;
use crate::config::*;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

struct Collector(Vec<Violation>);

impl Collector {
    fn push(&mut self, field: &str, message: impl Into<String>) {
        self.0.push(Violation {
            field: field.into(),
            message: message.into(),
        });
    }

    fn check(&mut self, ok: bool, field: &str, message: impl FnOnce() -> String) {
        if !ok {
            self.push(field, message());
        }
    }
}

fn required(kind: ExperimentKind, cfg: &ExperimentConfig) -> [bool; 9] {
    // grid, coefficients, mc, bound, stability, zvonkin, maximal, gronwall, krylov
    let sandwich = cfg.zvonkin.as_ref().is_some_and(|z| z.sandwich.is_some());
    match kind {
        ExperimentKind::Simulate => [true, true, true, false, false, false, false, false, false],
        ExperimentKind::VerifyBound => [true, true, true, true, false, false, false, false, false],
        ExperimentKind::Stability => [true, true, true, false, true, false, false, false, false],
        ExperimentKind::Zvonkin => [true, true, sandwich, false, false, true, false, false, false],
        ExperimentKind::Maximal => [false, false, false, false, false, false, true, false, false],
        ExperimentKind::Gronwall => [false, false, true, false, false, false, false, true, false],
        ExperimentKind::Krylov => [true, true, true, false, false, false, false, false, true],
    }
}

/// Every violated constraint of `cfg`, without running anything.
pub fn validate(cfg: &ExperimentConfig) -> Vec<Violation> {
    let mut v = Collector(Vec::new());
    let present = [
        cfg.grid.is_some(),
        cfg.coefficients.is_some(),
        cfg.mc.is_some(),
        cfg.bound.is_some(),
        cfg.stability.is_some(),
        cfg.zvonkin.is_some(),
        cfg.maximal.is_some(),
        cfg.gronwall.is_some(),
        cfg.krylov.is_some(),
    ];
    let names = [
        "grid",
        "coefficients",
        "mc",
        "bound",
        "stability",
        "zvonkin",
        "maximal",
        "gronwall",
        "krylov",
    ];
    let need = required(cfg.experiment, cfg);
    for i in 0..names.len() {
        if need[i] && !present[i] {
            v.push(names[i], format!("section [{}] is required by {}", names[i], cfg.experiment.name()));
        }
        if !need[i] && present[i] {
            v.push(names[i], format!("section [{}] is not used by {}", names[i], cfg.experiment.name()));
        }
    }

    let grid = cfg.grid.as_ref().and_then(|g| match catalog::grid(g) {
        Ok(grid) => Some(grid),
        Err(e) => {
            v.push("grid", e.to_string());
            None
        }
    });
    let d = cfg.grid.map(|g| g.d);

    if let (Some(c), Some(d)) = (cfg.coefficients.as_ref(), d) {
        check_coefficients(&mut v, c, d);
        if let (Some(grid), true) = (grid.as_ref(), v.0.is_empty()) {
            if let Err(e) = catalog::coefficients(c, grid) {
                v.push("coefficients", e.to_string());
            }
        }
    }
    if let Some(c) = cfg.coefficients.as_ref() {
        v.check(
            c.diffusion != DiffusionConfig::Zero || cfg.experiment == ExperimentKind::Simulate,
            "coefficients.diffusion",
            || format!("the degenerate zero diffusion is only allowed in simulate, not {}", cfg.experiment.name()),
        );
    }
    if let Some(mc) = cfg.mc {
        v.check(mc.n_paths > 0, "mc.n_paths", || "need at least one path".into());
    }
    if let Some(b) = cfg.bound.as_ref() {
        check_bound(&mut v, cfg, b);
    }
    if let Some(s) = cfg.stability.as_ref() {
        v.check(s.gamma > 0.0, "stability.gamma", || format!("gamma must be positive, got {}", s.gamma));
        v.check(s.epsilons.iter().all(|&e| e > 0.0), "stability.epsilons", || {
            "perturbation sizes must be positive".into()
        });
        let mut distinct = s.epsilons.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        v.check(distinct.len() >= 2, "stability.epsilons", || {
            "the slope fit needs at least two distinct perturbation sizes".into()
        });
        if let Some(d) = d {
            v.check(s.direction.len() == d, "stability.direction", || {
                format!("direction has {} components, d = {d}", s.direction.len())
            });
        }
    }
    if let Some(z) = cfg.zvonkin.as_ref() {
        check_zvonkin(&mut v, cfg, z, d);
    }
    if let Some(m) = cfg.maximal.as_ref() {
        check_maximal(&mut v, m);
    }
    if let Some(g) = cfg.gronwall.as_ref() {
        v.check(g.p > 0.0 && g.p < 1.0, "gronwall.p", || format!("need 0 < p < 1, got {}", g.p));
        v.check(g.horizon > 0.0, "gronwall.horizon", || "horizon must be positive".into());
        v.check(g.n_steps > 0, "gronwall.n_steps", || "need at least one step".into());
        v.check(g.scale > 0.0, "gronwall.scale", || "scale must be positive".into());
        v.check(g.growth_horizons.iter().all(|&t| t > 0.0), "gronwall.growth_horizons", || {
            "horizons must be positive".into()
        });
        if let Some(mc) = cfg.mc {
            v.check(mc.n_paths >= 8, "mc.n_paths", || {
                "the stability check in N needs at least 8 paths".into()
            });
        }
    }
    if let Some(k) = cfg.krylov.as_ref() {
        if let Some(d) = d {
            if k.p_prime > 1.0 && k.q_prime > 1.0 {
                let idx = pq_index(d, k.p_prime, k.q_prime);
                v.check(idx < 2.0, "krylov", || {
                    format!("d/p' + 2/q' = {idx:.4} >= 2: test-function exponents are not admissible")
                });
            } else {
                v.push("krylov", format!("exponents must exceed 1, got p' = {}, q' = {}", k.p_prime, k.q_prime));
            }
        }
        v.check(
            !k.epsilons.is_empty() && k.epsilons.iter().all(|&e| e > 0.0),
            "krylov.epsilons",
            || "need at least one positive support half-width".into(),
        );
    }
    v.0
}

fn check_coefficients(v: &mut Collector, c: &CoefficientConfig, d: usize) {
    v.check(c.initial.len() == d, "coefficients.initial", || {
        format!("initial value has {} components, d = {d}", c.initial.len())
    });
    match &c.drift {
        DriftConfig::Ou { rate } => v.check(rate.is_finite(), "coefficients.drift.rate", || "rate must be finite".into()),
        DriftConfig::Constant { value } => v.check(value.len() == d, "coefficients.drift.value", || {
            format!("constant drift has {} components, d = {d}", value.len())
        }),
        DriftConfig::Singular { beta, p, q, .. } => {
            check_pq(v, d, *p, *q);
            v.check(beta * p < d as f64, "coefficients.drift", || {
                format!("beta p = {} >= d = {d}: |x|^-beta is not p-integrable", beta * p)
            });
        }
        DriftConfig::BoxIndicator { lo, hi, t0, t1, p, q } => {
            check_pq(v, d, *p, *q);
            v.check(lo < hi && t0 < t1, "coefficients.drift", || "empty box".into());
        }
        DriftConfig::Zero => {}
    }
    match &c.diffusion {
        DiffusionConfig::Scalar { s } => v.check(*s != 0.0, "coefficients.diffusion.s", || {
            "scalar diffusion must be nonzero".into()
        }),
        DiffusionConfig::Diag { values, kappa } => {
            v.check(values.len() == d, "coefficients.diffusion.values", || {
                format!("diagonal has {} entries, d = {d}", values.len())
            });
            let ok = values.iter().all(|s| s * s >= 1.0 / kappa && s * s <= *kappa);
            v.check(ok, "coefficients.diffusion.kappa", || {
                format!("kappa = {kappa} does not bound sigma sigma^T on both sides")
            });
        }
        DiffusionConfig::HolderSqrt => v.check(d == 1, "coefficients.diffusion", || {
            "holder_sqrt is one-dimensional".into()
        }),
        DiffusionConfig::Zero | DiffusionConfig::Identity => {}
    }
    v.check(c.drift_cutoff_level != Some(0), "coefficients.drift_cutoff_level", || {
        "cutoff level must be positive".into()
    });
    v.check(c.stop_level != Some(0), "coefficients.stop_level", || "stop level must be positive".into());
}

fn check_pq(v: &mut Collector, d: usize, p: f64, q: f64) {
    if !(p > 1.0 && q > 1.0) {
        v.push("coefficients.drift", format!("exponents must exceed 1, got p = {p}, q = {q}"));
        return;
    }
    let idx = pq_index(d, p, q);
    v.check(idx < 1.0, "coefficients.drift", || {
        format!("d/p + 2/q = {idx:.4} >= 1: drift integrability condition fails")
    });
}

fn kappa(c: &CoefficientConfig, d: usize) -> f64 {
    catalog::diffusion(&c.diffusion, d).kappa
}

fn check_bound(v: &mut Collector, cfg: &ExperimentConfig, b: &BoundConfig) {
    let (Some(g), Some(c)) = (cfg.grid, cfg.coefficients.as_ref()) else {
        return;
    };
    match b {
        BoundConfig::ExpSupMoment { alpha, variant } => {
            let limit = alpha_limit(*variant, g.d, kappa(c, g.d), g.horizon);
            v.check(*alpha >= 0.0 && *alpha < limit, "bound.alpha", || {
                format!("alpha = {alpha} outside [0, {limit:.6})")
            });
        }
        BoundConfig::Khasminskii { beta, alpha } => {
            let cert = beta.certificate(g.horizon);
            let a = alpha.unwrap_or(cert);
            v.check(a >= cert, "bound.alpha", || {
                format!("alpha = {a} is below the certified occupation bound {cert}")
            });
            v.check(a < 1.0, "bound.alpha", || format!("need alpha < 1, got {a}"));
            if let BetaProcess::CappedBrownianSquare { .. } = beta {
                v.check(c.diffusion == DiffusionConfig::Identity, "coefficients.diffusion", || {
                    "the Brownian integrand needs the identity diffusion".into()
                });
            }
        }
        BoundConfig::Girsanov { checkpoints, tolerance_se } => {
            v.check(*checkpoints > 0, "bound.checkpoints", || "need at least one checkpoint".into());
            v.check(*tolerance_se > 0.0, "bound.tolerance_se", || "tolerance must be positive".into());
        }
        BoundConfig::Novikov {} => {}
        BoundConfig::Holder {
            alphas,
            levels,
            factor,
            ..
        } => {
            v.check(!alphas.is_empty() && alphas.iter().all(|&a| a > 0.0 && a <= 1.0), "bound.alphas", || {
                "exponents must lie in (0, 1]".into()
            });
            v.check(*levels >= 2, "bound.levels", || "the refinement study needs two levels".into());
            v.check(*factor >= 2, "bound.factor", || "refinement factor must be at least 2".into());
        }
    }
}

fn check_zvonkin(v: &mut Collector, cfg: &ExperimentConfig, z: &ZvonkinConfig, d: Option<usize>) {
    if let Some(d) = d {
        v.check(d <= 2, "grid.d", || format!("the transform solver supports d <= 2, got {d}"));
    }
    v.check(z.halfwidth > 0.0, "zvonkin.halfwidth", || "halfwidth must be positive".into());
    v.check(z.nx >= 3, "zvonkin.nx", || "need at least 3 nodes per axis".into());
    v.check(z.n_times > 0, "zvonkin.n_times", || "need at least one time step".into());
    v.check((0.5..=1.0).contains(&z.theta), "zvonkin.theta", || {
        format!("theta must lie in [1/2, 1], got {}", z.theta)
    });
    v.check(z.threshold > 0.0 && z.threshold < 1.0, "zvonkin.threshold", || {
        "threshold must lie in (0, 1)".into()
    });
    let horizon = cfg.grid.map(|g| g.horizon).unwrap_or(f64::INFINITY);
    v.check(
        !z.ladder.is_empty() && z.ladder.iter().all(|&w| w > 0.0 && w <= horizon),
        "zvonkin.ladder",
        || "window lengths must lie in (0, T]".into(),
    );
    if let Some(s) = z.sandwich.as_ref() {
        v.check(s.n_pairs > 0, "zvonkin.sandwich.n_pairs", || "need at least one pair".into());
        v.check(0.0 < s.lower && s.lower <= 1.0 && s.upper >= 1.0, "zvonkin.sandwich", || {
            "need 0 < lower <= 1 <= upper".into()
        });
        if let Some(d) = d {
            v.check(s.offset.len() == d, "zvonkin.sandwich.offset", || {
                format!("offset has {} components, d = {d}", s.offset.len())
            });
        }
    }
}

fn check_maximal(v: &mut Collector, m: &MaximalConfig) {
    v.check(m.d == 1 || m.d == 2, "maximal.d", || format!("d must be 1 or 2, got {}", m.d));
    v.check(m.nx >= 2, "maximal.nx", || "need at least 2 nodes per axis".into());
    v.check(m.halfwidth > 0.0, "maximal.halfwidth", || "halfwidth must be positive".into());
    v.check(m.lp_exponents.iter().all(|&p| p > 1.0), "maximal.lp_exponents", || {
        "exponents must exceed 1".into()
    });
    if let MaximalFunctionConfig::LinearCore = m.function {
        v.check(m.d == 1, "maximal.function", || "linear_core is one-dimensional".into());
    }
    let smooth = !matches!(m.function, MaximalFunctionConfig::Interval { .. });
    if m.pairs.is_some() {
        v.check(smooth, "maximal.pairs", || "the gradient inequality needs a smooth function".into());
        v.check(m.seed.is_some(), "maximal.seed", || "pair sampling needs a seed".into());
    }
    if let RadiiLadder::Geometric { ratio } = m.ladder {
        v.check(ratio > 1.0, "maximal.ladder.ratio", || "ladder ratio must exceed 1".into());
    }
}
