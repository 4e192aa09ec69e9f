use serde::{Deserialize, Serialize};

use crate::engine::{simulate_path, SimulationConfig};
use crate::error::{Error, Result};
use crate::model::{euclid, PathSegment};
use crate::stats::{linear_fit, McEstimate, DEFAULT_CONFIDENCE};

use rayon::prelude::*;

/// `sup_{s in [-r, 0]} |X(T + s) - X^(T + s)|` for path `index` started from
/// `x` and from `x + eps v`, driven by the same noise.
pub fn coupled_difference(config: &SimulationConfig, direction: &PathSegment, eps: f64, index: u64) -> Result<f64> {
    let hat = config.with_initial_segment(config.initial_segment.perturbed(direction, eps)?)?;
    let a = simulate_path(config, index)?;
    let b = simulate_path(&hat, index)?;
    let n = config.grid.n_steps();
    let sa = a.path.segment_at_step(n);
    let sb = b.path.segment_at_step(n);
    Ok((0..sa.len())
        .map(|j| {
            let diff: Vec<f64> = sa.value(j).iter().zip(sb.value(j)).map(|(x, y)| x - y).collect();
            euclid(&diff)
        })
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub gamma: f64,
    pub epsilons: Vec<f64>,
    /// `E ||X_T - X^_T||^gamma` per `eps`.
    pub moments: Vec<McEstimate>,
    pub slope: f64,
    pub slope_std_error: f64,
    pub intercept: f64,
    /// `exp(intercept)` divided by `||v||^gamma`.
    pub empirical_c: f64,
}

/// Regresses `log E ||X_T - X^_T||_inf^gamma` on `log eps` for perturbed
/// initial segments `x + eps v` under coupled noise.
pub fn stability_experiment(
    config: &SimulationConfig,
    direction: &PathSegment,
    epsilons: &[f64],
    gamma: f64,
    n_paths: usize,
) -> Result<StabilityReport> {
    if epsilons.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::Domain("perturbation sizes must be positive".into()));
    }
    if !(gamma > 0.0) {
        return Err(Error::Domain(format!("gamma must be positive, got {gamma}")));
    }
    if n_paths == 0 {
        return Err(Error::Config("need at least one path".into()));
    }
    let moments = epsilons
        .iter()
        .map(|&eps| {
            let samples = (0..n_paths as u64)
                .into_par_iter()
                .map(|i| coupled_difference(config, direction, eps, i).map(|d| d.powf(gamma)))
                .collect::<Result<Vec<_>>>()?;
            McEstimate::from_samples(&samples, DEFAULT_CONFIDENCE)
        })
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = epsilons.iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = moments.iter().map(|m| m.mean.ln()).collect();
    if ys.iter().any(|y| !y.is_finite()) {
        return Err(Error::Integration(
            "a perturbation produced identical paths; the log-log fit is undefined".into(),
        ));
    }
    let fit = linear_fit(&xs, &ys)?;
    let vnorm = direction.sup_norm();
    Ok(StabilityReport {
        gamma,
        epsilons: epsilons.to_vec(),
        moments,
        slope: fit.slope,
        slope_std_error: fit.slope_std_error,
        intercept: fit.intercept,
        empirical_c: fit.intercept.exp() / vnorm.powf(gamma),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::*;
    use crate::model::TimeGrid;
    use std::sync::Arc;

    fn cfg(c: CoefficientSet) -> SimulationConfig {
        let grid = TimeGrid::new(1, 0.25, 1.0, 1.0 / 64.0).unwrap();
        let seg = PathSegment::from_fn(grid, |s| vec![0.5 + s]).unwrap();
        SimulationConfig::new(grid, Arc::new(c), seg, 21).unwrap()
    }

    fn unit_direction() -> PathSegment {
        let grid = TimeGrid::new(1, 0.25, 1.0, 1.0 / 64.0).unwrap();
        PathSegment::constant(grid, &[1.0]).unwrap()
    }

    #[test]
    fn zero_perturbation_gives_identical_paths() {
        let c = CoefficientSet::new(
            singular_drift(1, 0.2, 1.0, 4.0, 4.0).unwrap(),
            identity_diffusion(1),
            discrete_delay_functional(1, 0.3),
        )
        .unwrap();
        for i in 0..8 {
            assert_eq!(coupled_difference(&cfg(c.clone()), &unit_direction(), 0.0, i).unwrap(), 0.0);
        }
    }

    #[test]
    fn lipschitz_slope_is_gamma() {
        let c = CoefficientSet::new(ou_drift(1, 1.0), identity_diffusion(1), discrete_delay_functional(1, 0.5))
            .unwrap();
        let r = stability_experiment(&cfg(c), &unit_direction(), &[1e-1, 1e-2, 1e-3, 1e-4], 2.0, 200).unwrap();
        assert!((r.slope - 2.0).abs() < 0.1, "{r:?}");
    }

    #[test]
    fn degenerate_ladder_is_config_error() {
        let c = CoefficientSet::new(ou_drift(1, 1.0), identity_diffusion(1), zero_functional(1)).unwrap();
        let r = stability_experiment(&cfg(c.clone()), &unit_direction(), &[0.1, 0.1], 1.0, 4);
        assert!(matches!(r, Err(Error::Config(_))));
        assert!(stability_experiment(&cfg(c), &unit_direction(), &[0.0, 0.1], 1.0, 4).is_err());
    }
}
