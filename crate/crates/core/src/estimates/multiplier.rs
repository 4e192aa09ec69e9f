use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientSet;
use crate::engine::{simulate_path, SimulationConfig};
use crate::error::{Error, Result};
use crate::model::{euclid, PathSegment, SamplePath};
use crate::stats::{McEstimate, StabilityInN, DEFAULT_CONFIDENCE};
use crate::zvonkin::PdeSolution;

use rayon::prelude::*;

/// `A(t)` along one coupled pair, at the path times inside the solution window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierPath {
    pub times: Vec<f64>,
    pub a_values: Vec<f64>,
}

impl MultiplierPath {
    pub fn final_value(&self) -> f64 {
        self.a_values.last().copied().unwrap_or(0.0)
    }
}

fn hs(m: &[f64]) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn matmul(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = (0..d).map(|k| a[i * d + k] * b[k * d + j]).sum();
        }
    }
    out
}

/// `A(t) = c int |V(s, X_s)| ||Du(X) - Du(X^)||_HS / |Z| ds
///       + c int ||Du sigma(X) - Du sigma(X^)||_HS^2 / |Z|^2 ds`,
/// with terms where `Z(s) = 0` dropped. Accumulation stops when either path
/// leaves the PDE domain.
pub fn multiplier_path(
    x: &SamplePath,
    x_hat: &SamplePath,
    coeffs: &CoefficientSet,
    sol: &PdeSolution,
    c: f64,
) -> Result<MultiplierPath> {
    let grid = *x.grid();
    let d = grid.d();
    if sol.d() != d {
        return Err(Error::Dependency(format!(
            "gradient data has dimension {} but the paths have dimension {d}",
            sol.d()
        )));
    }
    let h = grid.step();
    let tol = 1e-9 * h;
    let mut times = Vec::new();
    let mut a_values = Vec::new();
    let mut a = 0.0;
    let mut v = vec![0.0; d];
    let mut sx = vec![0.0; d * d];
    let mut sy = vec![0.0; d * d];
    for k in 0..=grid.n_steps() {
        let t = k as f64 * h;
        if t < sol.grid.start - tol || t > sol.grid.terminal + tol {
            continue;
        }
        times.push(t);
        a_values.push(a);
        if t >= sol.grid.terminal - tol {
            break;
        }
        let xa = x.state_at_step(k);
        let xb = x_hat.state_at_step(k);
        let z: Vec<f64> = xa.iter().zip(xb).map(|(p, q)| p - q).collect();
        let zn = euclid(&z);
        if zn == 0.0 {
            continue;
        }
        let (Some(dua), Some(dub)) = (sol.du(t, xa), sol.du(t, xb)) else {
            break;
        };
        let diff: Vec<f64> = dua.iter().zip(&dub).map(|(p, q)| p - q).collect();
        let mut term = 0.0;
        if !coeffs.functional.is_zero {
            coeffs.functional.eval(t, x.segment_at_step(k), &mut v);
            term += euclid(&v) * hs(&diff) / zn;
        }
        coeffs.diffusion.eval(t, xa, &mut sx);
        coeffs.diffusion.eval(t, xb, &mut sy);
        let pa = matmul(&dua, &sx, d);
        let pb = matmul(&dub, &sy, d);
        let dd: Vec<f64> = pa.iter().zip(&pb).map(|(p, q)| p - q).collect();
        term += hs(&dd).powi(2) / (zn * zn);
        a += c * term * h;
    }
    Ok(MultiplierPath { times, a_values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierReport {
    pub c: f64,
    /// `E exp(A(T) / 2)`.
    pub estimate: McEstimate,
    pub stability: StabilityInN,
    pub mean_final_a: f64,
}

/// `E exp(A(T)/2)` over coupled pairs started from `config.initial_segment`
/// and from `hat_segment`.
pub fn gronwall_multiplier(
    config: &SimulationConfig,
    hat_segment: &PathSegment,
    sol: &PdeSolution,
    c: f64,
    n_paths: usize,
) -> Result<MultiplierReport> {
    let hat = config.with_initial_segment(hat_segment.clone())?;
    let finals = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let x = simulate_path(config, i)?;
            let y = simulate_path(&hat, i)?;
            Ok(multiplier_path(&x.path, &y.path, &config.coefficients, sol, c)?.final_value())
        })
        .collect::<Result<Vec<_>>>()?;
    let samples: Vec<f64> = finals.iter().map(|a| (0.5 * a).exp()).collect();
    let estimate = McEstimate::from_samples(&samples, DEFAULT_CONFIDENCE)?;
    let stability = if samples.len() >= 8 {
        StabilityInN::from_samples(&samples, DEFAULT_CONFIDENCE)?
    } else {
        StabilityInN {
            estimates: vec![estimate],
            stable: estimate.is_finite(),
        }
    };
    Ok(MultiplierReport {
        c,
        estimate,
        stability,
        mean_final_a: crate::stats::compensated_sum(finals.iter().copied()) / finals.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::*;
    use crate::model::TimeGrid;
    use crate::zvonkin::{solve_backward_pde, PdeGrid, PdeOptions, PdeSource};
    use std::sync::Arc;

    fn setup(c: CoefficientSet) -> (SimulationConfig, PdeSolution) {
        let grid = TimeGrid::new(1, 0.25, 1.0, 1.0 / 32.0).unwrap();
        let seg = PathSegment::constant(grid, &[0.0]).unwrap();
        let pde = PdeGrid::new(1, 6.0, 121, 0.0, 1.0, 32).unwrap();
        let sol = solve_backward_pde(&c, pde, &PdeSource::Drift, &PdeOptions::default()).unwrap();
        (SimulationConfig::new(grid, Arc::new(c), seg, 2).unwrap(), sol)
    }

    #[test]
    fn vanishes_without_delay_and_with_flat_gradient() {
        let c = CoefficientSet::new(constant_drift(vec![0.5]), identity_diffusion(1), zero_functional(1)).unwrap();
        let (cfg, sol) = setup(c);
        let hat = PathSegment::constant(cfg.grid, &[0.3]).unwrap();
        let r = gronwall_multiplier(&cfg, &hat, &sol, 1.0, 16).unwrap();
        assert!((r.estimate.mean - 1.0).abs() < 1e-9, "{r:?}");
    }

    #[test]
    fn identical_starts_give_zero() {
        let c = CoefficientSet::new(
            singular_drift(1, 0.2, 1.0, 4.0, 4.0).unwrap(),
            identity_diffusion(1),
            discrete_delay_functional(1, 0.5),
        )
        .unwrap();
        let (cfg, sol) = setup(c);
        let r = gronwall_multiplier(&cfg, &cfg.initial_segment.clone(), &sol, 1.0, 16).unwrap();
        assert_eq!(r.estimate.mean, 1.0);
        assert_eq!(r.mean_final_a, 0.0);
    }

    #[test]
    fn nondecreasing_and_dimension_checked() {
        let c = CoefficientSet::new(
            singular_drift(1, 0.2, 1.0, 4.0, 4.0).unwrap(),
            identity_diffusion(1),
            discrete_delay_functional(1, 0.5),
        )
        .unwrap();
        let (cfg, sol) = setup(c.clone());
        let hat = cfg.with_initial_segment(PathSegment::constant(cfg.grid, &[0.2]).unwrap()).unwrap();
        let x = simulate_path(&cfg, 0).unwrap();
        let y = simulate_path(&hat, 0).unwrap();
        let m = multiplier_path(&x.path, &y.path, &c, &sol, 1.0).unwrap();
        assert_eq!(m.a_values[0], 0.0);
        assert!(m.a_values.windows(2).all(|w| w[1] >= w[0]));
        let c2 = CoefficientSet::new(zero_drift(2), identity_diffusion(2), zero_functional(2)).unwrap();
        let g2 = TimeGrid::new(2, 0.25, 1.0, 1.0 / 32.0).unwrap();
        let p2 = SamplePath::from_fn(g2, crate::model::PathRole::Solution, |_| vec![0.0, 0.0]).unwrap();
        assert!(matches!(multiplier_path(&p2, &p2, &c2, &sol, 1.0), Err(Error::Dependency(_))));
    }
}
