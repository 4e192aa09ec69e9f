//! Stochastic exponential weights.
//!
//! For a driftless path `dM = sigma dW` and `theta = sigma^{-1}(b + V)`
//! evaluated along `M`, the discrete density
//!
//! ```text
//! log W(t + h) = log W(t) + theta . dW - |theta|^2 h / 2
//! ```
//!
//! is exactly the likelihood ratio of the Euler–Maruyama transition with drift
//! against the one without, so `E[W(T) f(M)]` and `E[f(X)]` estimate the same
//! number on a fixed grid.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientSet;
use crate::engine::{BrownianIncrements, Ensemble, EnsembleKind};
use crate::error::{Error, Result};
use crate::model::{SamplePath, SegmentView};
use crate::stats::{McEstimate, StabilityInN, DEFAULT_CONFIDENCE};

/// `theta(t, X_t)`, written into the output slice.
pub type ThetaFn = Arc<dyn Fn(f64, SegmentView<'_>, &mut [f64]) -> Result<()> + Send + Sync>;

/// Running log stochastic exponential along one path, at grid times `0, h, .., T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightPath {
    pub times: Vec<f64>,
    pub log_weight: Vec<f64>,
    pub quadratic_term: Vec<f64>,
    pub stochastic_integral: Vec<f64>,
}

impl WeightPath {
    pub fn final_log_weight(&self) -> f64 {
        *self.log_weight.last().expect("weight path is never empty")
    }

    pub fn final_weight(&self) -> f64 {
        self.final_log_weight().exp()
    }

    pub fn final_quadratic(&self) -> f64 {
        *self.quadratic_term.last().expect("weight path is never empty")
    }

    pub fn weight_at(&self, k: usize) -> f64 {
        self.log_weight[k].exp()
    }
}

/// Constant `theta`.
pub fn constant_theta(value: Vec<f64>) -> ThetaFn {
    Arc::new(move |_, _, out| {
        out.copy_from_slice(&value);
        Ok(())
    })
}

pub fn zero_theta() -> ThetaFn {
    Arc::new(|_, _, out| {
        out.iter_mut().for_each(|o| *o = 0.0);
        Ok(())
    })
}

/// Which drift contributions enter `theta = sigma^{-1}(...)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriftParts {
    pub drift: bool,
    pub functional: bool,
}

impl DriftParts {
    pub const ALL: Self = Self {
        drift: true,
        functional: true,
    };
    pub const DRIFT_ONLY: Self = Self {
        drift: true,
        functional: false,
    };
}

/// `theta(t, x_t) = sigma(t, x(0))^{-1} (b(t, x(0)) + V(t, x_t))`.
pub fn theta_from_coefficients(coeffs: Arc<CoefficientSet>, parts: DriftParts) -> ThetaFn {
    Arc::new(move |t, seg, out| {
        let d = coeffs.d;
        let x = seg.head();
        let mut rhs = vec![0.0; d];
        if parts.drift {
            coeffs.drift.eval(t, x, &mut rhs);
        }
        if parts.functional && !coeffs.functional.is_zero {
            let mut v = vec![0.0; d];
            coeffs.functional.eval(t, seg, &mut v);
            rhs.iter_mut().zip(&v).for_each(|(r, v)| *r += v);
        }
        let mut sigma = vec![0.0; d * d];
        coeffs.diffusion.eval(t, x, &mut sigma);
        solve_sigma(&sigma, &rhs, out).map_err(|_| Error::SingularDiffusion {
            time: t,
            state: x.to_vec(),
        })
    })
}

fn solve_sigma(sigma: &[f64], rhs: &[f64], out: &mut [f64]) -> std::result::Result<(), ()> {
    let d = rhs.len();
    if d == 1 {
        if sigma[0] == 0.0 || !sigma[0].is_finite() {
            return Err(());
        }
        out[0] = rhs[0] / sigma[0];
        return Ok(());
    }
    let m = DMatrix::from_row_slice(d, d, sigma);
    let sol = m.lu().solve(&DVector::from_column_slice(rhs)).ok_or(())?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(());
    }
    out.copy_from_slice(sol.as_slice());
    Ok(())
}

/// Left-point stochastic exponential of `theta` along `path` driven by `increments`.
pub fn weight_along_path(
    path: &SamplePath,
    increments: &BrownianIncrements,
    theta: &ThetaFn,
) -> Result<WeightPath> {
    let grid = *path.grid();
    let d = grid.d();
    let n = grid.n_steps();
    if increments.d != d || increments.n_steps() != n {
        return Err(Error::Config("increments do not match the path grid".into()));
    }
    let h = grid.step();
    let mut times = Vec::with_capacity(n + 1);
    let mut log_weight = Vec::with_capacity(n + 1);
    let mut quadratic_term = Vec::with_capacity(n + 1);
    let mut stochastic_integral = Vec::with_capacity(n + 1);
    let (mut si, mut q) = (0.0, 0.0);
    times.push(0.0);
    log_weight.push(0.0);
    quadratic_term.push(0.0);
    stochastic_integral.push(0.0);
    let mut th = vec![0.0; d];
    for k in 0..n {
        let t = k as f64 * h;
        theta(t, path.segment_at_step(k), &mut th)?;
        let dw = increments.at(k);
        let mut dot = 0.0;
        let mut sq = 0.0;
        for c in 0..d {
            dot += th[c] * dw[c];
            sq += th[c] * th[c];
        }
        si += dot;
        q += sq * h;
        times.push((k + 1) as f64 * h);
        stochastic_integral.push(si);
        quadratic_term.push(q);
        log_weight.push(si - 0.5 * q);
    }
    Ok(WeightPath {
        times,
        log_weight,
        quadratic_term,
        stochastic_integral,
    })
}

/// `dW~ = dW - theta h`: the increments that are Brownian under the tilted measure.
pub fn shift_increments(
    path: &SamplePath,
    increments: &BrownianIncrements,
    theta: &ThetaFn,
) -> Result<BrownianIncrements> {
    let grid = *path.grid();
    let d = grid.d();
    let h = grid.step();
    let mut out = increments.clone();
    let mut th = vec![0.0; d];
    for k in 0..grid.n_steps() {
        theta(k as f64 * h, path.segment_at_step(k), &mut th)?;
        for (o, t) in out.values[k * d..(k + 1) * d].iter_mut().zip(&th) {
            *o -= t * h;
        }
    }
    Ok(out)
}

/// `-theta`.
pub fn negated(theta: &ThetaFn) -> ThetaFn {
    let theta = theta.clone();
    Arc::new(move |t, seg, out| {
        theta(t, seg, out)?;
        out.iter_mut().for_each(|o| *o = -*o);
        Ok(())
    })
}

/// Adds `theta` along `dW`, then removes it along the shifted increments.
/// The returned log weights should vanish up to rounding.
pub fn round_trip(
    path: &SamplePath,
    increments: &BrownianIncrements,
    theta: &ThetaFn,
) -> Result<Vec<f64>> {
    let forward = weight_along_path(path, increments, theta)?;
    let shifted = shift_increments(path, increments, theta)?;
    let back = weight_along_path(path, &shifted, &negated(theta))?;
    Ok(forward
        .log_weight
        .iter()
        .zip(&back.log_weight)
        .map(|(a, b)| a + b)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NovikovReport {
    /// Multiplier `c` in `E exp(c * int |theta|^2 dt)`; the Novikov functional has `c = 1/2`.
    pub factor: f64,
    pub estimate: McEstimate,
    pub stability: StabilityInN,
    pub finite: bool,
}

/// Monte-Carlo estimate of `E exp(factor * int_0^T |theta|^2 dt)` over the
/// ensemble, with the N/2N/4N stability diagnostic.
pub fn exponential_energy(ensemble: &Ensemble, theta: &ThetaFn, factor: f64) -> Result<NovikovReport> {
    let samples = ensemble.map(|_, p| {
        let w = weight_along_path(&p.path, &p.increments, theta)?;
        Ok((factor * w.final_quadratic()).exp())
    })?;
    let estimate = McEstimate::from_samples(&samples, DEFAULT_CONFIDENCE)?;
    let stability = if samples.len() >= 8 {
        StabilityInN::from_samples(&samples, DEFAULT_CONFIDENCE)?
    } else {
        StabilityInN {
            estimates: vec![estimate],
            stable: estimate.is_finite(),
        }
    };
    let finite = estimate.is_finite() && stability.stable;
    Ok(NovikovReport {
        factor,
        estimate,
        stability,
        finite,
    })
}

/// `E exp(1/2 int_0^T |theta|^2 dt)`.
pub fn novikov_estimate(ensemble: &Ensemble, theta: &ThetaFn) -> Result<NovikovReport> {
    exponential_energy(ensemble, theta, 0.5)
}

/// Estimate of `E[f(X)]` under the drifted law as `E[W(T) f(M)]` over a driftless ensemble.
pub fn reweighted_expectation<F>(ensemble: &Ensemble, theta: &ThetaFn, payoff: F) -> Result<McEstimate>
where
    F: Fn(&SamplePath) -> f64 + Sync + Send,
{
    if ensemble.kind() != EnsembleKind::Driftless {
        return Err(Error::Config(
            "reweighting needs a driftless ensemble".into(),
        ));
    }
    let samples = ensemble.map(|_, p| {
        let w = weight_along_path(&p.path, &p.increments, theta)?;
        Ok(w.final_weight() * payoff(&p.path))
    })?;
    McEstimate::from_samples(&samples, DEFAULT_CONFIDENCE)
}

/// Plain Monte-Carlo estimate of `E[f(path)]`.
pub fn direct_expectation<F>(ensemble: &Ensemble, payoff: F) -> Result<McEstimate>
where
    F: Fn(&SamplePath) -> f64 + Sync + Send,
{
    let samples = ensemble.map(|_, p| Ok(payoff(&p.path)))?;
    McEstimate::from_samples(&samples, DEFAULT_CONFIDENCE)
}

/// Empirical mean of the weight at the given grid step indices.
pub fn weight_means(ensemble: &Ensemble, theta: &ThetaFn, steps: &[usize]) -> Result<Vec<McEstimate>> {
    let n = ensemble.grid().n_steps();
    if let Some(&bad) = steps.iter().find(|&&k| k > n) {
        return Err(Error::Range(format!("checkpoint step {bad} beyond {n}")));
    }
    let rows = ensemble.map(|_, p| {
        let w = weight_along_path(&p.path, &p.increments, theta)?;
        Ok(steps.iter().map(|&k| w.weight_at(k)).collect::<Vec<_>>())
    })?;
    (0..steps.len())
        .map(|j| {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            McEstimate::from_samples(&col, DEFAULT_CONFIDENCE)
        })
        .collect()
}

/// Direct versus reweighted estimator of one payoff, plus weight-mean checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub direct: McEstimate,
    pub reweighted: McEstimate,
    pub combined_std_error: f64,
    pub agree: bool,
    pub checkpoint_times: Vec<f64>,
    pub weight_means: Vec<McEstimate>,
    pub weights_normalized: bool,
}

/// Runs both estimators on the same seeds. `k` is the tolerance in standard errors.
pub fn consistency_check<F>(
    drifted: &Ensemble,
    payoff: F,
    n_checkpoints: usize,
    k: f64,
) -> Result<ConsistencyReport>
where
    F: Fn(&SamplePath) -> f64 + Sync + Send,
{
    let driftless = drifted.with_kind(EnsembleKind::Driftless);
    let theta = theta_from_coefficients(drifted.config().coefficients.clone(), DriftParts::ALL);
    let direct = direct_expectation(drifted, &payoff)?;
    let reweighted = reweighted_expectation(&driftless, &theta, &payoff)?;
    let n = drifted.grid().n_steps();
    let steps: Vec<usize> = (1..=n_checkpoints)
        .map(|j| (j * n) / n_checkpoints.max(1))
        .collect();
    let means = weight_means(&driftless, &theta, &steps)?;
    let combined_std_error = (direct.std_error.powi(2) + reweighted.std_error.powi(2)).sqrt();
    let weights_normalized = means.iter().all(|m| (m.mean - 1.0).abs() <= k * m.std_error);
    Ok(ConsistencyReport {
        agree: direct.agrees_with(&reweighted, k),
        direct,
        reweighted,
        combined_std_error,
        checkpoint_times: steps.iter().map(|&s| s as f64 * drifted.grid().step()).collect(),
        weight_means: means,
        weights_normalized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::*;
    use crate::engine::{driftless_batch, simulate_batch, SimulationConfig};
    use crate::model::{PathSegment, TimeGrid};
    use approx::assert_relative_eq;

    fn cfg(coeffs: CoefficientSet, horizon: f64, step: f64, x0: f64, seed: u64) -> SimulationConfig {
        let grid = TimeGrid::new(coeffs.d, 0.25, horizon, step).unwrap();
        let seg = PathSegment::constant(grid, &vec![x0; coeffs.d]).unwrap();
        SimulationConfig::new(grid, Arc::new(coeffs), seg, seed).unwrap()
    }

    fn bm() -> CoefficientSet {
        CoefficientSet::new(zero_drift(1), identity_diffusion(1), zero_functional(1)).unwrap()
    }

    #[test]
    fn zero_theta_gives_unit_weight() {
        let ens = driftless_batch(cfg(bm(), 1.0, 0.01, 0.0, 1), 4, None).unwrap();
        let p = ens.path(2).unwrap();
        let w = weight_along_path(&p.path, &p.increments, &zero_theta()).unwrap();
        assert!(w.log_weight.iter().all(|&l| l == 0.0));
        let nov = novikov_estimate(&ens, &zero_theta()).unwrap();
        assert_eq!(nov.estimate.mean, 1.0);
    }

    #[test]
    fn constant_theta_telescopes() {
        let ens = driftless_batch(cfg(bm(), 1.0, 0.01, 0.0, 2), 1, None).unwrap();
        let p = ens.path(0).unwrap();
        let c = 0.7;
        let w = weight_along_path(&p.path, &p.increments, &constant_theta(vec![c])).unwrap();
        let wt = p.path.state_at_step(100)[0];
        assert_relative_eq!(w.final_log_weight(), c * wt - c * c / 2.0, epsilon = 1e-12);
        for k in 0..w.log_weight.len() {
            assert_eq!(
                w.log_weight[k],
                w.stochastic_integral[k] - 0.5 * w.quadratic_term[k]
            );
        }
    }

    #[test]
    fn novikov_for_deterministic_theta() {
        let ens = driftless_batch(cfg(bm(), 2.0, 0.01, 0.0, 3), 64, None).unwrap();
        let nov = novikov_estimate(&ens, &constant_theta(vec![1.5])).unwrap();
        assert_relative_eq!(nov.estimate.mean, (1.5f64 * 1.5 * 2.0 / 2.0).exp(), max_relative = 1e-12);
        assert!(nov.finite);
    }

    #[test]
    fn singular_theta_is_caught() {
        let c = CoefficientSet::new(
            constant_drift(vec![1.0]),
            diag_diffusion(vec![0.0], 1.0),
            zero_functional(1),
        )
        .unwrap();
        let ens = driftless_batch(cfg(c.clone(), 1.0, 0.125, 0.3, 1), 1, None).unwrap();
        let p = ens.path(0).unwrap();
        let th = theta_from_coefficients(Arc::new(c), DriftParts::ALL);
        let err = weight_along_path(&p.path, &p.increments, &th).unwrap_err();
        assert!(matches!(err, Error::SingularDiffusion { time, .. } if time == 0.0));
    }

    #[test]
    fn two_dimensional_theta_solves_sigma() {
        let c = CoefficientSet::new(
            constant_drift(vec![2.0, 3.0]),
            diag_diffusion(vec![2.0, 0.5], 4.0),
            zero_functional(2),
        )
        .unwrap();
        let th = theta_from_coefficients(Arc::new(c), DriftParts::ALL);
        let grid = TimeGrid::new(2, 0.5, 1.0, 0.5).unwrap();
        let seg = PathSegment::constant(grid, &[0.0, 0.0]).unwrap();
        let mut out = [0.0; 2];
        th(0.0, seg.view(), &mut out).unwrap();
        assert_relative_eq!(out[0], 1.0);
        assert_relative_eq!(out[1], 6.0);
    }

    #[test]
    fn round_trip_cancels() {
        let c = CoefficientSet::new(ou_drift(1, 1.3), identity_diffusion(1), discrete_delay_functional(1, 0.4))
            .unwrap();
        let ens = driftless_batch(cfg(c.clone(), 1.0, 0.01, 0.8, 4), 8, None).unwrap();
        let th = theta_from_coefficients(Arc::new(c), DriftParts::ALL);
        for i in 0..8 {
            let p = ens.path(i).unwrap();
            let logs = round_trip(&p.path, &p.increments, &th).unwrap();
            for (k, l) in logs.iter().enumerate() {
                assert!(l.abs() <= 1e-8 * k.max(1) as f64);
            }
        }
    }

    #[test]
    fn reweighting_matches_direct_for_ou() {
        let c = CoefficientSet::new(ou_drift(1, 1.0), identity_diffusion(1), zero_functional(1)).unwrap();
        let ens = simulate_batch(cfg(c, 1.0, 1.0 / 64.0, 1.0, 5), 4000, None).unwrap();
        let rep = consistency_check(&ens, |p| p.state_at_step(p.grid().n_steps())[0], 5, 3.0).unwrap();
        assert!(rep.agree, "{rep:?}");
        assert!(rep.weights_normalized, "{rep:?}");
    }

    #[test]
    fn unit_payoff_and_symmetric_indicator() {
        let ens = driftless_batch(cfg(bm(), 1.0, 1.0 / 32.0, 0.0, 6), 4000, None).unwrap();
        let one = reweighted_expectation(&ens, &zero_theta(), |_| 1.0).unwrap();
        assert_eq!(one.mean, 1.0);
        let half = reweighted_expectation(&ens, &zero_theta(), |p| {
            (p.state_at_step(p.grid().n_steps())[0] > 0.0) as u8 as f64
        })
        .unwrap();
        assert!((half.mean - 0.5).abs() <= 3.0 * half.std_error);
    }

    #[test]
    fn reweighting_rejects_drifted_ensemble() {
        let ens = simulate_batch(cfg(bm(), 1.0, 0.125, 0.0, 1), 2, None).unwrap();
        assert!(reweighted_expectation(&ens, &zero_theta(), |_| 1.0).is_err());
    }
}
