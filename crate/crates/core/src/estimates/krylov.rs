use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::BoundReport;
use crate::engine::Ensemble;
use crate::error::{Error, Result};
use crate::model::{euclid, validate_pq};
use crate::stats::{McEstimate, StabilityInN, DEFAULT_CONFIDENCE};

pub type ScalarField = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// Nonnegative test function `f` in `L^{q'}(L^{p'})` with `d/p' + 2/q' < 2`.
#[derive(Clone)]
pub struct KrylovTestFunction {
    pub name: String,
    pub d: usize,
    pub eval: ScalarField,
    pub p_prime: f64,
    pub q_prime: f64,
    /// `||f||_{L^{q'}_{p'}(T)}` as a function of `T`.
    pub norm_analytic: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for KrylovTestFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KrylovTestFunction")
            .field("name", &self.name)
            .field("p_prime", &self.p_prime)
            .field("q_prime", &self.q_prime)
            .finish()
    }
}

impl KrylovTestFunction {
    pub fn new(
        name: impl Into<String>,
        d: usize,
        eval: ScalarField,
        p_prime: f64,
        q_prime: f64,
        norm_analytic: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    ) -> Result<Self> {
        if !validate_pq(d, p_prime, q_prime, 2.0)? {
            return Err(Error::Domain(format!(
                "need d/p' + 2/q' < 2, got d = {d}, p' = {p_prime}, q' = {q_prime}"
            )));
        }
        Ok(Self {
            name: name.into(),
            d,
            eval,
            p_prime,
            q_prime,
            norm_analytic,
        })
    }

    pub fn zero(d: usize) -> Self {
        Self::new("zero", d, Arc::new(|_, _| 0.0), 2.0, 4.0, Arc::new(|_| 0.0))
            .expect("admissible exponents")
    }

    /// `1` on `[0, T] x [-R, R]^d`.
    pub fn box_indicator(d: usize, halfwidth: f64, p_prime: f64, q_prime: f64) -> Result<Self> {
        Self::new(
            "box_indicator",
            d,
            Arc::new(move |_, x| x.iter().all(|v| v.abs() <= halfwidth) as u8 as f64),
            p_prime,
            q_prime,
            Arc::new(move |t| t.powf(1.0 / q_prime) * (2.0 * halfwidth).powf(d as f64 / p_prime)),
        )
    }

    /// `eps^{-d/p'} 1_{|x| <= eps/2}` (cube), whose norm `T^{1/q'}` does not depend on `eps`.
    pub fn shrinking_indicator(d: usize, eps: f64, p_prime: f64, q_prime: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::Domain(format!("eps must be positive, got {eps}")));
        }
        let height = eps.powf(-(d as f64) / p_prime);
        Self::new(
            format!("shrinking_indicator_{eps}"),
            d,
            Arc::new(move |_, x| {
                if x.iter().all(|v| v.abs() <= eps / 2.0) {
                    height
                } else {
                    0.0
                }
            }),
            p_prime,
            q_prime,
            Arc::new(move |t| t.powf(1.0 / q_prime)),
        )
    }

    /// Radial `|x|^{-beta} 1_{|x| <= 1}` with `beta p' < d`.
    pub fn radial_singular(d: usize, beta: f64, p_prime: f64, q_prime: f64) -> Result<Self> {
        if !(beta * p_prime < d as f64) {
            return Err(Error::Domain(format!("need beta p' < d, got {}", beta * p_prime)));
        }
        let omega = crate::coefficients::unit_ball_surface(d);
        let space = (omega / (d as f64 - beta * p_prime)).powf(1.0 / p_prime);
        Self::new(
            "radial_singular",
            d,
            Arc::new(move |_, x| {
                let r = euclid(x);
                if r > 0.0 && r <= 1.0 {
                    r.powf(-beta)
                } else {
                    0.0
                }
            }),
            p_prime,
            q_prime,
            Arc::new(move |t| t.powf(1.0 / q_prime) * space),
        )
    }
}

/// Per-path left-point occupation integral `sum_k f(t_k, X(t_k)) h` over `[0, T)`.
pub fn occupation_samples(ensemble: &Ensemble, f: &KrylovTestFunction) -> Result<Vec<f64>> {
    let grid = *ensemble.grid();
    if f.d != grid.d() {
        return Err(Error::Dimension {
            expected: grid.d(),
            got: f.d,
        });
    }
    let h = grid.step();
    ensemble.map(|_, p| {
        Ok(crate::stats::compensated_sum(
            (0..grid.n_steps()).map(|k| (f.eval)(k as f64 * h, p.path.state_at_step(k)) * h),
        ))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrylovReport {
    pub reports: Vec<BoundReport>,
    /// Smallest `C` with `lhs_i <= C ||f_i||` for every member with positive norm.
    pub fitted_c: f64,
    /// Stability in ensemble size of `E exp(int f)`, per member.
    pub exponential_stable: Vec<bool>,
}

/// Occupation estimates for a family of test functions.
pub fn krylov_check(ensemble: &Ensemble, family: &[KrylovTestFunction]) -> Result<KrylovReport> {
    let horizon = ensemble.grid().horizon();
    let mut reports = Vec::with_capacity(family.len());
    let mut fitted_c = 0.0f64;
    let mut exponential_stable = Vec::with_capacity(family.len());
    for f in family {
        let samples = occupation_samples(ensemble, f)?;
        let lhs = McEstimate::from_samples(&samples, DEFAULT_CONFIDENCE)?;
        let norm = (f.norm_analytic)(horizon);
        if norm > 0.0 {
            fitted_c = fitted_c.max(lhs.mean / norm);
        }
        let exp: Vec<f64> = samples.iter().map(|v| v.exp()).collect();
        let stable = if exp.len() >= 8 {
            StabilityInN::from_samples(&exp, DEFAULT_CONFIDENCE)?.stable
        } else {
            exp.iter().all(|v| v.is_finite())
        };
        exponential_stable.push(stable);
        reports.push(
            BoundReport::new(format!("krylov_{}", f.name), lhs, None)
                .with("norm", norm)
                .with("p_prime", f.p_prime)
                .with("q_prime", f.q_prime)
                .with("ratio", if norm > 0.0 { lhs.mean / norm } else { 0.0 }),
        );
    }
    for r in &mut reports {
        r.parameters.insert("fitted_c".into(), fitted_c);
    }
    Ok(KrylovReport {
        reports,
        fitted_c,
        exponential_stable,
    })
}
