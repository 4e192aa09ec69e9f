use serde::{Deserialize, Serialize};

use super::BoundReport;
use crate::engine::{Ensemble, EnsembleKind};
use crate::error::{Error, Result};
use crate::model::euclid;
use crate::stats::{compensated_sum, McEstimate, DEFAULT_CONFIDENCE};

/// Nonnegative adapted integrands with an analytic occupation certificate
/// `sup_{s <= t} E[int_s^t beta | F_s] <= alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BetaProcess {
    /// `beta = c`.
    Constant { c: f64 },
    /// `beta(t) = c min(|W(t)|^2, cap)` with `W` the driving Brownian path.
    CappedBrownianSquare { c: f64, cap: f64 },
}

impl BetaProcess {
    /// An `alpha` satisfying the hypothesis on `[0, T]`.
    pub fn certificate(&self, horizon: f64) -> f64 {
        match *self {
            BetaProcess::Constant { c } => c * horizon,
            BetaProcess::CappedBrownianSquare { c, cap } => c * cap * horizon,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            BetaProcess::Constant { c } => c >= 0.0,
            BetaProcess::CappedBrownianSquare { c, cap } => c >= 0.0 && cap >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain("beta must be nonnegative".into()))
        }
    }
}

/// `E exp(int_0^T beta)` against `1/(1 - alpha)`.
///
/// Deterministic integrands are evaluated exactly; the Brownian integrand
/// needs a driftless ensemble with `sigma = I`. `alpha` defaults to the
/// analytic certificate and may only be raised above it.
pub fn khasminskii_check(
    beta: &BetaProcess,
    horizon: f64,
    alpha: Option<f64>,
    ensemble: Option<&Ensemble>,
) -> Result<BoundReport> {
    beta.validate()?;
    let cert = beta.certificate(horizon);
    let alpha = alpha.unwrap_or(cert);
    if alpha < cert {
        return Err(Error::Domain(format!(
            "alpha = {alpha} is below the certified occupation bound {cert}"
        )));
    }
    if !(alpha < 1.0) {
        return Err(Error::Domain(format!("need alpha < 1, got {alpha}")));
    }
    let rhs = 1.0 / (1.0 - alpha);
    let lhs = match *beta {
        BetaProcess::Constant { c } => McEstimate::exact((c * horizon).exp(), 1),
        BetaProcess::CappedBrownianSquare { c, cap } => {
            let ens = ensemble.ok_or_else(|| {
                Error::Config("a Brownian integrand needs an ensemble".into())
            })?;
            if ens.kind() != EnsembleKind::Driftless {
                return Err(Error::Config("a Brownian integrand needs a driftless ensemble".into()));
            }
            let grid = *ens.grid();
            if (grid.horizon() - horizon).abs() > 1e-9 * horizon {
                return Err(Error::Config("ensemble horizon differs from the requested T".into()));
            }
            let h = grid.step();
            let samples = ens.map(|_, p| {
                let w0 = p.path.state_at_step(0).to_vec();
                let integral = compensated_sum((0..grid.n_steps()).map(|k| {
                    let w: Vec<f64> = p.path.state_at_step(k).iter().zip(&w0).map(|(a, b)| a - b).collect();
                    let r = euclid(&w);
                    c * (r * r).min(cap) * h
                }));
                Ok(integral.exp())
            })?;
            McEstimate::from_samples(&samples, DEFAULT_CONFIDENCE)?
        }
    };
    Ok(BoundReport::new("khasminskii", lhs, Some(rhs))
        .with("alpha", alpha)
        .with("certificate", cert)
        .with("T", horizon))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::*;
    use crate::engine::{driftless_batch, SimulationConfig};
    use crate::model::{PathSegment, TimeGrid};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    #[test]
    fn constant_case() {
        let r = khasminskii_check(&BetaProcess::Constant { c: 0.5 }, 1.0, None, None).unwrap();
        assert_relative_eq!(r.lhs.mean, 0.5f64.exp());
        assert_relative_eq!(r.rhs.unwrap(), 2.0);
        assert_eq!(r.satisfied(), Some(true));
        let z = khasminskii_check(&BetaProcess::Constant { c: 0.0 }, 1.0, None, None).unwrap();
        assert_eq!((z.lhs.mean, z.rhs), (1.0, Some(1.0)));
        assert_eq!(z.satisfied(), Some(true));
    }

    #[test]
    fn alpha_at_least_one_rejected() {
        assert!(matches!(
            khasminskii_check(&BetaProcess::Constant { c: 1.0 }, 1.0, None, None),
            Err(Error::Domain(_))
        ));
        assert!(khasminskii_check(&BetaProcess::Constant { c: 0.5 }, 1.0, Some(0.1), None).is_err());
    }

    #[test]
    fn brownian_case_holds() {
        let c = CoefficientSet::new(zero_drift(1), identity_diffusion(1), zero_functional(1)).unwrap();
        let grid = TimeGrid::new(1, 0.25, 1.0, 1.0 / 64.0).unwrap();
        let seg = PathSegment::constant(grid, &[0.0]).unwrap();
        let ens = driftless_batch(SimulationConfig::new(grid, Arc::new(c), seg, 4).unwrap(), 2000, None).unwrap();
        let beta = BetaProcess::CappedBrownianSquare { c: 0.5, cap: 1.0 };
        let r = khasminskii_check(&beta, 1.0, None, Some(&ens)).unwrap();
        assert_eq!(r.satisfied(), Some(true), "{r:?}");
    }
}
