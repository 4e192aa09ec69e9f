use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::NormalStream;
use crate::stats::{linear_fit, McEstimate, StabilityInN, DEFAULT_CONFIDENCE};

/// Processes `(Z, M)` satisfying `Z(t) <= K int_0^t sup_{u<=s} Z(u) ds + M(t) + C`
/// by construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GronwallGenerator {
    /// `Z = C e^{Kt}`, `M = 0` (the equality case).
    Deterministic { k: f64, c: f64 },
    /// `K = 0`, `Z = C + W(t ^ tau)` with `tau` the first time `Z` hits 0, `M = Z - C`.
    StoppedBrownian { c: f64 },
    /// `Z = C exp((K - vol^2/2) t + vol W)`, `M = Z - C - K int Z`.
    GeometricGrowth { k: f64, c: f64, vol: f64 },
}

impl GronwallGenerator {
    pub fn k(&self) -> f64 {
        match *self {
            GronwallGenerator::Deterministic { k, .. } | GronwallGenerator::GeometricGrowth { k, .. } => k,
            GronwallGenerator::StoppedBrownian { .. } => 0.0,
        }
    }

    pub fn c(&self) -> f64 {
        match *self {
            GronwallGenerator::Deterministic { c, .. }
            | GronwallGenerator::StoppedBrownian { c }
            | GronwallGenerator::GeometricGrowth { c, .. } => c,
        }
    }

    /// `(Z, M)` on `n_steps + 1` grid points of `[0, T]`.
    pub fn generate(&self, horizon: f64, n_steps: usize, seed: u64, index: u64) -> (Vec<f64>, Vec<f64>) {
        let h = horizon / n_steps as f64;
        let time = |k: usize| horizon * k as f64 / n_steps as f64;
        match *self {
            GronwallGenerator::Deterministic { k, c } => {
                let z = (0..=n_steps).map(|i| c * (k * time(i)).exp()).collect();
                (z, vec![0.0; n_steps + 1])
            }
            GronwallGenerator::StoppedBrownian { c } => {
                let mut rng = NormalStream::new(seed, index);
                let mut z = Vec::with_capacity(n_steps + 1);
                let mut cur = c;
                let mut stopped = c <= 0.0;
                z.push(cur);
                for _ in 0..n_steps {
                    let dw = h.sqrt() * rng.next_normal();
                    if !stopped {
                        cur += dw;
                        if cur <= 0.0 {
                            cur = 0.0;
                            stopped = true;
                        }
                    }
                    z.push(cur);
                }
                let m = z.iter().map(|v| v - c).collect();
                (z, m)
            }
            GronwallGenerator::GeometricGrowth { k, c, vol } => {
                let mut rng = NormalStream::new(seed, index);
                let mut w = 0.0;
                let mut z = Vec::with_capacity(n_steps + 1);
                z.push(c);
                for i in 1..=n_steps {
                    w += h.sqrt() * rng.next_normal();
                    z.push(c * ((k - 0.5 * vol * vol) * time(i) + vol * w).exp());
                }
                let mut m = Vec::with_capacity(n_steps + 1);
                let mut integral = 0.0;
                m.push(0.0);
                for i in 1..=n_steps {
                    integral += 0.5 * (z[i - 1] + z[i]) * h;
                    m.push(z[i] - c - k * integral);
                }
                (z, m)
            }
        }
    }
}

/// Checks the hypothesis on the grid with a right-point sum for the
/// (nondecreasing) running supremum.
pub fn hypothesis_holds(z: &[f64], m: &[f64], k: f64, c: f64, horizon: f64) -> bool {
    let n = z.len() - 1;
    let h = horizon / n as f64;
    let mut sup = z[0];
    let mut integral = 0.0;
    let scale = z.iter().fold(c.abs(), |a, v| a.max(v.abs())).max(1.0);
    if z[0] > m[0] + c + 1e-12 * scale {
        return false;
    }
    for i in 1..=n {
        sup = sup.max(z[i]);
        integral += sup * h;
        if z[i] > k * integral + m[i] + c + 1e-9 * scale {
            return false;
        }
    }
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    pub horizons: Vec<f64>,
    pub log_means: Vec<f64>,
    /// Slope of `log E[sup Z^p]` against `T`.
    pub slope: f64,
    /// `slope / K`, the fitted exponential rate per unit of `K T`.
    pub rate_per_kt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GronwallReport {
    pub generator: GronwallGenerator,
    pub p: f64,
    pub horizon: f64,
    /// `E[sup_{t <= T} Z(t)^p]`.
    pub estimate: McEstimate,
    pub stability: StabilityInN,
    /// Closed form for the deterministic generator.
    pub exact: Option<f64>,
    pub hypothesis_holds: bool,
    pub scale: f64,
    /// Estimate for `(lambda Z, lambda M, lambda C)`.
    pub scaled_estimate: McEstimate,
    /// `|scaled / (lambda^p estimate) - 1|`.
    pub scale_relative_error: f64,
    pub growth: Option<GrowthFit>,
}

fn sup_p_samples(gen: &GronwallGenerator, p: f64, horizon: f64, n_steps: usize, n_paths: usize, seed: u64, lambda: f64) -> (Vec<f64>, bool) {
    let rows: Vec<(f64, bool)> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let (mut z, mut m) = gen.generate(horizon, n_steps, seed, i);
            if lambda != 1.0 {
                z.iter_mut().for_each(|v| *v *= lambda);
                m.iter_mut().for_each(|v| *v *= lambda);
            }
            let ok = hypothesis_holds(&z, &m, gen.k(), lambda * gen.c(), horizon);
            let sup = z.iter().fold(0.0f64, |a, &v| a.max(v));
            (sup.powf(p), ok)
        })
        .collect();
    let ok = rows.iter().all(|r| r.1);
    (rows.into_iter().map(|r| r.0).collect(), ok)
}

/// Structural checks of the stochastic Gronwall lemma for `0 < p < 1`:
/// finiteness-stability in ensemble size, exact `lambda^p` scaling, the
/// deterministic equality case, and growth in `T` over `growth_horizons`.
#[allow(clippy::too_many_arguments)]
pub fn stochastic_gronwall_harness(
    gen: &GronwallGenerator,
    p: f64,
    horizon: f64,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
    scale: f64,
    growth_horizons: &[f64],
) -> Result<GronwallReport> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("need 0 < p < 1, got {p}")));
    }
    if !(scale > 0.0) || n_steps == 0 || n_paths < 8 {
        return Err(Error::Config(
            "need a positive scale, at least one step and at least 8 paths".into(),
        ));
    }
    let (samples, ok) = sup_p_samples(gen, p, horizon, n_steps, n_paths, seed, 1.0);
    let estimate = McEstimate::from_samples(&samples, DEFAULT_CONFIDENCE)?;
    let stability = StabilityInN::from_samples(&samples, DEFAULT_CONFIDENCE)?;
    let (scaled, ok_scaled) = sup_p_samples(gen, p, horizon, n_steps, n_paths, seed, scale);
    let scaled_estimate = McEstimate::from_samples(&scaled, DEFAULT_CONFIDENCE)?;
    let scale_relative_error = if estimate.mean == 0.0 {
        scaled_estimate.mean.abs()
    } else {
        (scaled_estimate.mean / (scale.powf(p) * estimate.mean) - 1.0).abs()
    };
    let exact = match *gen {
        GronwallGenerator::Deterministic { k, c } => Some(c.powf(p) * (p * k * horizon).exp()),
        _ => None,
    };
    let growth = if growth_horizons.len() >= 2 {
        let log_means = growth_horizons
            .iter()
            .map(|&t| {
                let (s, _) = sup_p_samples(gen, p, t, n_steps, n_paths, seed, 1.0);
                McEstimate::from_samples(&s, DEFAULT_CONFIDENCE).map(|e| e.mean.ln())
            })
            .collect::<Result<Vec<_>>>()?;
        let fit = linear_fit(growth_horizons, &log_means)?;
        let k = gen.k();
        Some(GrowthFit {
            horizons: growth_horizons.to_vec(),
            log_means,
            slope: fit.slope,
            rate_per_kt: if k > 0.0 { Some(fit.slope / k) } else { None },
        })
    } else {
        None
    };
    Ok(GronwallReport {
        generator: *gen,
        p,
        horizon,
        estimate,
        stability,
        exact,
        hypothesis_holds: ok && ok_scaled,
        scale,
        scaled_estimate,
        scale_relative_error,
        growth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn deterministic_equality_case() {
        let g = GronwallGenerator::Deterministic { k: 0.7, c: 2.0 };
        let r = stochastic_gronwall_harness(&g, 0.5, 1.0, 100, 16, 1, 3.0, &[0.5, 1.0, 2.0]).unwrap();
        assert_relative_eq!(r.estimate.mean, r.exact.unwrap(), max_relative = 1e-12);
        assert!(r.hypothesis_holds);
        assert!(r.scale_relative_error < 1e-12);
        let rate = r.growth.unwrap().rate_per_kt.unwrap();
        assert_relative_eq!(rate, 0.5, max_relative = 1e-9);
    }

    #[test]
    fn constant_case_bounded_by_c_to_p() {
        let g = GronwallGenerator::Deterministic { k: 0.0, c: 4.0 };
        let r = stochastic_gronwall_harness(&g, 0.5, 1.0, 10, 8, 1, 2.0, &[]).unwrap();
        assert!(r.estimate.mean <= 2.0 + 1e-15);
    }

    #[test]
    fn stochastic_generators_satisfy_hypothesis() {
        for g in [
            GronwallGenerator::StoppedBrownian { c: 1.0 },
            GronwallGenerator::GeometricGrowth { k: 0.5, c: 1.0, vol: 0.4 },
        ] {
            let r = stochastic_gronwall_harness(&g, 0.5, 1.0, 128, 800, 3, 10.0, &[]).unwrap();
            assert!(r.hypothesis_holds, "{g:?}");
            assert!(r.stability.stable, "{r:?}");
            assert!(r.scale_relative_error <= 1e-6);
        }
    }

    #[test]
    fn p_out_of_range() {
        let g = GronwallGenerator::Deterministic { k: 0.0, c: 1.0 };
        assert!(stochastic_gronwall_harness(&g, 1.0, 1.0, 10, 8, 1, 2.0, &[]).is_err());
    }
}
