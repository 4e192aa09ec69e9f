//! Monte-Carlo summary statistics.
//!
//! All reductions run sequentially over per-path values stored in path-index
//! order, with Neumaier compensated summation, so results do not depend on how
//! the per-path work was scheduled.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Default two-sided confidence level used for confidence radii.
pub const DEFAULT_CONFIDENCE: f64 = 0.99;

/// Neumaier compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Two-sided standard-normal quantile for a confidence level in (0, 1).
pub fn z_value(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    let normal = Normal::standard();
    Ok(normal.inverse_cdf(0.5 + level / 2.0))
}

/// A Monte-Carlo estimate of a mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub confidence_radius: f64,
    pub confidence_level: f64,
}

impl McEstimate {
    pub fn from_samples(samples: &[f64], confidence_level: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Domain("estimate needs at least one sample".into()));
        }
        let z = z_value(confidence_level)?;
        let n = samples.len();
        let mean = compensated_sum(samples.iter().copied()) / n as f64;
        let std_error = if n > 1 {
            let ss = compensated_sum(samples.iter().map(|&x| (x - mean) * (x - mean)));
            (ss / (n as f64 - 1.0) / n as f64).sqrt()
        } else {
            0.0
        };
        Ok(Self {
            mean,
            std_error,
            n_samples: n,
            confidence_radius: z * std_error,
            confidence_level,
        })
    }

    /// An exactly known value (zero uncertainty), e.g. a deterministic integrand.
    pub fn exact(value: f64, n_samples: usize) -> Self {
        Self {
            mean: value,
            std_error: 0.0,
            n_samples: n_samples.max(1),
            confidence_radius: 0.0,
            confidence_level: DEFAULT_CONFIDENCE,
        }
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.confidence_radius
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.confidence_radius
    }

    pub fn is_finite(&self) -> bool {
        self.mean.is_finite() && self.std_error.is_finite()
    }

    /// Applies a smooth map `g` with derivative `dg` at the mean (delta method).
    pub fn map_delta(&self, g: impl Fn(f64) -> f64, dg: impl Fn(f64) -> f64) -> Self {
        let slope = dg(self.mean).abs();
        let z = if self.std_error > 0.0 {
            self.confidence_radius / self.std_error
        } else {
            0.0
        };
        Self {
            mean: g(self.mean),
            std_error: slope * self.std_error,
            n_samples: self.n_samples,
            confidence_radius: z * slope * self.std_error,
            confidence_level: self.confidence_level,
        }
    }

    /// Whether two independent estimates agree within `k` combined standard errors.
    pub fn agrees_with(&self, other: &McEstimate, k: f64) -> bool {
        let combined = (self.std_error.powi(2) + other.std_error.powi(2)).sqrt();
        (self.mean - other.mean).abs() <= k * combined
    }
}

/// Estimates over nested prefixes of size N, 2N, 4N of one sample vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityInN {
    pub estimates: Vec<McEstimate>,
    pub stable: bool,
}

impl StabilityInN {
    /// Uses prefixes of length n/4, n/2 and n. Stable when every estimate is
    /// finite and each pair overlaps within the sum of confidence radii.
    pub fn from_samples(samples: &[f64], confidence_level: f64) -> Result<Self> {
        let n = samples.len();
        if n < 8 {
            return Err(Error::Domain(
                "stability diagnostic needs at least 8 samples".into(),
            ));
        }
        let sizes = [n / 4, n / 2, n];
        let estimates = sizes
            .iter()
            .map(|&k| McEstimate::from_samples(&samples[..k], confidence_level))
            .collect::<Result<Vec<_>>>()?;
        let mut stable = estimates.iter().all(McEstimate::is_finite);
        for i in 0..estimates.len() {
            for j in i + 1..estimates.len() {
                let (a, b) = (&estimates[i], &estimates[j]);
                if (a.mean - b.mean).abs() > a.confidence_radius + b.confidence_radius {
                    stable = false;
                }
            }
        }
        Ok(Self { estimates, stable })
    }
}

/// Ordinary least-squares fit `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_std_error: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() {
        return Err(Error::Dimension {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    let n = xs.len();
    if n < 2 {
        return Err(Error::Config("regression needs at least two points".into()));
    }
    let mx = compensated_sum(xs.iter().copied()) / n as f64;
    let my = compensated_sum(ys.iter().copied()) / n as f64;
    let sxx = compensated_sum(xs.iter().map(|x| (x - mx) * (x - mx)));
    if sxx <= 0.0 {
        return Err(Error::Config(
            "degenerate regression: all abscissae equal".into(),
        ));
    }
    let sxy = compensated_sum(xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)));
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_std_error = if n > 2 {
        let rss = compensated_sum(
            xs.iter()
                .zip(ys)
                .map(|(x, y)| (y - intercept - slope * x).powi(2)),
        );
        (rss / (n as f64 - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(LinearFit {
        slope,
        intercept,
        slope_std_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut v = vec![1.0e16];
        v.extend(std::iter::repeat_n(1.0, 1000));
        v.push(-1.0e16);
        assert_eq!(compensated_sum(v), 1000.0);
    }

    #[test]
    fn estimate_of_known_samples() {
        let est = McEstimate::from_samples(&[1.0, 2.0, 3.0, 4.0], 0.99).unwrap();
        assert_relative_eq!(est.mean, 2.5);
        // sample variance 5/3, se = sqrt(5/12)
        assert_relative_eq!(est.std_error, (5.0_f64 / 12.0).sqrt(), epsilon = 1e-14);
        assert_relative_eq!(
            est.confidence_radius,
            2.5758293035489 * est.std_error,
            epsilon = 1e-9
        );
    }

    #[test]
    fn z_value_rejects_bad_levels() {
        assert!(z_value(1.0).is_err());
        assert!(z_value(0.0).is_err());
        assert_relative_eq!(z_value(0.95).unwrap(), 1.959963984540054, epsilon = 1e-9);
    }

    #[test]
    fn fit_recovers_exact_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 1.5 - 2.0 * x).collect();
        let fit = linear_fit(&xs, &ys).unwrap();
        assert_relative_eq!(fit.slope, -2.0, epsilon = 1e-14);
        assert_relative_eq!(fit.intercept, 1.5, epsilon = 1e-14);
    }

    #[test]
    fn degenerate_fit_is_config_error() {
        assert!(matches!(
            linear_fit(&[1.0, 1.0], &[0.0, 1.0]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn constant_samples_are_stable() {
        let s = vec![1.0; 64];
        let st = StabilityInN::from_samples(&s, 0.99).unwrap();
        assert!(st.stable);
        assert_eq!(st.estimates.len(), 3);
        assert_eq!(st.estimates[0].n_samples, 16);
    }
}
