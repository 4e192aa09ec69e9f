use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::euclid;
use crate::rng::NormalStream;
use crate::stats::compensated_sum;

/// Samples of a function on the uniform grid `[-L, L]^d`, `nx` points per axis;
/// node `(i, j)` of a 2-D grid has index `i * nx + j`. Each sample stands for
/// the constant value on its cell, and the function is zero off the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub d: usize,
    pub halfwidth: f64,
    pub nx: usize,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(d: usize, halfwidth: f64, nx: usize, values: Vec<f64>) -> Result<Self> {
        if d == 0 || d > 2 {
            return Err(Error::Config(format!("grid functions support d = 1 or 2, got {d}")));
        }
        if nx < 2 || values.len() != nx.pow(d as u32) {
            return Err(Error::Dimension {
                expected: nx.pow(d as u32),
                got: values.len(),
            });
        }
        Ok(Self {
            d,
            halfwidth,
            nx,
            values,
        })
    }

    pub fn from_fn(d: usize, halfwidth: f64, nx: usize, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let probe = Self::new(d, halfwidth, nx, vec![0.0; nx.pow(d as u32)])?;
        let values = (0..probe.values.len()).map(|i| f(&probe.node(i))).collect();
        Self::new(d, halfwidth, nx, values)
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.halfwidth / (self.nx - 1) as f64
    }

    pub fn node(&self, index: usize) -> Vec<f64> {
        let c = |i: usize| -self.halfwidth + i as f64 * self.dx();
        match self.d {
            1 => vec![c(index)],
            _ => vec![c(index / self.nx), c(index % self.nx)],
        }
    }

    /// Nearest node index of a point inside the grid.
    pub fn index_of(&self, x: &[f64]) -> Option<usize> {
        let mut idx = 0;
        for &v in x {
            let s = ((v + self.halfwidth) / self.dx()).round();
            if s < 0.0 || s > (self.nx - 1) as f64 {
                return None;
            }
            idx = idx * self.nx + s as usize;
        }
        Some(idx)
    }

    /// `(sum |f|^p dx^d)^{1/p}`.
    pub fn lp_norm(&self, p: f64) -> f64 {
        let cell = self.dx().powi(self.d as i32);
        compensated_sum(self.values.iter().map(|v| v.abs().powf(p) * cell)).powf(1.0 / p)
    }

    pub fn value_at(&self, x: &[f64]) -> Option<f64> {
        self.index_of(x).map(|i| self.values[i])
    }
}

/// Radii over which ball means are maximized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RadiiLadder {
    /// `dx, dx q, dx q^2, ...` up to the domain width.
    Geometric { ratio: f64 },
    /// Every multiple `k dx` up to the domain width.
    CellMultiples,
    Explicit { radii: Vec<f64> },
}

impl Default for RadiiLadder {
    fn default() -> Self {
        RadiiLadder::Geometric {
            ratio: std::f64::consts::SQRT_2,
        }
    }
}

impl RadiiLadder {
    pub fn radii(&self, dx: f64, width: f64) -> Result<Vec<f64>> {
        let r = match self {
            RadiiLadder::Geometric { ratio } => {
                if !(*ratio > 1.0) {
                    return Err(Error::Config(format!("ladder ratio must exceed 1, got {ratio}")));
                }
                let mut v = vec![];
                let mut r = dx;
                while r <= width * (1.0 + 1e-12) {
                    v.push(r);
                    r *= ratio;
                }
                v
            }
            RadiiLadder::CellMultiples => {
                let n = (width / dx).round() as usize;
                (1..=n).map(|k| k as f64 * dx).collect()
            }
            RadiiLadder::Explicit { radii } => radii.clone(),
        };
        if r.is_empty() {
            return Err(Error::Config("empty radii ladder".into()));
        }
        if r.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("radii must be positive".into()));
        }
        Ok(r)
    }
}

/// Discrete centered maximal function: the largest ball mean over the ladder,
/// with the node value itself as the zero-radius limit.
///
/// In d = 1 balls are intervals integrated exactly against the cellwise
/// constant sample. In d = 2 the mean runs over the cells whose centres lie
/// in the disc.
pub fn maximal_function(phi: &GridFunction, ladder: &RadiiLadder) -> Result<GridFunction> {
    if phi.values.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::Domain("the maximal function needs a finite nonnegative sample".into()));
    }
    let dx = phi.dx();
    let radii = ladder.radii(dx, 2.0 * phi.halfwidth + dx)?;
    let values = match phi.d {
        1 => maximal_1d(phi, &radii),
        _ => maximal_2d(phi, &radii),
    };
    GridFunction::new(phi.d, phi.halfwidth, phi.nx, values)
}

fn maximal_1d(phi: &GridFunction, radii: &[f64]) -> Vec<f64> {
    let n = phi.nx;
    let dx = phi.dx();
    let left = -phi.halfwidth - dx / 2.0;
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + phi.values[i];
    }
    let cumulative = |y: f64| -> f64 {
        let s = ((y - left) / dx).clamp(0.0, n as f64);
        let k = (s.floor() as usize).min(n);
        let partial = if k < n { phi.values[k] * (s - k as f64) } else { 0.0 };
        (prefix[k] + partial) * dx
    };
    (0..n)
        .map(|i| {
            let x = -phi.halfwidth + i as f64 * dx;
            radii
                .iter()
                .map(|&r| (cumulative(x + r) - cumulative(x - r)) / (2.0 * r))
                .fold(phi.values[i], f64::max)
        })
        .collect()
}

fn maximal_2d(phi: &GridFunction, radii: &[f64]) -> Vec<f64> {
    let n = phi.nx;
    let dx = phi.dx();
    let mut prefix = vec![0.0; n * (n + 1)];
    for i in 0..n {
        for j in 0..n {
            prefix[i * (n + 1) + j + 1] = prefix[i * (n + 1) + j] + phi.values[i * n + j];
        }
    }
    let row_sum = |i: usize, lo: isize, hi: isize| -> f64 {
        let lo = lo.max(0) as usize;
        let hi = hi.min(n as isize - 1);
        if hi < lo as isize {
            return 0.0;
        }
        prefix[i * (n + 1) + hi as usize + 1] - prefix[i * (n + 1) + lo]
    };
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut best = phi.values[i * n + j];
            for &r in radii {
                let rc = r / dx;
                let rows = rc.floor() as isize;
                let (mut sum, mut count) = (0.0, 0.0);
                for dy in -rows..=rows {
                    let half = (rc * rc - (dy * dy) as f64).max(0.0).sqrt().floor() as isize;
                    count += (2 * half + 1) as f64;
                    let row = i as isize + dy;
                    if row >= 0 && (row as usize) < n {
                        sum += row_sum(row as usize, j as isize - half, j as isize + half);
                    }
                }
                best = best.max(sum / count);
            }
            out[i * n + j] = best;
        }
    }
    out
}

pub type ValueFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type GradientFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// A smooth function with an analytic gradient.
#[derive(Clone)]
pub struct SmoothFunction {
    pub name: String,
    pub d: usize,
    pub value: ValueFn,
    pub gradient: GradientFn,
}

impl std::fmt::Debug for SmoothFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SmoothFunction").field("name", &self.name).field("d", &self.d).finish()
    }
}

fn g(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

fn dg(t: f64) -> f64 {
    if t > 0.0 {
        g(t) / (t * t)
    } else {
        0.0
    }
}

impl SmoothFunction {
    pub fn constant(d: usize, c: f64) -> Self {
        Self {
            name: "constant".into(),
            d,
            value: Arc::new(move |_| c),
            gradient: Arc::new(|_, out| out.iter_mut().for_each(|o| *o = 0.0)),
        }
    }

    /// `x` on `[-1, 1]`, cut off smoothly to zero outside `[-2, 2]` (d = 1).
    pub fn linear_core() -> Self {
        // chi(s) = g(2 - s) / (g(2 - s) + g(s - 1)), s = |x|
        let chi = |s: f64| {
            let (a, b) = (g(2.0 - s), g(s - 1.0));
            a / (a + b)
        };
        let dchi = |s: f64| {
            let (a, b) = (g(2.0 - s), g(s - 1.0));
            let den = (a + b) * (a + b);
            (-dg(2.0 - s) * b - a * dg(s - 1.0)) / den
        };
        Self {
            name: "linear_core".into(),
            d: 1,
            value: Arc::new(move |x| x[0] * chi(x[0].abs())),
            gradient: Arc::new(move |x, out| {
                let s = x[0].abs();
                out[0] = chi(s) + x[0] * dchi(s) * x[0].signum();
            }),
        }
    }

    /// `exp(-|x|^2 / 2)`.
    pub fn gaussian_bump(d: usize) -> Self {
        Self {
            name: "gaussian_bump".into(),
            d,
            value: Arc::new(|x| (-0.5 * x.iter().map(|v| v * v).sum::<f64>()).exp()),
            gradient: Arc::new(|x, out| {
                let v = (-0.5 * x.iter().map(|v| v * v).sum::<f64>()).exp();
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = -xi * v;
                }
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardyLittlewoodReport {
    pub function: String,
    pub pairs: usize,
    /// Largest `|phi(x) - phi(y)| / (|x - y| (M|grad phi|(x) + M|grad phi|(y)))` over the pairs.
    pub fitted_c: f64,
    /// Whether every pair satisfies the inequality with the supplied constant.
    pub holds_with_given_c: Option<bool>,
    /// `(p, ||M phi||_p / ||phi||_p)` on the grid.
    pub lp_ratios: Vec<(f64, f64)>,
}

/// Samples node pairs in the inner half of `[-L, L]^d` and fits the constant
/// of the pointwise gradient inequality; also reports the `L^p` ratio of the
/// maximal operator for each `p` in `lp_exponents`.
#[allow(clippy::too_many_arguments)]
pub fn hardy_littlewood_check(
    phi: &SmoothFunction,
    halfwidth: f64,
    nx: usize,
    ladder: &RadiiLadder,
    n_pairs: usize,
    seed: u64,
    given_c: Option<f64>,
    lp_exponents: &[f64],
) -> Result<HardyLittlewoodReport> {
    let d = phi.d;
    let grad_norm = GridFunction::from_fn(d, halfwidth, nx, |x| {
        let mut gr = vec![0.0; d];
        (phi.gradient)(x, &mut gr);
        euclid(&gr)
    })?;
    let m_grad = maximal_function(&grad_norm, ladder)?;
    let mut rng = NormalStream::new(seed, 0);
    let mut sample = || -> Vec<f64> {
        (0..d)
            .map(|_| {
                let u = rng.next_uniform();
                let s = ((u - 0.5) * halfwidth / grad_norm.dx()).round();
                s * grad_norm.dx()
            })
            .collect()
    };
    let mut fitted = 0.0f64;
    let mut holds = true;
    let mut counted = 0;
    while counted < n_pairs {
        let (x, y) = (sample(), sample());
        let dist = euclid(&x.iter().zip(&y).map(|(a, b)| a - b).collect::<Vec<_>>());
        if dist == 0.0 {
            continue;
        }
        counted += 1;
        let lhs = ((phi.value)(&x) - (phi.value)(&y)).abs();
        if lhs == 0.0 {
            continue;
        }
        let mx = m_grad.value_at(&x).expect("inner point");
        let my = m_grad.value_at(&y).expect("inner point");
        let rhs = dist * (mx + my);
        let ratio = if rhs > 0.0 { lhs / rhs } else { f64::INFINITY };
        fitted = fitted.max(ratio);
        if let Some(c) = given_c {
            if lhs > c * rhs {
                holds = false;
            }
        }
    }
    let abs_phi = GridFunction::from_fn(d, halfwidth, nx, |x| (phi.value)(x).abs())?;
    let m_phi = maximal_function(&abs_phi, ladder)?;
    let lp_ratios = lp_exponents
        .iter()
        .map(|&p| {
            let base = abs_phi.lp_norm(p);
            (p, if base > 0.0 { m_phi.lp_norm(p) / base } else { 0.0 })
        })
        .collect();
    Ok(HardyLittlewoodReport {
        function: phi.name.clone(),
        pairs: n_pairs,
        fitted_c: fitted,
        holds_with_given_c: given_c.map(|_| holds),
        lp_ratios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn interval(nx: usize) -> GridFunction {
        GridFunction::from_fn(1, 4.0, nx, |x| (x[0].abs() <= 1.0) as u8 as f64).unwrap()
    }

    #[test]
    fn interval_oracles() {
        let phi = interval(801);
        let m = maximal_function(&phi, &RadiiLadder::CellMultiples).unwrap();
        assert_relative_eq!(m.value_at(&[0.0]).unwrap(), 1.0, epsilon = 1e-12);
        let at2 = m.value_at(&[2.0]).unwrap();
        assert!((at2 - 1.0 / 3.0).abs() <= phi.dx(), "{at2}");
    }

    #[test]
    fn zero_sample_and_empty_ladder() {
        let z = GridFunction::new(1, 1.0, 11, vec![0.0; 11]).unwrap();
        let m = maximal_function(&z, &RadiiLadder::default()).unwrap();
        assert!(m.values.iter().all(|&v| v == 0.0));
        assert!(matches!(
            maximal_function(&z, &RadiiLadder::Explicit { radii: vec![] }),
            Err(Error::Config(_))
        ));
        let neg = GridFunction::new(1, 1.0, 3, vec![0.0, -1.0, 0.0]).unwrap();
        assert!(maximal_function(&neg, &RadiiLadder::default()).is_err());
    }

    #[test]
    fn two_dimensional_disc_means() {
        let phi = GridFunction::from_fn(2, 3.0, 31, |x| (euclid(x) <= 1.0) as u8 as f64).unwrap();
        let m = maximal_function(&phi, &RadiiLadder::default()).unwrap();
        assert_relative_eq!(m.value_at(&[0.0, 0.0]).unwrap(), 1.0);
        let far = m.value_at(&[2.5, 0.0]).unwrap();
        assert!(far > 0.0 && far < 0.5);
    }

    #[test]
    fn hardy_littlewood_examples() {
        let r = hardy_littlewood_check(&SmoothFunction::constant(1, 2.0), 4.0, 201, &RadiiLadder::default(), 500, 1, Some(1.0), &[2.0])
            .unwrap();
        assert_eq!(r.fitted_c, 0.0);
        let r = hardy_littlewood_check(&SmoothFunction::linear_core(), 4.0, 401, &RadiiLadder::default(), 2000, 1, None, &[2.0, 4.0])
            .unwrap();
        assert!(r.fitted_c >= 0.5 - 1e-9 && r.fitted_c.is_finite(), "{r:?}");
        let r = hardy_littlewood_check(&SmoothFunction::gaussian_bump(2), 4.0, 41, &RadiiLadder::default(), 500, 1, None, &[2.0, 4.0])
            .unwrap();
        assert!(r.fitted_c.is_finite());
        assert!(r.lp_ratios.iter().all(|(_, v)| v.is_finite() && *v >= 1.0));
    }

    #[test]
    fn linear_core_gradient_matches_differences() {
        let f = SmoothFunction::linear_core();
        for x in [-1.7, -1.2, 0.3, 1.05, 1.5, 1.95] {
            let mut gr = [0.0];
            (f.gradient)(&[x], &mut gr);
            let h = 1e-6;
            let fd = ((f.value)(&[x + h]) - (f.value)(&[x - h])) / (2.0 * h);
            assert!((gr[0] - fd).abs() < 1e-5, "x={x} {} {fd}", gr[0]);
        }
    }

    proptest! {
        #[test]
        fn maximal_is_monotone(a in proptest::collection::vec(0.0f64..1.0, 21), b in proptest::collection::vec(0.0f64..1.0, 21)) {
            let lo = GridFunction::new(1, 1.0, 21, a.clone()).unwrap();
            let hi = GridFunction::new(1, 1.0, 21, a.iter().zip(&b).map(|(x, y)| x + y).collect()).unwrap();
            let ml = maximal_function(&lo, &RadiiLadder::default()).unwrap();
            let mh = maximal_function(&hi, &RadiiLadder::default()).unwrap();
            for (l, h) in ml.values.iter().zip(&mh.values) {
                prop_assert!(l <= &(h + 1e-12));
            }
        }

        #[test]
        fn maximal_dominates_smallest_ball(a in proptest::collection::vec(0.0f64..1.0, 21)) {
            let phi = GridFunction::new(1, 1.0, 21, a).unwrap();
            let m = maximal_function(&phi, &RadiiLadder::default()).unwrap();
            let first = maximal_function(&phi, &RadiiLadder::Explicit { radii: vec![phi.dx()] }).unwrap();
            for (v, f) in m.values.iter().zip(&first.values) {
                prop_assert!(v + 1e-12 >= *f);
            }
        }
    }
}
