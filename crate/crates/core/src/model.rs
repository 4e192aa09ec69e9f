//! Time grids, path segments and sample paths.
//!
//! Paths live on a uniform grid over `[-r, T]` whose step divides both the
//! delay `r` and the horizon `T`, so the segment `X_t(s) = X(t + s)` at any
//! grid time `t` is an exact window of the path.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ALIGN_TOL: f64 = 1e-9;

/// Uniform discretization of `[-r, T]` for a `d`-dimensional state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    d: usize,
    delay: f64,
    horizon: f64,
    step: f64,
    delay_steps: usize,
    n_steps: usize,
}

fn steps_for(length: f64, step: f64, what: &str) -> Result<usize> {
    let k = (length / step).round();
    if k < 1.0 || (k * step - length).abs() > ALIGN_TOL * length.max(1.0) {
        return Err(Error::GridAlignment(format!(
            "{what} = {length} is not a positive integer multiple of the step {step}"
        )));
    }
    Ok(k as usize)
}

impl TimeGrid {
    pub fn new(d: usize, delay: f64, horizon: f64, step: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::Domain("state dimension must be positive".into()));
        }
        for (name, v) in [("delay", delay), ("horizon", horizon), ("step", step)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        let delay_steps = steps_for(delay, step, "delay")?;
        let n_steps = steps_for(horizon, step, "horizon")?;
        Ok(Self {
            d,
            delay,
            horizon,
            step,
            delay_steps,
            n_steps,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }
    pub fn delay(&self) -> f64 {
        self.delay
    }
    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn step(&self) -> f64 {
        self.step
    }
    /// Number of steps spanning the delay window (`m` with `m h = r`).
    pub fn delay_steps(&self) -> usize {
        self.delay_steps
    }
    /// Number of steps spanning `[0, T]`.
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }
    /// Number of samples on `[-r, T]`.
    pub fn n_points(&self) -> usize {
        self.delay_steps + self.n_steps + 1
    }
    /// Number of samples in one segment.
    pub fn segment_len(&self) -> usize {
        self.delay_steps + 1
    }

    /// Time of sample `i`, where index `delay_steps` is time 0.
    pub fn time(&self, index: usize) -> f64 {
        (index as f64 - self.delay_steps as f64) * self.step
    }

    /// Index of grid time `t` in `[-r, T]`.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let k = t / self.step + self.delay_steps as f64;
        let kr = k.round();
        if (k - kr).abs() > 1e-7 {
            return Err(Error::GridAlignment(format!(
                "time {t} is not on the grid with step {}",
                self.step
            )));
        }
        if kr < 0.0 || kr as usize >= self.n_points() {
            return Err(Error::Range(format!(
                "time {t} outside [-{}, {}]",
                self.delay, self.horizon
            )));
        }
        Ok(kr as usize)
    }

    /// Same delay window and horizon with the step divided by `factor`.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::Domain("refinement factor must be positive".into()));
        }
        Self::new(self.d, self.delay, self.horizon, self.step / factor as f64)
    }

    /// Same step and delay with a different horizon.
    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        Self::new(self.d, self.delay, horizon, self.step)
    }
}

/// Borrowed view of one segment: `(m + 1)` states at `-r, ..., 0`.
#[derive(Debug, Clone, Copy)]
pub struct SegmentView<'a> {
    grid: &'a TimeGrid,
    values: &'a [f64],
}

impl<'a> SegmentView<'a> {
    pub fn new(grid: &'a TimeGrid, values: &'a [f64]) -> Result<Self> {
        let expected = grid.segment_len() * grid.d();
        if values.len() != expected {
            return Err(Error::Dimension {
                expected,
                got: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &TimeGrid {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.segment_len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// State at segment index `j`, i.e. at relative time `-r + j h`.
    pub fn value(&self, j: usize) -> &'a [f64] {
        let d = self.grid.d();
        &self.values[j * d..(j + 1) * d]
    }

    /// The most recent state `x(0)`.
    pub fn head(&self) -> &'a [f64] {
        self.value(self.len() - 1)
    }

    /// The oldest state `x(-r)`.
    pub fn tail(&self) -> &'a [f64] {
        self.value(0)
    }

    pub fn raw(&self) -> &'a [f64] {
        self.values
    }

    /// Maximum Euclidean norm over the samples.
    pub fn sup_norm(&self) -> f64 {
        (0..self.len())
            .map(|j| euclid(self.value(j)))
            .fold(0.0, f64::max)
    }

    /// Discrete `alpha`-Hölder seminorm over all sample pairs of the segment.
    pub fn holder_seminorm(&self, alpha: f64) -> f64 {
        holder_over(self.values, self.grid.d(), self.grid.step(), alpha)
    }

    /// Componentwise trapezoid integral over `[-r, 0]`.
    pub fn trapezoid_integral(&self, out: &mut [f64]) {
        let h = self.grid.step();
        let n = self.len();
        out.iter_mut().for_each(|o| *o = 0.0);
        for j in 0..n {
            let w = if j == 0 || j == n - 1 { 0.5 * h } else { h };
            for (o, v) in out.iter_mut().zip(self.value(j)) {
                *o += w * v;
            }
        }
    }

    pub fn to_owned(&self) -> PathSegment {
        PathSegment {
            grid: *self.grid,
            values: self.values.to_vec(),
        }
    }
}

/// An element of `C([-r, 0]; R^d)` sampled on the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSegment {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl PathSegment {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        let expected = grid.segment_len() * grid.d();
        if values.len() != expected {
            return Err(Error::Dimension {
                expected,
                got: values.len(),
            });
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "segment entry {bad} is not finite"
            )));
        }
        Ok(Self { grid, values })
    }

    /// Segment constant in time.
    pub fn constant(grid: TimeGrid, value: &[f64]) -> Result<Self> {
        if value.len() != grid.d() {
            return Err(Error::Dimension {
                expected: grid.d(),
                got: value.len(),
            });
        }
        let values = value
            .iter()
            .copied()
            .cycle()
            .take(grid.segment_len() * grid.d())
            .collect();
        Self::new(grid, values)
    }

    /// Segment `s -> f(s)` for `s` in `[-r, 0]`.
    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        let m = grid.delay_steps();
        let mut values = Vec::with_capacity(grid.segment_len() * grid.d());
        for j in 0..=m {
            let s = (j as f64 - m as f64) * grid.step();
            let v = f(s);
            if v.len() != grid.d() {
                return Err(Error::Dimension {
                    expected: grid.d(),
                    got: v.len(),
                });
            }
            values.extend(v);
        }
        Self::new(grid, values)
    }

    pub fn view(&self) -> SegmentView<'_> {
        SegmentView {
            grid: &self.grid,
            values: &self.values,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, j: usize) -> &[f64] {
        let d = self.grid.d();
        &self.values[j * d..(j + 1) * d]
    }

    pub fn sup_norm(&self) -> f64 {
        self.view().sup_norm()
    }

    /// `self + eps * direction`, sample by sample.
    pub fn perturbed(&self, direction: &PathSegment, eps: f64) -> Result<Self> {
        if direction.values.len() != self.values.len() {
            return Err(Error::Dimension {
                expected: self.values.len(),
                got: direction.values.len(),
            });
        }
        let values = self
            .values
            .iter()
            .zip(&direction.values)
            .map(|(a, b)| a + eps * b)
            .collect();
        Self::new(self.grid, values)
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| lambda * v).collect(),
        }
    }

    pub fn difference(&self, other: &PathSegment) -> Result<Self> {
        self.perturbed(other, -1.0)
    }
}

/// What a sampled trajectory represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathRole {
    Solution,
    Driftless,
    Transformed,
    Difference,
    Brownian,
}

/// A trajectory on `[-r, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePath {
    grid: TimeGrid,
    values: Vec<f64>,
    role: PathRole,
}

impl SamplePath {
    pub fn new(grid: TimeGrid, values: Vec<f64>, role: PathRole) -> Result<Self> {
        let expected = grid.n_points() * grid.d();
        if values.len() != expected {
            return Err(Error::Dimension {
                expected,
                got: values.len(),
            });
        }
        Ok(Self { grid, values, role })
    }

    /// Path `t -> f(t)` sampled on every grid point.
    pub fn from_fn(grid: TimeGrid, role: PathRole, f: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.n_points() * grid.d());
        for i in 0..grid.n_points() {
            let v = f(grid.time(i));
            if v.len() != grid.d() {
                return Err(Error::Dimension {
                    expected: grid.d(),
                    got: v.len(),
                });
            }
            values.extend(v);
        }
        Self::new(grid, values, role)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    pub fn role(&self) -> PathRole {
        self.role
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn len(&self) -> usize {
        self.grid.n_points()
    }
    pub fn is_empty(&self) -> bool {
        false
    }

    /// State at grid index `i` (index `delay_steps` is time 0).
    pub fn state(&self, i: usize) -> &[f64] {
        let d = self.grid.d();
        &self.values[i * d..(i + 1) * d]
    }

    /// State at step `k` of `[0, T]`, i.e. at time `k h`.
    pub fn state_at_step(&self, k: usize) -> &[f64] {
        self.state(k + self.grid.delay_steps())
    }

    /// Segment ending at step `k` of `[0, T]` without copying.
    pub fn segment_at_step(&self, k: usize) -> SegmentView<'_> {
        let d = self.grid.d();
        let start = k * d;
        let len = self.grid.segment_len() * d;
        SegmentView {
            grid: &self.grid,
            values: &self.values[start..start + len],
        }
    }

    /// `X_t(s) = X(t + s)` for a grid time `t` in `[0, T]`.
    pub fn segment_extract(&self, t: f64) -> Result<PathSegment> {
        if t < -1e-12 * self.grid.step() || t > self.grid.horizon() * (1.0 + 1e-12) {
            return Err(Error::Range(format!(
                "segment time {t} outside [0, {}]",
                self.grid.horizon()
            )));
        }
        let i = self.grid.index_of(t)?;
        Ok(self.segment_at_step(i - self.grid.delay_steps()).to_owned())
    }

    /// The initial segment on `[-r, 0]`.
    pub fn initial_segment(&self) -> PathSegment {
        self.segment_at_step(0).to_owned()
    }

    /// Maximum Euclidean norm over all samples of the path.
    pub fn sup_norm(&self) -> f64 {
        (0..self.len())
            .map(|i| euclid(self.state(i)))
            .fold(0.0, f64::max)
    }

    /// `max |x(t) - x(s)| / (t - s)^alpha` over grid pairs `s < t` in `[t1, t2]`.
    pub fn holder_seminorm(&self, alpha: f64, t1: f64, t2: f64) -> Result<f64> {
        if !(alpha > 0.0 && alpha < 1.0 + 1e-12) {
            return Err(Error::Domain(format!(
                "Hölder exponent must lie in (0, 1], got {alpha}"
            )));
        }
        let i1 = self.grid.index_of(t1)?;
        let i2 = self.grid.index_of(t2)?;
        if i2 <= i1 {
            return Err(Error::Range(format!("empty window [{t1}, {t2}]")));
        }
        let d = self.grid.d();
        Ok(holder_over(
            &self.values[i1 * d..(i2 + 1) * d],
            d,
            self.grid.step(),
            alpha,
        ))
    }

    /// Pointwise difference `self - other` (role `Difference`).
    pub fn difference(&self, other: &SamplePath) -> Result<SamplePath> {
        if self.grid != other.grid {
            return Err(Error::Config("paths live on different grids".into()));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        SamplePath::new(self.grid, values, PathRole::Difference)
    }

    /// Subsample every `factor`-th point onto the coarser grid.
    pub fn coarsened(&self, factor: usize) -> Result<SamplePath> {
        if factor == 0 {
            return Err(Error::Domain("coarsening factor must be positive".into()));
        }
        let grid = TimeGrid::new(
            self.grid.d(),
            self.grid.delay(),
            self.grid.horizon(),
            self.grid.step() * factor as f64,
        )?;
        if !self.grid.delay_steps().is_multiple_of(factor) || !self.grid.n_steps().is_multiple_of(factor) {
            return Err(Error::GridAlignment(format!(
                "factor {factor} does not divide the grid"
            )));
        }
        let d = self.grid.d();
        let mut values = Vec::with_capacity(grid.n_points() * d);
        for i in (0..self.len()).step_by(factor) {
            values.extend_from_slice(self.state(i));
        }
        SamplePath::new(grid, values, self.role)
    }
}

/// Euclidean norm.
pub fn euclid(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn holder_over(values: &[f64], d: usize, step: f64, alpha: f64) -> f64 {
    let n = values.len() / d;
    let mut best = 0.0_f64;
    for lag in 1..n {
        let scale = (lag as f64 * step).powf(alpha);
        let mut worst = 0.0_f64;
        for i in 0..n - lag {
            let a = &values[i * d..(i + 1) * d];
            let b = &values[(i + lag) * d..(i + lag + 1) * d];
            let dist2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            worst = worst.max(dist2);
        }
        best = best.max(worst.sqrt() / scale);
    }
    best
}

/// Window for `X_t(s) = X(t + s)`; see [`SamplePath::segment_extract`].
pub fn segment_extract(path: &SamplePath, t: f64) -> Result<PathSegment> {
    path.segment_extract(t)
}

pub fn sup_norm(segment: &PathSegment) -> f64 {
    segment.sup_norm()
}

pub fn holder_seminorm(path: &SamplePath, alpha: f64, t1: f64, t2: f64) -> Result<f64> {
    path.holder_seminorm(alpha, t1, t2)
}

/// Whether `d/p + 2/q < threshold`, with threshold 1 (drift integrability)
/// or 2 (Krylov test functions).
pub fn validate_pq(d: usize, p: f64, q: f64, threshold: f64) -> Result<bool> {
    if !(p > 1.0) || !(q > 1.0) {
        return Err(Error::Domain(format!(
            "exponents must exceed 1, got p = {p}, q = {q}"
        )));
    }
    if threshold != 1.0 && threshold != 2.0 {
        return Err(Error::Domain(format!(
            "threshold must be 1 or 2, got {threshold}"
        )));
    }
    Ok(pq_index(d, p, q) < threshold)
}

/// `d/p + 2/q`.
pub fn pq_index(d: usize, p: f64, q: f64) -> f64 {
    d as f64 / p + 2.0 / q
}

/// Compact sets `{x : ||x||_inf + [x]_{holder} <= n}` of the segment space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompactSetSpec {
    pub n: u32,
    pub sup_bound: f64,
    pub holder_bound: f64,
    pub holder_exponent: f64,
}

impl CompactSetSpec {
    pub const DEFAULT_EXPONENT: f64 = 0.25;

    /// Level-`n` set with exponent 1/4 and both component caps at `n`.
    pub fn level(n: u32) -> Self {
        Self::with_exponent(n, Self::DEFAULT_EXPONENT)
    }

    pub fn with_exponent(n: u32, holder_exponent: f64) -> Self {
        Self {
            n,
            sup_bound: n as f64,
            holder_bound: n as f64,
            holder_exponent,
        }
    }

    pub fn contains(&self, segment: SegmentView<'_>) -> bool {
        let sup = segment.sup_norm();
        let holder = segment.holder_seminorm(self.holder_exponent);
        sup <= self.sup_bound && holder <= self.holder_bound && sup + holder <= self.n as f64
    }
}

pub fn compact_membership(segment: &PathSegment, spec: &CompactSetSpec) -> bool {
    spec.contains(segment.view())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn grid_1d() -> TimeGrid {
        TimeGrid::new(1, 1.0, 2.0, 0.125).unwrap()
    }

    #[test]
    fn grid_rejects_misaligned_delay() {
        assert!(matches!(
            TimeGrid::new(1, 1.0, 1.0, 0.3),
            Err(Error::GridAlignment(_))
        ));
        assert!(matches!(
            TimeGrid::new(1, -1.0, 1.0, 0.1),
            Err(Error::Domain(_))
        ));
        let g = TimeGrid::new(2, 0.5, 1.0, 0.01).unwrap();
        assert_eq!(g.delay_steps(), 50);
        assert_eq!(g.n_steps(), 100);
        assert_eq!(g.time(50), 0.0);
    }

    #[test]
    fn segment_of_constant_path_is_constant() {
        let g = grid_1d();
        let p = SamplePath::from_fn(g, PathRole::Solution, |_| vec![3.5]).unwrap();
        for t in [0.0, 0.5, 2.0] {
            let s = p.segment_extract(t).unwrap();
            assert!(s.values().iter().all(|&v| v == 3.5));
        }
    }

    #[test]
    fn segment_at_zero_is_initial_segment() {
        let g = grid_1d();
        let p = SamplePath::from_fn(g, PathRole::Solution, |t| vec![t * t - 1.0]).unwrap();
        let s = p.segment_extract(0.0).unwrap();
        assert_eq!(s, p.initial_segment());
        assert_eq!(s.value(0)[0], 0.0);
        assert_eq!(s.value(8)[0], -1.0);
    }

    #[test]
    fn segment_of_identity_path_is_shifted() {
        let g = grid_1d();
        let p = SamplePath::from_fn(g, PathRole::Solution, |t| vec![t]).unwrap();
        let s = p.segment_extract(1.0).unwrap();
        for j in 0..=8 {
            let rel = (j as f64 - 8.0) * 0.125;
            assert_relative_eq!(s.value(j)[0], rel + 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn segment_extract_errors() {
        let g = grid_1d();
        let p = SamplePath::from_fn(g, PathRole::Solution, |t| vec![t]).unwrap();
        assert!(matches!(p.segment_extract(0.3), Err(Error::GridAlignment(_))));
        assert!(matches!(p.segment_extract(2.125), Err(Error::Range(_))));
    }

    #[test]
    fn sup_norm_examples() {
        let g = grid_1d();
        assert_eq!(PathSegment::constant(g, &[3.0]).unwrap().sup_norm(), 3.0);
        let two = TimeGrid::new(1, 1.0, 1.0, 1.0).unwrap();
        let s = PathSegment::new(two, vec![-2.0, 1.0]).unwrap();
        assert_eq!(s.sup_norm(), 2.0);
        let lin = PathSegment::from_fn(g, |s| vec![s]).unwrap();
        assert_eq!(lin.sup_norm(), 1.0);
    }

    #[test]
    fn holder_examples() {
        let g = grid_1d();
        let c = SamplePath::from_fn(g, PathRole::Solution, |_| vec![2.0]).unwrap();
        assert_eq!(c.holder_seminorm(0.3, -1.0, 2.0).unwrap(), 0.0);
        let lin = SamplePath::from_fn(g, PathRole::Solution, |t| vec![t]).unwrap();
        for alpha in [0.1, 0.25, 0.5, 0.9] {
            let v = lin.holder_seminorm(alpha, -1.0, 0.0).unwrap();
            assert_relative_eq!(v, 1.0, epsilon = 1e-12);
        }
        assert!(matches!(
            lin.holder_seminorm(0.5, 0.5, 0.5),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn pq_examples() {
        assert!(validate_pq(1, 4.0, 4.0, 1.0).unwrap());
        assert!(!validate_pq(2, 2.0, 2.0, 1.0).unwrap());
        assert!(!validate_pq(2, 2.0, 2.0, 2.0).unwrap());
        assert!(matches!(validate_pq(1, 1.0, 4.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(validate_pq(1, 4.0, 0.5, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn compact_membership_examples() {
        let g = grid_1d();
        let zero = PathSegment::constant(g, &[0.0]).unwrap();
        assert!(compact_membership(&zero, &CompactSetSpec::level(1)));
        let big = PathSegment::constant(g, &[5.0]).unwrap();
        assert!(!compact_membership(&big, &CompactSetSpec::level(4)));
        let lin = PathSegment::from_fn(g, |s| vec![s]).unwrap();
        assert!(compact_membership(&lin, &CompactSetSpec::level(2)));
        assert!(!compact_membership(&lin, &CompactSetSpec::level(1)));
    }

    fn seg_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (
            prop::collection::vec(-10.0..10.0f64, 9),
            prop::collection::vec(-10.0..10.0f64, 9),
        )
    }

    proptest! {
        #[test]
        fn sup_norm_is_a_norm((a, b) in seg_strategy(), lambda in -5.0..5.0f64) {
            let g = TimeGrid::new(1, 1.0, 1.0, 0.125).unwrap();
            let x = PathSegment::new(g, a).unwrap();
            let y = PathSegment::new(g, b).unwrap();
            let sum = x.perturbed(&y, 1.0).unwrap();
            prop_assert!(sum.sup_norm() <= x.sup_norm() + y.sup_norm() + 1e-12);
            prop_assert!((x.scaled(lambda).sup_norm() - lambda.abs() * x.sup_norm()).abs() <= 1e-12);
        }

        #[test]
        fn segment_sup_bounded_by_path_sup(v in prop::collection::vec(-10.0..10.0f64, 25), k in 0usize..=16) {
            let g = TimeGrid::new(1, 1.0, 2.0, 0.125).unwrap();
            let p = SamplePath::new(g, v, PathRole::Solution).unwrap();
            let s = p.segment_extract(k as f64 * 0.125).unwrap();
            prop_assert!(s.sup_norm() <= p.sup_norm());
        }

        #[test]
        fn holder_nonincreasing_in_alpha(v in prop::collection::vec(-3.0..3.0f64, 9), a1 in 0.05..0.95f64, a2 in 0.05..0.95f64) {
            let g = TimeGrid::new(1, 1.0, 0.125, 0.125).unwrap();
            let mut vals = v;
            vals.push(0.0);
            let p = SamplePath::new(g, vals, PathRole::Solution).unwrap();
            let (lo, hi) = if a1 < a2 { (a1, a2) } else { (a2, a1) };
            let s_lo = p.holder_seminorm(lo, -1.0, 0.0).unwrap();
            let s_hi = p.holder_seminorm(hi, -1.0, 0.0).unwrap();
            prop_assert!(s_hi + 1e-12 >= s_lo);
        }

        #[test]
        fn compact_membership_monotone_in_level(v in prop::collection::vec(-4.0..4.0f64, 9), n in 1u32..10) {
            let g = TimeGrid::new(1, 1.0, 1.0, 0.125).unwrap();
            let s = PathSegment::new(g, v).unwrap();
            if compact_membership(&s, &CompactSetSpec::level(n)) {
                prop_assert!(compact_membership(&s, &CompactSetSpec::level(n + 1)));
            }
        }
    }
}
