//! Euler–Maruyama simulation of the delay equation.
//!
//! A path is a pure function of `(config, master_seed, path_index)`: step `k`
//! of path `i` uses the normals at positions `k d .. (k + 1) d` of stream `i`
//! (see [`crate::rng`]). Drifted and driftless simulations with the same seed
//! and index consume identical Brownian increments.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{CoefficientSet, DiffusionSpec, DriftSpec, FunctionalDriftSpec};
use crate::error::{Error, Result};
use crate::model::{euclid, CompactSetSpec, PathRole, PathSegment, SamplePath, TimeGrid};
use crate::rng::NormalStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    EulerMaruyama,
}

#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub grid: TimeGrid,
    pub coefficients: Arc<CoefficientSet>,
    pub initial_segment: PathSegment,
    pub master_seed: u64,
    /// Replaces `b` by its level-`n` truncation `1_{t <= n, |x| <= n} b`.
    pub drift_cutoff_level: Option<u32>,
    /// Stops (freezes) the path once `|X(t)| > n` or `|V(t, X_t)| > n`.
    pub stop_level: Option<u32>,
    pub scheme: Scheme,
}

impl SimulationConfig {
    pub fn new(
        grid: TimeGrid,
        coefficients: Arc<CoefficientSet>,
        initial_segment: PathSegment,
        master_seed: u64,
    ) -> Result<Self> {
        let cfg = Self {
            grid,
            coefficients,
            initial_segment,
            master_seed,
            drift_cutoff_level: None,
            stop_level: None,
            scheme: Scheme::EulerMaruyama,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.coefficients.d != self.grid.d() {
            return Err(Error::Dimension {
                expected: self.grid.d(),
                got: self.coefficients.d,
            });
        }
        let seg = self.initial_segment.grid();
        if seg.d() != self.grid.d()
            || seg.delay_steps() != self.grid.delay_steps()
            || (seg.step() - self.grid.step()).abs() > 1e-12 * self.grid.step()
        {
            return Err(Error::Config(
                "initial segment does not live on the delay window of the grid".into(),
            ));
        }
        Ok(())
    }

    pub fn with_initial_segment(&self, segment: PathSegment) -> Result<Self> {
        let cfg = Self {
            initial_segment: segment,
            ..self.clone()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_coefficients(&self, coefficients: Arc<CoefficientSet>) -> Result<Self> {
        let cfg = Self {
            coefficients,
            ..self.clone()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_seed(&self, master_seed: u64) -> Self {
        Self {
            master_seed,
            ..self.clone()
        }
    }

    /// Same configuration on a grid refined by `factor`; the initial segment
    /// is resampled by piecewise-linear interpolation.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        let grid = self.grid.refined(factor)?;
        let old = &self.initial_segment;
        let m = old.grid().delay_steps();
        let d = grid.d();
        let seg = PathSegment::from_fn(grid, |s| {
            let pos = (s + self.grid.delay()) / self.grid.step();
            let j = (pos.floor() as usize).min(m.saturating_sub(1));
            let w = pos - j as f64;
            (0..d)
                .map(|k| {
                    let a = old.value(j)[k];
                    let b = old.value((j + 1).min(m))[k];
                    a + w * (b - a)
                })
                .collect()
        })?;
        Ok(Self {
            grid,
            initial_segment: seg,
            ..self.clone()
        })
    }
}

/// Brownian increments `dW` for steps `0 .. n_steps`, row-major by step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrownianIncrements {
    pub d: usize,
    pub step: f64,
    pub values: Vec<f64>,
}

impl BrownianIncrements {
    /// Regenerates the increments of `(seed, path_index)` on `grid`.
    pub fn generate(grid: &TimeGrid, seed: u64, path_index: u64) -> Self {
        let d = grid.d();
        let n = grid.n_steps();
        let mut values = vec![0.0; n * d];
        let mut stream = NormalStream::new(seed, path_index);
        stream.fill_normal(&mut values);
        let sq = grid.step().sqrt();
        values.iter_mut().for_each(|v| *v *= sq);
        Self {
            d,
            step: grid.step(),
            values,
        }
    }

    pub fn n_steps(&self) -> usize {
        self.values.len() / self.d
    }

    pub fn at(&self, k: usize) -> &[f64] {
        &self.values[k * self.d..(k + 1) * self.d]
    }

    /// Sums consecutive blocks of `factor` increments (same Brownian path on a coarser grid).
    pub fn coarsened(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.n_steps().is_multiple_of(factor) {
            return Err(Error::GridAlignment(format!(
                "factor {factor} does not divide {} steps",
                self.n_steps()
            )));
        }
        let d = self.d;
        let n = self.n_steps() / factor;
        let mut values = vec![0.0; n * d];
        for k in 0..n {
            for j in 0..factor {
                for c in 0..d {
                    values[k * d + c] += self.values[(k * factor + j) * d + c];
                }
            }
        }
        Ok(Self {
            d,
            step: self.step * factor as f64,
            values,
        })
    }

    /// The Brownian path `W` on `grid` (zero on `[-r, 0]`).
    pub fn path(&self, grid: &TimeGrid) -> Result<SamplePath> {
        let d = self.d;
        if grid.d() != d || grid.n_steps() != self.n_steps() {
            return Err(Error::Config("increments do not match the grid".into()));
        }
        let mut values = vec![0.0; grid.n_points() * d];
        let m = grid.delay_steps();
        for k in 0..self.n_steps() {
            for c in 0..d {
                values[(m + k + 1) * d + c] = values[(m + k) * d + c] + self.values[k * d + c];
            }
        }
        SamplePath::new(*grid, values, PathRole::Brownian)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoppingKind {
    ExitCompactSet,
    ValueExceedsN,
    FunctionalExceedsN,
    DomainExit,
    Horizon,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingRecord {
    pub kind: StoppingKind,
    pub time: f64,
    pub level: u32,
}

impl StoppingRecord {
    pub fn horizon(grid: &TimeGrid, level: u32) -> Self {
        Self {
            kind: StoppingKind::Horizon,
            time: grid.horizon(),
            level,
        }
    }

    pub fn stopped_early(&self) -> bool {
        self.kind != StoppingKind::Horizon
    }
}

/// One simulated trajectory with the noise that drove it.
#[derive(Debug, Clone, PartialEq)]
pub struct PathOutput {
    pub path: SamplePath,
    pub stopping: StoppingRecord,
    pub increments: BrownianIncrements,
}

struct Workspace {
    v: Vec<f64>,
    b: Vec<f64>,
    sigma: Vec<f64>,
}

/// Euler–Maruyama along given increments.
///
/// `X(t+h) = X(t) + [V(t, X_t) + b(t, X(t))] h + sigma(t, X(t)) dW`, with `b`
/// replaced by its level-`n` truncation when a cutoff is configured.
pub fn simulate_with_increments(
    config: &SimulationConfig,
    increments: &BrownianIncrements,
    role: PathRole,
    path_index: u64,
) -> Result<(SamplePath, StoppingRecord)> {
    let grid = config.grid;
    let d = grid.d();
    if increments.d != d || increments.n_steps() != grid.n_steps() {
        return Err(Error::Config("increments do not match the grid".into()));
    }
    let coeffs = &config.coefficients;
    let drifted = role != PathRole::Driftless;
    let m = grid.delay_steps();
    let h = grid.step();
    let mut values = vec![0.0; grid.n_points() * d];
    values[..(m + 1) * d].copy_from_slice(config.initial_segment.values());
    let mut ws = Workspace {
        v: vec![0.0; d],
        b: vec![0.0; d],
        sigma: vec![0.0; d * d],
    };
    let level = config.stop_level.unwrap_or(0);
    let mut stopping = StoppingRecord::horizon(&grid, level);
    let mut stopped_at = None;

    for k in 0..grid.n_steps() {
        let t = k as f64 * h;
        let (done, rest) = values.split_at_mut((m + k + 1) * d);
        let x = &done[(m + k) * d..];
        if drifted {
            if coeffs.functional.is_zero {
                ws.v.iter_mut().for_each(|o| *o = 0.0);
            } else {
                let seg = crate::model::SegmentView::new(&grid, &done[k * d..])?;
                coeffs.functional.eval(t, seg, &mut ws.v);
            }
        }
        if let Some(n) = config.stop_level {
            let n = n as f64;
            let kind = if euclid(x) > n {
                Some(StoppingKind::ValueExceedsN)
            } else if drifted && euclid(&ws.v) > n {
                Some(StoppingKind::FunctionalExceedsN)
            } else {
                None
            };
            if let Some(kind) = kind {
                stopping = StoppingRecord { kind, time: t, level };
                stopped_at = Some(k);
                break;
            }
        }
        if drifted {
            eval_drift(&coeffs.drift, config.drift_cutoff_level, t, x, &mut ws.b);
        }
        coeffs.diffusion.eval(t, x, &mut ws.sigma);
        let dw = increments.at(k);
        let next = &mut rest[..d];
        for i in 0..d {
            let noise: f64 = ws.sigma[i * d..(i + 1) * d].iter().zip(dw).map(|(s, w)| s * w).sum();
            let drift = if drifted { (ws.v[i] + ws.b[i]) * h } else { 0.0 };
            next[i] = x[i] + drift + noise;
            if !next[i].is_finite() {
                return Err(Error::Diverged {
                    path_index,
                    step: k + 1,
                });
            }
        }
    }
    if let Some(k) = stopped_at {
        let frozen: Vec<f64> = values[(m + k) * d..(m + k + 1) * d].to_vec();
        for i in (m + k + 1)..grid.n_points() {
            values[i * d..(i + 1) * d].copy_from_slice(&frozen);
        }
    } else if let Some(n) = config.stop_level {
        let x = &values[(m + grid.n_steps()) * d..];
        if euclid(x) > n as f64 {
            stopping = StoppingRecord {
                kind: StoppingKind::ValueExceedsN,
                time: grid.horizon(),
                level,
            };
        }
    }
    Ok((SamplePath::new(grid, values, role)?, stopping))
}

fn eval_drift(drift: &DriftSpec, cutoff: Option<u32>, t: f64, x: &[f64], out: &mut [f64]) {
    match cutoff {
        Some(n) if t > n as f64 || euclid(x) > n as f64 => out.iter_mut().for_each(|o| *o = 0.0),
        _ => drift.eval(t, x, out),
    }
}

/// Simulates path `path_index` of the configured equation.
pub fn simulate_path(config: &SimulationConfig, path_index: u64) -> Result<PathOutput> {
    let increments = BrownianIncrements::generate(&config.grid, config.master_seed, path_index);
    let (path, stopping) =
        simulate_with_increments(config, &increments, PathRole::Solution, path_index)?;
    Ok(PathOutput {
        path,
        stopping,
        increments,
    })
}

/// Simulates `dM = sigma(t, M) dW` from the same initial segment and noise.
pub fn simulate_driftless(config: &SimulationConfig, path_index: u64) -> Result<PathOutput> {
    let increments = BrownianIncrements::generate(&config.grid, config.master_seed, path_index);
    let (path, stopping) =
        simulate_with_increments(config, &increments, PathRole::Driftless, path_index)?;
    Ok(PathOutput {
        path,
        stopping,
        increments,
    })
}

// ---------------------------------------------------------------------------
// Localization
// ---------------------------------------------------------------------------

/// Level-`n` localization: the radial diffeomorphism onto the ball of radius
/// `n + 1` and its exponent `alpha_n = (p_{n+1} - d) / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationSpec {
    pub n: u32,
    pub p_next: f64,
    pub alpha_n: f64,
}

impl LocalizationSpec {
    pub fn new(n: u32, p_next: f64, d: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("localization level must be positive".into()));
        }
        if !(p_next > d as f64) {
            return Err(Error::Domain(format!(
                "need p_next > d, got p_next = {p_next}, d = {d}"
            )));
        }
        Ok(Self {
            n,
            p_next,
            alpha_n: (p_next - d as f64) / 2.0,
        })
    }

    /// Radial profile: identity up to `n`, then
    /// `n + 1 - ((s - n)/alpha_n + 1)^{-alpha_n}`, increasing to `n + 1`.
    pub fn rho(&self, s: f64) -> f64 {
        let n = self.n as f64;
        if s <= n {
            s
        } else {
            let a = self.alpha_n;
            n + 1.0 - ((s - n) / a + 1.0).powf(-a)
        }
    }

    /// `phi^n(x) = rho(|x|) x / |x|` outside the ball of radius `n`.
    pub fn phi(&self, x: &[f64], out: &mut [f64]) {
        let r = euclid(x);
        if r <= self.n as f64 {
            out.copy_from_slice(x);
        } else {
            let s = self.rho(r) / r;
            for (o, v) in out.iter_mut().zip(x) {
                *o = s * v;
            }
        }
    }
}

/// `(b^n, sigma^n, V^n)`: `b` cut off outside `{t <= n, |x| <= n}`,
/// `sigma` composed with `phi^n`, and `V` clamped coordinatewise to `[-n, n]`.
pub fn truncate_coefficients(coeffs: &CoefficientSet, loc: &LocalizationSpec) -> CoefficientSet {
    let n = loc.n as f64;
    let d = coeffs.d;

    let b = coeffs.drift.eval.clone();
    let drift = DriftSpec {
        name: format!("{}^{}", coeffs.drift.name, loc.n),
        eval: Arc::new(move |t, x, out| {
            if t > n || euclid(x) > n {
                out.iter_mut().for_each(|o| *o = 0.0);
            } else {
                b(t, x, out);
            }
        }),
        cell_average: None,
        lqp_norm_analytic: None,
        support_halfwidth: Some(
            coeffs
                .drift
                .support_halfwidth
                .map_or(n, |s| s.min(n)),
        ),
        ..coeffs.drift.clone()
    };

    let sigma = coeffs.diffusion.eval.clone();
    let loc_copy = *loc;
    let diffusion = DiffusionSpec {
        name: format!("{}^{}", coeffs.diffusion.name, loc.n),
        eval: Arc::new(move |t, x, out| {
            if euclid(x) <= n {
                sigma(t, x, out);
            } else {
                let mut y = vec![0.0; x.len()];
                loc_copy.phi(x, &mut y);
                sigma(t, &y, out);
            }
        }),
        ..coeffs.diffusion.clone()
    };

    let v = coeffs.functional.eval.clone();
    let g = coeffs.functional.growth.clone();
    let functional = FunctionalDriftSpec {
        name: format!("{}^{}", coeffs.functional.name, loc.n),
        eval: Arc::new(move |t, seg, out| {
            v(t, seg, out);
            out.iter_mut().for_each(|o| *o = o.clamp(-n, n));
        }),
        growth: Arc::new(move |u| g(u).min(n * (d as f64).sqrt())),
        ..coeffs.functional.clone()
    };

    CoefficientSet {
        d,
        drift,
        diffusion,
        functional,
    }
}

/// Offline stopping criteria for a simulated path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StoppingCriterion {
    /// First time the segment leaves the compact set.
    CompactSet(CompactSetSpec),
    /// First time `|X(t)| > n` or `|V(t, X_t)| > n`.
    Level(u32),
}

/// First grid time `t >= 0` at which the criterion fires; a horizon record if never.
pub fn detect_stopping(
    path: &SamplePath,
    coeffs: &CoefficientSet,
    criterion: StoppingCriterion,
) -> StoppingRecord {
    let grid = *path.grid();
    let h = grid.step();
    let mut v = vec![0.0; grid.d()];
    match criterion {
        StoppingCriterion::CompactSet(spec) => {
            for k in 0..=grid.n_steps() {
                if !spec.contains(path.segment_at_step(k)) {
                    return StoppingRecord {
                        kind: StoppingKind::ExitCompactSet,
                        time: k as f64 * h,
                        level: spec.n,
                    };
                }
            }
            StoppingRecord::horizon(&grid, spec.n)
        }
        StoppingCriterion::Level(n) => {
            let level = n as f64;
            for k in 0..=grid.n_steps() {
                let t = k as f64 * h;
                if euclid(path.state_at_step(k)) > level {
                    return StoppingRecord {
                        kind: StoppingKind::ValueExceedsN,
                        time: t,
                        level: n,
                    };
                }
                if !coeffs.functional.is_zero {
                    coeffs.functional.eval(t, path.segment_at_step(k), &mut v);
                    if euclid(&v) > level {
                        return StoppingRecord {
                            kind: StoppingKind::FunctionalExceedsN,
                            time: t,
                            level: n,
                        };
                    }
                }
            }
            StoppingRecord::horizon(&grid, n)
        }
    }
}

// ---------------------------------------------------------------------------
// Ensembles
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    Drifted,
    Driftless,
}

/// Lazily simulated ensemble: path `i` is regenerated on demand from
/// `(config, i)`, so memory stays bounded for large ensembles.
#[derive(Clone)]
pub struct Ensemble {
    config: Arc<SimulationConfig>,
    n_paths: usize,
    kind: EnsembleKind,
    pool: Option<Arc<rayon::ThreadPool>>,
}

impl std::fmt::Debug for Ensemble {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Ensemble")
            .field("n_paths", &self.n_paths)
            .field("kind", &self.kind)
            .field("seed", &self.config.master_seed)
            .finish()
    }
}

impl Ensemble {
    pub fn config(&self) -> &SimulationConfig {
        &self.config
    }
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }
    pub fn kind(&self) -> EnsembleKind {
        self.kind
    }
    pub fn grid(&self) -> &TimeGrid {
        &self.config.grid
    }

    pub fn path(&self, index: usize) -> Result<PathOutput> {
        match self.kind {
            EnsembleKind::Drifted => simulate_path(&self.config, index as u64),
            EnsembleKind::Driftless => simulate_driftless(&self.config, index as u64),
        }
    }

    /// Applies `f` to every path in parallel; results come back in path order.
    pub fn map<T, F>(&self, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize, &PathOutput) -> Result<T> + Sync + Send,
    {
        let run = || {
            let results: Vec<Result<T>> = (0..self.n_paths)
                .into_par_iter()
                .map(|i| self.path(i).and_then(|p| f(i, &p)))
                .collect();
            let mut out = Vec::with_capacity(results.len());
            let mut failed = 0usize;
            let mut first = None;
            for r in results {
                match r {
                    Ok(v) => out.push(v),
                    Err(e) => {
                        failed += 1;
                        first.get_or_insert(e);
                    }
                }
            }
            match first {
                None => Ok(out),
                Some(e) if failed == 1 && self.n_paths == 1 => Err(e),
                Some(e) => Err(Error::Config(format!(
                    "partial ensemble: {failed} of {} paths failed; first failure: {e}",
                    self.n_paths
                ))),
            }
        };
        match &self.pool {
            Some(pool) => pool.install(run),
            None => run(),
        }
    }

    /// All paths in memory; intended for small ensembles.
    pub fn materialize(&self) -> Result<Vec<PathOutput>> {
        self.map(|_, p| Ok(p.clone()))
    }

    pub fn with_kind(&self, kind: EnsembleKind) -> Self {
        Self {
            kind,
            ..self.clone()
        }
    }
}

/// Ensemble of `n_paths` independent paths of `config`, run on `threads`
/// workers when given (the global pool otherwise).
pub fn simulate_batch(
    config: SimulationConfig,
    n_paths: usize,
    threads: Option<usize>,
) -> Result<Ensemble> {
    build_ensemble(config, n_paths, threads, EnsembleKind::Drifted)
}

pub fn driftless_batch(
    config: SimulationConfig,
    n_paths: usize,
    threads: Option<usize>,
) -> Result<Ensemble> {
    build_ensemble(config, n_paths, threads, EnsembleKind::Driftless)
}

fn build_ensemble(
    config: SimulationConfig,
    n_paths: usize,
    threads: Option<usize>,
    kind: EnsembleKind,
) -> Result<Ensemble> {
    if n_paths == 0 {
        return Err(Error::Config("ensemble needs at least one path".into()));
    }
    config.validate()?;
    let pool = match threads {
        Some(t) => Some(Arc::new(
            rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?,
        )),
        None => None,
    };
    Ok(Ensemble {
        config: Arc::new(config),
        n_paths,
        kind,
        pool,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::*;
    use crate::stats::McEstimate;
    use approx::assert_relative_eq;

    fn config(coeffs: CoefficientSet, grid: TimeGrid, x0: f64) -> SimulationConfig {
        let seg = PathSegment::constant(grid, &vec![x0; grid.d()]).unwrap();
        SimulationConfig::new(grid, Arc::new(coeffs), seg, 11).unwrap()
    }

    fn zero_sigma(d: usize) -> DiffusionSpec {
        diag_diffusion(vec![0.0; d], 1.0)
    }

    #[test]
    fn no_dynamics_keeps_constant() {
        let grid = TimeGrid::new(1, 0.5, 1.0, 0.01).unwrap();
        let c = CoefficientSet::new(zero_drift(1), zero_sigma(1), zero_functional(1)).unwrap();
        let out = simulate_path(&config(c, grid, 2.5), 0).unwrap();
        assert!(out.path.values().iter().all(|&v| v == 2.5));
        assert_eq!(out.stopping.kind, StoppingKind::Horizon);
    }

    #[test]
    fn pure_noise_increments_match() {
        let grid = TimeGrid::new(2, 0.5, 1.0, 0.01).unwrap();
        let c = CoefficientSet::new(zero_drift(2), identity_diffusion(2), zero_functional(2))
            .unwrap();
        let out = simulate_path(&config(c, grid, 0.0), 3).unwrap();
        let m = grid.delay_steps();
        for k in 0..grid.n_steps() {
            for c in 0..2 {
                let inc = out.path.state(m + k + 1)[c] - out.path.state(m + k)[c];
                assert_relative_eq!(inc, out.increments.at(k)[c], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn euler_recursion_for_linear_decay() {
        let grid = TimeGrid::new(1, 0.5, 1.0, 0.01).unwrap();
        let c = CoefficientSet::new(ou_drift(1, 1.0), zero_sigma(1), zero_functional(1)).unwrap();
        let out = simulate_path(&config(c, grid, 1.0), 0).unwrap();
        for k in [0usize, 10, 57, 100] {
            assert_relative_eq!(
                out.path.state_at_step(k)[0],
                0.99f64.powi(k as i32),
                max_relative = 1e-12
            );
        }
        let xt = out.path.state_at_step(100)[0];
        assert!((xt - (-1.0f64).exp()).abs() / (-1.0f64).exp() < 0.01);
    }

    #[test]
    fn driftless_is_deterministic_and_coupled() {
        let grid = TimeGrid::new(1, 0.25, 1.0, 0.01).unwrap();
        let c = CoefficientSet::new(ou_drift(1, 2.0), identity_diffusion(1), discrete_delay_functional(1, 0.5))
            .unwrap();
        let cfg = config(c, grid, 1.0);
        let a = simulate_driftless(&cfg, 5).unwrap();
        let b = simulate_driftless(&cfg, 5).unwrap();
        assert_eq!(a, b);
        let x = simulate_path(&cfg, 5).unwrap();
        assert_eq!(a.increments, x.increments);
        // driftless with sigma = I is the Brownian path started at xi(0)
        let w = a.increments.path(&grid).unwrap();
        for k in 0..=grid.n_steps() {
            assert_relative_eq!(
                a.path.state_at_step(k)[0],
                1.0 + w.state_at_step(k)[0],
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn diag_two_increment_variance() {
        let grid = TimeGrid::new(1, 1.0, 1000.0, 0.01).unwrap();
        let c = CoefficientSet::new(zero_drift(1), diag_diffusion(vec![2.0], 4.0), zero_functional(1))
            .unwrap();
        let out = simulate_driftless(&config(c, grid, 0.0), 0).unwrap();
        let m = grid.delay_steps();
        let incs: Vec<f64> = (0..grid.n_steps())
            .map(|k| {
                let d = out.path.state(m + k + 1)[0] - out.path.state(m + k)[0];
                d * d
            })
            .collect();
        let est = McEstimate::from_samples(&incs, 0.99).unwrap();
        assert!((est.mean - 0.04).abs() <= 3.0 * est.std_error, "{est:?}");
    }

    #[test]
    fn truncation_examples() {
        let c = CoefficientSet::new(
            singular_drift(1, 0.2, 1.0, 4.0, 4.0).unwrap(),
            holder_sqrt_diffusion(),
            FunctionalDriftSpec {
                name: "five".into(),
                d: 1,
                eval: Arc::new(|_, _, out| out[0] = 5.0),
                growth: Arc::new(|_| 5.0),
                lipschitz_k: Some(1.0),
                is_zero: false,
            },
        )
        .unwrap();
        let loc = LocalizationSpec::new(3, 5.0, 1).unwrap();
        let tr = truncate_coefficients(&c, &loc);
        let (mut a, mut b) = ([0.0], [0.0]);
        for x in [0.5, -0.9, 2.9] {
            c.drift.eval(1.0, &[x], &mut a);
            tr.drift.eval(1.0, &[x], &mut b);
            assert_eq!(a, b);
            c.diffusion.eval(1.0, &[x], &mut a);
            tr.diffusion.eval(1.0, &[x], &mut b);
            assert_eq!(a, b);
        }
        tr.drift.eval(0.0, &[6.0], &mut b);
        assert_eq!(b[0], 0.0);
        let mut y = [0.0];
        loc.phi(&[6.0], &mut y);
        assert!(y[0] <= 4.0 && y[0] > 3.0);
        let grid = TimeGrid::new(1, 1.0, 1.0, 0.5).unwrap();
        let seg = PathSegment::constant(grid, &[0.0]).unwrap();
        tr.functional.eval(0.0, seg.view(), &mut b);
        assert_eq!(b[0], 3.0);
    }

    #[test]
    fn rho_profile_properties() {
        let loc = LocalizationSpec::new(2, 4.0, 1).unwrap();
        assert_relative_eq!(loc.alpha_n, 1.5);
        assert_eq!(loc.rho(1.5), 1.5);
        assert_eq!(loc.rho(2.0), 2.0);
        let mut last = 2.0;
        for k in 1..200 {
            let s = 2.0 + 0.1 * k as f64;
            let r = loc.rho(s);
            assert!(r > last && r < 3.0);
            last = r;
        }
        assert!((loc.rho(1e9) - 3.0).abs() < 1e-6);
        // C^1 at the junction
        let eps = 1e-7;
        assert_relative_eq!((loc.rho(2.0 + eps) - 2.0) / eps, 1.0, max_relative = 1e-5);
        assert!(LocalizationSpec::new(2, 1.0, 1).is_err());
    }

    #[test]
    fn detect_first_crossing_of_identity_path() {
        let grid = TimeGrid::new(1, 0.5, 5.0, 0.25).unwrap();
        let p = SamplePath::from_fn(grid, PathRole::Solution, |t| vec![t]).unwrap();
        let c = CoefficientSet::new(zero_drift(1), identity_diffusion(1), zero_functional(1)).unwrap();
        let rec = detect_stopping(&p, &c, StoppingCriterion::Level(2));
        assert_eq!(rec.kind, StoppingKind::ValueExceedsN);
        assert_eq!(rec.time, 2.25);
        let tame = SamplePath::from_fn(grid, PathRole::Solution, |t| vec![t.sin()]).unwrap();
        let rec = detect_stopping(&tame, &c, StoppingCriterion::Level(10));
        assert_eq!(rec.kind, StoppingKind::Horizon);
        let rec = detect_stopping(&tame, &c, StoppingCriterion::CompactSet(CompactSetSpec::level(10)));
        assert_eq!(rec.kind, StoppingKind::Horizon);
    }

    #[test]
    fn stopping_times_are_monotone_in_level() {
        let grid = TimeGrid::new(1, 0.25, 4.0, 0.01).unwrap();
        let c = CoefficientSet::new(zero_drift(1), identity_diffusion(1), zero_functional(1)).unwrap();
        let cfg = config(c.clone(), grid, 0.0);
        let ens = driftless_batch(cfg, 64, None).unwrap();
        let ok = ens
            .map(|_, p| {
                let mut last = -1.0;
                for n in 1..4 {
                    let r = detect_stopping(&p.path, &c, StoppingCriterion::Level(n));
                    if r.time < last {
                        return Ok(false);
                    }
                    last = r.time;
                }
                Ok(true)
            })
            .unwrap();
        assert!(ok.iter().all(|&b| b));
    }

    #[test]
    fn stop_level_freezes_path() {
        let grid = TimeGrid::new(1, 0.25, 2.0, 0.01).unwrap();
        let c = CoefficientSet::new(constant_drift(vec![3.0]), zero_sigma(1), zero_functional(1)).unwrap();
        let mut cfg = config(c, grid, 0.0);
        cfg.stop_level = Some(2);
        let out = simulate_path(&cfg, 0).unwrap();
        assert_eq!(out.stopping.kind, StoppingKind::ValueExceedsN);
        assert!(out.stopping.time <= grid.horizon());
        let last = out.path.state_at_step(grid.n_steps())[0];
        assert!(last > 2.0 && last < 2.1);
    }

    #[test]
    fn divergence_is_reported() {
        let grid = TimeGrid::new(1, 0.5, 1.0, 0.5).unwrap();
        let blow = DriftSpec {
            eval: Arc::new(|_, x, out| out[0] = x[0] * 1e300),
            ..zero_drift(1)
        };
        let c = CoefficientSet::new(blow, zero_sigma(1), zero_functional(1)).unwrap();
        let err = simulate_path(&config(c, grid, 1e10), 4).unwrap_err();
        assert_eq!(err, Error::Diverged { path_index: 4, step: 1 });
    }

    #[test]
    fn batch_matches_single_path_and_is_deterministic() {
        let grid = TimeGrid::new(1, 0.25, 1.0, 0.01).unwrap();
        let c = CoefficientSet::new(ou_drift(1, 1.0), identity_diffusion(1), zero_functional(1)).unwrap();
        let cfg = config(c, grid, 0.5);
        let one = simulate_batch(cfg.clone(), 1, Some(1)).unwrap();
        assert_eq!(one.path(0).unwrap(), simulate_path(&cfg, 0).unwrap());
        let ens = simulate_batch(cfg.clone(), 200, Some(3)).unwrap();
        let a = ens.map(|_, p| Ok(p.path.state_at_step(100)[0])).unwrap();
        let ens2 = simulate_batch(cfg, 200, None).unwrap();
        let b = ens2.map(|_, p| Ok(p.path.state_at_step(100)[0])).unwrap();
        let ea = McEstimate::from_samples(&a, 0.99).unwrap();
        let eb = McEstimate::from_samples(&b, 0.99).unwrap();
        assert_eq!(ea.mean.to_bits(), eb.mean.to_bits());
        assert_eq!(ea.std_error.to_bits(), eb.std_error.to_bits());
    }

    #[test]
    fn empty_batch_rejected() {
        let grid = TimeGrid::new(1, 0.25, 1.0, 0.01).unwrap();
        let c = CoefficientSet::new(zero_drift(1), identity_diffusion(1), zero_functional(1)).unwrap();
        assert!(simulate_batch(config(c, grid, 0.0), 0, None).is_err());
    }
}
