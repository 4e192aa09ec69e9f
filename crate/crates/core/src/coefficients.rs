//! Coefficients `V`, `b`, `sigma` of the delay equation
//! `dX = V(t, X_t) dt + b(t, X(t)) dt + sigma(t, X(t)) dW`, with their
//! regularity metadata and a catalog of analytic test cases.
//!
//! Coefficient closures must be pure functions of their arguments; they are
//! evaluated concurrently from many workers.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{euclid, pq_index, validate_pq, PathSegment, SegmentView};

pub type VectorField = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// Writes a row-major `d x d` matrix.
pub type MatrixField = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
pub type SegmentField = Arc<dyn Fn(f64, SegmentView<'_>, &mut [f64]) + Send + Sync>;
pub type Growth = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
/// Average of a vector field over the cell `[lo, hi]` at time `t`.
pub type CellAverage = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;
/// Closed-form `L^q([0,T]; L^p)` norm as a function of `T`.
pub type ClosedNorm = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Mixed-norm exponents `(p, q)` of a drift in `L^q(L^p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Integrability {
    pub p: f64,
    pub q: f64,
}

/// The singular part `b` of the drift.
#[derive(Clone)]
pub struct DriftSpec {
    pub name: String,
    pub d: usize,
    pub eval: VectorField,
    pub integrability: Option<Integrability>,
    pub lqp_norm_analytic: Option<ClosedNorm>,
    pub singular: bool,
    /// Half-width of a cube containing the spatial support, when compact.
    pub support_halfwidth: Option<f64>,
    /// Points where `|b|` blows up; quadrature grades its mesh toward them.
    pub singular_points: Vec<Vec<f64>>,
    pub time_homogeneous: bool,
    pub cell_average: Option<CellAverage>,
}

impl fmt::Debug for DriftSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DriftSpec")
            .field("name", &self.name)
            .field("d", &self.d)
            .field("integrability", &self.integrability)
            .field("singular", &self.singular)
            .field("support_halfwidth", &self.support_halfwidth)
            .finish()
    }
}

impl DriftSpec {
    pub fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.eval)(t, x, out)
    }

    /// Whether the declared exponents satisfy `d/p + 2/q < 1`.
    pub fn claims_integrability(&self) -> Result<bool> {
        match self.integrability {
            Some(Integrability { p, q }) => validate_pq(self.d, p, q, 1.0),
            None => Ok(false),
        }
    }

    pub fn analytic_lqp_norm(&self, horizon: f64) -> Option<f64> {
        self.lqp_norm_analytic.as_ref().map(|f| f(horizon))
    }

    /// Cell average over `[lo, hi]`: closed form when the catalog provides one,
    /// otherwise a midpoint rule on `sub^d` sub-cells.
    pub fn average_over_cell(&self, t: f64, lo: &[f64], hi: &[f64], sub: usize, out: &mut [f64]) {
        if let Some(avg) = &self.cell_average {
            avg(t, lo, hi, out);
            return;
        }
        let d = self.d;
        let sub = sub.max(1);
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut x = vec![0.0; d];
        let mut val = vec![0.0; d];
        let total = sub.pow(d as u32);
        for flat in 0..total {
            let mut rem = flat;
            for k in 0..d {
                let idx = rem % sub;
                rem /= sub;
                x[k] = lo[k] + (idx as f64 + 0.5) * (hi[k] - lo[k]) / sub as f64;
            }
            self.eval(t, &x, &mut val);
            for (o, v) in out.iter_mut().zip(&val) {
                *o += v / total as f64;
            }
        }
    }

    /// Multiplies the drift by `lambda`.
    pub fn scaled(&self, lambda: f64) -> DriftSpec {
        let inner = self.eval.clone();
        let cell = self.cell_average.clone();
        let norm = self.lqp_norm_analytic.clone();
        DriftSpec {
            name: format!("{}*{lambda}", self.name),
            eval: Arc::new(move |t, x, out| {
                inner(t, x, out);
                out.iter_mut().for_each(|o| *o *= lambda);
            }),
            lqp_norm_analytic: norm.map(|f| -> ClosedNorm { Arc::new(move |h| lambda.abs() * f(h)) }),
            cell_average: cell.map(|c| -> CellAverage {
                Arc::new(move |t, lo, hi, out| {
                    c(t, lo, hi, out);
                    out.iter_mut().for_each(|o| *o *= lambda);
                })
            }),
            ..self.clone()
        }
    }
}

/// The diffusion coefficient `sigma`.
#[derive(Clone)]
pub struct DiffusionSpec {
    pub name: String,
    pub d: usize,
    pub eval: MatrixField,
    pub kappa: f64,
    pub space_independent: bool,
    /// Declared integrability of the distributional gradient; metadata only.
    pub grad_integrable: bool,
}

impl fmt::Debug for DiffusionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionSpec")
            .field("name", &self.name)
            .field("d", &self.d)
            .field("kappa", &self.kappa)
            .field("space_independent", &self.space_independent)
            .finish()
    }
}

impl DiffusionSpec {
    pub fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.eval)(t, x, out)
    }

    pub fn matrix(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        let mut buf = vec![0.0; self.d * self.d];
        self.eval(t, x, &mut buf);
        DMatrix::from_row_slice(self.d, self.d, &buf)
    }
}

/// The functional (delay) drift `V(t, x)` on segments.
#[derive(Clone)]
pub struct FunctionalDriftSpec {
    pub name: String,
    pub d: usize,
    pub eval: SegmentField,
    /// Monotone majorant `|V(t, x)| <= g(||x||_inf)`.
    pub growth: Growth,
    pub lipschitz_k: Option<f64>,
    pub is_zero: bool,
}

impl fmt::Debug for FunctionalDriftSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FunctionalDriftSpec")
            .field("name", &self.name)
            .field("d", &self.d)
            .field("lipschitz_k", &self.lipschitz_k)
            .finish()
    }
}

impl FunctionalDriftSpec {
    pub fn eval(&self, t: f64, segment: SegmentView<'_>, out: &mut [f64]) {
        (self.eval)(t, segment, out)
    }
}

/// The triple `(V, b, sigma)`.
#[derive(Clone, Debug)]
pub struct CoefficientSet {
    pub d: usize,
    pub drift: DriftSpec,
    pub diffusion: DiffusionSpec,
    pub functional: FunctionalDriftSpec,
}

impl CoefficientSet {
    pub fn new(
        drift: DriftSpec,
        diffusion: DiffusionSpec,
        functional: FunctionalDriftSpec,
    ) -> Result<Self> {
        let d = drift.d;
        for got in [diffusion.d, functional.d] {
            if got != d {
                return Err(Error::Dimension { expected: d, got });
            }
        }
        Ok(Self {
            d,
            drift,
            diffusion,
            functional,
        })
    }

    /// Same diffusion and functional drift with `b` removed.
    pub fn without_drift(&self) -> Self {
        Self {
            drift: zero_drift(self.d),
            ..self.clone()
        }
    }

    /// Same drift and diffusion with `V` removed.
    pub fn without_functional(&self) -> Self {
        Self {
            functional: zero_functional(self.d),
            ..self.clone()
        }
    }
}

// ---------------------------------------------------------------------------
// Catalog
// ---------------------------------------------------------------------------

/// Surface area of the unit sphere in R^d.
pub fn unit_ball_surface(d: usize) -> f64 {
    match d {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI,
        _ => {
            // 2 pi^{d/2} / Gamma(d/2)
            2.0 * std::f64::consts::PI.powf(d as f64 / 2.0)
                / statrs::function::gamma::gamma(d as f64 / 2.0)
        }
    }
}

pub fn zero_drift(d: usize) -> DriftSpec {
    DriftSpec {
        name: "zero".into(),
        d,
        eval: Arc::new(|_, _, out| out.iter_mut().for_each(|o| *o = 0.0)),
        integrability: None,
        lqp_norm_analytic: Some(Arc::new(|_| 0.0)),
        singular: false,
        support_halfwidth: Some(1.0),
        singular_points: Vec::new(),
        time_homogeneous: true,
        cell_average: Some(Arc::new(|_, _, _, out| out.iter_mut().for_each(|o| *o = 0.0))),
    }
}

/// Ornstein–Uhlenbeck drift `b(x) = -rate * x`.
pub fn ou_drift(d: usize, rate: f64) -> DriftSpec {
    DriftSpec {
        name: format!("ou(rate={rate})"),
        d,
        eval: Arc::new(move |_, x, out| {
            for (o, xi) in out.iter_mut().zip(x) {
                *o = -rate * xi;
            }
        }),
        integrability: None,
        lqp_norm_analytic: None,
        singular: false,
        support_halfwidth: None,
        singular_points: Vec::new(),
        time_homogeneous: true,
        cell_average: Some(Arc::new(move |_, lo, hi, out| {
            for k in 0..out.len() {
                out[k] = -rate * 0.5 * (lo[k] + hi[k]);
            }
        })),
    }
}

pub fn constant_drift(value: Vec<f64>) -> DriftSpec {
    let d = value.len();
    let v = value.clone();
    let v2 = value;
    DriftSpec {
        name: "constant".into(),
        d,
        eval: Arc::new(move |_, _, out| out.copy_from_slice(&v)),
        integrability: None,
        lqp_norm_analytic: None,
        singular: false,
        support_halfwidth: None,
        singular_points: Vec::new(),
        time_homogeneous: true,
        cell_average: Some(Arc::new(move |_, _, _, out| out.copy_from_slice(&v2))),
    }
}

/// `b(x) = amplitude * |x|^{-beta} 1_{|x| <= 1} e_1`, with `b(0) := 0`.
///
/// Lies in `L^p` iff `beta p < d`; the declared `(p, q)` are checked here.
pub fn singular_drift(d: usize, beta: f64, amplitude: f64, p: f64, q: f64) -> Result<DriftSpec> {
    if !(beta >= 0.0) {
        return Err(Error::Domain(format!("beta must be nonnegative, got {beta}")));
    }
    if !(p > 1.0 && q > 1.0) {
        return Err(Error::Domain(format!(
            "exponents must exceed 1, got p = {p}, q = {q}"
        )));
    }
    if beta * p >= d as f64 {
        return Err(Error::Domain(format!(
            "|x|^-{beta} is not p-integrable near 0 for p = {p}, d = {d} (need beta p < d)"
        )));
    }
    let space_norm =
        amplitude.abs() * (unit_ball_surface(d) / (d as f64 - beta * p)).powf(1.0 / p);
    let eval: VectorField = Arc::new(move |_, x, out| {
        out.iter_mut().for_each(|o| *o = 0.0);
        let r = euclid(x);
        if r > 0.0 && r <= 1.0 {
            out[0] = amplitude * r.powf(-beta);
        }
    });
    let cell_average: Option<CellAverage> = if d == 1 {
        // antiderivative of |x|^{-beta} on [-1, 1], clipped outside
        let prim = move |x: f64| {
            let c = x.clamp(-1.0, 1.0);
            c.signum() * c.abs().powf(1.0 - beta) / (1.0 - beta)
        };
        Some(Arc::new(move |_, lo, hi, out| {
            let w = hi[0] - lo[0];
            out[0] = if w > 0.0 {
                amplitude * (prim(hi[0]) - prim(lo[0])) / w
            } else {
                0.0
            };
        }))
    } else {
        None
    };
    Ok(DriftSpec {
        name: format!("singular(beta={beta},amp={amplitude})"),
        d,
        eval,
        integrability: Some(Integrability { p, q }),
        lqp_norm_analytic: Some(Arc::new(move |h| h.powf(1.0 / q) * space_norm)),
        singular: beta > 0.0,
        support_halfwidth: Some(1.0),
        singular_points: vec![vec![0.0; d]],
        time_homogeneous: true,
        cell_average,
    })
}

/// `b(t, x) = 1_{[t0, t1]}(t) 1_{[lo, hi]^d}(x) e_1`.
pub fn box_indicator_drift(d: usize, lo: f64, hi: f64, t0: f64, t1: f64, p: f64, q: f64) -> DriftSpec {
    let vol = (hi - lo).powi(d as i32);
    let eval: VectorField = Arc::new(move |t, x, out| {
        out.iter_mut().for_each(|o| *o = 0.0);
        if t >= t0 && t <= t1 && x.iter().all(|&xi| xi >= lo && xi <= hi) {
            out[0] = 1.0;
        }
    });
    let cell: CellAverage = Arc::new(move |t, a, b, out| {
        out.iter_mut().for_each(|o| *o = 0.0);
        if t < t0 || t > t1 {
            return;
        }
        let mut frac = 1.0;
        for k in 0..a.len() {
            let w = b[k] - a[k];
            let overlap = (b[k].min(hi) - a[k].max(lo)).max(0.0);
            frac *= if w > 0.0 { overlap / w } else { 0.0 };
        }
        out[0] = frac;
    });
    DriftSpec {
        name: "box".into(),
        d,
        eval,
        integrability: Some(Integrability { p, q }),
        lqp_norm_analytic: Some(Arc::new(move |h| {
            let len = (h.min(t1) - t0.max(0.0)).max(0.0);
            len.powf(1.0 / q) * vol.powf(1.0 / p)
        })),
        singular: false,
        support_halfwidth: Some(lo.abs().max(hi.abs())),
        singular_points: Vec::new(),
        time_homogeneous: false,
        cell_average: Some(cell),
    }
}

pub fn identity_diffusion(d: usize) -> DiffusionSpec {
    diag_diffusion(vec![1.0; d], 1.0)
}

/// `sigma = diag(values)` with a declared ellipticity constant.
pub fn diag_diffusion(values: Vec<f64>, kappa: f64) -> DiffusionSpec {
    let d = values.len();
    DiffusionSpec {
        name: format!("diag{values:?}"),
        d,
        eval: Arc::new(move |_, _, out| {
            out.iter_mut().for_each(|o| *o = 0.0);
            for (k, v) in values.iter().enumerate() {
                out[k * d + k] = *v;
            }
        }),
        kappa,
        space_independent: true,
        grad_integrable: true,
    }
}

/// `sigma = s I`, with the tightest ellipticity constant.
pub fn scalar_diffusion(d: usize, s: f64) -> DiffusionSpec {
    let kappa = (s * s).max(1.0 / (s * s));
    DiffusionSpec {
        name: format!("scalar({s})"),
        ..diag_diffusion(vec![s; d], kappa)
    }
}

/// `sigma(x) = 1 + min(|x|^{1/2}, 1)` in d = 1: uniformly continuous, not Lipschitz at 0.
pub fn holder_sqrt_diffusion() -> DiffusionSpec {
    DiffusionSpec {
        name: "holder_sqrt".into(),
        d: 1,
        eval: Arc::new(|_, x, out| out[0] = 1.0 + x[0].abs().sqrt().min(1.0)),
        kappa: 4.0,
        space_independent: false,
        grad_integrable: false,
    }
}

pub fn zero_functional(d: usize) -> FunctionalDriftSpec {
    FunctionalDriftSpec {
        name: "zero".into(),
        d,
        eval: Arc::new(|_, _, out| out.iter_mut().for_each(|o| *o = 0.0)),
        growth: Arc::new(|_| 0.0),
        lipschitz_k: Some(1.0),
        is_zero: true,
    }
}

/// `V(t, x) = c x(-r)`.
pub fn discrete_delay_functional(d: usize, c: f64) -> FunctionalDriftSpec {
    FunctionalDriftSpec {
        name: format!("discrete_delay(c={c})"),
        d,
        eval: Arc::new(move |_, seg, out| {
            for (o, v) in out.iter_mut().zip(seg.tail()) {
                *o = c * v;
            }
        }),
        growth: Arc::new(move |u| c.abs() * u),
        lipschitz_k: Some(c.abs().max(f64::MIN_POSITIVE)),
        is_zero: false,
    }
}

/// `V(t, x) = c x(-r) / sqrt(1 + |x(-r)|)`, sublinear with `g(u) = |c| u / sqrt(1 + u)`.
pub fn sqrt_delay_functional(d: usize, c: f64) -> FunctionalDriftSpec {
    FunctionalDriftSpec {
        name: format!("sqrt_delay(c={c})"),
        d,
        eval: Arc::new(move |_, seg, out| {
            let x = seg.tail();
            let s = c / (1.0 + euclid(x)).sqrt();
            for (o, v) in out.iter_mut().zip(x) {
                *o = s * v;
            }
        }),
        growth: Arc::new(move |u| c.abs() * u / (1.0 + u).sqrt()),
        lipschitz_k: Some(c.abs().max(f64::MIN_POSITIVE)),
        is_zero: false,
    }
}

/// `V(t, x) = c * int_{-r}^0 x(s) ds` by the trapezoid rule.
pub fn distributed_delay_functional(d: usize, c: f64, delay: f64) -> FunctionalDriftSpec {
    FunctionalDriftSpec {
        name: format!("distributed_delay(c={c})"),
        d,
        eval: Arc::new(move |_, seg, out| {
            seg.trapezoid_integral(out);
            out.iter_mut().for_each(|o| *o *= c);
        }),
        growth: Arc::new(move |u| c.abs() * delay * u),
        lipschitz_k: Some((c.abs() * delay).max(f64::MIN_POSITIVE)),
        is_zero: false,
    }
}

// ---------------------------------------------------------------------------
// Mixed-norm quadrature
// ---------------------------------------------------------------------------

const GRADING_RATIO: f64 = 0.8;
const GRADING_FLOOR: f64 = 1e-30;

/// Midpoints and widths of a 1-D mesh on `[lo, hi]` with `n` uniform cells,
/// replacing cells adjacent to each singular coordinate by a geometric
/// subdivision toward it.
fn graded_axis(lo: f64, hi: f64, n: usize, singular: &[f64]) -> Vec<(f64, f64)> {
    let mut edges: Vec<f64> = (0..=n)
        .map(|i| lo + (hi - lo) * i as f64 / n as f64)
        .collect();
    for &s in singular {
        if s > lo && s < hi && !edges.iter().any(|&e| (e - s).abs() < 1e-14) {
            edges.push(s);
        }
    }
    edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut cells = Vec::new();
    for w in edges.windows(2) {
        let (a, b) = (w[0], w[1]);
        let near_a = singular.iter().any(|&s| (s - a).abs() < 1e-14);
        let near_b = singular.iter().any(|&s| (s - b).abs() < 1e-14);
        match (near_a, near_b) {
            (false, false) => cells.push((0.5 * (a + b), b - a)),
            (true, false) => grade_toward(a, b, &mut cells),
            (false, true) => grade_toward(b, a, &mut cells),
            (true, true) => {
                let m = 0.5 * (a + b);
                grade_toward(a, m, &mut cells);
                grade_toward(b, m, &mut cells);
            }
        }
    }
    cells
}

/// Geometric cells from `far` toward the singular end `s`.
fn grade_toward(s: f64, far: f64, cells: &mut Vec<(f64, f64)>) {
    let len = (far - s).abs();
    let dir = (far - s).signum();
    let mut outer = len;
    while outer > GRADING_FLOOR * len.max(1.0) {
        let inner = outer * GRADING_RATIO;
        let a = s + dir * inner;
        let b = s + dir * outer;
        cells.push((0.5 * (a + b), (b - a).abs()));
        outer = inner;
    }
}

fn space_power_integral(
    drift: &DriftSpec,
    t: f64,
    half: f64,
    resolution: usize,
    p: f64,
) -> f64 {
    let d = drift.d;
    let axes: Vec<Vec<(f64, f64)>> = (0..d)
        .map(|k| {
            let sing: Vec<f64> = drift.singular_points.iter().map(|pt| pt[k]).collect();
            graded_axis(-half, half, resolution, &sing)
        })
        .collect();
    let mut idx = vec![0usize; d];
    let mut x = vec![0.0; d];
    let mut val = vec![0.0; d];
    let mut terms = Vec::new();
    loop {
        let mut vol = 1.0;
        for k in 0..d {
            let (m, w) = axes[k][idx[k]];
            x[k] = m;
            vol *= w;
        }
        drift.eval(t, &x, &mut val);
        let a = euclid(&val);
        if a > 0.0 {
            terms.push(a.powf(p) * vol);
        }
        // odometer
        let mut k = 0;
        loop {
            if k == d {
                return crate::stats::compensated_sum(terms);
            }
            idx[k] += 1;
            if idx[k] < axes[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Numerical `(int_0^T (int |b|^p dx)^{q/p} dt)^{1/q}` by tensorized midpoint
/// quadrature: `resolution` uniform cells per axis on the support cube (graded
/// toward declared singular points) and `resolution` time cells.
///
/// Drifts without declared compact support are integrated on growing cubes;
/// if the spatial integral keeps growing the tail is reported as
/// non-convergent.
pub fn lqp_norm_numeric(
    drift: &DriftSpec,
    horizon: f64,
    p: f64,
    q: f64,
    resolution: usize,
) -> Result<f64> {
    if !(p >= 1.0 && q >= 1.0) {
        return Err(Error::Domain(format!("need p, q >= 1, got {p}, {q}")));
    }
    if !(horizon > 0.0) || resolution == 0 {
        return Err(Error::Domain("horizon and resolution must be positive".into()));
    }
    let half = match drift.support_halfwidth {
        Some(h) => h.max(f64::MIN_POSITIVE),
        None => {
            let probe_t = 0.5 * horizon;
            let mut last = space_power_integral(drift, probe_t, 4.0, resolution, p);
            let mut half = 4.0;
            let mut converged = false;
            for _ in 0..4 {
                let next = space_power_integral(drift, probe_t, 2.0 * half, 2 * resolution, p);
                let growth = (next - last).abs() / next.abs().max(f64::MIN_POSITIVE);
                half *= 2.0;
                if growth < 1e-6 || next == 0.0 {
                    converged = true;
                    break;
                }
                last = next;
            }
            if !converged {
                return Err(Error::Integration(format!(
                    "non-convergent tail: int |b|^{p} dx over [-{half}, {half}]^{} keeps growing (last value {last:.6e})",
                    drift.d
                )));
            }
            half
        }
    };
    let dt = horizon / resolution as f64;
    let time_terms: Vec<f64> = if drift.time_homogeneous {
        let s = space_power_integral(drift, 0.0, half, resolution, p);
        vec![s.powf(q / p) * horizon]
    } else {
        (0..resolution)
            .map(|k| {
                let t = (k as f64 + 0.5) * dt;
                space_power_integral(drift, t, half, resolution, p).powf(q / p) * dt
            })
            .collect()
    };
    Ok(crate::stats::compensated_sum(time_terms).powf(1.0 / q))
}

// ---------------------------------------------------------------------------
// Probes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipticityReport {
    pub min_eig: f64,
    pub max_eig: f64,
    pub pass: bool,
}

/// Extreme eigenvalues of `sigma sigma^T` over the probe set.
pub fn ellipticity_probe(diffusion: &DiffusionSpec, probes: &[(f64, Vec<f64>)]) -> EllipticityReport {
    let mut min_eig = f64::INFINITY;
    let mut max_eig = f64::NEG_INFINITY;
    for (t, x) in probes {
        let s = diffusion.matrix(*t, x);
        let a = &s * s.transpose();
        let eig = SymmetricEigen::new(a).eigenvalues;
        min_eig = min_eig.min(eig.min());
        max_eig = max_eig.max(eig.max());
    }
    let tol = 1e-12;
    let kappa = diffusion.kappa;
    EllipticityReport {
        min_eig,
        max_eig,
        pass: min_eig >= 1.0 / kappa - tol && max_eig <= kappa + tol,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SublinearityWitness {
    pub sample_index: usize,
    pub functional_norm: f64,
    pub growth_bound: f64,
    pub segment_sup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SublinearityReport {
    pub pass: bool,
    /// `max |V| / (1 + ||x||_inf)` over the samples.
    pub worst_ratio: f64,
    pub witness: Option<SublinearityWitness>,
}

/// Checks `|V(t, x)| <= g(||x||_inf)` on every sample.
pub fn sublinearity_probe(
    functional: &FunctionalDriftSpec,
    samples: &[(f64, PathSegment)],
) -> SublinearityReport {
    let mut out = vec![0.0; functional.d];
    let mut worst_ratio = 0.0_f64;
    let mut witness: Option<SublinearityWitness> = None;
    let mut worst_excess = 0.0_f64;
    for (i, (t, seg)) in samples.iter().enumerate() {
        functional.eval(*t, seg.view(), &mut out);
        let v = euclid(&out);
        let sup = seg.sup_norm();
        let g = (functional.growth)(sup);
        worst_ratio = worst_ratio.max(v / (1.0 + sup));
        let excess = v - g;
        if excess > 1e-12 * (1.0 + g) && excess > worst_excess {
            worst_excess = excess;
            witness = Some(SublinearityWitness {
                sample_index: i,
                functional_norm: v,
                growth_bound: g,
                segment_sup: sup,
            });
        }
    }
    SublinearityReport {
        pass: witness.is_none(),
        worst_ratio,
        witness,
    }
}

/// Largest observed `|V(t,x) - V(t,y)| / ||x - y||_inf` over the pairs.
pub fn lipschitz_probe(
    functional: &FunctionalDriftSpec,
    pairs: &[(f64, PathSegment, PathSegment)],
) -> Result<f64> {
    let mut a = vec![0.0; functional.d];
    let mut b = vec![0.0; functional.d];
    let mut worst = 0.0_f64;
    for (t, x, y) in pairs {
        functional.eval(*t, x.view(), &mut a);
        functional.eval(*t, y.view(), &mut b);
        let diff: Vec<f64> = a.iter().zip(&b).map(|(u, v)| u - v).collect();
        let dist = x.difference(y)?.sup_norm();
        if dist > 0.0 {
            worst = worst.max(euclid(&diff) / dist);
        }
    }
    Ok(worst)
}

/// `d/p + 2/q` for the drift's declared exponents.
pub fn drift_pq_index(drift: &DriftSpec) -> Option<f64> {
    drift
        .integrability
        .map(|Integrability { p, q }| pq_index(drift.d, p, q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TimeGrid;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn box_indicator_norm_is_one() {
        let b = box_indicator_drift(1, 0.0, 1.0, 0.0, 1.0, 3.0, 5.0);
        let n = lqp_norm_numeric(&b, 1.0, 3.0, 5.0, 64).unwrap();
        assert_relative_eq!(n, 1.0, epsilon = 1e-12);
        assert_relative_eq!(b.analytic_lqp_norm(1.0).unwrap(), 1.0);
        // past the time support the norm does not grow
        let n2 = lqp_norm_numeric(&b, 2.0, 3.0, 5.0, 64).unwrap();
        assert_relative_eq!(n2, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn singular_norm_matches_closed_form() {
        // 2 * int_0^1 x^{-0.8} dx = 10, so the L^4 norm is 10^{1/4}
        let b = singular_drift(1, 0.2, 1.0, 4.0, 4.0).unwrap();
        let expected = 10f64.powf(0.25);
        assert_relative_eq!(b.analytic_lqp_norm(1.0).unwrap(), expected, epsilon = 1e-14);
        let n = lqp_norm_numeric(&b, 1.0, 4.0, 4.0, 200).unwrap();
        assert_relative_eq!(n, expected, max_relative = 1e-3);
        assert_relative_eq!(expected, 1.7783, epsilon = 1e-4);
    }

    #[test]
    fn singular_norm_in_two_dimensions() {
        let b = singular_drift(2, 0.5, 1.0, 3.0, 4.0).unwrap();
        let n = lqp_norm_numeric(&b, 1.0, 3.0, 4.0, 80).unwrap();
        // (2 pi / (2 - 1.5))^{1/3}
        let expected = (4.0 * std::f64::consts::PI).powf(1.0 / 3.0);
        assert_relative_eq!(n, expected, max_relative = 1e-2);
    }

    #[test]
    fn zero_norm() {
        let n = lqp_norm_numeric(&zero_drift(2), 1.0, 4.0, 4.0, 10).unwrap();
        assert_eq!(n, 0.0);
    }

    #[test]
    fn ou_tail_is_reported() {
        let err = lqp_norm_numeric(&ou_drift(1, 1.0), 1.0, 4.0, 4.0, 20).unwrap_err();
        assert!(matches!(err, Error::Integration(ref m) if m.contains("non-convergent")));
    }

    #[test]
    fn singular_drift_rejects_non_integrable_exponent() {
        assert!(singular_drift(1, 0.5, 1.0, 2.0, 4.0).is_err());
    }

    #[test]
    fn singular_drift_is_unbounded_but_integrable() {
        let b = singular_drift(1, 0.2, 1.0, 4.0, 4.0).unwrap();
        let mut out = [0.0];
        let mut last = 0.0;
        for k in 1..12 {
            let x = 10f64.powi(-k);
            b.eval(0.0, &[x], &mut out);
            assert!(out[0] > last);
            last = out[0];
        }
        b.eval(0.0, &[0.0], &mut out);
        assert_eq!(out[0], 0.0);
        assert!(lqp_norm_numeric(&b, 1.0, 4.0, 4.0, 50).unwrap().is_finite());
    }

    #[test]
    fn singular_cell_average_matches_midpoint_refinement() {
        let b = singular_drift(1, 0.2, 2.0, 4.0, 4.0).unwrap();
        let mut closed = [0.0];
        b.average_over_cell(0.0, &[0.3], &[0.7], 1, &mut closed);
        let generic = DriftSpec {
            cell_average: None,
            ..b.clone()
        };
        let mut mid = [0.0];
        generic.average_over_cell(0.0, &[0.3], &[0.7], 4000, &mut mid);
        assert_relative_eq!(closed[0], mid[0], max_relative = 1e-6);
    }

    #[test]
    fn ellipticity_examples() {
        let probes: Vec<(f64, Vec<f64>)> = vec![(0.0, vec![0.0, 0.0]), (1.0, vec![3.0, -1.0])];
        let id = ellipticity_probe(&identity_diffusion(2), &probes);
        assert_eq!((id.min_eig, id.max_eig, id.pass), (1.0, 1.0, true));
        let rejected = ellipticity_probe(&diag_diffusion(vec![2.0, 1.0], 2.0), &probes);
        assert_relative_eq!(rejected.min_eig, 1.0, epsilon = 1e-12);
        assert_relative_eq!(rejected.max_eig, 4.0, epsilon = 1e-12);
        assert!(!rejected.pass);
        let ok = ellipticity_probe(&diag_diffusion(vec![2.0, 1.0], 4.0), &probes);
        assert!(ok.pass);
    }

    #[test]
    fn holder_sqrt_diffusion_is_elliptic() {
        let probes: Vec<(f64, Vec<f64>)> =
            (-40..=40).map(|k| (0.0, vec![k as f64 * 0.05])).collect();
        let rep = ellipticity_probe(&holder_sqrt_diffusion(), &probes);
        assert!(rep.pass);
        assert_relative_eq!(rep.min_eig, 1.0);
        assert_relative_eq!(rep.max_eig, 4.0);
    }

    fn segments(grid: TimeGrid) -> Vec<(f64, PathSegment)> {
        (0..20)
            .map(|k| {
                let a = k as f64 - 10.0;
                let seg = PathSegment::from_fn(grid, |s| vec![a * (1.0 + s * s) + s]).unwrap();
                (0.1 * k as f64, seg)
            })
            .collect()
    }

    #[test]
    fn sublinearity_examples() {
        let grid = TimeGrid::new(1, 0.5, 1.0, 0.05).unwrap();
        let dist = distributed_delay_functional(1, 1.0, 0.5);
        let rep = sublinearity_probe(&dist, &segments(grid));
        assert!(rep.pass, "{rep:?}");
        let rep0 = sublinearity_probe(&zero_functional(1), &segments(grid));
        assert!(rep0.pass);
        assert_eq!(rep0.worst_ratio, 0.0);

        let quad = FunctionalDriftSpec {
            name: "quadratic".into(),
            d: 1,
            eval: Arc::new(|_, seg, out| out[0] = seg.sup_norm().powi(2)),
            growth: Arc::new(|u| u),
            lipschitz_k: None,
            is_zero: false,
        };
        let bad = sublinearity_probe(&quad, &segments(grid));
        assert!(!bad.pass);
        let w = bad.witness.unwrap();
        assert!(w.functional_norm > w.growth_bound);
    }

    #[test]
    fn sqrt_delay_is_sublinear_and_lipschitz() {
        let grid = TimeGrid::new(1, 0.5, 1.0, 0.05).unwrap();
        let v = sqrt_delay_functional(1, 2.0);
        assert!(sublinearity_probe(&v, &segments(grid)).pass);
        let segs = segments(grid);
        let pairs: Vec<_> = segs
            .windows(2)
            .map(|w| (0.0, w[0].1.clone(), w[1].1.clone()))
            .collect();
        assert!(lipschitz_probe(&v, &pairs).unwrap() <= 2.0 + 1e-12);
    }

    #[test]
    fn coefficient_set_dimension_check() {
        let err = CoefficientSet::new(zero_drift(2), identity_diffusion(1), zero_functional(2));
        assert!(matches!(err, Err(Error::Dimension { .. })));
    }

    proptest! {
        #[test]
        fn lqp_norm_is_homogeneous(lambda in 0.1..10.0f64) {
            let b = box_indicator_drift(1, -0.5, 0.5, 0.0, 1.0, 2.0, 3.0);
            let base = lqp_norm_numeric(&b, 1.0, 2.0, 3.0, 16).unwrap();
            let scaled = lqp_norm_numeric(&b.scaled(lambda), 1.0, 2.0, 3.0, 16).unwrap();
            prop_assert!((scaled - lambda * base).abs() <= 1e-10 * lambda * base);
        }

        #[test]
        fn space_independent_diffusion(x in prop::collection::vec(-5.0..5.0f64, 2), y in prop::collection::vec(-5.0..5.0f64, 2)) {
            let s = diag_diffusion(vec![2.0, 0.5], 4.0);
            prop_assert!(s.space_independent);
            prop_assert_eq!(s.matrix(0.3, &x), s.matrix(0.3, &y));
        }
    }
}
