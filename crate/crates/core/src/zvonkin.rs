//! The Zvonkin transform.
//!
//! Solves the backward system `d_t u~ + L_t u~ + b = 0`, `u~(T) = 0`, on a
//! box `[-L, L]^d` (d = 1, 2), with
//! `L_t v = 1/2 sum (sigma sigma^T)_{ij} d_i d_j v + b . grad v`.
//! `u = u~ + id` then removes the drift: `Y = u(t, X(t))` has no `b dt` term.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{CoefficientSet, VectorField};
use crate::engine::{Ensemble, StoppingKind, StoppingRecord};
use crate::error::{Error, Result};
use crate::model::{euclid, SamplePath};
use crate::rng::NormalStream;
use crate::stats::{compensated_sum, McEstimate, DEFAULT_CONFIDENCE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// `u~ = 0` on the boundary.
    Dirichlet,
    /// Zero normal derivative (reflecting ghost nodes).
    Neumann,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdeGrid {
    pub d: usize,
    pub halfwidth: f64,
    pub nx: usize,
    pub start: f64,
    pub terminal: f64,
    pub n_times: usize,
}

impl PdeGrid {
    pub fn new(d: usize, halfwidth: f64, nx: usize, start: f64, terminal: f64, n_times: usize) -> Result<Self> {
        if d == 0 || d > 2 {
            return Err(Error::Config(format!(
                "the PDE solver supports d = 1 or 2, got d = {d}"
            )));
        }
        if nx < 3 {
            return Err(Error::Domain(format!("need nx >= 3, got {nx}")));
        }
        if !(halfwidth > 0.0 && halfwidth.is_finite()) {
            return Err(Error::Domain(format!("halfwidth must be positive, got {halfwidth}")));
        }
        if !(terminal > start) || n_times == 0 {
            return Err(Error::Domain(format!(
                "need start < terminal and n_times > 0, got [{start}, {terminal}] with {n_times} steps"
            )));
        }
        Ok(Self {
            d,
            halfwidth,
            nx,
            start,
            terminal,
            n_times,
        })
    }

    /// Box covering the drift support plus a diffusive margin `4 sqrt(kappa T)`.
    pub fn for_coefficients(
        coeffs: &CoefficientSet,
        start: f64,
        terminal: f64,
        nx: usize,
        n_times: usize,
    ) -> Result<Self> {
        let support = coeffs.drift.support_halfwidth.unwrap_or(2.0);
        let margin = 4.0 * (coeffs.diffusion.kappa * (terminal - start)).sqrt();
        Self::new(coeffs.d, support + margin, nx, start, terminal, n_times)
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.halfwidth / (self.nx - 1) as f64
    }
    pub fn dt(&self) -> f64 {
        (self.terminal - self.start) / self.n_times as f64
    }
    pub fn n_nodes(&self) -> usize {
        self.nx.pow(self.d as u32)
    }
    pub fn coord(&self, i: usize) -> f64 {
        -self.halfwidth + i as f64 * self.dx()
    }
    pub fn time(&self, j: usize) -> f64 {
        if j == self.n_times {
            self.terminal
        } else {
            self.start + j as f64 * self.dt()
        }
    }
    /// Node coordinates; node `(i, j)` of a 2-D grid has index `i * nx + j`.
    pub fn node(&self, index: usize) -> Vec<f64> {
        match self.d {
            1 => vec![self.coord(index)],
            _ => vec![self.coord(index / self.nx), self.coord(index % self.nx)],
        }
    }
    fn axis_index(&self, index: usize, axis: usize) -> usize {
        match (self.d, axis) {
            (1, _) => index,
            (_, 0) => index / self.nx,
            _ => index % self.nx,
        }
    }
    fn with_axis(&self, index: usize, axis: usize, value: usize) -> usize {
        match (self.d, axis) {
            (1, _) => value,
            (_, 0) => value * self.nx + index % self.nx,
            _ => (index / self.nx) * self.nx + value,
        }
    }
    fn on_boundary(&self, index: usize) -> bool {
        (0..self.d).any(|a| {
            let i = self.axis_index(index, a);
            i == 0 || i == self.nx - 1
        })
    }
}

/// Right-hand side `f` of the backward problem.
#[derive(Clone)]
pub enum PdeSource {
    Zero,
    /// `f = b`, cell-averaged over each spatial cell.
    Drift,
    /// A pointwise vector field with `d` components.
    Field(VectorField),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdeOptions {
    /// 1 = backward Euler, 1/2 = Crank–Nicolson.
    pub theta: f64,
    /// Chosen from the drift support when `None`.
    pub boundary: Option<Boundary>,
    /// Sub-cells per axis for cell averages without a closed form.
    pub cell_subdivisions: usize,
    /// Whether the `b . grad` term is included in the operator.
    pub advection: bool,
}

impl Default for PdeOptions {
    fn default() -> Self {
        Self {
            theta: 1.0,
            boundary: None,
            cell_subdivisions: 4,
            advection: true,
        }
    }
}

/// `u~` on all time levels, row-major `[time][node][component]`, times ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct PdeSolution {
    pub grid: PdeGrid,
    pub boundary: Boundary,
    values: Vec<f64>,
}

/// Coefficients of one 1-D line operator: `(A v)_i = lo_i v_{i-1} + mid_i v_i + hi_i v_{i+1}`.
struct LineOp {
    lo: Vec<f64>,
    mid: Vec<f64>,
    hi: Vec<f64>,
    dirichlet: bool,
}

impl LineOp {
    fn new(a: &[f64], b: &[f64], dx: f64, boundary: Boundary) -> Self {
        let n = a.len();
        let (mut lo, mut mid, mut hi) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let dx2 = dx * dx;
        for i in 0..n {
            lo[i] = a[i] / dx2;
            mid[i] = -2.0 * a[i] / dx2;
            hi[i] = a[i] / dx2;
            if b[i].abs() * dx <= 2.0 * a[i] {
                lo[i] -= b[i] / (2.0 * dx);
                hi[i] += b[i] / (2.0 * dx);
            } else if b[i] > 0.0 {
                hi[i] += b[i] / dx;
                mid[i] -= b[i] / dx;
            } else {
                lo[i] -= b[i] / dx;
                mid[i] += b[i] / dx;
            }
        }
        if boundary == Boundary::Neumann {
            hi[0] += lo[0];
            lo[0] = 0.0;
            lo[n - 1] += hi[n - 1];
            hi[n - 1] = 0.0;
        }
        Self {
            lo,
            mid,
            hi,
            dirichlet: boundary == Boundary::Dirichlet,
        }
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let n = v.len();
        for i in 0..n {
            if self.dirichlet && (i == 0 || i == n - 1) {
                out[i] = 0.0;
                continue;
            }
            let mut s = self.mid[i] * v[i];
            if i > 0 {
                s += self.lo[i] * v[i - 1];
            }
            if i + 1 < n {
                s += self.hi[i] * v[i + 1];
            }
            out[i] = s;
        }
    }

    /// Solves `(I - c A) x = rhs` in place (Thomas algorithm).
    fn solve_implicit(&self, c: f64, rhs: &mut [f64]) {
        let n = rhs.len();
        let mut sub = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut sup = vec![0.0; n];
        for i in 0..n {
            if self.dirichlet && (i == 0 || i == n - 1) {
                diag[i] = 1.0;
                rhs[i] = 0.0;
            } else {
                sub[i] = -c * self.lo[i];
                diag[i] = 1.0 - c * self.mid[i];
                sup[i] = -c * self.hi[i];
            }
        }
        thomas(&sub, &diag, &sup, rhs);
    }
}

/// Tridiagonal solve; `sub[0]` and `sup[n-1]` are ignored.
pub fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &mut [f64]) {
    let n = rhs.len();
    let mut c = vec![0.0; n];
    let mut beta = diag[0];
    c[0] = sup[0] / beta;
    rhs[0] /= beta;
    for i in 1..n {
        beta = diag[i] - sub[i] * c[i - 1];
        c[i] = if i + 1 < n { sup[i] / beta } else { 0.0 };
        rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}

/// Per-level coefficient fields at every node.
struct Level {
    /// `1/2 sigma sigma^T`, row-major `d x d` per node.
    a: Vec<f64>,
    /// Advection coefficient (cell-averaged drift), `d` per node.
    b: Vec<f64>,
    /// Source, `d` per node.
    f: Vec<f64>,
}

fn build_level(
    coeffs: &CoefficientSet,
    grid: &PdeGrid,
    source: &PdeSource,
    opts: &PdeOptions,
    t: f64,
    cached_b: Option<&Vec<f64>>,
) -> Level {
    let d = grid.d;
    let nn = grid.n_nodes();
    let h = grid.dx();
    let mut a = vec![0.0; nn * d * d];
    let mut sigma = vec![0.0; d * d];
    for idx in 0..nn {
        let x = grid.node(idx);
        coeffs.diffusion.eval(t, &x, &mut sigma);
        for i in 0..d {
            for j in 0..d {
                let mut s = 0.0;
                for k in 0..d {
                    s += sigma[i * d + k] * sigma[j * d + k];
                }
                a[idx * d * d + i * d + j] = 0.5 * s;
            }
        }
    }
    let b = match cached_b {
        Some(b) => b.clone(),
        None => cell_averaged_drift(coeffs, grid, opts, t),
    };
    let f = match source {
        PdeSource::Zero => vec![0.0; nn * d],
        PdeSource::Drift => b.clone(),
        PdeSource::Field(field) => {
            let mut f = vec![0.0; nn * d];
            for idx in 0..nn {
                field(t, &grid.node(idx), &mut f[idx * d..(idx + 1) * d]);
            }
            f
        }
    };
    let _ = h;
    Level { a, b, f }
}

fn cell_averaged_drift(coeffs: &CoefficientSet, grid: &PdeGrid, opts: &PdeOptions, t: f64) -> Vec<f64> {
    let d = grid.d;
    let nn = grid.n_nodes();
    let half = grid.dx() / 2.0;
    let mut b = vec![0.0; nn * d];
    for idx in 0..nn {
        let x = grid.node(idx);
        let lo: Vec<f64> = x.iter().map(|v| v - half).collect();
        let hi: Vec<f64> = x.iter().map(|v| v + half).collect();
        coeffs
            .drift
            .average_over_cell(t, &lo, &hi, opts.cell_subdivisions, &mut b[idx * d..(idx + 1) * d]);
    }
    b
}

/// Steps the backward problem from `u~(T) = 0` down to the grid start time.
pub fn solve_backward_pde(
    coeffs: &CoefficientSet,
    grid: PdeGrid,
    source: &PdeSource,
    opts: &PdeOptions,
) -> Result<PdeSolution> {
    if coeffs.d != grid.d {
        return Err(Error::Dimension {
            expected: grid.d,
            got: coeffs.d,
        });
    }
    if !(opts.theta >= 0.5 && opts.theta <= 1.0) {
        return Err(Error::Domain(format!(
            "implicitness parameter must lie in [1/2, 1], got {}",
            opts.theta
        )));
    }
    let boundary = opts.boundary.unwrap_or(if coeffs.drift.support_halfwidth.is_some() {
        Boundary::Dirichlet
    } else {
        Boundary::Neumann
    });
    let d = grid.d;
    let nn = grid.n_nodes();
    let stride = nn * d;
    let mut values = vec![0.0; (grid.n_times + 1) * stride];
    let cached_b = if coeffs.drift.time_homogeneous {
        Some(cell_averaged_drift(coeffs, &grid, opts, grid.terminal))
    } else {
        None
    };
    let dtau = grid.dt();
    let mut prev = build_level(coeffs, &grid, source, opts, grid.terminal, cached_b.as_ref());
    let mut u = vec![0.0; stride];
    let fmax = prev.f.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let blowup = 1e8 * fmax * (1.0 + grid.terminal - grid.start);
    for n in 1..=grid.n_times {
        let j = grid.n_times - n;
        let t = grid.time(j);
        let next = build_level(coeffs, &grid, source, opts, t, cached_b.as_ref());
        u = match d {
            1 => step_1d(&grid, boundary, opts, dtau, &prev, &next, &u),
            _ => step_2d(&grid, boundary, opts, dtau, &next, &u),
        };
        let max = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !max.is_finite() || max > blowup {
            return Err(Error::SolverUnstable(format!(
                "solution norm {max:.3e} at t = {t}; reduce the time step (currently {dtau})"
            )));
        }
        values[j * stride..(j + 1) * stride].copy_from_slice(&u);
        prev = next;
    }
    Ok(PdeSolution {
        grid,
        boundary,
        values,
    })
}

fn line_coeffs(grid: &PdeGrid, level: &Level, opts: &PdeOptions, line: &[usize], axis: usize) -> (Vec<f64>, Vec<f64>) {
    let d = grid.d;
    let a = line.iter().map(|&i| level.a[i * d * d + axis * d + axis]).collect();
    let b = line
        .iter()
        .map(|&i| if opts.advection { level.b[i * d + axis] } else { 0.0 })
        .collect();
    (a, b)
}

fn step_1d(
    grid: &PdeGrid,
    boundary: Boundary,
    opts: &PdeOptions,
    dtau: f64,
    prev: &Level,
    next: &Level,
    u: &[f64],
) -> Vec<f64> {
    let n = grid.nx;
    let line: Vec<usize> = (0..n).collect();
    let th = opts.theta;
    let (a0, b0) = line_coeffs(grid, prev, opts, &line, 0);
    let (a1, b1) = line_coeffs(grid, next, opts, &line, 0);
    let op_prev = LineOp::new(&a0, &b0, grid.dx(), boundary);
    let op_next = LineOp::new(&a1, &b1, grid.dx(), boundary);
    let mut au = vec![0.0; n];
    op_prev.apply(u, &mut au);
    let mut rhs: Vec<f64> = (0..n)
        .map(|i| u[i] + (1.0 - th) * dtau * au[i] + dtau * (th * next.f[i] + (1.0 - th) * prev.f[i]))
        .collect();
    op_next.solve_implicit(th * dtau, &mut rhs);
    rhs
}

/// Douglas ADI step; the mixed derivative is explicit.
fn step_2d(grid: &PdeGrid, boundary: Boundary, opts: &PdeOptions, dtau: f64, lvl: &Level, u: &[f64]) -> Vec<f64> {
    let nx = grid.nx;
    let nn = grid.n_nodes();
    let th = opts.theta;
    let dx = grid.dx();
    let mut out = vec![0.0; nn * 2];
    let lines = |axis: usize| -> Vec<Vec<usize>> {
        (0..nx)
            .map(|fixed| {
                (0..nx)
                    .map(|k| if axis == 0 { k * nx + fixed } else { fixed * nx + k })
                    .collect()
            })
            .collect()
    };
    let x_lines = lines(0);
    let y_lines = lines(1);
    let ops_x: Vec<LineOp> = x_lines
        .iter()
        .map(|l| {
            let (a, b) = line_coeffs(grid, lvl, opts, l, 0);
            LineOp::new(&a, &b, dx, boundary)
        })
        .collect();
    let ops_y: Vec<LineOp> = y_lines
        .iter()
        .map(|l| {
            let (a, b) = line_coeffs(grid, lvl, opts, l, 1);
            LineOp::new(&a, &b, dx, boundary)
        })
        .collect();
    let reflect = |i: isize| -> usize {
        if i < 0 {
            (-i) as usize
        } else if i as usize >= nx {
            2 * (nx - 1) - i as usize
        } else {
            i as usize
        }
    };
    for comp in 0..2 {
        let uc: Vec<f64> = (0..nn).map(|i| u[i * 2 + comp]).collect();
        let apply_axis = |ops: &[LineOp], lines: &[Vec<usize>]| -> Vec<f64> {
            let mut res = vec![0.0; nn];
            for (op, l) in ops.iter().zip(lines) {
                let v: Vec<f64> = l.iter().map(|&i| uc[i]).collect();
                let mut o = vec![0.0; nx];
                op.apply(&v, &mut o);
                for (k, &i) in l.iter().enumerate() {
                    res[i] = o[k];
                }
            }
            res
        };
        let a1u = apply_axis(&ops_x, &x_lines);
        let a2u = apply_axis(&ops_y, &y_lines);
        let mut y0 = vec![0.0; nn];
        for idx in 0..nn {
            if boundary == Boundary::Dirichlet && grid.on_boundary(idx) {
                continue;
            }
            let (i, j) = ((idx / nx) as isize, (idx % nx) as isize);
            let at = |p: isize, q: isize| uc[reflect(p) * nx + reflect(q)];
            let uxy = (at(i + 1, j + 1) - at(i + 1, j - 1) - at(i - 1, j + 1) + at(i - 1, j - 1)) / (4.0 * dx * dx);
            let cross = 2.0 * lvl.a[idx * 4 + 1] * uxy;
            y0[idx] = uc[idx] + dtau * (a1u[idx] + a2u[idx] + cross) + dtau * lvl.f[idx * 2 + comp];
        }
        let mut y1 = vec![0.0; nn];
        for (op, l) in ops_x.iter().zip(&x_lines) {
            let mut rhs: Vec<f64> = l.iter().map(|&i| y0[i] - th * dtau * a1u[i]).collect();
            op.solve_implicit(th * dtau, &mut rhs);
            for (k, &i) in l.iter().enumerate() {
                y1[i] = rhs[k];
            }
        }
        for (op, l) in ops_y.iter().zip(&y_lines) {
            let mut rhs: Vec<f64> = l.iter().map(|&i| y1[i] - th * dtau * a2u[i]).collect();
            op.solve_implicit(th * dtau, &mut rhs);
            for (k, &i) in l.iter().enumerate() {
                out[i * 2 + comp] = rhs[k];
            }
        }
    }
    out
}

impl PdeSolution {
    pub fn d(&self) -> usize {
        self.grid.d
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `u~` at time level `j` and node `idx`.
    pub fn u_tilde_at(&self, j: usize, idx: usize) -> &[f64] {
        let d = self.grid.d;
        let off = (j * self.grid.n_nodes() + idx) * d;
        &self.values[off..off + d]
    }

    /// `u = u~ + x` at a node.
    pub fn u_at(&self, j: usize, idx: usize) -> Vec<f64> {
        let x = self.grid.node(idx);
        self.u_tilde_at(j, idx).iter().zip(&x).map(|(a, b)| a + b).collect()
    }

    /// Jacobian of `u~` at a node, row-major `[component][direction]`;
    /// centered differences inside, one-sided on the boundary.
    pub fn gradient_at(&self, j: usize, idx: usize) -> Vec<f64> {
        let g = &self.grid;
        let d = g.d;
        let h = g.dx();
        let mut out = vec![0.0; d * d];
        for axis in 0..d {
            let i = g.axis_index(idx, axis);
            let (lo, hi) = if i == 0 {
                (0, 1)
            } else if i == g.nx - 1 {
                (g.nx - 2, g.nx - 1)
            } else {
                (i - 1, i + 1)
            };
            let span = (hi - lo) as f64 * h;
            let ulo = self.u_tilde_at(j, g.with_axis(idx, axis, lo));
            let uhi = self.u_tilde_at(j, g.with_axis(idx, axis, hi));
            for c in 0..d {
                out[c * d + axis] = (uhi[c] - ulo[c]) / span;
            }
        }
        out
    }

    /// Second derivatives of component `comp`, `d x d`, by differencing the gradient.
    pub fn hessian_at(&self, j: usize, idx: usize, comp: usize) -> Vec<f64> {
        let g = &self.grid;
        let d = g.d;
        let h = g.dx();
        let mut out = vec![0.0; d * d];
        for axis in 0..d {
            let i = g.axis_index(idx, axis);
            if d == 1 || axis == 0 || axis == 1 {
                if i > 0 && i + 1 < g.nx {
                    let um = self.u_tilde_at(j, g.with_axis(idx, axis, i - 1))[comp];
                    let u0 = self.u_tilde_at(j, idx)[comp];
                    let up = self.u_tilde_at(j, g.with_axis(idx, axis, i + 1))[comp];
                    out[axis * d + axis] = (up - 2.0 * u0 + um) / (h * h);
                } else {
                    let k = if i == 0 { 1 } else { g.nx - 2 };
                    let inner = g.with_axis(idx, axis, k);
                    out[axis * d + axis] = self.hessian_at(j, inner, comp)[axis * d + axis];
                }
            }
        }
        if d == 2 {
            let i = g.axis_index(idx, 0);
            let (lo, hi) = if i == 0 {
                (0, 1)
            } else if i == g.nx - 1 {
                (g.nx - 2, g.nx - 1)
            } else {
                (i - 1, i + 1)
            };
            let glo = self.gradient_at(j, g.with_axis(idx, 0, lo));
            let ghi = self.gradient_at(j, g.with_axis(idx, 0, hi));
            let mixed = (ghi[comp * d + 1] - glo[comp * d + 1]) / ((hi - lo) as f64 * h);
            out[1] = mixed;
            out[2] = mixed;
        }
        out
    }

    /// Largest difference quotient of `u~(t_j, .)` between neighbouring nodes
    /// (operator norm of the forward-difference Jacobian in d = 2).
    pub fn grid_lipschitz(&self, j: usize) -> f64 {
        let g = &self.grid;
        let h = g.dx();
        match g.d {
            1 => (0..g.nx - 1)
                .map(|i| (self.u_tilde_at(j, i + 1)[0] - self.u_tilde_at(j, i)[0]).abs() / h)
                .fold(0.0, f64::max),
            _ => {
                let nx = g.nx;
                let mut best = 0.0f64;
                for i in 0..nx - 1 {
                    for k in 0..nx - 1 {
                        let u00 = self.u_tilde_at(j, i * nx + k);
                        let u10 = self.u_tilde_at(j, (i + 1) * nx + k);
                        let u01 = self.u_tilde_at(j, i * nx + k + 1);
                        let m = [
                            (u10[0] - u00[0]) / h,
                            (u01[0] - u00[0]) / h,
                            (u10[1] - u00[1]) / h,
                            (u01[1] - u00[1]) / h,
                        ];
                        best = best.max(spectral_norm_2x2(m));
                    }
                }
                best
            }
        }
    }

    /// `max_j grid_lipschitz(j)` over all time levels.
    pub fn max_lipschitz(&self) -> f64 {
        (0..=self.grid.n_times)
            .map(|j| self.grid_lipschitz(j))
            .fold(0.0, f64::max)
    }

    fn locate(&self, x: &[f64]) -> Option<Vec<(usize, f64)>> {
        let g = &self.grid;
        let h = g.dx();
        x.iter()
            .map(|&v| {
                if !(v >= -g.halfwidth && v <= g.halfwidth) {
                    return None;
                }
                let s = (v + g.halfwidth) / h;
                let i = (s.floor() as usize).min(g.nx - 2);
                Some((i, s - i as f64))
            })
            .collect()
    }

    fn time_weights(&self, t: f64) -> Option<(usize, f64)> {
        let g = &self.grid;
        let tol = 1e-9 * (g.terminal - g.start);
        if t < g.start - tol || t > g.terminal + tol {
            return None;
        }
        let s = ((t - g.start) / g.dt()).clamp(0.0, g.n_times as f64);
        let j = (s.floor() as usize).min(g.n_times - 1);
        Some((j, s - j as f64))
    }

    /// Multilinear interpolation of a nodal field in space and time.
    fn interpolate_with<F>(&self, t: f64, x: &[f64], width: usize, field: F) -> Option<Vec<f64>>
    where
        F: Fn(usize, usize) -> Vec<f64>,
    {
        let (j, wt) = self.time_weights(t)?;
        let cell = self.locate(x)?;
        let g = &self.grid;
        let mut out = vec![0.0; width];
        let corners = 1usize << g.d;
        for (jj, tw) in [(j, 1.0 - wt), (j + 1, wt)] {
            if tw == 0.0 {
                continue;
            }
            for c in 0..corners {
                let mut w = tw;
                let mut idx = 0;
                for (axis, &(i, s)) in cell.iter().enumerate() {
                    let bit = (c >> axis) & 1;
                    w *= if bit == 1 { s } else { 1.0 - s };
                    idx = if g.d == 1 { i + bit } else { idx * g.nx + i + bit };
                }
                if w == 0.0 {
                    continue;
                }
                for (o, v) in out.iter_mut().zip(field(jj, idx)) {
                    *o += w * v;
                }
            }
        }
        Some(out)
    }

    /// `u~(t, x)`, or `None` outside the domain.
    pub fn u_tilde(&self, t: f64, x: &[f64]) -> Option<Vec<f64>> {
        self.interpolate_with(t, x, self.grid.d, |j, i| self.u_tilde_at(j, i).to_vec())
    }

    /// `u(t, x) = u~(t, x) + x`.
    pub fn u(&self, t: f64, x: &[f64]) -> Option<Vec<f64>> {
        let mut v = self.u_tilde(t, x)?;
        v.iter_mut().zip(x).for_each(|(a, b)| *a += b);
        Some(v)
    }

    /// `Du = I + grad u~` at `(t, x)`, row-major.
    pub fn du(&self, t: f64, x: &[f64]) -> Option<Vec<f64>> {
        let d = self.grid.d;
        let mut g = self.interpolate_with(t, x, d * d, |j, i| self.gradient_at(j, i))?;
        for i in 0..d {
            g[i * d + i] += 1.0;
        }
        Some(g)
    }

    /// Dense export: a header line `d L nx n_times`, then one line per time
    /// level (ascending) holding `u~` row-major over nodes and components.
    pub fn write_dense<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let g = &self.grid;
        writeln!(w, "{} {:.16e} {} {}", g.d, g.halfwidth, g.nx, g.n_times + 1)?;
        let stride = g.n_nodes() * g.d;
        for j in 0..=g.n_times {
            let row = &self.values[j * stride..(j + 1) * stride];
            let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

fn spectral_norm_2x2(m: [f64; 4]) -> f64 {
    let (a, b, c, d) = (m[0], m[1], m[2], m[3]);
    let s1 = a * a + b * b + c * c + d * d;
    let det = a * d - b * c;
    let disc = (s1 * s1 - 4.0 * det * det).max(0.0).sqrt();
    ((s1 + disc) / 2.0).sqrt()
}

// ---------------------------------------------------------------------------
// Contraction window
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionWindow {
    pub delta: f64,
    pub achieved_lipschitz: f64,
    /// `(delta, max Lipschitz constant)` for every ladder rung, largest first.
    pub ladder: Vec<(f64, f64)>,
}

/// Solves the transform on `[T - delta, T]` for every ladder value, with the
/// time step `dt` held fixed across rungs.
pub fn solve_ladder(
    coeffs: &CoefficientSet,
    terminal: f64,
    ladder: &[f64],
    halfwidth: f64,
    nx: usize,
    dt: f64,
    opts: &PdeOptions,
) -> Result<Vec<PdeSolution>> {
    ladder
        .par_iter()
        .map(|&delta| {
            let n_times = ((delta / dt).round() as usize).max(1);
            let grid = PdeGrid::new(coeffs.d, halfwidth, nx, terminal - delta, terminal, n_times)?;
            solve_backward_pde(coeffs, grid, &PdeSource::Drift, opts)
        })
        .collect()
}

/// Largest window whose grid Lipschitz constant stays at most `threshold`
/// (the contraction uses `1/2`).
pub fn contraction_window(family: &[PdeSolution], threshold: f64) -> Result<ContractionWindow> {
    let mut ladder: Vec<(f64, f64)> = family
        .iter()
        .map(|s| (s.grid.terminal - s.grid.start, s.max_lipschitz()))
        .collect();
    ladder.sort_by(|a, b| b.0.total_cmp(&a.0));
    match ladder.iter().find(|(_, lip)| *lip <= threshold) {
        Some(&(delta, lip)) => Ok(ContractionWindow {
            delta,
            achieved_lipschitz: lip,
            ladder,
        }),
        None => {
            let (smallest, lip) = *ladder.last().ok_or_else(|| Error::Config("empty ladder".into()))?;
            Err(Error::WindowNotFound {
                smallest_horizon: smallest,
                lipschitz: lip,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Path transform and residuals
// ---------------------------------------------------------------------------

/// `Y(t) = u(t, X(t))` at the path times inside the solution window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformedPath {
    pub times: Vec<f64>,
    /// Row-major `[time][component]`.
    pub values: Vec<f64>,
    /// Set when the path leaves the PDE domain; the transform stops there.
    pub stopping: Option<StoppingRecord>,
}

impl TransformedPath {
    pub fn state(&self, k: usize) -> &[f64] {
        let d = self.values.len() / self.times.len().max(1);
        &self.values[k * d..(k + 1) * d]
    }
}

fn window_steps(path: &SamplePath, sol: &PdeSolution) -> Vec<usize> {
    let g = path.grid();
    let h = g.step();
    let tol = 1e-9 * h;
    (0..=g.n_steps())
        .filter(|&k| {
            let t = k as f64 * h;
            t >= sol.grid.start - tol && t <= sol.grid.terminal + tol
        })
        .collect()
}

pub fn transform_path(path: &SamplePath, sol: &PdeSolution) -> Result<TransformedPath> {
    if path.grid().d() != sol.d() {
        return Err(Error::Dimension {
            expected: sol.d(),
            got: path.grid().d(),
        });
    }
    let h = path.grid().step();
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut stopping = None;
    for k in window_steps(path, sol) {
        let t = k as f64 * h;
        let x = path.state_at_step(k);
        match sol.u(t.min(sol.grid.terminal), x) {
            Some(y) => {
                times.push(t);
                if (t - sol.grid.terminal).abs() <= 1e-9 * h {
                    values.extend_from_slice(x);
                } else {
                    values.extend(y);
                }
            }
            None => {
                stopping = Some(StoppingRecord {
                    kind: StoppingKind::DomainExit,
                    time: t,
                    level: 0,
                });
                break;
            }
        }
    }
    Ok(TransformedPath {
        times,
        values,
        stopping,
    })
}

/// Sandwich `lower |Z~| <= |Z| <= upper |Z~|` along one coupled pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichRecord {
    pub holds: bool,
    pub worst_lower_ratio: f64,
    pub worst_upper_ratio: f64,
    pub checked_times: usize,
}

pub fn sandwich(
    x: &SamplePath,
    x_hat: &SamplePath,
    sol: &PdeSolution,
    lower: f64,
    upper: f64,
) -> Result<SandwichRecord> {
    let y = transform_path(x, sol)?;
    let y_hat = transform_path(x_hat, sol)?;
    let n = y.times.len().min(y_hat.times.len());
    let h = x.grid().step();
    let mut holds = true;
    let mut worst_lower = f64::INFINITY;
    let mut worst_upper = 0.0f64;
    for k in 0..n {
        let step = (y.times[k] / h).round() as usize;
        let z = euclid(
            &x.state_at_step(step)
                .iter()
                .zip(x_hat.state_at_step(step))
                .map(|(a, b)| a - b)
                .collect::<Vec<_>>(),
        );
        let zt = euclid(
            &y.state(k)
                .iter()
                .zip(y_hat.state(k))
                .map(|(a, b)| a - b)
                .collect::<Vec<_>>(),
        );
        if zt == 0.0 {
            if z != 0.0 {
                holds = false;
            }
            continue;
        }
        let r = z / zt;
        worst_lower = worst_lower.min(r);
        worst_upper = worst_upper.max(r);
        if r < lower || r > upper {
            holds = false;
        }
    }
    Ok(SandwichRecord {
        holds,
        worst_lower_ratio: worst_lower,
        worst_upper_ratio: worst_upper,
        checked_times: n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub times: Vec<f64>,
    /// `[checkpoint][component]`.
    pub residuals: Vec<Vec<McEstimate>>,
    /// Paths that left the PDE domain and were excluded.
    pub exited: usize,
}

/// `E[Y(t) - Y(0) - int_0^t Du sigma dW]` at the given path steps.
pub fn ito_residual(ensemble: &Ensemble, sol: &PdeSolution, checkpoints: &[usize]) -> Result<ResidualReport> {
    let cfg = ensemble.config();
    let coeffs = cfg.coefficients.clone();
    if !coeffs.functional.is_zero {
        return Err(Error::Config(
            "the residual check needs a functional-drift-free ensemble".into(),
        ));
    }
    let grid = cfg.grid;
    let d = grid.d();
    let h = grid.step();
    if (sol.grid.start).abs() > 1e-9 || (sol.grid.terminal - grid.horizon()).abs() > 1e-9 * grid.horizon() {
        return Err(Error::Config("the solution must cover [0, T] of the ensemble grid".into()));
    }
    if let Some(&bad) = checkpoints.iter().find(|&&k| k > grid.n_steps()) {
        return Err(Error::Range(format!("checkpoint step {bad} beyond the horizon")));
    }
    let last = checkpoints.iter().copied().max().unwrap_or(0);
    let rows = ensemble.map(|_, p| {
        let y0 = match sol.u(0.0, p.path.state_at_step(0)) {
            Some(v) => v,
            None => return Ok(None),
        };
        let mut si = vec![0.0; d];
        let mut sigma = vec![0.0; d * d];
        let mut out = Vec::with_capacity(checkpoints.len() * d);
        let mut at: Vec<Vec<f64>> = Vec::with_capacity(last + 1);
        for k in 0..=last {
            let t = k as f64 * h;
            let x = p.path.state_at_step(k);
            let y = if k == grid.n_steps() {
                Some(x.to_vec())
            } else {
                sol.u(t, x)
            };
            let Some(y) = y else { return Ok(None) };
            at.push((0..d).map(|c| y[c] - y0[c] - si[c]).collect());
            if k < last {
                let Some(du) = sol.du(t, x) else { return Ok(None) };
                coeffs.diffusion.eval(t, x, &mut sigma);
                let dw = p.increments.at(k);
                for i in 0..d {
                    for j in 0..d {
                        let mut dus = 0.0;
                        for l in 0..d {
                            dus += du[i * d + l] * sigma[l * d + j];
                        }
                        si[i] += dus * dw[j];
                    }
                }
            }
        }
        for &k in checkpoints {
            out.extend_from_slice(&at[k]);
        }
        Ok(Some(out))
    })?;
    let kept: Vec<Vec<f64>> = rows.iter().flatten().cloned().collect();
    let exited = rows.len() - kept.len();
    if kept.is_empty() {
        return Err(Error::Integration("every path left the PDE domain".into()));
    }
    let residuals = (0..checkpoints.len())
        .map(|c| {
            (0..d)
                .map(|comp| {
                    let col: Vec<f64> = kept.iter().map(|r| r[c * d + comp]).collect();
                    McEstimate::from_samples(&col, DEFAULT_CONFIDENCE)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResidualReport {
        times: checkpoints.iter().map(|&k| k as f64 * h).collect(),
        residuals,
        exited,
    })
}

// ---------------------------------------------------------------------------
// Embedding check
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingReport {
    pub p: f64,
    pub q: f64,
    pub epsilon: f64,
    pub delta_exponent: f64,
    /// Whether `epsilon + d/p + 2/q < 1`.
    pub exponents_admissible: bool,
    /// Grid surrogate of the `H^q_{2,p}` norm (`u~`, gradient and Hessian in `L^q_p`).
    pub h_norm: f64,
    pub dt_norm: f64,
    /// Fitted constant of the time-Hölder inequality for the gradient.
    pub n_time: f64,
    /// Fitted constant of the sup-plus-space-Hölder inequality for the gradient.
    pub n_space: f64,
    pub samples: usize,
}

fn mixed_norm(sol: &PdeSolution, p: f64, q: f64, pointwise: impl Fn(usize, usize) -> f64) -> f64 {
    let g = &sol.grid;
    let cell = g.dx().powi(g.d as i32);
    let per_level: Vec<f64> = (0..=g.n_times)
        .map(|j| {
            let s = compensated_sum((0..g.n_nodes()).map(|i| pointwise(j, i).powf(p) * cell));
            s.powf(1.0 / p)
        })
        .collect();
    let dt = g.dt();
    let n = per_level.len();
    let total = compensated_sum(per_level.iter().enumerate().map(|(j, v)| {
        let w = if j == 0 || j == n - 1 { 0.5 * dt } else { dt };
        w * v.powf(q)
    }));
    total.powf(1.0 / q)
}

/// Fits the constants of the two gradient inequalities on `samples` random
/// `(t, s, x, y)` node quadruples.
pub fn embedding_check(
    sol: &PdeSolution,
    p: f64,
    q: f64,
    epsilon: f64,
    delta_exponent: f64,
    samples: usize,
    seed: u64,
) -> Result<EmbeddingReport> {
    if !(p > 1.0 && q > 1.0) {
        return Err(Error::Domain(format!("need p, q > 1, got p = {p}, q = {q}")));
    }
    let g = sol.grid;
    let d = g.d;
    let frob = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let u_norm = mixed_norm(sol, p, q, |j, i| euclid(sol.u_tilde_at(j, i)));
    let grad_norm = mixed_norm(sol, p, q, |j, i| frob(&sol.gradient_at(j, i)));
    let hess_norm = mixed_norm(sol, p, q, |j, i| {
        (0..d)
            .map(|c| frob(&sol.hessian_at(j, i, c)).powi(2))
            .sum::<f64>()
            .sqrt()
    });
    let h_norm = u_norm + grad_norm + hess_norm;
    let dt = g.dt();
    let dt_norm = mixed_norm(sol, p, q, |j, i| {
        let (a, b) = if j == g.n_times { (j - 1, j) } else { (j, j + 1) };
        let ua = sol.u_tilde_at(a, i);
        let ub = sol.u_tilde_at(b, i);
        ua.iter().zip(ub).map(|(x, y)| ((y - x) / dt).powi(2)).sum::<f64>().sqrt()
    });
    let horizon = g.terminal - g.start;
    let time_factor = h_norm.powf(1.0 - 1.0 / q - epsilon / 2.0) * dt_norm.powf(1.0 / q + epsilon / 2.0);
    let space_factor = horizon.powf(-1.0 / q) * (h_norm + horizon * dt_norm);
    let mut rng = NormalStream::new(seed, 0);
    let mut pick = |n: usize| ((rng.next_uniform() * n as f64) as usize).min(n - 1);
    let ratio = |lhs: f64, rhs: f64| if lhs == 0.0 { 0.0 } else { lhs / rhs };
    let (mut n_time, mut n_space) = (0.0f64, 0.0f64);
    for _ in 0..samples {
        let (j, k) = (pick(g.n_times + 1), pick(g.n_times + 1));
        let (a, b) = (pick(g.n_nodes()), pick(g.n_nodes()));
        let ga = sol.gradient_at(j, a);
        if j != k {
            let gk = sol.gradient_at(k, a);
            let diff: Vec<f64> = ga.iter().zip(&gk).map(|(x, y)| x - y).collect();
            let ts = (g.time(j) - g.time(k)).abs();
            n_time = n_time.max(ratio(frob(&diff), ts.powf(delta_exponent) * time_factor));
        }
        let mut lhs = frob(&ga);
        if a != b {
            let gb = sol.gradient_at(j, b);
            let diff: Vec<f64> = ga.iter().zip(&gb).map(|(x, y)| x - y).collect();
            let xa = g.node(a);
            let xb = g.node(b);
            let dist = euclid(&xa.iter().zip(&xb).map(|(x, y)| x - y).collect::<Vec<_>>());
            lhs += frob(&diff) / dist.powf(epsilon);
        }
        n_space = n_space.max(ratio(lhs, space_factor));
    }
    Ok(EmbeddingReport {
        p,
        q,
        epsilon,
        delta_exponent,
        exponents_admissible: epsilon + d as f64 / p + 2.0 / q < 1.0,
        h_norm,
        dt_norm,
        n_time,
        n_space,
        samples,
    })
}
