use std::sync::Arc;

use sddelab::coefficients::{self as cat, CoefficientSet, DiffusionSpec, DriftSpec, FunctionalDriftSpec};
use sddelab::engine::SimulationConfig;
use sddelab::estimates::SmoothFunction;
use sddelab::model::{PathSegment, TimeGrid};
use sddelab::Result;

use crate::config::{
    CoefficientConfig, DiffusionConfig, DriftConfig, FunctionalConfig, GridConfig, MaximalFunctionConfig,
};

pub fn drift(cfg: &DriftConfig, d: usize) -> Result<DriftSpec> {
    Ok(match cfg {
        DriftConfig::Zero => cat::zero_drift(d),
        DriftConfig::Ou { rate } => cat::ou_drift(d, *rate),
        DriftConfig::Constant { value } => cat::constant_drift(value.clone()),
        DriftConfig::Singular { beta, amplitude, p, q } => cat::singular_drift(d, *beta, *amplitude, *p, *q)?,
        DriftConfig::BoxIndicator { lo, hi, t0, t1, p, q } => {
            cat::box_indicator_drift(d, *lo, *hi, *t0, *t1, *p, *q)
        }
    })
}

pub fn diffusion(cfg: &DiffusionConfig, d: usize) -> DiffusionSpec {
    match cfg {
        DiffusionConfig::Zero => cat::diag_diffusion(vec![0.0; d], 1.0),
        DiffusionConfig::Identity => cat::identity_diffusion(d),
        DiffusionConfig::Scalar { s } => cat::scalar_diffusion(d, *s),
        DiffusionConfig::Diag { values, kappa } => cat::diag_diffusion(values.clone(), *kappa),
        DiffusionConfig::HolderSqrt => cat::holder_sqrt_diffusion(),
    }
}

pub fn functional(cfg: &FunctionalConfig, d: usize, delay: f64) -> FunctionalDriftSpec {
    match cfg {
        FunctionalConfig::Zero => cat::zero_functional(d),
        FunctionalConfig::DiscreteDelay { c } => cat::discrete_delay_functional(d, *c),
        FunctionalConfig::SqrtDelay { c } => cat::sqrt_delay_functional(d, *c),
        FunctionalConfig::DistributedDelay { c } => cat::distributed_delay_functional(d, *c, delay),
    }
}

pub fn grid(cfg: &GridConfig) -> Result<TimeGrid> {
    TimeGrid::new(cfg.d, cfg.delay, cfg.horizon, cfg.step)
}

pub fn coefficients(cfg: &CoefficientConfig, grid: &TimeGrid) -> Result<CoefficientSet> {
    let d = grid.d();
    CoefficientSet::new(
        drift(&cfg.drift, d)?,
        diffusion(&cfg.diffusion, d),
        functional(&cfg.functional, d, grid.delay()),
    )
}

pub fn simulation(grid_cfg: &GridConfig, cfg: &CoefficientConfig, seed: u64) -> Result<SimulationConfig> {
    let grid = grid(grid_cfg)?;
    let coeffs = coefficients(cfg, &grid)?;
    let seg = PathSegment::constant(grid, &cfg.initial)?;
    let mut sim = SimulationConfig::new(grid, Arc::new(coeffs), seg, seed)?;
    sim.drift_cutoff_level = cfg.drift_cutoff_level;
    sim.stop_level = cfg.stop_level;
    sim.validate()?;
    Ok(sim)
}

/// Smooth catalog entries; `None` for the indicator.
pub fn smooth_function(cfg: &MaximalFunctionConfig, d: usize) -> Option<SmoothFunction> {
    match cfg {
        MaximalFunctionConfig::Interval { .. } => None,
        MaximalFunctionConfig::LinearCore => Some(SmoothFunction::linear_core()),
        MaximalFunctionConfig::GaussianBump => Some(SmoothFunction::gaussian_bump(d)),
        MaximalFunctionConfig::Constant { c } => Some(SmoothFunction::constant(d, *c)),
    }
}

pub fn sampled_function(cfg: &MaximalFunctionConfig, x: &[f64]) -> f64 {
    match cfg {
        MaximalFunctionConfig::Interval { a } => x.iter().all(|v| v.abs() <= *a) as u8 as f64,
        other => {
            let f = smooth_function(other, x.len()).expect("smooth entry");
            (f.value)(x).abs()
        }
    }
}
