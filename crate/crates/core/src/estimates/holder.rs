use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{simulate_with_increments, BrownianIncrements, SimulationConfig};
use crate::error::{Error, Result};
use crate::model::{PathRole, SamplePath};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HolderVerdict {
    /// Finest-level ratio at most 1.2.
    Stable,
    /// Finest-level ratio at least 1.5.
    Diverging,
    Inconclusive,
}

pub const STABLE_RATIO: f64 = 1.2;
pub const DIVERGING_RATIO: f64 = 1.5;

impl HolderVerdict {
    pub fn from_ratio(r: f64) -> Self {
        if r <= STABLE_RATIO {
            HolderVerdict::Stable
        } else if r >= DIVERGING_RATIO {
            HolderVerdict::Diverging
        } else {
            HolderVerdict::Inconclusive
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderReport {
    pub alphas: Vec<f64>,
    /// Step sizes, coarse to fine.
    pub steps: Vec<f64>,
    /// Median seminorm over `[0, T]`, `[alpha][level]`.
    pub medians: Vec<Vec<f64>>,
    /// `medians[a][l + 1] / medians[a][l]`.
    pub ratios: Vec<Vec<f64>>,
    /// Verdict from the finest ratio.
    pub verdicts: Vec<HolderVerdict>,
}

/// `alpha`-Hölder seminorms over `[0, T]` for several exponents in one pass.
pub fn holder_seminorms(path: &SamplePath, alphas: &[f64]) -> Vec<f64> {
    let grid = path.grid();
    let d = grid.d();
    let h = grid.step();
    let m = grid.delay_steps();
    let n = grid.n_steps();
    let vals = &path.values()[m * d..];
    let mut best = vec![0.0f64; alphas.len()];
    let lag_pows: Vec<Vec<f64>> = alphas
        .iter()
        .map(|&a| (0..=n).map(|k| (k as f64 * h).powf(a)).collect())
        .collect();
    for i in 0..n {
        for j in i + 1..=n {
            let mut sq = 0.0;
            for c in 0..d {
                let diff = vals[j * d + c] - vals[i * d + c];
                sq += diff * diff;
            }
            let dist = sq.sqrt();
            for (b, lp) in best.iter_mut().zip(&lag_pows) {
                let r = dist / lp[j - i];
                if r > *b {
                    *b = r;
                }
            }
        }
    }
    best
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median Hölder seminorms of the same trajectories at `levels` resolutions,
/// each `factor` times finer than the previous. Coarse paths are driven by
/// summed fine increments, so every level sees the same Brownian path.
pub fn holder_experiment(
    base: &SimulationConfig,
    role: PathRole,
    alphas: &[f64],
    levels: usize,
    factor: usize,
    n_paths: usize,
) -> Result<HolderReport> {
    if levels < 2 {
        return Err(Error::Config("the refinement study needs at least two resolutions".into()));
    }
    if alphas.is_empty() || n_paths == 0 {
        return Err(Error::Config("need at least one exponent and one path".into()));
    }
    let configs = (0..levels)
        .map(|l| base.refined(factor.pow(l as u32)))
        .collect::<Result<Vec<_>>>()?;
    let finest = configs.last().expect("levels >= 2");
    let per_path = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let fine = BrownianIncrements::generate(&finest.grid, finest.master_seed, i);
            configs
                .iter()
                .enumerate()
                .map(|(l, cfg)| {
                    let inc = fine.coarsened(factor.pow((levels - 1 - l) as u32))?;
                    let (path, _) = simulate_with_increments(cfg, &inc, role, i)?;
                    Ok(holder_seminorms(&path, alphas))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut medians = vec![vec![0.0; levels]; alphas.len()];
    for (a, row) in medians.iter_mut().enumerate() {
        for (l, cell) in row.iter_mut().enumerate() {
            let mut col: Vec<f64> = per_path.iter().map(|p| p[l][a]).collect();
            *cell = median(&mut col);
        }
    }
    let ratios: Vec<Vec<f64>> = medians
        .iter()
        .map(|row| row.windows(2).map(|w| w[1] / w[0]).collect())
        .collect();
    let verdicts = ratios
        .iter()
        .map(|r| HolderVerdict::from_ratio(*r.last().expect("levels >= 2")))
        .collect();
    Ok(HolderReport {
        alphas: alphas.to_vec(),
        steps: configs.iter().map(|c| c.grid.step()).collect(),
        medians,
        ratios,
        verdicts,
    })
}
