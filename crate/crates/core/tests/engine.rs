use std::sync::Arc;

use sddelab::coefficients::*;
use sddelab::engine::{driftless_batch, simulate_batch, simulate_path, SimulationConfig};
use sddelab::model::{PathSegment, TimeGrid};
use sddelab::stats::McEstimate;

fn ou_config(delay_c: f64, seed: u64) -> SimulationConfig {
    let grid = TimeGrid::new(1, 0.25, 1.0, 1.0 / 64.0).unwrap();
    let coeffs = CoefficientSet::new(
        ou_drift(1, 1.0),
        identity_diffusion(1),
        discrete_delay_functional(1, delay_c),
    )
    .unwrap();
    let seg = PathSegment::constant(grid, &[1.0]).unwrap();
    SimulationConfig::new(grid, Arc::new(coeffs), seg, seed).unwrap()
}

fn terminal(cfg: &SimulationConfig, n: usize, threads: Option<usize>) -> Vec<f64> {
    simulate_batch(cfg.clone(), n, threads)
        .unwrap()
        .map(|_, p| Ok(p.path.state(p.path.len() - 1)[0]))
        .unwrap()
}

#[test]
fn ensembles_do_not_depend_on_thread_count() {
    let cfg = ou_config(0.5, 11);
    let a = terminal(&cfg, 300, Some(1));
    let b = terminal(&cfg, 300, Some(4));
    assert_eq!(a, b);
}

#[test]
fn path_depends_only_on_seed_and_index() {
    let cfg = ou_config(0.5, 12);
    let small = terminal(&cfg, 10, None);
    let large = terminal(&cfg, 50, None);
    assert_eq!(small[..], large[..10]);
    assert_eq!(simulate_path(&cfg, 7).unwrap(), simulate_path(&cfg, 7).unwrap());
    assert_ne!(terminal(&cfg.with_seed(13), 10, None), small);
}

#[test]
fn euler_mean_of_ou_matches_recursion() {
    let cfg = ou_config(0.0, 14);
    let h = cfg.grid.step();
    let exact = (1.0 - h).powi(cfg.grid.n_steps() as i32);
    let est = McEstimate::from_samples(&terminal(&cfg, 20_000, None), 0.99).unwrap();
    assert!((est.mean - exact).abs() <= 4.0 * est.std_error, "{est:?} vs {exact}");
}

#[test]
fn driftless_path_is_initial_value_plus_brownian_motion() {
    let cfg = ou_config(0.5, 15);
    let ens = driftless_batch(cfg.clone(), 5, None).unwrap();
    for p in ens.materialize().unwrap() {
        let w = p.increments.path(&cfg.grid).unwrap();
        let m = cfg.grid.delay_steps();
        for k in m..p.path.len() {
            assert!((p.path.state(k)[0] - 1.0 - w.state(k)[0]).abs() < 1e-12);
        }
    }
}

#[test]
fn coarsened_noise_drives_the_coarse_grid() {
    let cfg = ou_config(0.5, 16);
    let fine = cfg.refined(4).unwrap();
    let fp = simulate_path(&fine, 3).unwrap();
    let coarse = fp.increments.coarsened(4).unwrap();
    let w_fine = fp.increments.path(&fine.grid).unwrap();
    let w_coarse = coarse.path(&cfg.grid).unwrap();
    let m = cfg.grid.delay_steps();
    for k in 0..=cfg.grid.n_steps() {
        let a = w_coarse.state(m + k)[0];
        let b = w_fine.state(fine.grid.delay_steps() + 4 * k)[0];
        assert!((a - b).abs() < 1e-12);
    }
}
