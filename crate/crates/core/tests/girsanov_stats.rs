//! Density-process checks on simulated bundles: martingale property,
//! closed forms, and increment tilts.

use bsde_core::girsanov::{
    pure_jump_girsanov_kernel, stochastic_exponential, tilt_brownian, MeasureTilt,
};
use bsde_core::markets::MarketSpec;
use bsde_core::paths::{brownian_terminal, build_grid, simulate_paths, DiffusionSpec, JumpSpec};
use ndarray::Array2;

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn diffusion_density_is_a_martingale() {
    // Market price of risk 0.25, so beta = -0.25.
    let diff =
        DiffusionSpec::geometric(vec![0.07], vec![0.2], Array2::eye(1), vec![100.0]).unwrap();
    let grid = build_grid(0.0, 1.0, 100).unwrap();
    let bundle = simulate_paths(&diff, &JumpSpec::none(), &grid, 100_000, 42).unwrap();
    let tilt = MeasureTilt::constant_beta(vec![-0.25], "P->Q");
    let density = stochastic_exponential(&tilt, &bundle, 0.0, 1.0).unwrap();
    let terminal = density.terminal();
    for h in &terminal {
        assert!(*h > 0.0);
    }
    let (mean, se) = mean_stderr(&terminal);
    assert!((mean - 1.0).abs() <= 4.0 * se, "E[H_T] = {mean}, se {se}");
}

#[test]
fn jump_density_is_a_martingale() {
    let market = MarketSpec::pure_jump(1.0, 0.05, 2.0, 0.1, 0.01).unwrap();
    let diff = market.diffusion_spec().unwrap();
    let grid = build_grid(0.0, 1.0, 100).unwrap();
    let bundle = simulate_paths(&diff, market.jumps(), &grid, 100_000, 43).unwrap();
    let delta = pure_jump_girsanov_kernel(0.05, 0.01, 0.1, 2.0).unwrap();
    let tilt = MeasureTilt::constant_delta(1, delta, "P->Q");
    let density = stochastic_exponential(&tilt, &bundle, 0.0, 1.0).unwrap();
    let terminal = density.terminal();
    let (mean, se) = mean_stderr(&terminal);
    assert!((mean - 1.0).abs() <= 4.0 * se, "E[H_T] = {mean}, se {se}");
}

#[test]
fn constant_beta_log_density_matches_increment_sums() {
    let diff =
        DiffusionSpec::geometric(vec![0.05], vec![0.2], Array2::eye(1), vec![100.0]).unwrap();
    let grid = build_grid(0.0, 1.0, 64).unwrap();
    let bundle = simulate_paths(&diff, &JumpSpec::none(), &grid, 500, 3).unwrap();
    let beta = 0.3;
    let tilt = MeasureTilt::constant_beta(vec![beta], "test");
    let density = stochastic_exponential(&tilt, &bundle, 0.0, 1.0).unwrap();
    let w = brownian_terminal(&bundle, 0).unwrap();
    for p in 0..bundle.n_paths() {
        let expected = -0.5 * beta * beta + beta * w[p];
        let got = density.log_values()[[p, 64]];
        assert!(
            (got - expected).abs() <= 1e-12 * expected.abs().max(1.0),
            "path {p}: {got} vs {expected}"
        );
    }
}

#[test]
fn semigroup_holds_on_simulated_paths() {
    let diff =
        DiffusionSpec::geometric(vec![0.02], vec![0.25], Array2::eye(1), vec![50.0]).unwrap();
    let grid = build_grid(0.0, 2.0, 40).unwrap();
    let bundle = simulate_paths(&diff, &JumpSpec::none(), &grid, 200, 5).unwrap();
    // State-dependent kernel to exercise the general path.
    let tilt = MeasureTilt::new(
        1,
        std::sync::Arc::new(|t: f64, x: &[f64], out: &mut [f64]| {
            out[0] = -0.1 - 0.001 * (x[0] / 50.0) - 0.01 * t;
        }),
        std::sync::Arc::new(|_z| 0.0),
        "state-dependent",
    );
    let full = stochastic_exponential(&tilt, &bundle, 0.0, 2.0).unwrap();
    let first = stochastic_exponential(&tilt, &bundle, 0.0, 0.5).unwrap();
    let second = stochastic_exponential(&tilt, &bundle, 0.5, 2.0).unwrap();
    for p in 0..200 {
        let product = first.terminal()[p] * second.terminal()[p];
        let whole = full.terminal()[p];
        assert!(
            (product - whole).abs() <= 1e-12 * whole.abs(),
            "path {p}: {product} vs {whole}"
        );
    }
}

#[test]
fn shifted_increments_have_the_tilted_mean() {
    let theta = 0.25;
    let diff =
        DiffusionSpec::geometric(vec![0.07], vec![0.2], Array2::eye(1), vec![100.0]).unwrap();
    let grid = build_grid(0.0, 1.0, 50).unwrap();
    let bundle = simulate_paths(&diff, &JumpSpec::none(), &grid, 50_000, 9).unwrap();
    let tilt = MeasureTilt::constant_beta(vec![theta], "shift");
    let shifted = tilt_brownian(&tilt, &bundle);
    let sums: Vec<f64> = (0..bundle.n_paths())
        .map(|p| (0..50).map(|k| shifted[[p, k, 0]]).sum())
        .collect();
    let (mean, se) = mean_stderr(&sums);
    assert!(
        (mean - (-theta)).abs() <= 3.0 * se,
        "shifted terminal mean {mean} vs {}",
        -theta
    );
}
