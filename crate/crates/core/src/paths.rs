//! Forward simulation of the jump-diffusion state process on a fixed grid.
//!
//! The scheme is explicit Euler with coefficients evaluated at the left node
//! and the pre-jump state; the compensated jump contribution of an atom with
//! size `z` and rate `lambda` enters a step as `gamma(x, z) * (dN - lambda*dt)`.
//! Randomness is drawn from per-path streams (see [`crate::rng`]), so a
//! bundle is bit-identical for a given seed under any thread count.

use std::sync::Arc;

use ndarray::parallel::prelude::*;
use ndarray::{Array2, Array3, ArrayView3, Axis};

use crate::error::{Error, Result};
use crate::rng::{path_rng, poisson_inverse, standard_normal};

/// Vector-valued coefficient: writes `f(x)` into `out`.
pub type CoefFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// Jump impact: writes `gamma(x, z)` into `out`.
pub type JumpImpactFn = Arc<dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync>;
/// Time- and state-dependent vector field: writes `f(t, x)` into `out`.
pub type DriftShiftFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// Uniform time grid `t0 = tau_0 < ... < tau_n = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    t_end: f64,
    n_steps: usize,
    dt: f64,
    nodes: Vec<f64>,
}

/// Uniform grid with `n_steps` steps between `t0` and `t_end`.
pub fn build_grid(t0: f64, t_end: f64, n_steps: usize) -> Result<TimeGrid> {
    if !t0.is_finite() || !t_end.is_finite() {
        return Err(Error::InvalidGrid("non-finite endpoints".into()));
    }
    if t0 >= t_end {
        return Err(Error::InvalidGrid(format!(
            "endpoints must satisfy t0 < T, got t0 = {t0}, T = {t_end}"
        )));
    }
    if n_steps == 0 {
        return Err(Error::InvalidGrid("n_steps must be >= 1".into()));
    }
    let dt = (t_end - t0) / n_steps as f64;
    let mut nodes: Vec<f64> = (0..=n_steps).map(|k| t0 + k as f64 * dt).collect();
    nodes[n_steps] = t_end;
    Ok(TimeGrid { t0, t_end, n_steps, dt, nodes })
}

impl TimeGrid {
    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Index of the node closest to `t`; errors if `t` is not a grid node.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let rel = (t - self.t0) / self.dt;
        let k = rel.round();
        if k < 0.0 || k > self.n_steps as f64 || (rel - k).abs() > 1e-9 {
            return Err(Error::InvalidGrid(format!("time {t} is not a node of the grid")));
        }
        Ok(k as usize)
    }
}

/// Diffusion part of the state dynamics `dX = mu(X) dt + diag(sigma(X)) rho_chol dW`.
#[derive(Clone)]
pub struct DiffusionSpec {
    dim: usize,
    mu: CoefFn,
    sigma: CoefFn,
    corr_chol: Array2<f64>,
    initial_state: Vec<f64>,
}

impl DiffusionSpec {
    pub fn new(
        dim: usize,
        mu: CoefFn,
        sigma: CoefFn,
        corr_chol: Array2<f64>,
        initial_state: Vec<f64>,
    ) -> Result<Self> {
        if dim == 0 || initial_state.len() != dim || corr_chol.shape() != [dim, dim] {
            return Err(Error::InvalidSpec(format!(
                "dimension mismatch: dim = {dim}, x0 len = {}, chol shape = {:?}",
                initial_state.len(),
                corr_chol.shape()
            )));
        }
        for i in 0..dim {
            let mut row_norm = 0.0;
            for j in 0..dim {
                if j > i && corr_chol[[i, j]].abs() > 1e-14 {
                    return Err(Error::InvalidSpec(
                        "correlation factor must be lower-triangular".into(),
                    ));
                }
                row_norm += corr_chol[[i, j]] * corr_chol[[i, j]];
            }
            if (row_norm - 1.0).abs() > 1e-8 {
                return Err(Error::InvalidSpec(format!(
                    "row {i} of the correlation factor has squared norm {row_norm}, expected 1"
                )));
            }
        }
        Ok(Self { dim, mu, sigma, corr_chol, initial_state })
    }

    /// `dS^i = S^i (mu_i dt + sigma_i (rho_chol dW)_i)`: the multiplicative
    /// parameterization used by the market models.
    pub fn geometric(
        mu: Vec<f64>,
        sigma: Vec<f64>,
        corr_chol: Array2<f64>,
        initial_state: Vec<f64>,
    ) -> Result<Self> {
        let dim = initial_state.len();
        if mu.len() != dim || sigma.len() != dim {
            return Err(Error::InvalidSpec("mu/sigma length must match the state".into()));
        }
        let mu_fn: CoefFn = {
            let mu = mu.clone();
            Arc::new(move |x, out| {
                for i in 0..x.len() {
                    out[i] = mu[i] * x[i];
                }
            })
        };
        let sigma_fn: CoefFn = {
            let sigma = sigma.clone();
            Arc::new(move |x, out| {
                for i in 0..x.len() {
                    out[i] = sigma[i] * x[i];
                }
            })
        };
        Self::new(dim, mu_fn, sigma_fn, corr_chol, initial_state)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.initial_state
    }

    pub fn corr_chol(&self) -> &Array2<f64> {
        &self.corr_chol
    }

    pub fn mu(&self, x: &[f64], out: &mut [f64]) {
        (self.mu)(x, out)
    }

    pub fn sigma(&self, x: &[f64], out: &mut [f64]) {
        (self.sigma)(x, out)
    }

    /// Sampled finite-difference check that `mu` and `sigma` have difference
    /// quotients bounded by `k_bound` on the box `[lo, hi]`. Advisory: passes
    /// or errors, proves nothing outside the sampled pairs.
    pub fn validate_lipschitz(&self, lo: &[f64], hi: &[f64], k_bound: f64, seed: u64) -> Result<()> {
        let d = self.dim;
        let mut rng = path_rng(seed, 0);
        let mut fa = vec![0.0; d];
        let mut fb = vec![0.0; d];
        for _ in 0..256 {
            let a: Vec<f64> = (0..d)
                .map(|i| lo[i] + (hi[i] - lo[i]) * rand::Rng::gen::<f64>(&mut rng))
                .collect();
            let b: Vec<f64> = (0..d)
                .map(|i| lo[i] + (hi[i] - lo[i]) * rand::Rng::gen::<f64>(&mut rng))
                .collect();
            let dist: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            if dist < 1e-12 {
                continue;
            }
            for (name, f) in [("mu", &self.mu), ("sigma", &self.sigma)] {
                f(&a, &mut fa);
                f(&b, &mut fb);
                let df: f64 =
                    fa.iter().zip(&fb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                if df > k_bound * dist {
                    return Err(Error::InvalidSpec(format!(
                        "{name} violates the sampled Lipschitz bound: slope {} > {k_bound}",
                        df / dist
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One finite-activity jump atom: fixed size, Poisson arrival rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpAtom {
    pub size: f64,
    pub rate: f64,
}

/// Finite-activity jump part: a list of atoms plus the impact `gamma(x, z)`.
#[derive(Clone)]
pub struct JumpSpec {
    atoms: Vec<JumpAtom>,
    gamma: JumpImpactFn,
}

fn default_impact() -> JumpImpactFn {
    Arc::new(|x, z, out| {
        for i in 0..x.len() {
            out[i] = z;
        }
        let _ = x;
    })
}

impl JumpSpec {
    pub fn none() -> Self {
        Self { atoms: Vec::new(), gamma: default_impact() }
    }

    /// Poisson process with constant intensity and a single fixed jump size.
    pub fn fixed_size_poisson(intensity: f64, size: f64) -> Result<Self> {
        Self::finite_activity(vec![JumpAtom { size, rate: intensity }])
    }

    pub fn finite_activity(atoms: Vec<JumpAtom>) -> Result<Self> {
        let total: f64 = atoms.iter().map(|a| a.rate).sum();
        if atoms.iter().any(|a| !a.rate.is_finite() || a.rate < 0.0 || !a.size.is_finite())
            || !total.is_finite()
        {
            return Err(Error::InvalidSpec("jump rates must be finite and non-negative".into()));
        }
        Ok(Self { atoms, gamma: default_impact() })
    }

    /// Replace the default impact `gamma(x, z) = z` (per coordinate).
    pub fn with_impact(mut self, gamma: JumpImpactFn) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn atoms(&self) -> &[JumpAtom] {
        &self.atoms
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn impact(&self, x: &[f64], z: f64, out: &mut [f64]) {
        (self.gamma)(x, z, out)
    }

    /// Rates scaled by `factor[j]`, sizes unchanged.
    pub(crate) fn scaled_rates(&self, factor: &[f64]) -> Self {
        let atoms = self
            .atoms
            .iter()
            .zip(factor)
            .map(|(a, f)| JumpAtom { size: a.size, rate: a.rate * f })
            .collect();
        Self { atoms, gamma: self.gamma.clone() }
    }
}

/// Simulated increments and state trajectories for a batch of paths.
///
/// `dw` holds the raw (pre-correlation) Brownian increments; consumers that
/// need the correlated combination apply `corr_chol` themselves, which is
/// also what the Euler stepping does internally.
pub struct PathBundle {
    pub(crate) grid: TimeGrid,
    pub(crate) n_paths: usize,
    pub(crate) dim: usize,
    pub(crate) seed: u64,
    pub(crate) dw: Array3<f64>,
    pub(crate) jump_counts: Array3<f64>,
    pub(crate) states: Array3<f64>,
    pub(crate) corr_chol: Array2<f64>,
    pub(crate) atoms: Vec<JumpAtom>,
}

impl PathBundle {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Raw Brownian increments, shape `[n_paths, n_steps, dim]`.
    pub fn dw(&self) -> &Array3<f64> {
        &self.dw
    }

    /// Per-atom Poisson increments, shape `[n_paths, n_steps, n_atoms]`.
    pub fn jump_counts(&self) -> &Array3<f64> {
        &self.jump_counts
    }

    /// State trajectories, shape `[n_paths, n_steps + 1, dim]`.
    pub fn states(&self) -> &Array3<f64> {
        &self.states
    }

    pub fn corr_chol(&self) -> &Array2<f64> {
        &self.corr_chol
    }

    /// Jump atoms with the rates of the measure the bundle was simulated under.
    pub fn atoms(&self) -> &[JumpAtom] {
        &self.atoms
    }

    /// Assemble a bundle from externally produced parts (used by refinement
    /// studies and tests that need hand-crafted increments).
    pub fn from_parts(
        grid: TimeGrid,
        dw: Array3<f64>,
        jump_counts: Array3<f64>,
        states: Array3<f64>,
        corr_chol: Array2<f64>,
        atoms: Vec<JumpAtom>,
        seed: u64,
    ) -> Result<Self> {
        let (n_paths, n_steps, dim) = dw.dim();
        if n_steps != grid.n_steps()
            || states.dim() != (n_paths, n_steps + 1, dim)
            || jump_counts.dim().0 != n_paths
            || jump_counts.dim().1 != n_steps
            || jump_counts.dim().2 != atoms.len()
            || corr_chol.shape() != [dim, dim]
        {
            return Err(Error::InvalidSpec("inconsistent bundle part shapes".into()));
        }
        Ok(Self { grid, n_paths, dim, seed, dw, jump_counts, states, corr_chol, atoms })
    }
}

/// Per-path terminal value of the raw Brownian coordinate `coord`.
pub fn brownian_terminal(bundle: &PathBundle, coord: usize) -> Result<Vec<f64>> {
    if coord >= bundle.dim {
        return Err(Error::IndexError(format!(
            "Brownian coordinate {coord} out of range for dimension {}",
            bundle.dim
        )));
    }
    Ok((0..bundle.n_paths)
        .map(|p| (0..bundle.grid.n_steps()).map(|k| bundle.dw[[p, k, coord]]).sum())
        .collect())
}

/// Euler trajectories driven by fresh randomness for `seed`.
pub fn simulate_paths(
    diff: &DiffusionSpec,
    jumps: &JumpSpec,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathBundle> {
    let rates: Vec<f64> = jumps.atoms().iter().map(|a| a.rate).collect();
    simulate_with(diff, jumps, grid, n_paths, seed, None, &rates, &rates)
}

/// Shared simulation core.
///
/// `draw_rates` drive the Poisson sampling, `comp_rates` are subtracted as
/// the compensator inside the Euler step, and `drift_shift` (when present)
/// is added to the raw increments as `beta(t, x) * dt`. Measure tilts reuse
/// this with `draw != comp`; the plain simulation passes the same rates twice.
pub(crate) fn simulate_with(
    diff: &DiffusionSpec,
    jumps: &JumpSpec,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    drift_shift: Option<&DriftShiftFn>,
    draw_rates: &[f64],
    comp_rates: &[f64],
) -> Result<PathBundle> {
    if n_paths == 0 {
        return Err(Error::InvalidSpec("n_paths must be >= 1".into()));
    }
    let d = diff.dim();
    let n_steps = grid.n_steps();
    let n_atoms = jumps.n_atoms();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();

    let mut dw = Array3::<f64>::zeros((n_paths, n_steps, d));
    let mut counts = Array3::<f64>::zeros((n_paths, n_steps, n_atoms));
    let mut states = Array3::<f64>::zeros((n_paths, n_steps + 1, d));

    let nodes = grid.nodes().to_vec();
    let results: Vec<std::result::Result<(), usize>> = dw
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(counts.axis_iter_mut(Axis(0)).into_par_iter())
        .zip(states.axis_iter_mut(Axis(0)).into_par_iter())
        .enumerate()
        .map(|(p, ((mut dw_p, mut counts_p), mut states_p))| {
            let mut rng = path_rng(seed, p);
            let mut x = diff.initial_state().to_vec();
            let mut mu_buf = vec![0.0; d];
            let mut sig_buf = vec![0.0; d];
            let mut gam_buf = vec![0.0; d];
            let mut shift_buf = vec![0.0; d];
            let mut eff = vec![0.0; d];
            for i in 0..d {
                states_p[[0, i]] = x[i];
            }
            for k in 0..n_steps {
                for i in 0..d {
                    dw_p[[k, i]] = standard_normal(&mut rng) * sqrt_dt;
                }
                for j in 0..n_atoms {
                    let u: f64 = rand::Rng::gen(&mut rng);
                    counts_p[[k, j]] = poisson_inverse(u, draw_rates[j] * dt) as f64;
                }

                for i in 0..d {
                    eff[i] = dw_p[[k, i]];
                }
                if let Some(shift) = drift_shift {
                    shift(nodes[k], &x, &mut shift_buf);
                    for i in 0..d {
                        eff[i] += shift_buf[i] * dt;
                    }
                }

                diff.mu(&x, &mut mu_buf);
                diff.sigma(&x, &mut sig_buf);
                let mut diverged = false;
                for i in 0..d {
                    let mut corr = 0.0;
                    for l in 0..=i {
                        corr += diff.corr_chol()[[i, l]] * eff[l];
                    }
                    states_p[[k + 1, i]] = x[i] + mu_buf[i] * dt + sig_buf[i] * corr;
                }
                for (j, atom) in jumps.atoms().iter().enumerate() {
                    let compensated = counts_p[[k, j]] - comp_rates[j] * dt;
                    if compensated != 0.0 {
                        jumps.impact(&x, atom.size, &mut gam_buf);
                        for i in 0..d {
                            states_p[[k + 1, i]] += gam_buf[i] * compensated;
                        }
                    }
                }
                for i in 0..d {
                    let v = states_p[[k + 1, i]];
                    if !v.is_finite() {
                        diverged = true;
                    }
                    x[i] = v;
                }
                if diverged {
                    return Err(k);
                }
            }
            Ok(())
        })
        .collect();

    for (p, r) in results.iter().enumerate() {
        if let Err(k) = r {
            return Err(Error::SimulationDiverged { path: p, step: *k });
        }
    }

    Ok(PathBundle {
        grid: grid.clone(),
        n_paths,
        dim: d,
        seed,
        dw,
        jump_counts: counts,
        states,
        corr_chol: diff.corr_chol().clone(),
        atoms: jumps
            .atoms()
            .iter()
            .zip(draw_rates)
            .map(|(a, &r)| JumpAtom { size: a.size, rate: r })
            .collect(),
    })
}

/// Run the Euler map over externally supplied increments.
///
/// Used by refinement studies that aggregate fine-grid increments onto a
/// coarser grid while keeping the same Brownian path.
pub fn evolve_with_increments(
    diff: &DiffusionSpec,
    jumps: &JumpSpec,
    grid: &TimeGrid,
    dw: ArrayView3<f64>,
    jump_counts: ArrayView3<f64>,
) -> Result<Array3<f64>> {
    let d = diff.dim();
    let n_steps = grid.n_steps();
    let (n_paths, steps_in, dim_in) = dw.dim();
    if steps_in != n_steps || dim_in != d || jump_counts.dim().0 != n_paths {
        return Err(Error::InvalidSpec("increment shapes do not match the grid".into()));
    }
    let dt = grid.dt();
    let mut states = Array3::<f64>::zeros((n_paths, n_steps + 1, d));
    let results: Vec<std::result::Result<(), usize>> = states
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .map(|(p, mut states_p)| {
            let mut x = diff.initial_state().to_vec();
            let mut mu_buf = vec![0.0; d];
            let mut sig_buf = vec![0.0; d];
            let mut gam_buf = vec![0.0; d];
            for i in 0..d {
                states_p[[0, i]] = x[i];
            }
            for k in 0..n_steps {
                diff.mu(&x, &mut mu_buf);
                diff.sigma(&x, &mut sig_buf);
                for i in 0..d {
                    let mut corr = 0.0;
                    for l in 0..=i {
                        corr += diff.corr_chol()[[i, l]] * dw[[p, k, l]];
                    }
                    states_p[[k + 1, i]] = x[i] + mu_buf[i] * dt + sig_buf[i] * corr;
                }
                for (j, atom) in jumps.atoms().iter().enumerate() {
                    let compensated = jump_counts[[p, k, j]] - atom.rate * dt;
                    if compensated != 0.0 {
                        jumps.impact(&x, atom.size, &mut gam_buf);
                        for i in 0..d {
                            states_p[[k + 1, i]] += gam_buf[i] * compensated;
                        }
                    }
                }
                let mut diverged = false;
                for i in 0..d {
                    let v = states_p[[k + 1, i]];
                    if !v.is_finite() {
                        diverged = true;
                    }
                    x[i] = v;
                }
                if diverged {
                    return Err(k);
                }
            }
            Ok(())
        })
        .collect();
    for (p, r) in results.iter().enumerate() {
        if let Err(k) = r {
            return Err(Error::SimulationDiverged { path: p, step: *k });
        }
    }
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn unit_chol() -> Array2<f64> {
        array![[1.0]]
    }

    fn zero_coef() -> CoefFn {
        Arc::new(|_x, out| out.fill(0.0))
    }

    #[test]
    fn grid_quarters() {
        let g = build_grid(0.0, 1.0, 4).unwrap();
        assert_eq!(g.nodes(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(g.dt(), 0.25);
    }

    #[test]
    fn grid_minimal() {
        let g = build_grid(0.0, 1.0, 1).unwrap();
        assert_eq!(g.nodes(), &[0.0, 1.0]);
    }

    #[test]
    fn grid_rejects_reversed_endpoints() {
        assert!(matches!(build_grid(0.5, 0.25, 10), Err(Error::InvalidGrid(_))));
    }

    #[test]
    fn grid_uniform_spacing_within_tolerance() {
        let g = build_grid(0.1, 2.3, 1000).unwrap();
        let dt = g.dt();
        for w in g.nodes().windows(2) {
            assert!(((w[1] - w[0]) - dt).abs() <= 1e-12 * dt.max(1.0));
        }
    }

    #[test]
    fn zero_dynamics_keeps_state_constant() {
        let diff =
            DiffusionSpec::new(1, zero_coef(), zero_coef(), unit_chol(), vec![1.0]).unwrap();
        let grid = build_grid(0.0, 1.0, 16).unwrap();
        let bundle = simulate_paths(&diff, &JumpSpec::none(), &grid, 32, 9).unwrap();
        for p in 0..32 {
            for k in 0..=16 {
                assert_eq!(bundle.states()[[p, k, 0]], 1.0);
            }
        }
    }

    #[test]
    fn simulation_is_deterministic_across_thread_counts() {
        let diff = DiffusionSpec::geometric(vec![0.05], vec![0.2], unit_chol(), vec![100.0]).unwrap();
        let jumps = JumpSpec::fixed_size_poisson(1.5, 0.1).unwrap();
        let grid = build_grid(0.0, 1.0, 20).unwrap();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| simulate_paths(&diff, &jumps, &grid, 64, 42).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.states(), b.states());
        assert_eq!(a.dw(), b.dw());
        assert_eq!(a.jump_counts(), b.jump_counts());
    }

    #[test]
    fn brownian_terminal_sums_increments() {
        let grid = build_grid(0.0, 1.0, 3).unwrap();
        let dw = Array3::from_shape_vec((1, 3, 1), vec![0.1, -0.2, 0.3]).unwrap();
        let states = Array3::zeros((1, 4, 1));
        let bundle = PathBundle::from_parts(
            grid,
            dw,
            Array3::zeros((1, 3, 0)),
            states,
            unit_chol(),
            vec![],
            0,
        )
        .unwrap();
        let w = brownian_terminal(&bundle, 0).unwrap();
        assert!((w[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn brownian_terminal_zero_increments() {
        let grid = build_grid(0.0, 1.0, 2).unwrap();
        let bundle = PathBundle::from_parts(
            grid,
            Array3::zeros((2, 2, 1)),
            Array3::zeros((2, 2, 0)),
            Array3::zeros((2, 3, 1)),
            unit_chol(),
            vec![],
            0,
        )
        .unwrap();
        assert_eq!(brownian_terminal(&bundle, 0).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn brownian_terminal_rejects_bad_coordinate() {
        let diff =
            DiffusionSpec::new(1, zero_coef(), zero_coef(), unit_chol(), vec![0.0]).unwrap();
        let grid = build_grid(0.0, 1.0, 2).unwrap();
        let bundle = simulate_paths(&diff, &JumpSpec::none(), &grid, 2, 1).unwrap();
        assert!(matches!(brownian_terminal(&bundle, 1), Err(Error::IndexError(_))));
    }

    #[test]
    fn divergence_reports_path_and_step() {
        let blowup: CoefFn = Arc::new(|x, out| out[0] = x[0] * 1e308);
        let diff = DiffusionSpec::new(1, blowup, zero_coef(), unit_chol(), vec![1.0]).unwrap();
        let grid = build_grid(0.0, 1.0, 4).unwrap();
        match simulate_paths(&diff, &JumpSpec::none(), &grid, 3, 5) {
            Err(Error::SimulationDiverged { path: _, step }) => assert!(step <= 1),
            Err(other) => panic!("expected divergence, got {other:?}"),
            Ok(_) => panic!("expected divergence, got a bundle"),
        }
    }

    #[test]
    fn chol_validation_rejects_bad_rows() {
        let bad = array![[1.0, 0.0], [0.5, 0.5]];
        assert!(DiffusionSpec::geometric(
            vec![0.0, 0.0],
            vec![0.1, 0.1],
            bad,
            vec![1.0, 1.0]
        )
        .is_err());
    }

    #[test]
    fn lipschitz_advisory_flags_steep_coefficients() {
        let steep: CoefFn = Arc::new(|x, out| out[0] = 1e6 * x[0] * x[0]);
        let diff =
            DiffusionSpec::new(1, steep, zero_coef(), unit_chol(), vec![1.0]).unwrap();
        assert!(diff.validate_lipschitz(&[0.0], &[10.0], 5.0, 1).is_err());
        let gentle = DiffusionSpec::geometric(vec![0.05], vec![0.2], unit_chol(), vec![1.0]).unwrap();
        assert!(gentle.validate_lipschitz(&[0.5], &[2.0], 1.0, 1).is_ok());
    }
}
