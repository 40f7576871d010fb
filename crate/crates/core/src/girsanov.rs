//! Measure tilts: drift kernels, jump-compensator tilts, and the discrete
//! Doleans-Dade density process evaluated along simulated paths.
//!
//! A tilt `(beta, delta)` defines the density
//! `dH = H (beta dW + integral delta dN_compensated)`; on the grid the log
//! density accumulates `-0.5|beta|^2 dt + beta . dW` per step plus, for each
//! jump atom, `ln(1+delta) dN - delta rate dt`. New-measure randomness is
//! produced by shifting increments and retilting compensators rather than
//! redrawing, so cross-measure comparisons hold path by path.

use std::sync::Arc;

use ndarray::parallel::prelude::*;
use ndarray::{Array2, Array3, Axis};

use crate::error::{Error, Result};
use crate::markets::MarketSpec;
use crate::paths::{
    simulate_with, DiffusionSpec, DriftShiftFn, JumpAtom, JumpSpec, PathBundle, TimeGrid,
};

pub type JumpKernelFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Girsanov kernel pair: `beta` shifts the Brownian drift, `delta` tilts the
/// jump compensator multiplicatively by `1 + delta(z)`.
#[derive(Clone)]
pub struct MeasureTilt {
    dim: usize,
    beta: DriftShiftFn,
    delta: JumpKernelFn,
    label: String,
}

impl MeasureTilt {
    pub fn new(dim: usize, beta: DriftShiftFn, delta: JumpKernelFn, label: &str) -> Self {
        Self { dim, beta, delta, label: label.to_string() }
    }

    /// The trivial tilt: identity measure change.
    pub fn identity(dim: usize) -> Self {
        Self::new(
            dim,
            Arc::new(|_t, _x, out| out.fill(0.0)),
            Arc::new(|_z| 0.0),
            "identity",
        )
    }

    /// Constant diffusion kernel, no jump tilt.
    pub fn constant_beta(beta: Vec<f64>, label: &str) -> Self {
        let dim = beta.len();
        Self::new(
            dim,
            Arc::new(move |_t, _x, out| out.copy_from_slice(&beta)),
            Arc::new(|_z| 0.0),
            label,
        )
    }

    /// Constant jump kernel, no diffusion tilt.
    pub fn constant_delta(dim: usize, delta: f64, label: &str) -> Self {
        Self::new(
            dim,
            Arc::new(|_t, _x, out| out.fill(0.0)),
            Arc::new(move |_z| delta),
            label,
        )
    }

    /// Tilt taking the market's physical measure to its martingale measure:
    /// `beta = -theta` for diffusion markets, the pure-jump kernel for
    /// single-asset jump markets.
    pub fn risk_neutral(market: &MarketSpec) -> Result<Self> {
        let d = market.dim();
        let has_diffusion = market.sigma().iter().any(|&s| s != 0.0);
        let has_jumps = !market.jumps().atoms().is_empty();
        if has_diffusion && has_jumps {
            return Err(Error::UnsupportedConfiguration(
                "risk-neutral tilt for mixed diffusion/jump markets is not supported".into(),
            ));
        }
        if has_jumps {
            if d != 1 {
                return Err(Error::UnsupportedConfiguration(
                    "pure-jump martingale measure requires a single asset".into(),
                ));
            }
            let atom = market.jumps().atoms()[0];
            let delta = pure_jump_girsanov_kernel(
                market.mu()[0],
                market.r_repo()[0],
                atom.size,
                atom.rate,
            )?;
            return Ok(Self::constant_delta(1, delta, "P->Q"));
        }
        let theta = theta_kernel(market, market_t0(), market.initial_state())?;
        let beta: Vec<f64> = theta.iter().map(|t| -t).collect();
        Ok(Self::constant_beta(beta, "P->Q"))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn beta(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.beta)(t, x, out)
    }

    pub fn delta(&self, z: f64) -> f64 {
        (self.delta)(z)
    }

    pub(crate) fn beta_fn(&self) -> &DriftShiftFn {
        &self.beta
    }

    /// `delta(z) > -1` at every atom, else the measures are not equivalent.
    pub fn validate_jump_kernel(&self, atoms: &[JumpAtom]) -> Result<()> {
        for atom in atoms {
            let dz = self.delta(atom.size);
            if !(dz > -1.0) || !dz.is_finite() {
                return Err(Error::InvalidJumpKernel(format!(
                    "delta({}) = {dz} must be finite and > -1",
                    atom.size
                )));
            }
        }
        Ok(())
    }

    /// Sampled bound check on `|beta|`; advisory, mirrors the boundedness
    /// assumption the density martingale property rests on.
    pub fn validate_beta_bound(&self, times: &[f64], states: &[Vec<f64>], k_bound: f64) -> Result<()> {
        let mut buf = vec![0.0; self.dim];
        for &t in times {
            for x in states {
                self.beta(t, x, &mut buf);
                let norm = buf.iter().map(|b| b * b).sum::<f64>().sqrt();
                if !norm.is_finite() || norm > k_bound {
                    return Err(Error::InvalidSpec(format!(
                        "|beta({t}, {x:?})| = {norm} exceeds the bound {k_bound}"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn market_t0() -> f64 {
    0.0
}

/// Market price of risk `theta = (Sigma rho_chol)^{-1} (mu - r_repo + k)`.
///
/// The volatility factor is lower-triangular, so the solve is a forward
/// substitution. A degenerate row (perfectly correlated or zero-volatility
/// asset) is tolerated when its excess drift is already spanned by the
/// preceding assets; otherwise the system is singular.
pub fn theta_kernel(market: &MarketSpec, _t: f64, _state: &[f64]) -> Result<Vec<f64>> {
    let d = market.dim();
    let sigma = market.sigma();
    let chol = market.corr_chol();
    let mut theta = vec![0.0; d];
    for i in 0..d {
        let numerator = market.mu()[i] - market.r_repo()[i] + market.dividend_yields()[i];
        let pivot = sigma[i] * chol[[i, i]];
        let mut partial = 0.0;
        for l in 0..i {
            partial += chol[[i, l]] * theta[l];
        }
        if pivot.abs() < 1e-14 {
            let residual = numerator - sigma[i] * partial;
            if residual.abs() > 1e-10 * (1.0 + numerator.abs()) {
                return Err(Error::SingularVolatility(format!(
                    "Sigma rho_chol has zero pivot at asset {i} and its excess drift \
                     is not spanned by the other assets"
                )));
            }
            theta[i] = 0.0;
        } else {
            theta[i] = (numerator / sigma[i] - partial) / chol[[i, i]];
        }
    }
    Ok(theta)
}

/// Constant jump Girsanov kernel `delta = -(mu - r) / ((e^alpha - 1) lambda)`
/// for the fixed-size Poisson market.
pub fn pure_jump_girsanov_kernel(mu: f64, r: f64, alpha: f64, lambda: f64) -> Result<f64> {
    if alpha == 0.0 {
        return Err(Error::DegenerateJumpModel("jump size alpha must be non-zero".into()));
    }
    if lambda <= 0.0 {
        return Err(Error::DegenerateJumpModel("jump intensity lambda must be positive".into()));
    }
    let delta = -(mu - r) / ((alpha.exp() - 1.0) * lambda);
    if !(delta > -1.0) || !delta.is_finite() {
        return Err(Error::InvalidJumpKernel(format!(
            "delta = {delta}: no equivalent martingale measure in this parameterization"
        )));
    }
    Ok(delta)
}

/// Discrete density process `H` over a window of the bundle's grid.
pub struct DensityPath {
    log_values: Array2<f64>,
    values: Array2<f64>,
    from_index: usize,
}

impl DensityPath {
    /// `H` per path and node of the window, `H[., 0] = 1`.
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn log_values(&self) -> &Array2<f64> {
        &self.log_values
    }

    pub fn from_index(&self) -> usize {
        self.from_index
    }

    /// Per-path density at the end of the window.
    pub fn terminal(&self) -> Vec<f64> {
        let last = self.values.ncols() - 1;
        self.values.column(last).to_vec()
    }
}

/// Evaluate the stochastic exponential of `tilt` on `[from, to]` along the
/// bundle's paths. `from` and `to` must be grid nodes.
pub fn stochastic_exponential(
    tilt: &MeasureTilt,
    bundle: &PathBundle,
    from: f64,
    to: f64,
) -> Result<DensityPath> {
    let grid = bundle.grid();
    let k0 = grid.index_of(from)?;
    let k1 = grid.index_of(to)?;
    if k0 > k1 {
        return Err(Error::InvalidGrid(format!("window start {from} is after end {to}")));
    }
    tilt.validate_jump_kernel(bundle.atoms())?;

    let d = bundle.dim();
    let dt = grid.dt();
    let n_paths = bundle.n_paths();
    let n_nodes = k1 - k0 + 1;
    let nodes = grid.nodes();
    // Per-atom constants of the jump part: ln(1+delta) and delta*rate.
    let log1p_delta: Vec<f64> =
        bundle.atoms().iter().map(|a| (1.0 + tilt.delta(a.size)).ln()).collect();
    let delta_rate: Vec<f64> =
        bundle.atoms().iter().map(|a| tilt.delta(a.size) * a.rate).collect();

    let mut log_values = Array2::<f64>::zeros((n_paths, n_nodes));
    let states = bundle.states();
    let dw = bundle.dw();
    let counts = bundle.jump_counts();

    let results: Vec<std::result::Result<(), usize>> = log_values
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .map(|(p, mut row)| {
            let mut beta_buf = vec![0.0; d];
            let mut x = vec![0.0; d];
            let mut acc = 0.0;
            row[0] = 0.0;
            for (rel, k) in (k0..k1).enumerate() {
                for i in 0..d {
                    x[i] = states[[p, k, i]];
                }
                tilt.beta(nodes[k], &x, &mut beta_buf);
                let mut term = 0.0;
                for i in 0..d {
                    term += -0.5 * beta_buf[i] * beta_buf[i] * dt + beta_buf[i] * dw[[p, k, i]];
                }
                for j in 0..bundle.atoms().len() {
                    term += log1p_delta[j] * counts[[p, k, j]] - delta_rate[j] * dt;
                }
                acc += term;
                if !acc.is_finite() {
                    return Err(k);
                }
                row[rel + 1] = acc;
            }
            Ok(())
        })
        .collect();
    for (p, r) in results.iter().enumerate() {
        if let Err(k) = r {
            return Err(Error::DensityOverflow { path: p, step: *k });
        }
    }

    let values = log_values.mapv(f64::exp);
    Ok(DensityPath { log_values, values, from_index: k0 })
}

/// Increments shifted to the tilted measure: `dW - beta(t, X) dt` per step.
/// The bundle itself is not modified.
pub fn tilt_brownian(tilt: &MeasureTilt, bundle: &PathBundle) -> Array3<f64> {
    let d = bundle.dim();
    let n_steps = bundle.grid().n_steps();
    let dt = bundle.grid().dt();
    let nodes = bundle.grid().nodes().to_vec();
    let mut out = bundle.dw().clone();
    let states = bundle.states();
    out.axis_iter_mut(Axis(0)).into_par_iter().enumerate().for_each(|(p, mut row)| {
        let mut beta_buf = vec![0.0; d];
        let mut x = vec![0.0; d];
        for k in 0..n_steps {
            for i in 0..d {
                x[i] = states[[p, k, i]];
            }
            tilt.beta(nodes[k], &x, &mut beta_buf);
            for i in 0..d {
                row[[k, i]] -= beta_buf[i] * dt;
            }
        }
    });
    out
}

/// Jump spec with each atom's rate multiplied by `1 + delta(z)`.
pub fn tilt_compensator(tilt: &MeasureTilt, jumps: &JumpSpec) -> Result<JumpSpec> {
    tilt.validate_jump_kernel(jumps.atoms())?;
    let factors: Vec<f64> = jumps.atoms().iter().map(|a| 1.0 + tilt.delta(a.size)).collect();
    Ok(jumps.scaled_rates(&factors))
}

/// Simulate under the measure induced by `tilt`, reusing the raw randomness
/// of `seed`: increments are interpreted as standard under the new measure
/// (so the old-measure ones are `dW + beta dt`) and jump counts are drawn at
/// the tilted rates while the dynamics keep their original compensator.
pub fn simulate_tilted(
    diff: &DiffusionSpec,
    jumps: &JumpSpec,
    grid: &TimeGrid,
    tilt: &MeasureTilt,
    n_paths: usize,
    seed: u64,
) -> Result<PathBundle> {
    tilt.validate_jump_kernel(jumps.atoms())?;
    let comp: Vec<f64> = jumps.atoms().iter().map(|a| a.rate).collect();
    let draw: Vec<f64> =
        jumps.atoms().iter().map(|a| a.rate * (1.0 + tilt.delta(a.size))).collect();
    simulate_with(diff, jumps, grid, n_paths, seed, Some(tilt.beta_fn()), &draw, &comp)
}
