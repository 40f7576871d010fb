//! Backward solver for the jump-diffusion BSDE and the equivalent weighted
//! forward representation of the value process.
//!
//! `solve_backward` runs least-squares regression step by step from the
//! terminal condition, with an outer Picard iteration supplying the driver's
//! same-step `(Y, Z, U)` arguments from the previous sweep. The effective
//! per-step increment is
//! `Y_k = E[Y_{k+1} + (f - alpha Y + beta.Z + sum_j delta_j nu_j U_j) dt | X_k]`,
//! with `Z` and `U` extracted from conditional covariances against the
//! Brownian and compensated jump increments.
//!
//! `price_under_p` evaluates the same value as a density-weighted average
//! under the original measure: the terminal claim and every driver slice are
//! multiplied by the discount factor and the stochastic exponential of the
//! problem's tilt, and the driver's arguments are again iterated to a fixed
//! point.

use std::sync::Arc;

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::girsanov::{DensityPath, MeasureTilt};
use crate::paths::PathBundle;
use crate::regress::{mean_and_stderr, StepRegressor};

pub type TerminalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Driver `f(t, x, y, z, u_int)` where `u_int = sum_j w_j U_j`.
pub type DriverFn = Arc<dyn Fn(f64, &[f64], f64, &[f64], f64) -> f64 + Send + Sync>;
pub type DiscountFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Terminal condition, generator, discount kernel and measure tilt of one
/// backward problem.
#[derive(Clone)]
pub struct BsdeProblem {
    terminal: TerminalFn,
    driver: DriverFn,
    discount: DiscountFn,
    tilt: MeasureTilt,
    u_weights: Vec<f64>,
}

impl BsdeProblem {
    /// `u_weights[j]` is the coefficient of `U_j` in the driver's integral
    /// argument, i.e. `delta(z_j)` times the atom rate of the measure the
    /// problem was derived in.
    pub fn new(
        terminal: TerminalFn,
        driver: DriverFn,
        discount: DiscountFn,
        tilt: MeasureTilt,
        u_weights: Vec<f64>,
    ) -> Self {
        Self { terminal, driver, discount, tilt, u_weights }
    }

    pub fn terminal(&self, x: &[f64]) -> f64 {
        (self.terminal)(x)
    }

    pub fn driver(&self, t: f64, x: &[f64], y: f64, z: &[f64], u_int: f64) -> f64 {
        (self.driver)(t, x, y, z, u_int)
    }

    pub fn discount(&self, x: &[f64]) -> f64 {
        (self.discount)(x)
    }

    pub fn tilt(&self) -> &MeasureTilt {
        &self.tilt
    }

    pub fn u_weights(&self) -> &[f64] {
        &self.u_weights
    }
}

/// Regression basis and Picard iteration controls.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Total polynomial degree of the per-step basis (cross terms included).
    pub basis_degree: usize,
    pub picard_max: usize,
    pub picard_tol: f64,
    /// Optional clamp applied to regressed values (never to the terminal).
    pub clip: Option<(f64, f64)>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { basis_degree: 2, picard_max: 20, picard_tol: 1e-6, clip: None }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        if self.picard_tol <= 0.0 {
            return Err(Error::InvalidSpec("picard_tol must be positive".into()));
        }
        if self.picard_max < 2 {
            return Err(Error::InvalidSpec("picard_max must be at least 2".into()));
        }
        Ok(())
    }
}

/// Estimates of `(Y, Z, U)` on the whole grid plus the time-zero value.
pub struct ValueSurface {
    /// `[n_paths, n_steps + 1]`; the last column is the terminal condition.
    pub y: Array2<f64>,
    /// `[n_paths, n_steps, dim]`.
    pub z: Array3<f64>,
    /// `[n_paths, n_steps, n_atoms]`.
    pub u: Array3<f64>,
    pub y0: f64,
    pub y0_stderr: f64,
    /// Per-path samples whose mean is `y0`; kept for coupled comparisons.
    pub y0_contrib: Vec<f64>,
    pub picard_gaps: Vec<f64>,
}

/// Gap history of the Picard iteration.
#[derive(Debug, Clone)]
pub struct PicardReport {
    pub gaps: Vec<f64>,
    pub y0_history: Vec<f64>,
    pub converged: bool,
}

/// Density-weighted price with sampling diagnostics.
pub struct PriceEstimate {
    pub y0: f64,
    pub stderr: f64,
    pub contrib: Vec<f64>,
    pub picard_gaps: Vec<f64>,
}

/// Backward regression solve; errors with the gap history if the Picard
/// iteration fails to reach `picard_tol` within `picard_max` sweeps.
pub fn solve_backward(
    problem: &BsdeProblem,
    bundle: &PathBundle,
    cfg: &SolverConfig,
) -> Result<ValueSurface> {
    let (surface, report) = run_backward(problem, bundle, cfg)?;
    if !report.converged {
        return Err(Error::PicardDiverged { gaps: report.gaps });
    }
    Ok(surface)
}

/// Same sweeps as [`solve_backward`], but divergence is reported rather than
/// raised, which makes the contraction (or its absence) observable.
pub fn picard_contraction_report(
    problem: &BsdeProblem,
    bundle: &PathBundle,
    cfg: &SolverConfig,
) -> Result<PicardReport> {
    let (_, report) = run_backward(problem, bundle, cfg)?;
    Ok(report)
}

fn run_backward(
    problem: &BsdeProblem,
    bundle: &PathBundle,
    cfg: &SolverConfig,
) -> Result<(ValueSurface, PicardReport)> {
    cfg.validate()?;
    problem.tilt().validate_jump_kernel(bundle.atoms())?;
    let n = bundle.n_paths();
    let steps = bundle.grid().n_steps();
    let d = bundle.dim();
    let n_atoms = bundle.atoms().len();
    if problem.u_weights().len() != n_atoms {
        return Err(Error::InvalidSpec(format!(
            "problem has {} jump weights but the bundle carries {} atoms",
            problem.u_weights().len(),
            n_atoms
        )));
    }
    let dt = bundle.grid().dt();
    let nodes = bundle.grid().nodes().to_vec();
    let states = bundle.states();
    let dw = bundle.dw();
    let counts = bundle.jump_counts();

    // Standalone compensated-jump driver coefficients under the bundle's
    // measure; zero tilt means the term is absorbed into the compensator.
    let standalone: Vec<f64> =
        bundle.atoms().iter().map(|a| problem.tilt().delta(a.size) * a.rate).collect();
    let u_norm: Vec<f64> = bundle.atoms().iter().map(|a| a.rate * dt).collect();

    let mut xbuf = vec![0.0; d];
    let mut alpha_vals = Array2::<f64>::zeros((n, steps));
    for p in 0..n {
        for k in 0..steps {
            for i in 0..d {
                xbuf[i] = states[[p, k, i]];
            }
            alpha_vals[[p, k]] = problem.discount(&xbuf);
        }
    }

    let mut y = Array2::<f64>::zeros((n, steps + 1));
    let mut z = Array3::<f64>::zeros((n, steps, d));
    let mut u = Array3::<f64>::zeros((n, steps, n_atoms));
    for p in 0..n {
        for i in 0..d {
            xbuf[i] = states[[p, steps, i]];
        }
        y[[p, steps]] = problem.terminal(&xbuf);
    }

    let mut y0_history: Vec<f64> = Vec::new();
    let mut gaps: Vec<f64> = Vec::new();
    // Raw per-path estimate: terminal claim plus the accumulated driver
    // slices of the sweep. Its mean telescopes to the same value as the
    // regressed step-zero target (the fit preserves sample means), but its
    // spread is the estimator's true sampling dispersion, which the smoothed
    // fitted values would hide.
    let mut contrib = vec![0.0; n];
    let mut driver_acc = vec![0.0; n];
    let mut converged = false;

    let mut target_y = vec![0.0; n];
    let mut target_zu = vec![0.0; n];
    let mut beta_buf = vec![0.0; d];
    let mut zbuf = vec![0.0; d];

    for _sweep in 0..cfg.picard_max {
        driver_acc.fill(0.0);
        for k in (0..steps).rev() {
            let regressor =
                StepRegressor::new(states.index_axis(ndarray::Axis(1), k), cfg.basis_degree, k)?;

            // Driver target from the previous sweep's same-step surfaces.
            for p in 0..n {
                for i in 0..d {
                    xbuf[i] = states[[p, k, i]];
                    zbuf[i] = z[[p, k, i]];
                }
                problem.tilt().beta(nodes[k], &xbuf, &mut beta_buf);
                let mut u_int = 0.0;
                let mut standalone_term = 0.0;
                for j in 0..n_atoms {
                    u_int += problem.u_weights()[j] * u[[p, k, j]];
                    standalone_term += standalone[j] * u[[p, k, j]];
                }
                let beta_dot_z: f64 = (0..d).map(|i| beta_buf[i] * zbuf[i]).sum();
                let f_val = problem.driver(nodes[k], &xbuf, y[[p, k]], &zbuf, u_int);
                let increment =
                    dt * (f_val - alpha_vals[[p, k]] * y[[p, k]] + beta_dot_z + standalone_term);
                target_y[p] = y[[p, k + 1]] + increment;
                driver_acc[p] += increment;
            }

            // Conditional mean of Y_{k+1} given X_k; subtracting it from the
            // covariance targets leaves their conditional expectations
            // unchanged (increments are mean-zero given X_k) and removes the
            // dominant noise term.
            for p in 0..n {
                target_zu[p] = y[[p, k + 1]];
            }
            let cond_mean = regressor.fit(&target_zu, k)?;

            // Z from the Brownian covariance, per coordinate.
            for i in 0..d {
                for p in 0..n {
                    target_zu[p] = (y[[p, k + 1]] - cond_mean[p]) * dw[[p, k, i]] / dt;
                }
                let fitted = regressor.fit(&target_zu, k)?;
                for p in 0..n {
                    z[[p, k, i]] = fitted[p];
                }
            }
            // U from the compensated jump covariance, per atom.
            for j in 0..n_atoms {
                if u_norm[j] <= 0.0 {
                    for p in 0..n {
                        u[[p, k, j]] = 0.0;
                    }
                    continue;
                }
                for p in 0..n {
                    target_zu[p] = (y[[p, k + 1]] - cond_mean[p])
                        * (counts[[p, k, j]] - u_norm[j])
                        / u_norm[j];
                }
                let fitted = regressor.fit(&target_zu, k)?;
                for p in 0..n {
                    u[[p, k, j]] = fitted[p];
                }
            }

            let fitted = regressor.fit(&target_y, k)?;
            if let Some((lo, hi)) = cfg.clip {
                for p in 0..n {
                    y[[p, k]] = fitted[p].clamp(lo, hi);
                }
            } else {
                for p in 0..n {
                    y[[p, k]] = fitted[p];
                }
            }
        }

        for p in 0..n {
            contrib[p] = y[[p, steps]] + driver_acc[p];
        }
        let (y0, _) = mean_and_stderr(&contrib);
        y0_history.push(y0);
        if !y0.is_finite() {
            gaps.push(f64::INFINITY);
            break;
        }
        let m = y0_history.len();
        if m >= 2 {
            let gap = (y0_history[m - 1] - y0_history[m - 2]).abs();
            gaps.push(gap);
            if gap < cfg.picard_tol {
                converged = true;
                break;
            }
        }
    }

    let (y0, y0_stderr) = mean_and_stderr(&contrib);
    let report = PicardReport { gaps: gaps.clone(), y0_history, converged };
    let surface =
        ValueSurface { y, z, u, y0, y0_stderr, y0_contrib: contrib, picard_gaps: gaps };
    Ok((surface, report))
}

/// Representation of the value as a weighted expectation under the bundle's
/// own measure: terminal claim and running driver are both multiplied by
/// `exp(-integral alpha) * H`, with `H` the stochastic exponential of the
/// problem's tilt. `density` must have been built from this bundle over the
/// full grid with that same tilt.
pub fn price_under_p(
    problem: &BsdeProblem,
    bundle: &PathBundle,
    density: &DensityPath,
    cfg: &SolverConfig,
) -> Result<PriceEstimate> {
    let n = bundle.n_paths();
    let steps = bundle.grid().n_steps();
    if density.from_index() != 0
        || density.log_values().nrows() != n
        || density.log_values().ncols() != steps + 1
    {
        return Err(Error::InvalidSpec(
            "density window must cover the bundle's whole grid".into(),
        ));
    }
    let d = bundle.dim();
    let dt = bundle.grid().dt();
    let states = bundle.states();

    // log weights: cumulative left-point discount plus log density.
    let mut log_w = density.log_values().clone();
    let mut xbuf = vec![0.0; d];
    for p in 0..n {
        let mut acc = 0.0;
        for k in 0..steps {
            log_w[[p, k]] += acc;
            for i in 0..d {
                xbuf[i] = states[[p, k, i]];
            }
            acc -= problem.discount(&xbuf) * dt;
        }
        log_w[[p, steps]] += acc;
    }

    priced_with_log_weights(problem, bundle, &log_w, cfg)
}

/// Shared fixed-point evaluation of the weighted representation; `log_w`
/// holds the log of the deflator applied at each node.
pub(crate) fn priced_with_log_weights(
    problem: &BsdeProblem,
    bundle: &PathBundle,
    log_w: &Array2<f64>,
    cfg: &SolverConfig,
) -> Result<PriceEstimate> {
    cfg.validate()?;
    problem.tilt().validate_jump_kernel(bundle.atoms())?;
    let n = bundle.n_paths();
    let steps = bundle.grid().n_steps();
    let d = bundle.dim();
    let n_atoms = bundle.atoms().len();
    if problem.u_weights().len() != n_atoms {
        return Err(Error::InvalidSpec(format!(
            "problem has {} jump weights but the bundle carries {} atoms",
            problem.u_weights().len(),
            n_atoms
        )));
    }
    let dt = bundle.grid().dt();
    let nodes = bundle.grid().nodes().to_vec();
    let states = bundle.states();
    let dw = bundle.dw();
    let counts = bundle.jump_counts();
    let u_norm: Vec<f64> = bundle.atoms().iter().map(|a| a.rate * dt).collect();

    let w = log_w.mapv(f64::exp);
    for (idx, v) in w.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::DensityOverflow { path: idx / (steps + 1), step: idx % (steps + 1) });
        }
    }

    let mut xbuf = vec![0.0; d];
    let mut zbuf = vec![0.0; d];
    let mut base = vec![0.0; n];
    for p in 0..n {
        for i in 0..d {
            xbuf[i] = states[[p, steps, i]];
        }
        base[p] = problem.terminal(&xbuf) * w[[p, steps]];
    }

    let mut y = Array2::<f64>::zeros((n, steps + 1));
    let mut z = Array3::<f64>::zeros((n, steps, d));
    let mut u = Array3::<f64>::zeros((n, steps, n_atoms));
    for p in 0..n {
        for i in 0..d {
            xbuf[i] = states[[p, steps, i]];
        }
        y[[p, steps]] = problem.terminal(&xbuf);
    }

    let mut f_vals = Array2::<f64>::zeros((n, steps));
    let mut contrib = vec![0.0; n];
    let mut suffix = vec![0.0; n];
    let mut target = vec![0.0; n];
    let mut y0_history: Vec<f64> = Vec::new();
    let mut gaps: Vec<f64> = Vec::new();
    let mut converged = false;

    for _sweep in 0..cfg.picard_max {
        // Driver slices from the previous iterate's surfaces.
        for p in 0..n {
            for k in 0..steps {
                for i in 0..d {
                    xbuf[i] = states[[p, k, i]];
                    zbuf[i] = z[[p, k, i]];
                }
                let mut u_int = 0.0;
                for j in 0..n_atoms {
                    u_int += problem.u_weights()[j] * u[[p, k, j]];
                }
                f_vals[[p, k]] = problem.driver(nodes[k], &xbuf, y[[p, k]], &zbuf, u_int);
            }
        }
        for p in 0..n {
            let mut running = base[p];
            for k in 0..steps {
                running += w[[p, k]] * f_vals[[p, k]] * dt;
            }
            contrib[p] = running;
        }
        let (y0, _) = mean_and_stderr(&contrib);
        y0_history.push(y0);
        if !y0.is_finite() {
            gaps.push(f64::INFINITY);
            break;
        }
        let m = y0_history.len();
        if m >= 2 {
            let gap = (y0_history[m - 1] - y0_history[m - 2]).abs();
            gaps.push(gap);
            if gap < cfg.picard_tol {
                converged = true;
                break;
            }
        }

        // Refresh the surfaces: conditional version of the same weighted
        // representation, then covariance extraction for Z and U.
        suffix.copy_from_slice(&base);
        for k in (0..steps).rev() {
            for p in 0..n {
                suffix[p] += w[[p, k]] * f_vals[[p, k]] * dt;
            }
            let regressor =
                StepRegressor::new(states.index_axis(ndarray::Axis(1), k), cfg.basis_degree, k)?;
            for p in 0..n {
                target[p] = y[[p, k + 1]];
            }
            let cond_mean = regressor.fit(&target, k)?;
            for i in 0..d {
                for p in 0..n {
                    target[p] = (y[[p, k + 1]] - cond_mean[p]) * dw[[p, k, i]] / dt;
                }
                let fitted = regressor.fit(&target, k)?;
                for p in 0..n {
                    z[[p, k, i]] = fitted[p];
                }
            }
            for j in 0..n_atoms {
                if u_norm[j] <= 0.0 {
                    for p in 0..n {
                        u[[p, k, j]] = 0.0;
                    }
                    continue;
                }
                for p in 0..n {
                    target[p] = (y[[p, k + 1]] - cond_mean[p])
                        * (counts[[p, k, j]] - u_norm[j])
                        / u_norm[j];
                }
                let fitted = regressor.fit(&target, k)?;
                for p in 0..n {
                    u[[p, k, j]] = fitted[p];
                }
            }
            for p in 0..n {
                target[p] = suffix[p] / w[[p, k]];
            }
            let fitted = regressor.fit(&target, k)?;
            if let Some((lo, hi)) = cfg.clip {
                for p in 0..n {
                    y[[p, k]] = fitted[p].clamp(lo, hi);
                }
            } else {
                for p in 0..n {
                    y[[p, k]] = fitted[p];
                }
            }
        }
    }

    if !converged {
        return Err(Error::PicardDiverged { gaps });
    }
    let (y0, stderr) = mean_and_stderr(&contrib);
    Ok(PriceEstimate { y0, stderr, contrib, picard_gaps: gaps })
}
