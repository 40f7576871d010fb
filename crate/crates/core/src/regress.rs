//! Least-squares projection on polynomial bases of the state, used by the
//! backward solver to estimate conditional expectations step by step.
//!
//! Normal equations with a trace-scaled ridge term (1e-10) guard against
//! rank deficiency when states degenerate (deterministic dynamics, constant
//! initial node). State coordinates are standardized per step before the
//! monomials are formed; a coordinate with zero spread contributes nothing
//! beyond the intercept, which keeps plain means exact there.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

const RIDGE_SCALE: f64 = 1e-10;

/// Monomial exponent table for total degree <= `degree` in `d` variables,
/// ordered by degree then lexicographically. Deterministic.
fn monomial_exponents(d: usize, degree: usize) -> Vec<Vec<u32>> {
    fn rec(all: &mut Vec<Vec<u32>>, current: &mut Vec<u32>, pos: usize, cap: u32) {
        if pos == current.len() {
            all.push(current.clone());
            return;
        }
        for e in 0..=cap {
            current[pos] = e;
            rec(all, current, pos + 1, cap - e);
        }
        current[pos] = 0;
    }
    let mut all = Vec::new();
    rec(&mut all, &mut vec![0u32; d], 0, degree as u32);
    all.sort_by_key(|e| (e.iter().sum::<u32>(), e.clone()));
    all
}

/// Per-step regression context: standardized design matrix and factored
/// normal equations, reusable across several target vectors.
pub(crate) struct StepRegressor {
    design: Array2<f64>,
    chol: Vec<f64>,
    m: usize,
}

impl StepRegressor {
    pub fn new(states: ArrayView2<'_, f64>, degree: usize, step: usize) -> Result<Self> {
        let n = states.nrows();
        let d = states.ncols();
        let exps = monomial_exponents(d, degree);
        let m = exps.len();
        if n < m {
            return Err(Error::RegressionSingular { step });
        }

        // Standardize coordinates; a degenerate coordinate maps to zero.
        let mut mean = vec![0.0; d];
        let mut sd = vec![0.0; d];
        for j in 0..d {
            let mut s = 0.0;
            for i in 0..n {
                s += states[[i, j]];
            }
            mean[j] = s / n as f64;
            let mut v = 0.0;
            for i in 0..n {
                let c = states[[i, j]] - mean[j];
                v += c * c;
            }
            sd[j] = (v / n as f64).sqrt();
        }

        let max_e = degree.max(1);
        let mut design = Array2::<f64>::zeros((n, m));
        let mut pows = vec![0.0; d * (max_e + 1)];
        for i in 0..n {
            for j in 0..d {
                let z = if sd[j] > 1e-300 && sd[j] > 1e-13 * (1.0 + mean[j].abs()) {
                    (states[[i, j]] - mean[j]) / sd[j]
                } else {
                    0.0
                };
                pows[j * (max_e + 1)] = 1.0;
                for e in 1..=max_e {
                    pows[j * (max_e + 1) + e] = pows[j * (max_e + 1) + e - 1] * z;
                }
            }
            for (b, exp) in exps.iter().enumerate() {
                let mut v = 1.0;
                for j in 0..d {
                    v *= pows[j * (max_e + 1) + exp[j] as usize];
                }
                design[[i, b]] = v;
            }
        }

        // Normal equations with trace-scaled ridge.
        let mut gram = vec![0.0; m * m];
        for i in 0..n {
            for a in 0..m {
                let da = design[[i, a]];
                for b in a..m {
                    gram[a * m + b] += da * design[[i, b]];
                }
            }
        }
        let mut trace = 0.0;
        for a in 0..m {
            trace += gram[a * m + a];
        }
        if !trace.is_finite() {
            return Err(Error::RegressionSingular { step });
        }
        let ridge = RIDGE_SCALE * trace / m as f64;
        for a in 0..m {
            gram[a * m + a] += ridge;
            for b in 0..a {
                gram[a * m + b] = gram[b * m + a];
            }
        }

        let chol = cholesky(&gram, m).ok_or(Error::RegressionSingular { step })?;
        Ok(Self { design, chol, m })
    }

    /// Fitted values of the least-squares projection of `target`.
    pub fn fit(&self, target: &[f64], step: usize) -> Result<Vec<f64>> {
        let n = self.design.nrows();
        let m = self.m;
        let mut rhs = vec![0.0; m];
        for i in 0..n {
            let t = target[i];
            for b in 0..m {
                rhs[b] += self.design[[i, b]] * t;
            }
        }
        let coef = chol_solve(&self.chol, m, &rhs);
        if coef.iter().any(|c| !c.is_finite()) {
            return Err(Error::RegressionSingular { step });
        }
        let mut fitted = vec![0.0; n];
        for i in 0..n {
            let mut v = 0.0;
            for b in 0..m {
                v += self.design[[i, b]] * coef[b];
            }
            fitted[i] = v;
        }
        Ok(fitted)
    }
}

/// Lower Cholesky factor of a symmetric positive-definite matrix in row-major
/// storage; `None` if a pivot collapses.
fn cholesky(a: &[f64], m: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..=i {
            let mut s = a[i * m + j];
            for k in 0..j {
                s -= l[i * m + k] * l[j * m + k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[i * m + i] = s.sqrt();
            } else {
                l[i * m + j] = s / l[j * m + j];
            }
        }
    }
    Some(l)
}

fn chol_solve(l: &[f64], m: usize, rhs: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; m];
    for i in 0..m {
        let mut s = rhs[i];
        for k in 0..i {
            s -= l[i * m + k] * y[k];
        }
        y[i] = s / l[i * m + i];
    }
    let mut x = vec![0.0; m];
    for i in (0..m).rev() {
        let mut s = y[i];
        for k in (i + 1)..m {
            s -= l[k * m + i] * x[k];
        }
        x[i] = s / l[i * m + i];
    }
    x
}

/// Sample mean and standard error of the mean.
pub(crate) fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
