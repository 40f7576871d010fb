//! Closed-form reference prices used as ground truth by the test and
//! acceptance suites.

use crate::error::{Error, Result};

/// Value of a closed-form evaluation together with an echo of its inputs.
#[derive(Debug, Clone)]
pub struct OracleResult {
    pub value: f64,
    pub formula_id: &'static str,
    pub inputs: Vec<(&'static str, f64)>,
}

impl OracleResult {
    fn new(formula_id: &'static str, value: f64, inputs: Vec<(&'static str, f64)>) -> Self {
        Self { value, formula_id, inputs }
    }
}

/// Standard normal CDF via Cody's rational approximation of erfc
/// (W. J. Cody, Math. Comp. 23 (1969); SPECFUN coefficients). Absolute error
/// is far below the 1e-8 budget of the tests that lean on it.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn erfc(x: f64) -> f64 {
    let ax = x.abs();
    let v = if ax < 0.46875 {
        1.0 - erf_small(ax)
    } else if ax <= 4.0 {
        erfc_mid(ax)
    } else {
        erfc_large(ax)
    };
    if x < 0.0 {
        2.0 - v
    } else {
        v
    }
}

fn erf_small(x: f64) -> f64 {
    const A: [f64; 5] = [
        3.16112374387056560e0,
        1.13864154151050156e2,
        3.77485237685302021e2,
        3.20937758913846947e3,
        1.85777706184603153e-1,
    ];
    const B: [f64; 4] = [
        2.36012909523441209e1,
        2.44024637934444173e2,
        1.28261652607737228e3,
        2.84423683343917062e3,
    ];
    let z = x * x;
    let mut num = A[4] * z;
    let mut den = z;
    for i in 0..3 {
        num = (num + A[i]) * z;
        den = (den + B[i]) * z;
    }
    x * (num + A[3]) / (den + B[3])
}

fn erfc_mid(x: f64) -> f64 {
    const C: [f64; 9] = [
        5.64188496988670089e-1,
        8.88314979438837594e0,
        6.61191906371416295e1,
        2.98635138197400131e2,
        8.81952221241769090e2,
        1.71204761263407058e3,
        2.05107837782607147e3,
        1.23033935479799725e3,
        2.15311535474403846e-8,
    ];
    const D: [f64; 8] = [
        1.57449261107098347e1,
        1.17693950891312499e2,
        5.37181101862009858e2,
        1.62138957456669019e3,
        3.29079923573345963e3,
        4.36261909014324716e3,
        3.43936767414372164e3,
        1.23033935480374942e3,
    ];
    let mut num = C[8] * x;
    let mut den = x;
    for i in 0..7 {
        num = (num + C[i]) * x;
        den = (den + D[i]) * x;
    }
    (-x * x).exp() * (num + C[7]) / (den + D[7])
}

fn erfc_large(x: f64) -> f64 {
    const P: [f64; 6] = [
        3.05326634961232344e-1,
        3.60344899949804439e-1,
        1.25781726111229246e-1,
        1.60837851487422766e-2,
        6.58749161529837803e-4,
        1.63153871373020978e-2,
    ];
    const Q: [f64; 5] = [
        2.56852019228982242e0,
        1.87295284992346047e0,
        5.27905102951428412e-1,
        6.05183413124413191e-2,
        2.33520497626869185e-3,
    ];
    const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;
    let z = 1.0 / (x * x);
    let mut num = P[5] * z;
    let mut den = z;
    for i in 0..4 {
        num = (num + P[i]) * z;
        den = (den + Q[i]) * z;
    }
    let r = z * (num + P[4]) / (den + Q[4]);
    ((FRAC_1_SQRT_PI - r) / x) * (-x * x).exp()
}

/// Price of the option to exchange asset 2 for asset 1 in the driftless
/// two-asset lognormal model:
/// `S1 Phi(d1) - S2 Phi(d2)` with `sigma^2 = s1^2 + s2^2 - 2 rho s1 s2`.
pub fn margrabe(s1: f64, s2: f64, sigma1: f64, sigma2: f64, rho: f64, t: f64) -> Result<OracleResult> {
    if !(t > 0.0) || sigma1 < 0.0 || sigma2 < 0.0 || rho.abs() > 1.0 + 1e-12 {
        return Err(Error::InvalidSpec(format!(
            "margrabe domain: T > 0, sigma >= 0, |rho| <= 1 (got T={t}, s1={sigma1}, s2={sigma2}, rho={rho})"
        )));
    }
    let inputs = vec![
        ("s1", s1),
        ("s2", s2),
        ("sigma1", sigma1),
        ("sigma2", sigma2),
        ("rho", rho),
        ("t", t),
    ];
    let var = (sigma1 * sigma1 + sigma2 * sigma2 - 2.0 * rho * sigma1 * sigma2).max(0.0);
    let sig = var.sqrt();
    let value = if s1 <= 0.0 {
        0.0
    } else if s2 <= 0.0 {
        s1
    } else if sig * t.sqrt() < 1e-14 {
        (s1 - s2).max(0.0)
    } else {
        let sq = sig * t.sqrt();
        let d1 = ((s1 / s2).ln() + 0.5 * var * t) / sq;
        let d2 = d1 - sq;
        s1 * normal_cdf(d1) - s2 * normal_cdf(d2)
    };
    Ok(OracleResult::new("margrabe", value, inputs))
}

/// `exp(-r T)`.
pub fn discount_bond(r: f64, t: f64) -> OracleResult {
    OracleResult::new("discount_bond", (-r * t).exp(), vec![("r", r), ("t", t)])
}

/// Black-Scholes call on a dividend-free lognormal asset.
pub fn black_scholes_call(s: f64, k: f64, r: f64, sigma: f64, t: f64) -> OracleResult {
    let inputs = vec![("s", s), ("k", k), ("r", r), ("sigma", sigma), ("t", t)];
    let value = if k <= 0.0 {
        s
    } else if s <= 0.0 {
        0.0
    } else if sigma * t.sqrt() < 1e-14 {
        (s - k * (-r * t).exp()).max(0.0)
    } else {
        let sq = sigma * t.sqrt();
        let d1 = ((s / k).ln() + (r + 0.5 * sigma * sigma) * t) / sq;
        let d2 = d1 - sq;
        s * normal_cdf(d1) - k * (-r * t).exp() * normal_cdf(d2)
    };
    OracleResult::new("black_scholes_call", value, inputs)
}

/// Mean of the martingale-measure pure-jump asset: `S0 exp(r T)`.
pub fn geometric_poisson_mean(s0: f64, r: f64, t: f64) -> OracleResult {
    OracleResult::new("geometric_poisson_mean", s0 * (r * t).exp(), vec![
        ("s0", s0),
        ("r", r),
        ("t", t),
    ])
}
