//! Market models with repo funding, dividends and collateral: wealth-equation
//! pricing problems under the physical and martingale measures, growth-optimal
//! deflation, numeraire changes, and the single-asset pure-jump market.
//!
//! Prices are quoted buyer-positive: the terminal payoff is what the claim
//! holder receives, and a positive collateral level means collateral held
//! against a positive claim value. With collateral `C = c(Y)` the generator is
//! `(r - r_cb) C^+ - (r - r_cl) C^-`, which discounts a fully collateralized
//! claim at the collateral rate and an uncollateralized one at the funding
//! rate.

use std::sync::Arc;

use ndarray::{Array2, Array3};

use crate::bsde::{
    priced_with_log_weights, solve_backward, BsdeProblem, DriverFn, PriceEstimate, SolverConfig,
    TerminalFn, ValueSurface,
};
use crate::error::{Error, Result};
use crate::girsanov::{
    simulate_tilted, stochastic_exponential, theta_kernel, MeasureTilt,
};
use crate::paths::{simulate_paths, DiffusionSpec, JumpSpec, PathBundle, TimeGrid};

/// Bound on every rate process, per year.
pub const RATE_BOUND: f64 = 10.0;

/// Measure a bundle or problem is expressed under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    /// Physical measure.
    P,
    /// Martingale measure of the repo-discounted cum-dividend assets.
    Q,
}

/// Pricing route selected for an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PricingMeasure {
    P,
    Q,
    Gop,
    /// Zero-based asset index used as numeraire.
    Numeraire(usize),
}

impl PricingMeasure {
    pub fn label(&self) -> String {
        match self {
            PricingMeasure::P => "P".to_string(),
            PricingMeasure::Q => "Q".to_string(),
            PricingMeasure::Gop => "gop".to_string(),
            PricingMeasure::Numeraire(i) => format!("numeraire:{}", i + 1),
        }
    }
}

/// Constant-parameter market: relative drifts and volatilities, funding,
/// repo and collateral rates, dividend yields, optional fixed-size jumps.
#[derive(Clone)]
pub struct MarketSpec {
    dim: usize,
    mu: Vec<f64>,
    sigma: Vec<f64>,
    corr_chol: Array2<f64>,
    s0: Vec<f64>,
    r: f64,
    r_repo: Vec<f64>,
    dividends: Vec<f64>,
    r_cl: f64,
    r_cb: f64,
    jumps: JumpSpec,
}

fn check_rate(name: &str, value: f64) -> Result<()> {
    if !value.is_finite() || value.abs() > RATE_BOUND {
        return Err(Error::InvalidMarket(format!(
            "rate {name} = {value} outside the bound |rate| <= {RATE_BOUND}"
        )));
    }
    Ok(())
}

impl MarketSpec {
    pub fn new(
        mu: Vec<f64>,
        sigma: Vec<f64>,
        corr_chol: Array2<f64>,
        s0: Vec<f64>,
        r: f64,
        r_repo: Vec<f64>,
        dividends: Vec<f64>,
        r_cl: f64,
        r_cb: f64,
        jumps: JumpSpec,
    ) -> Result<Self> {
        let dim = s0.len();
        if dim == 0
            || mu.len() != dim
            || sigma.len() != dim
            || r_repo.len() != dim
            || dividends.len() != dim
            || corr_chol.shape() != [dim, dim]
        {
            return Err(Error::InvalidMarket("inconsistent market dimensions".into()));
        }
        check_rate("r", r)?;
        check_rate("r_cl", r_cl)?;
        check_rate("r_cb", r_cb)?;
        for i in 0..dim {
            check_rate(&format!("mu[{i}]"), mu[i])?;
            check_rate(&format!("r_repo[{i}]"), r_repo[i])?;
            check_rate(&format!("k[{i}]"), dividends[i])?;
            if !(sigma[i] >= 0.0) || !sigma[i].is_finite() {
                return Err(Error::InvalidMarket(format!("sigma[{i}] must be >= 0")));
            }
            if !(s0[i] > 0.0) {
                return Err(Error::InvalidMarket(format!("initial price s0[{i}] must be > 0")));
            }
        }
        Ok(Self { dim, mu, sigma, corr_chol, s0, r, r_repo, dividends, r_cl, r_cb, jumps })
    }

    /// One lognormal asset; repo and collateral rates default to `r`.
    pub fn single_asset_gbm(s0: f64, mu: f64, sigma: f64, r: f64) -> Result<Self> {
        Self::new(
            vec![mu],
            vec![sigma],
            Array2::eye(1),
            vec![s0],
            r,
            vec![r],
            vec![0.0],
            r,
            r,
            JumpSpec::none(),
        )
    }

    /// Two correlated lognormal assets; repo and collateral rates default to `r`.
    pub fn two_asset_gbm(
        s0: [f64; 2],
        mu: [f64; 2],
        sigma: [f64; 2],
        rho: f64,
        r: f64,
    ) -> Result<Self> {
        if rho.abs() > 1.0 {
            return Err(Error::InvalidMarket(format!("correlation {rho} outside [-1, 1]")));
        }
        let chol = ndarray::array![[1.0, 0.0], [rho, (1.0 - rho * rho).sqrt()]];
        Self::new(
            mu.to_vec(),
            sigma.to_vec(),
            chol,
            s0.to_vec(),
            r,
            vec![r, r],
            vec![0.0, 0.0],
            r,
            r,
            JumpSpec::none(),
        )
    }

    /// Single asset driven only by a fixed-size Poisson jump:
    /// `dS/S_- = mu dt + (e^alpha - 1) dN_compensated`.
    pub fn pure_jump(s0: f64, mu: f64, lambda: f64, alpha: f64, r: f64) -> Result<Self> {
        if lambda <= 0.0 {
            return Err(Error::DegenerateJumpModel("intensity must be positive".into()));
        }
        if alpha == 0.0 {
            return Err(Error::DegenerateJumpModel("jump size must be non-zero".into()));
        }
        let jumps = JumpSpec::fixed_size_poisson(lambda, alpha)?.with_impact(Arc::new(
            |x: &[f64], z: f64, out: &mut [f64]| {
                out[0] = x[0] * (z.exp() - 1.0);
            },
        ));
        Self::new(
            vec![mu],
            vec![0.0],
            Array2::eye(1),
            vec![s0],
            r,
            vec![r],
            vec![0.0],
            r,
            r,
            jumps,
        )
    }

    pub fn with_repo_rates(mut self, r_repo: Vec<f64>) -> Result<Self> {
        if r_repo.len() != self.dim {
            return Err(Error::InvalidMarket("repo rate count must match assets".into()));
        }
        for (i, r) in r_repo.iter().enumerate() {
            check_rate(&format!("r_repo[{i}]"), *r)?;
        }
        self.r_repo = r_repo;
        Ok(self)
    }

    pub fn with_dividends(mut self, dividends: Vec<f64>) -> Result<Self> {
        if dividends.len() != self.dim {
            return Err(Error::InvalidMarket("dividend count must match assets".into()));
        }
        for (i, k) in dividends.iter().enumerate() {
            check_rate(&format!("k[{i}]"), *k)?;
        }
        self.dividends = dividends;
        Ok(self)
    }

    pub fn with_collateral_rates(mut self, r_cl: f64, r_cb: f64) -> Result<Self> {
        check_rate("r_cl", r_cl)?;
        check_rate("r_cb", r_cb)?;
        self.r_cl = r_cl;
        self.r_cb = r_cb;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn corr_chol(&self) -> &Array2<f64> {
        &self.corr_chol
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.s0
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn r_repo(&self) -> &[f64] {
        &self.r_repo
    }

    pub fn dividend_yields(&self) -> &[f64] {
        &self.dividends
    }

    pub fn r_cl(&self) -> f64 {
        self.r_cl
    }

    pub fn r_cb(&self) -> f64 {
        self.r_cb
    }

    pub fn jumps(&self) -> &JumpSpec {
        &self.jumps
    }

    /// Funding account `B_t = exp(r t)`.
    pub fn bank_account(&self, t: f64) -> f64 {
        (self.r * t).exp()
    }

    /// Repo account of asset `i`.
    pub fn repo_account(&self, i: usize, t: f64) -> f64 {
        (self.r_repo[i] * t).exp()
    }

    /// Physical-measure dynamics as a simulator spec.
    pub fn diffusion_spec(&self) -> Result<DiffusionSpec> {
        DiffusionSpec::geometric(
            self.mu.clone(),
            self.sigma.clone(),
            self.corr_chol.clone(),
            self.s0.clone(),
        )
    }
}

/// Claim: terminal payoff (buyer-positive) and maturity.
#[derive(Clone)]
pub struct ContractSpec {
    payoff: TerminalFn,
    maturity: f64,
}

impl ContractSpec {
    pub fn new(payoff: TerminalFn, maturity: f64) -> Result<Self> {
        if !(maturity > 0.0) {
            return Err(Error::InvalidSpec("maturity must be positive".into()));
        }
        Ok(Self { payoff, maturity })
    }

    pub fn call(strike: f64, maturity: f64) -> Result<Self> {
        Self::new(Arc::new(move |x| (x[0] - strike).max(0.0)), maturity)
    }

    pub fn put(strike: f64, maturity: f64) -> Result<Self> {
        Self::new(Arc::new(move |x| (strike - x[0]).max(0.0)), maturity)
    }

    /// `(S^1_T - S^2_T)^+`.
    pub fn exchange(maturity: f64) -> Result<Self> {
        Self::new(Arc::new(|x| (x[0] - x[1]).max(0.0)), maturity)
    }

    /// Pays the terminal value of asset `i`.
    pub fn asset(i: usize, maturity: f64) -> Result<Self> {
        Self::new(Arc::new(move |x| x[i]), maturity)
    }

    pub fn constant(value: f64, maturity: f64) -> Result<Self> {
        Self::new(Arc::new(move |_x| value), maturity)
    }

    pub fn payoff(&self) -> TerminalFn {
        self.payoff.clone()
    }

    pub fn maturity(&self) -> f64 {
        self.maturity
    }
}

type CollateralFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Collateral map `C = c(V)`.
#[derive(Clone)]
pub struct CollateralSpec {
    c: CollateralFn,
    label: String,
}

impl CollateralSpec {
    pub fn none() -> Self {
        Self { c: Arc::new(|_| 0.0), label: "none".into() }
    }

    /// Fully collateralized: `C = V`.
    pub fn full() -> Self {
        Self { c: Arc::new(|v| v), label: "full".into() }
    }

    /// `C = kappa V`.
    pub fn fraction(kappa: f64) -> Self {
        Self { c: Arc::new(move |v| kappa * v), label: format!("fraction:{kappa}") }
    }

    pub fn custom(c: CollateralFn, label: &str) -> Self {
        Self { c, label: label.to_string() }
    }

    pub fn level(&self, v: f64) -> f64 {
        (self.c)(v)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Positive and negative parts of the collateral at value `v`.
    pub fn split(&self, v: f64) -> (f64, f64) {
        let c = self.level(v);
        (c.max(0.0), (-c).max(0.0))
    }

    /// Sampled Lipschitz bound check of `c` on `[lo, hi]`.
    pub fn validate_lipschitz(&self, lo: f64, hi: f64, l_bound: f64) -> Result<()> {
        let n = 257;
        let step = (hi - lo) / (n - 1) as f64;
        let mut prev_v = lo;
        let mut prev_c = self.level(lo);
        for i in 1..n {
            let v = lo + i as f64 * step;
            let c = self.level(v);
            if (c - prev_c).abs() > l_bound * (v - prev_v).abs() * (1.0 + 1e-12) {
                return Err(Error::InvalidSpec(format!(
                    "collateral map violates the sampled Lipschitz bound {l_bound} near v = {v}"
                )));
            }
            prev_v = v;
            prev_c = c;
        }
        Ok(())
    }
}

/// Simulate the market under the requested measure; paths share random
/// numbers with a same-seed simulation under the other measure.
pub fn simulate_market(
    market: &MarketSpec,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    measure: Measure,
) -> Result<PathBundle> {
    let diff = market.diffusion_spec()?;
    match measure {
        Measure::P => simulate_paths(&diff, market.jumps(), grid, n_paths, seed),
        Measure::Q => {
            let tilt = MeasureTilt::risk_neutral(market)?;
            simulate_tilted(&diff, market.jumps(), grid, &tilt, n_paths, seed)
        }
    }
}

/// Wealth-equation pricing problem for a collateralized claim.
///
/// Under `Q` the tilt is trivial; under `P` the driver gains the market price
/// of risk term and, in jump markets, the compensated-jump term of the same
/// kernel that drives the density. The collateral generator is switched off
/// on the final step, where all collateral has been returned.
pub fn build_collateral_bsde(
    market: &MarketSpec,
    contract: &ContractSpec,
    coll: &CollateralSpec,
    measure: Measure,
    grid: &TimeGrid,
) -> Result<BsdeProblem> {
    if (grid.t_end() - contract.maturity()).abs() > 1e-9 {
        return Err(Error::InvalidSpec(format!(
            "grid horizon {} does not match contract maturity {}",
            grid.t_end(),
            contract.maturity()
        )));
    }
    let rn_tilt = MeasureTilt::risk_neutral(market)?;
    let u_weights: Vec<f64> = market
        .jumps()
        .atoms()
        .iter()
        .map(|a| rn_tilt.delta(a.size) * a.rate)
        .collect();
    let tilt = match measure {
        Measure::P => rn_tilt,
        Measure::Q => MeasureTilt::identity(market.dim()),
    };

    let r = market.r();
    let r_cb = market.r_cb();
    let r_cl = market.r_cl();
    let coll = coll.clone();
    let coll_cutoff = grid.t_end() - 1.5 * grid.dt();
    let driver: DriverFn = Arc::new(move |t, _x, y, _z, _u| {
        if t >= coll_cutoff {
            return 0.0;
        }
        let (c_plus, c_minus) = coll.split(y);
        (r - r_cb) * c_plus - (r - r_cl) * c_minus
    });
    let discount = Arc::new(move |_x: &[f64]| r);
    Ok(BsdeProblem::new(contract.payoff(), driver, discount, tilt, u_weights))
}

/// Backward solve of the collateral problem in its `Q` form on a `Q` bundle.
pub fn collateral_price_q(
    market: &MarketSpec,
    contract: &ContractSpec,
    coll: &CollateralSpec,
    bundle: &PathBundle,
    cfg: &SolverConfig,
) -> Result<PriceEstimate> {
    let problem = build_collateral_bsde(market, contract, coll, Measure::Q, bundle.grid())?;
    let surface = solve_backward(&problem, bundle, cfg)?;
    Ok(estimate_from_surface(surface))
}

/// Weighted physical-measure representation of the collateral problem on a
/// `P` bundle: claim and driver slices carry `exp(-int r) H`.
pub fn collateral_price_p(
    market: &MarketSpec,
    contract: &ContractSpec,
    coll: &CollateralSpec,
    bundle: &PathBundle,
    cfg: &SolverConfig,
) -> Result<PriceEstimate> {
    let problem = build_collateral_bsde(market, contract, coll, Measure::P, bundle.grid())?;
    let density = stochastic_exponential(
        problem.tilt(),
        bundle,
        bundle.grid().t0(),
        bundle.grid().t_end(),
    )?;
    crate::bsde::price_under_p(&problem, bundle, &density, cfg)
}

fn estimate_from_surface(surface: ValueSurface) -> PriceEstimate {
    PriceEstimate {
        y0: surface.y0,
        stderr: surface.y0_stderr,
        contrib: surface.y0_contrib,
        picard_gaps: surface.picard_gaps,
    }
}

/// Hedge ratios and repo positions per path and step.
pub struct HedgeSurface {
    /// `[n_paths, n_steps, dim]` units of each asset.
    pub xi: Array3<f64>,
    /// `[n_paths, n_steps, dim]` repo account positions `psi_i = -xi_i S_i / B_i`.
    pub psi: Array3<f64>,
}

/// Invert `Z = xi diag(S) Sigma rho_chol` for the asset positions and report
/// the repo accounts that finance them.
pub fn extract_hedge(
    surface: &ValueSurface,
    market: &MarketSpec,
    bundle: &PathBundle,
) -> Result<HedgeSurface> {
    let d = market.dim();
    let n = bundle.n_paths();
    let steps = bundle.grid().n_steps();
    let chol = market.corr_chol();
    let sigma = market.sigma();
    let nodes = bundle.grid().nodes();
    for i in 0..d {
        if sigma[i] * chol[[i, i]] == 0.0 {
            return Err(Error::SingularVolatility(format!(
                "asset {i} has zero volatility; hedge extraction is singular"
            )));
        }
    }
    let mut xi = Array3::<f64>::zeros((n, steps, d));
    let mut psi = Array3::<f64>::zeros((n, steps, d));
    let mut v = vec![0.0; d];
    for p in 0..n {
        for k in 0..steps {
            // (Sigma rho_chol)^T v = z, back substitution; xi_i = v_i / S_i.
            for i in (0..d).rev() {
                let mut s = surface.z[[p, k, i]];
                for l in (i + 1)..d {
                    s -= sigma[l] * chol[[l, i]] * v[l];
                }
                v[i] = s / (sigma[i] * chol[[i, i]]);
            }
            for i in 0..d {
                let s_i = bundle.states()[[p, k, i]];
                if s_i == 0.0 {
                    return Err(Error::SingularVolatility(format!(
                        "asset {i} price hit zero at path {p}, step {k}"
                    )));
                }
                xi[[p, k, i]] = v[i] / s_i;
                let b_i = market.repo_account(i, nodes[k] - nodes[0]);
                psi[[p, k, i]] = -xi[[p, k, i]] * s_i / b_i;
            }
        }
    }
    Ok(HedgeSurface { xi, psi })
}

/// Growth-optimal portfolio along simulated paths, `S*_{t0} = 1`, accumulated
/// in log space as `(r + |theta|^2/2) dt + theta . dW`.
pub struct GopPath {
    log_values: Array2<f64>,
}

impl GopPath {
    pub fn log_values(&self) -> &Array2<f64> {
        &self.log_values
    }

    pub fn values(&self) -> Array2<f64> {
        self.log_values.mapv(f64::exp)
    }
}

pub fn gop_path(market: &MarketSpec, bundle: &PathBundle) -> Result<GopPath> {
    let n = bundle.n_paths();
    let steps = bundle.grid().n_steps();
    let d = bundle.dim();
    let dt = bundle.grid().dt();
    let nodes = bundle.grid().nodes();
    let states = bundle.states();
    let dw = bundle.dw();
    let r = market.r();
    let mut log_values = Array2::<f64>::zeros((n, steps + 1));
    let mut x = vec![0.0; d];
    for p in 0..n {
        let mut acc = 0.0;
        for k in 0..steps {
            for i in 0..d {
                x[i] = states[[p, k, i]];
            }
            let theta = theta_kernel(market, nodes[k], &x)?;
            let theta_sq: f64 = theta.iter().map(|t| t * t).sum();
            let mut term = (r + 0.5 * theta_sq) * dt;
            for i in 0..d {
                term += theta[i] * dw[[p, k, i]];
            }
            acc += term;
            log_values[[p, k + 1]] = acc;
        }
    }
    Ok(GopPath { log_values })
}

/// Real-world pricing: the growth-optimal portfolio deflates both the claim
/// and the collateral driver under the physical measure. Pathwise this uses
/// the same per-step terms as the bank-discount-times-density weights, so it
/// reproduces `collateral_price_p` to float accuracy.
pub fn real_world_price(
    market: &MarketSpec,
    contract: &ContractSpec,
    coll: &CollateralSpec,
    bundle: &PathBundle,
    cfg: &SolverConfig,
) -> Result<PriceEstimate> {
    let problem = build_collateral_bsde(market, contract, coll, Measure::P, bundle.grid())?;
    let gop = gop_path(market, bundle)?;
    let log_w = gop.log_values().mapv(|v| -v);
    priced_with_log_weights(&problem, bundle, &log_w, cfg)
}

/// Numeraire choice for [`change_numeraire`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Numeraire {
    Bank,
    /// Zero-based asset index.
    Asset(usize),
}

/// Rewrite a bank-discounted problem (`alpha = r`) in the measure of a traded
/// numeraire: terminal condition and driver are divided by the numeraire,
/// discounting drops out, and the returned tilt's stochastic exponential is
/// the discounted numeraire ratio. Prices transform as
/// `p = S^i_0 * y0(transformed problem under the new measure)`.
pub fn change_numeraire(
    problem: &BsdeProblem,
    market: &MarketSpec,
    numeraire: Numeraire,
) -> Result<(BsdeProblem, MeasureTilt)> {
    let d = market.dim();
    let idx = match numeraire {
        Numeraire::Bank => {
            return Ok((problem.clone(), MeasureTilt::identity(d)));
        }
        Numeraire::Asset(i) => i,
    };
    if idx >= d {
        return Err(Error::InvalidNumeraire(format!(
            "asset index {idx} out of range for {d} assets"
        )));
    }
    if !market.jumps().atoms().is_empty() {
        return Err(Error::UnsupportedConfiguration(
            "asset numeraires are not supported in jump markets".into(),
        ));
    }
    if (market.r_repo()[idx] - market.r()).abs() > 1e-12 {
        return Err(Error::UnsupportedConfiguration(format!(
            "numeraire asset must fund at the bank rate (r_repo[{idx}] != r)"
        )));
    }
    if market.dividend_yields()[idx] != 0.0 {
        return Err(Error::UnsupportedConfiguration(
            "numeraire asset must pay no dividends".into(),
        ));
    }
    if market.sigma()[idx] <= 0.0 || market.initial_state()[idx] <= 0.0 {
        return Err(Error::InvalidNumeraire(format!(
            "asset {idx} must have positive price and volatility"
        )));
    }
    let alpha_at_s0 = problem.discount(market.initial_state());
    if (alpha_at_s0 - market.r()).abs() > 1e-12 {
        return Err(Error::UnsupportedConfiguration(
            "input problem must discount at the bank rate".into(),
        ));
    }

    let beta: Vec<f64> = (0..d).map(|j| market.sigma()[idx] * market.corr_chol()[[idx, j]]).collect();
    let tilt = MeasureTilt::constant_beta(beta, &format!("Q->Q^S{}", idx + 1));

    let inner_terminal = problem.clone();
    let terminal: TerminalFn = Arc::new(move |x: &[f64]| inner_terminal.terminal(x) / x[idx]);
    let inner_driver = problem.clone();
    let driver: DriverFn = Arc::new(move |t, x: &[f64], y, z, u| {
        inner_driver.driver(t, x, y * x[idx], z, u) / x[idx]
    });
    let discount = Arc::new(|_x: &[f64]| 0.0);
    let transformed =
        BsdeProblem::new(terminal, driver, discount, MeasureTilt::identity(d), vec![]);
    Ok((transformed, tilt))
}

/// Log of the repo-discounted numeraire ratio `(S^i_t/B^i_t)/(S^i_0/B^i_0)`
/// accumulated with the same per-step terms as the corresponding stochastic
/// exponential; `bundle` must be simulated under `Q`.
pub fn numeraire_deflator_log(
    market: &MarketSpec,
    bundle: &PathBundle,
    asset: usize,
) -> Result<Array2<f64>> {
    let d = market.dim();
    if asset >= d {
        return Err(Error::InvalidNumeraire(format!("asset index {asset} out of range")));
    }
    let n = bundle.n_paths();
    let steps = bundle.grid().n_steps();
    let dt = bundle.grid().dt();
    let sigma = market.sigma()[asset];
    let chol = market.corr_chol();
    let dw = bundle.dw();
    let mut out = Array2::<f64>::zeros((n, steps + 1));
    for p in 0..n {
        let mut acc = 0.0;
        for k in 0..steps {
            let mut term = -0.5 * sigma * sigma * dt;
            for l in 0..d {
                term += sigma * chol[[asset, l]] * dw[[p, k, l]];
            }
            acc += term;
            out[[p, k + 1]] = acc;
        }
    }
    Ok(out)
}

/// Price any bank-discounted collateral problem in the measure of asset
/// `idx`: combined physical-to-numeraire simulation with shared randomness,
/// backward solve of the transformed problem, price scaled back by `S^i_0`.
pub fn numeraire_measure_price(
    market: &MarketSpec,
    contract: &ContractSpec,
    coll: &CollateralSpec,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    cfg: &SolverConfig,
    idx: usize,
) -> Result<PriceEstimate> {
    let problem_q = build_collateral_bsde(market, contract, coll, Measure::Q, grid)?;
    let (transformed, num_tilt) = change_numeraire(&problem_q, market, Numeraire::Asset(idx))?;
    let rn = MeasureTilt::risk_neutral(market)?;
    let d = market.dim();
    let mut combined_beta = vec![0.0; d];
    let s0 = market.initial_state().to_vec();
    rn.beta(grid.t0(), &s0, &mut combined_beta);
    let mut num_beta = vec![0.0; d];
    num_tilt.beta(grid.t0(), &s0, &mut num_beta);
    for j in 0..d {
        combined_beta[j] += num_beta[j];
    }
    let combined =
        MeasureTilt::constant_beta(combined_beta, &format!("P->Q^S{}", idx + 1));
    let diff = market.diffusion_spec()?;
    let bundle = simulate_tilted(&diff, market.jumps(), grid, &combined, n_paths, seed)?;
    let surface = solve_backward(&transformed, &bundle, cfg)?;
    let scale = market.initial_state()[idx];
    Ok(PriceEstimate {
        y0: scale * surface.y0,
        stderr: scale * surface.y0_stderr,
        contrib: surface.y0_contrib.iter().map(|c| scale * c).collect(),
        picard_gaps: surface.picard_gaps,
    })
}

/// Exchange option `(S^1_T - S^2_T)^+` priced in the measure of the second
/// asset. Requires the second asset to fund at the bank rate.
pub fn exchange_option_numeraire_price(
    market: &MarketSpec,
    coll: &CollateralSpec,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    cfg: &SolverConfig,
) -> Result<PriceEstimate> {
    if market.dim() != 2 {
        return Err(Error::UnsupportedConfiguration(
            "exchange option pricing needs a two-asset market".into(),
        ));
    }
    let contract = ContractSpec::exchange(grid.t_end() - grid.t0())?;
    numeraire_measure_price(market, &contract, coll, grid, n_paths, seed, cfg, 1)
}

/// Price the claim in the single-asset pure-jump market under the requested
/// measure, solving the wealth BSDE in that measure's own form.
pub fn pure_jump_market_price(
    market: &MarketSpec,
    contract: &ContractSpec,
    coll: &CollateralSpec,
    bundle: &PathBundle,
    cfg: &SolverConfig,
    measure: Measure,
) -> Result<PriceEstimate> {
    if market.dim() != 1 || market.sigma().iter().any(|&s| s != 0.0)
        || market.jumps().atoms().is_empty()
    {
        return Err(Error::UnsupportedConfiguration(
            "pure-jump pricing needs a single asset with jump-only dynamics".into(),
        ));
    }
    // Guard against a bundle simulated under the other measure.
    let rn = MeasureTilt::risk_neutral(market)?;
    for (j, atom) in market.jumps().atoms().iter().enumerate() {
        let expected = match measure {
            Measure::P => atom.rate,
            Measure::Q => atom.rate * (1.0 + rn.delta(atom.size)),
        };
        let got = bundle.atoms()[j].rate;
        if (got - expected).abs() > 1e-12 * expected.max(1.0) {
            return Err(Error::InvalidSpec(format!(
                "bundle atom rate {got} does not match the {measure:?}-measure rate {expected}"
            )));
        }
    }
    let problem = build_collateral_bsde(market, contract, coll, measure, bundle.grid())?;
    let surface = solve_backward(&problem, bundle, cfg)?;
    Ok(estimate_from_surface(surface))
}

/// One-call pricing entry: simulates under the route's measure with the given
/// seed and returns the estimate. Routes sharing a seed share randomness.
pub fn price_experiment(
    market: &MarketSpec,
    contract: &ContractSpec,
    coll: &CollateralSpec,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    cfg: &SolverConfig,
    measure: PricingMeasure,
) -> Result<PriceEstimate> {
    match measure {
        PricingMeasure::P => {
            let bundle = simulate_market(market, grid, n_paths, seed, Measure::P)?;
            if market.jumps().atoms().is_empty() {
                collateral_price_p(market, contract, coll, &bundle, cfg)
            } else {
                // Pure-jump markets solve the wealth BSDE in its P form.
                pure_jump_market_price(market, contract, coll, &bundle, cfg, Measure::P)
            }
        }
        PricingMeasure::Q => {
            let bundle = simulate_market(market, grid, n_paths, seed, Measure::Q)?;
            if market.jumps().atoms().is_empty() {
                collateral_price_q(market, contract, coll, &bundle, cfg)
            } else {
                pure_jump_market_price(market, contract, coll, &bundle, cfg, Measure::Q)
            }
        }
        PricingMeasure::Gop => {
            let bundle = simulate_market(market, grid, n_paths, seed, Measure::P)?;
            real_world_price(market, contract, coll, &bundle, cfg)
        }
        PricingMeasure::Numeraire(idx) => {
            numeraire_measure_price(market, contract, coll, grid, n_paths, seed, cfg, idx)
        }
    }
}
