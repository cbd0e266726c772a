//! Right-hand sides of the expansions of `Π_n^{−1} Z_n(ℓ_n + s_n t)`, residual studies,
//! and the A/B decomposition.
//!
//! With `q_0 = Φ`, `q_ν = Q_{ν,n} / n^{ν/2}`, `V_0 = W` and `c_j = (−1/s_n)^j / j!`, the
//! order-`κ` right-hand side is
//!
//! ```text
//! rhs_κ(t) = Σ_{j + ν ≤ κ} c_j V_j (d/dt)^j q_ν(t)
//! ```
//!
//! Derivatives are exact: every `q_ν` is a [`HermiteSeries`] and `(H_m φ)′ = −H_{m+1} φ`.

use std::sync::Arc;

use serde::Serialize;

use crate::edgeworth::{q_closed_series, ClosedFormInputs, CumulantWindow, EdgeworthCdf, OracleCdf, OracleMethod};
use crate::environment::{sample_environment, EnvironmentModel, RealizedEnvironment};
use crate::martingales::{compute_series, estimate_limits, LimitEstimates, MIN_ESTIMATION_GENERATION};
use crate::rng::{replica_seed, stream_seed, ENVIRONMENT_STREAM, TREE_STREAM};
use crate::simulator::{normalized_lhs, simulate, SimConfig, Termination, Trajectory};
use crate::special::{normal_cdf_derivative, std_normal_cdf, std_normal_pdf, HermiteSeries};
use crate::stats::{loglog_slope, median};
use crate::summation::NeumaierSum;
use crate::{Error, Result};

pub const MAX_EXPANSION_ORDER: usize = 3;
pub const DEFAULT_BETA: f64 = 0.12;
pub const DEFAULT_T_GRID: [f64; 7] = [-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0];
/// Relative tolerance for `A + B = Π_n^{−1} Z_n`, applied as `tol · (1 + |lhs|)`.
pub const AB_IDENTITY_TOLERANCE: f64 = 1e-12;

/// `k_n = ⌊n^β⌋`.
pub fn split_generation(n: usize, beta: f64) -> usize {
    (n as f64).powf(beta).floor() as usize
}

/// The polynomial ingredients of the right-hand sides at one generation `n`.
#[derive(Debug, Clone)]
pub struct ExpansionTerms {
    n: usize,
    s: f64,
    /// `derivs[ν][j] = (d/dt)^j q_ν` for `ν, j ∈ 0..=3`; the `ν = 0, j = 0` slot is unused (Φ itself).
    derivs: [[HermiteSeries; MAX_EXPANSION_ORDER + 1]; MAX_EXPANSION_ORDER + 1],
}

impl ExpansionTerms {
    pub fn new(n: usize, s: f64, q: [HermiteSeries; 3]) -> Result<Self> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::DegenerateWindow { start: 0, end: n });
        }
        let derivs = std::array::from_fn(|nu| {
            std::array::from_fn(|j| match nu {
                0 if j == 0 => HermiteSeries::zero(),
                0 => normal_cdf_derivative(j),
                _ => q[nu - 1].nth_derivative(j),
            })
        });
        Ok(Self { n, s, derivs })
    }

    /// Closed-form `q_1, q_2, q_3` from the environment aggregates up to generation `n`.
    pub fn from_env(env: &RealizedEnvironment, n: usize) -> Result<Self> {
        let inputs = ClosedFormInputs::from_env(env, n)?;
        Self::from_inputs(&inputs)
    }

    pub fn from_inputs(inputs: &ClosedFormInputs) -> Result<Self> {
        let q = [
            q_closed_series(inputs, 1)?,
            q_closed_series(inputs, 2)?,
            q_closed_series(inputs, 3)?,
        ];
        Self::new(inputs.n, inputs.s, q)
    }

    /// All corrections zero, as for a Gaussian environment.
    pub fn gaussian(n: usize, s: f64) -> Result<Self> {
        Self::new(n, s, [HermiteSeries::zero(), HermiteSeries::zero(), HermiteSeries::zero()])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    /// `(d/dt)^j q_ν` for `ν = 1..=3`.
    pub fn q_derivative(&self, nu: usize, j: usize) -> &HermiteSeries {
        assert!((1..=MAX_EXPANSION_ORDER).contains(&nu) && j <= MAX_EXPANSION_ORDER);
        &self.derivs[nu][j]
    }

    fn d(&self, nu: usize, j: usize, t: f64) -> f64 {
        if nu == 0 && j == 0 {
            std_normal_cdf(t)
        } else {
            self.derivs[nu][j].eval(t)
        }
    }

    fn weights(&self, order: usize, limits: &LimitEstimates) -> Result<[f64; 4]> {
        let v = limits.values();
        let mut c = [0.0; 4];
        let mut factor = 1.0;
        for j in 0..=order {
            if !v[j].is_finite() {
                return Err(Error::InsufficientData(format!("limit of martingale {j} is not available")));
            }
            c[j] = factor * v[j];
            factor *= -1.0 / (self.s * (j + 1) as f64);
        }
        Ok(c)
    }

    /// `rhs_κ(t)` for `κ ∈ 0..=3`.
    pub fn rhs(&self, order: usize, t: f64, limits: &LimitEstimates) -> Result<f64> {
        if order > MAX_EXPANSION_ORDER {
            return Err(Error::UnsupportedOrder(order));
        }
        let c = self.weights(order, limits)?;
        let mut total = 0.0;
        for (j, cj) in c.iter().enumerate().take(order + 1) {
            let bracket: f64 = (0..=order - j).map(|nu| self.d(nu, j, t)).sum();
            total += cj * bracket;
        }
        Ok(total)
    }

    /// `rhs_0(t), …, rhs_3(t)`.
    pub fn rhs_all(&self, t: f64, limits: &LimitEstimates) -> Result<[f64; 4]> {
        let mut out = [0.0; 4];
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.rhs(k, t, limits)?;
        }
        Ok(out)
    }

    /// The terms with `j + ν = κ` only, i.e. what order `κ` adds to order `κ − 1`.
    pub fn order_increment(&self, order: usize, t: f64, limits: &LimitEstimates) -> Result<f64> {
        if order > MAX_EXPANSION_ORDER {
            return Err(Error::UnsupportedOrder(order));
        }
        let c = self.weights(order, limits)?;
        Ok((0..=order).map(|j| c[j] * self.d(order - j, j, t)).sum())
    }
}

/// `Φ(t)W − φ(t)V_1/s − tφ(t)V_2/(2s²) − (t²−1)φ(t)V_3/(6s³)`: the third-order
/// right-hand side when every moving law is Gaussian.
pub fn gaussian_corollary_rhs(t: f64, s: f64, limits: &LimitEstimates) -> f64 {
    let phi = std_normal_pdf(t);
    std_normal_cdf(t) * limits.w
        - phi * limits.v1 / s
        - t * phi * limits.v2 / (2.0 * s * s)
        - (t * t - 1.0) * phi * limits.v3 / (6.0 * s.powi(3))
}

/// Largest gap between the symbolic derivatives `q_ν′` (`ν = 1, 2, 3`), `q_1″` and
/// central finite differences of `q_ν` over `t_grid`.
pub fn derivative_audit(terms: &ExpansionTerms, t_grid: &[f64]) -> f64 {
    const H1: f64 = 1e-4;
    const H2: f64 = 1e-3;
    let mut worst: f64 = 0.0;
    for &t in t_grid {
        for nu in 1..=3 {
            let q = terms.q_derivative(nu, 0);
            let fd = (q.eval(t + H1) - q.eval(t - H1)) / (2.0 * H1);
            worst = worst.max((terms.q_derivative(nu, 1).eval(t) - fd).abs());
        }
        let q1 = terms.q_derivative(1, 0);
        let fd2 = (q1.eval(t + H2) - 2.0 * q1.eval(t) + q1.eval(t - H2)) / (H2 * H2);
        worst = worst.max((terms.q_derivative(1, 2).eval(t) - fd2).abs());
    }
    worst
}

/// Source of the window distribution function `F_u` in the A/B decomposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CdfProvider {
    /// `Φ`; exact when the remaining steps are Gaussian.
    ExactGaussian,
    /// Edgeworth main term with moment order `order` (3..=6).
    Edgeworth { order: usize },
    Oracle(OracleMethod),
}

impl Default for CdfProvider {
    fn default() -> Self {
        CdfProvider::Edgeworth { order: 5 }
    }
}

/// The normalized distribution function of the steps in `[k, n)`.
#[derive(Debug, Clone)]
pub enum WindowCdf {
    Gaussian,
    Edgeworth(EdgeworthCdf),
    Oracle(OracleCdf),
}

impl WindowCdf {
    pub fn build(window: &CumulantWindow<'_>, provider: CdfProvider) -> Result<Self> {
        Ok(match provider {
            CdfProvider::ExactGaussian => WindowCdf::Gaussian,
            CdfProvider::Edgeworth { order } => WindowCdf::Edgeworth(EdgeworthCdf::new(window, order)?),
            CdfProvider::Oracle(method) => WindowCdf::Oracle(OracleCdf::build(window, method)?),
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            WindowCdf::Gaussian => std_normal_cdf(x),
            WindowCdf::Edgeworth(e) => e.cdf(x),
            WindowCdf::Oracle(o) => o.eval(x).value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ABDecomposition {
    pub k: usize,
    pub n: usize,
    pub t: f64,
    pub a: f64,
    pub b: f64,
    /// `Π_n^{−1} Z_n(ℓ_n + s_n t)` computed directly.
    pub lhs_check: f64,
}

impl ABDecomposition {
    pub fn identity_gap(&self) -> f64 {
        (self.a + self.b - self.lhs_check).abs()
    }

    pub fn identity_holds(&self) -> bool {
        self.identity_gap() <= AB_IDENTITY_TOLERANCE * (1.0 + self.lhs_check.abs())
    }
}

/// `A` and `B` at one `t`, building the window CDF for `[k, n)` from `provider`.
pub fn ab_decompose(traj: &Trajectory, k: usize, n: usize, t: f64, provider: CdfProvider) -> Result<ABDecomposition> {
    let window = CumulantWindow::new(traj.env(), k, n)?;
    let cdf = WindowCdf::build(&window, provider)?;
    Ok(ab_decompose_with(traj, k, n, &[t], &cdf)?[0])
}

/// `A = Π_k^{−1} Σ_u [W_{n−k}(u) − F_u]` and `B = Π_k^{−1} Σ_u F_u` over `u ∈ 𝕋_k`, where
/// `W_{n−k}(u)` counts the descendants of `u` below `ℓ_n + s_n t`, divided by `Π_n / Π_k`, and
/// `F_u` is `cdf` at `(ℓ_k + s_n t − S_u) / B_{k,n}`.
pub fn ab_decompose_with(
    traj: &Trajectory,
    k: usize,
    n: usize,
    ts: &[f64],
    cdf: &WindowCdf,
) -> Result<Vec<ABDecomposition>> {
    if k >= n {
        return Err(Error::InvalidConfig(format!("split generation {k} must precede {n}")));
    }
    let env = traj.env();
    let window = CumulantWindow::new(env, k, n)?;
    let gen_n = traj.generation(n)?;
    let gen_k = traj.generation(k)?;
    let ancestors: Vec<u32> = match &gen_n.ancestor_ids {
        Some(ids) if traj.config().track_ancestors_at == Some(k) => ids.clone(),
        _ => traj.ancestor_indices(n, k)?,
    };
    let s_n = env.s(n);
    let (ell_n, ell_k) = (env.ell(n), env.ell(k));
    let pi_k = env.pi(k);
    let growth = (env.log_pi(n) - env.log_pi(k)).exp();
    let b_window = window.b();
    let mut counts = vec![0u64; gen_k.count()];
    let mut out = Vec::with_capacity(ts.len());
    for &t in ts {
        let lhs_check = normalized_lhs(traj, n, t)?;
        if gen_k.is_empty() {
            out.push(ABDecomposition { k, n, t, a: 0.0, b: 0.0, lhs_check });
            continue;
        }
        let threshold = ell_n + s_n * t;
        counts.fill(0);
        for (&p, &anc) in gen_n.positions.iter().zip(&ancestors) {
            if p <= threshold {
                counts[anc as usize] += 1;
            }
        }
        let mut a = NeumaierSum::new();
        let mut b = NeumaierSum::new();
        for (&s_u, &c) in gen_k.positions.iter().zip(&counts) {
            let f = cdf.eval((ell_k + s_n * t - s_u) / b_window);
            a.add(c as f64 / growth - f);
            b.add(f);
        }
        out.push(ABDecomposition {
            k,
            n,
            t,
            a: a.value() / pi_k,
            b: b.value() / pi_k,
            lhs_check,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ResidualSuiteConfig {
    pub model: EnvironmentModel,
    pub n_list: Vec<usize>,
    pub t_grid: Vec<f64>,
    pub replicas: usize,
    /// Index of the first replica; replica `i` is seeded from `(seed, i)`, so
    /// consecutive blocks of indices form independent batches.
    pub first_replica: usize,
    pub seed: u64,
    /// Generation at which the limits are estimated; at least `max(n_list)`.
    pub n_max: usize,
    pub particle_cap: usize,
    pub beta: f64,
    pub provider: CdfProvider,
}

impl ResidualSuiteConfig {
    pub fn replica_range(&self) -> std::ops::Range<usize> {
        self.first_replica..self.first_replica + self.replicas
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.replicas == 0 {
            return bad("replicas must be at least 1".into());
        }
        if self.n_list.is_empty() || self.n_list.contains(&0) {
            return bad("n_list must hold positive generations".into());
        }
        if self.n_list.iter().any(|&n| n > self.n_max) {
            return bad(format!("n_list exceeds n_max = {}", self.n_max));
        }
        if self.n_max < MIN_ESTIMATION_GENERATION {
            return bad(format!("n_max must be at least {MIN_ESTIMATION_GENERATION}"));
        }
        if !(self.beta > 0.0 && self.beta < 0.5) {
            return bad(format!("beta = {} outside (0, 0.5)", self.beta));
        }
        if self.t_grid.is_empty() || self.t_grid.iter().any(|t| !t.is_finite()) {
            return bad("t_grid must hold finite points".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualRow {
    pub replica: usize,
    pub n: usize,
    pub t: f64,
    pub lhs: f64,
    pub rhs: [f64; 4],
    pub residual: [f64; 4],
    pub a: f64,
    pub b: f64,
    pub termination: Termination,
}

/// Everything computed for one replica. Capped replicas carry no rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicaOutcome {
    pub replica: usize,
    pub termination: Termination,
    pub limits: Option<LimitEstimates>,
    pub rows: Vec<ResidualRow>,
}

impl ReplicaOutcome {
    /// Survived to `n_max` without hitting the cap.
    pub fn usable(&self) -> bool {
        self.termination == Termination::Completed
    }
}

/// Draws a fresh environment and tree for replica `replica` and evaluates every `(n, t)`.
pub fn run_replica(cfg: &ResidualSuiteConfig, replica: usize) -> Result<ReplicaOutcome> {
    let rseed = replica_seed(cfg.seed, replica as u64);
    let env = Arc::new(sample_environment(&cfg.model, cfg.n_max, stream_seed(rseed, ENVIRONMENT_STREAM))?);
    let k_track = split_generation(cfg.n_list[0], cfg.beta);
    let sim = SimConfig::new(cfg.n_max, stream_seed(rseed, TREE_STREAM))
        .with_particle_cap(cfg.particle_cap)
        .with_ancestors_at(k_track);
    let traj = simulate(env, sim)?;
    let termination = traj.termination();
    if termination.is_capped() {
        return Ok(ReplicaOutcome {
            replica,
            termination,
            limits: None,
            rows: Vec::new(),
        });
    }
    let limits = estimate_limits(&compute_series(&traj))?;
    let mut rows = Vec::with_capacity(cfg.n_list.len() * cfg.t_grid.len());
    for &n in &cfg.n_list {
        let terms = ExpansionTerms::from_env(traj.env(), n)?;
        let k = split_generation(n, cfg.beta).min(n - 1);
        let window = CumulantWindow::new(traj.env(), k, n)?;
        let cdf = WindowCdf::build(&window, cfg.provider)?;
        let ab = ab_decompose_with(&traj, k, n, &cfg.t_grid, &cdf)?;
        for (&t, d) in cfg.t_grid.iter().zip(&ab) {
            if !d.identity_holds() {
                return Err(Error::IdentityViolation(format!(
                    "replica {replica}, n = {n}, t = {t}: gap {:e}",
                    d.identity_gap()
                )));
            }
            let lhs = d.lhs_check;
            let rhs = terms.rhs_all(t, &limits)?;
            rows.push(ResidualRow {
                replica,
                n,
                t,
                lhs,
                rhs,
                residual: rhs.map(|r| lhs - r),
                a: d.a,
                b: d.b,
                termination,
            });
        }
    }
    Ok(ReplicaOutcome {
        replica,
        termination,
        limits: Some(limits),
        rows,
    })
}

/// Runs every replica, in parallel when the `parallel` feature is on. Outcomes are
/// returned in replica order regardless of scheduling.
pub fn run_replicas(cfg: &ResidualSuiteConfig) -> Result<Vec<ReplicaOutcome>> {
    cfg.validate()?;
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        cfg.replica_range().into_par_iter().map(|i| run_replica(cfg, i)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        cfg.replica_range().map(|i| run_replica(cfg, i)).collect()
    }
}

/// Median `|residual_κ|` over usable replicas at one `(n, t)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualCell {
    pub n: usize,
    pub t: f64,
    pub replicas: usize,
    pub median_abs_residual: [f64; 4],
}

/// Log-log slope of the median `|residual_κ|` against `n` at one `t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeFit {
    pub t: f64,
    pub slopes: [Option<f64>; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualSummary {
    pub completed: usize,
    pub extinct: usize,
    pub capped: usize,
    pub cells: Vec<ResidualCell>,
    pub slopes: Vec<SlopeFit>,
}

impl ResidualSummary {
    pub fn cell(&self, n: usize, t: f64) -> Option<&ResidualCell> {
        self.cells.iter().find(|c| c.n == n && c.t == t)
    }

    pub fn slope(&self, t: f64) -> Option<&SlopeFit> {
        self.slopes.iter().find(|s| s.t == t)
    }
}

/// Aggregates outcomes (possibly pooled from several runs). Extinct and capped
/// replicas are counted but excluded from medians and fits.
pub fn summarize<'a>(
    n_list: &[usize],
    t_grid: &[f64],
    outcomes: impl IntoIterator<Item = &'a ReplicaOutcome>,
) -> ResidualSummary {
    let mut summary = ResidualSummary {
        completed: 0,
        extinct: 0,
        capped: 0,
        cells: Vec::new(),
        slopes: Vec::new(),
    };
    let mut values: Vec<Vec<[Vec<f64>; 4]>> = vec![vec![Default::default(); t_grid.len()]; n_list.len()];
    for o in outcomes {
        match o.termination {
            Termination::Completed => summary.completed += 1,
            Termination::ExtinctAt(_) => summary.extinct += 1,
            Termination::CapExceededAt(_) => summary.capped += 1,
        }
        if !o.usable() {
            continue;
        }
        for row in &o.rows {
            let (Some(i), Some(j)) = (
                n_list.iter().position(|&n| n == row.n),
                t_grid.iter().position(|&t| t == row.t),
            ) else {
                continue;
            };
            for (bucket, r) in values[i][j].iter_mut().zip(row.residual) {
                bucket.push(r.abs());
            }
        }
    }
    for (i, &n) in n_list.iter().enumerate() {
        for (j, &t) in t_grid.iter().enumerate() {
            let v = &values[i][j];
            summary.cells.push(ResidualCell {
                n,
                t,
                replicas: v[0].len(),
                median_abs_residual: std::array::from_fn(|k| median(&v[k]).unwrap_or(f64::NAN)),
            });
        }
    }
    let xs: Vec<f64> = n_list.iter().map(|&n| n as f64).collect();
    for (j, &t) in t_grid.iter().enumerate() {
        let slopes = std::array::from_fn(|k| {
            let ys: Vec<f64> = (0..n_list.len())
                .map(|i| summary.cells[i * t_grid.len() + j].median_abs_residual[k])
                .collect();
            loglog_slope(&xs, &ys)
        });
        summary.slopes.push(SlopeFit { t, slopes });
    }
    summary
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualSuiteReport {
    pub outcomes: Vec<ReplicaOutcome>,
    pub summary: ResidualSummary,
}

pub fn residual_suite(cfg: &ResidualSuiteConfig) -> Result<ResidualSuiteReport> {
    let outcomes = run_replicas(cfg)?;
    let summary = summarize(&cfg.n_list, &cfg.t_grid, &outcomes);
    Ok(ResidualSuiteReport { outcomes, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{EnvState, MovingLaw, OffspringLaw, WeightedState};
    use approx::assert_relative_eq;

    fn limits() -> LimitEstimates {
        LimitEstimates::exact(1.3, -0.4, 0.7, 2.1)
    }

    fn skewed_terms() -> ExpansionTerms {
        let inputs = ClosedFormInputs {
            n: 16,
            s: 4.0,
            s3: 9.0,
            gamma4_sum: 30.0,
            gamma5_sum: 110.0,
        };
        ExpansionTerms::from_inputs(&inputs).unwrap()
    }

    fn model() -> EnvironmentModel {
        EnvironmentModel::new(vec![
            WeightedState {
                probability: 0.5,
                state: EnvState {
                    offspring: OffspringLaw::ExplicitPmf { pmf: vec![0.0, 0.6, 0.4] },
                    moving: MovingLaw::Uniform { a: -1.0, b: 1.0 },
                },
            },
            WeightedState {
                probability: 0.5,
                state: EnvState {
                    offspring: OffspringLaw::ExplicitPmf { pmf: vec![0.0, 0.6, 0.4] },
                    moving: MovingLaw::ShiftedExponential { rate: 1.0, shift: -1.0 },
                },
            },
        ])
        .unwrap()
    }

    #[test]
    fn order_zero_is_phi_times_w() {
        let terms = skewed_terms();
        for t in DEFAULT_T_GRID {
            assert_eq!(terms.rhs(0, t, &limits()).unwrap(), std_normal_cdf(t) * 1.3);
        }
        assert_relative_eq!(terms.rhs(0, 40.0, &limits()).unwrap(), 1.3);
    }

    #[test]
    fn explicit_low_orders() {
        let terms = skewed_terms();
        let l = limits();
        let s = terms.s();
        let q1 = terms.q_derivative(1, 0);
        let q2 = terms.q_derivative(2, 0);
        for t in DEFAULT_T_GRID {
            let (phi, cdf) = (std_normal_pdf(t), std_normal_cdf(t));
            let r1 = (cdf + q1.eval(t)) * l.w - phi * l.v1 / s;
            assert_relative_eq!(terms.rhs(1, t, &l).unwrap(), r1, epsilon = 1e-14);
            let r2 = (cdf + q1.eval(t) + q2.eval(t)) * l.w - (phi + terms.q_derivative(1, 1).eval(t)) * l.v1 / s
                + (-t * phi) * l.v2 / (2.0 * s * s);
            assert_relative_eq!(terms.rhs(2, t, &l).unwrap(), r2, epsilon = 1e-14);
        }
    }

    #[test]
    fn increments_add_up() {
        let terms = skewed_terms();
        for t in DEFAULT_T_GRID {
            let all = terms.rhs_all(t, &limits()).unwrap();
            for k in 1..=3 {
                let inc = terms.order_increment(k, t, &limits()).unwrap();
                assert!((all[k] - all[k - 1] - inc).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gaussian_terms_match_corollary() {
        let terms = ExpansionTerms::gaussian(25, 5.0).unwrap();
        for t in DEFAULT_T_GRID {
            let r = terms.rhs(3, t, &limits()).unwrap();
            assert!((r - gaussian_corollary_rhs(t, 5.0, &limits())).abs() < 1e-12);
        }
    }

    #[test]
    fn vanishing_higher_limits_collapse_orders() {
        let terms = ExpansionTerms::gaussian(25, 5.0).unwrap();
        let l = LimitEstimates::exact(0.8, 0.3, 0.0, 0.0);
        for t in DEFAULT_T_GRID {
            let r = terms.rhs_all(t, &l).unwrap();
            assert_eq!(r[1], r[2]);
            assert_eq!(r[2], r[3]);
        }
    }

    #[test]
    fn symbolic_derivatives_match_differences() {
        assert!(derivative_audit(&skewed_terms(), &DEFAULT_T_GRID) < 1e-6);
    }

    #[test]
    fn missing_limit_is_an_error() {
        let l = LimitEstimates::exact(1.0, 0.0, f64::NAN, 0.0);
        let terms = skewed_terms();
        assert!(terms.rhs(1, 0.0, &l).is_ok());
        assert!(matches!(terms.rhs(2, 0.0, &l), Err(Error::InsufficientData(_))));
        assert!(matches!(terms.rhs(4, 0.0, &l), Err(Error::UnsupportedOrder(4))));
    }

    #[test]
    fn split_generation_values() {
        assert_eq!(split_generation(24, 0.12), 1);
        assert_eq!(split_generation(1000, 0.12), 2);
    }

    #[test]
    fn ab_identity_and_root_split() {
        let env = Arc::new(sample_environment(&model(), 12, 5).unwrap());
        let traj = simulate(env, SimConfig::new(12, 6).with_ancestors_at(2)).unwrap();
        for provider in [
            CdfProvider::ExactGaussian,
            CdfProvider::Edgeworth { order: 5 },
            CdfProvider::Oracle(OracleMethod::default_grid()),
        ] {
            for k in [0, 2, 5] {
                let window = CumulantWindow::new(traj.env(), k, 12).unwrap();
                let cdf = WindowCdf::build(&window, provider).unwrap();
                for d in ab_decompose_with(&traj, k, 12, &DEFAULT_T_GRID, &cdf).unwrap() {
                    assert!(d.identity_holds(), "{provider:?} k={k} t={}: {}", d.t, d.identity_gap());
                }
            }
        }
        let d = ab_decompose(&traj, 0, 12, 0.5, CdfProvider::ExactGaussian).unwrap();
        assert_relative_eq!(d.b, std_normal_cdf(0.5), epsilon = 1e-15);
        assert_relative_eq!(d.a, d.lhs_check - d.b, epsilon = 1e-15);
        assert!(ab_decompose(&traj, 12, 12, 0.0, CdfProvider::ExactGaussian).is_err());
    }

    #[test]
    fn extinct_replicas_have_zero_residuals() {
        let dying = EnvironmentModel::single(EnvState {
            offspring: OffspringLaw::ExplicitPmf { pmf: vec![0.9, 0.0, 0.1] },
            moving: MovingLaw::Gaussian { mu: 0.0, sigma: 1.0 },
        })
        .unwrap();
        let cfg = ResidualSuiteConfig {
            model: dying,
            n_list: vec![8, 10],
            t_grid: vec![0.0, 0.5],
            replicas: 40,
            first_replica: 0,
            seed: 3,
            n_max: 10,
            particle_cap: 10_000,
            beta: DEFAULT_BETA,
            provider: CdfProvider::ExactGaussian,
        };
        let report = residual_suite(&cfg).unwrap();
        assert!(report.summary.extinct > 0);
        for o in report.outcomes.iter().filter(|o| o.termination.is_extinct()) {
            assert!(o.rows.iter().all(|r| r.lhs == 0.0 && r.rhs == [0.0; 4] && r.residual == [0.0; 4]));
        }
        let usable: usize = report.outcomes.iter().filter(|o| o.usable()).count();
        assert_eq!(report.summary.cell(8, 0.0).unwrap().replicas, usable);
    }

    #[test]
    fn suite_is_reproducible_and_ordered() {
        let cfg = ResidualSuiteConfig {
            model: model(),
            n_list: vec![8, 12],
            t_grid: DEFAULT_T_GRID.to_vec(),
            replicas: 6,
            first_replica: 0,
            seed: 11,
            n_max: 12,
            particle_cap: 100_000,
            beta: DEFAULT_BETA,
            provider: CdfProvider::default(),
        };
        let a = residual_suite(&cfg).unwrap();
        let b = residual_suite(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.outcomes.iter().enumerate().all(|(i, o)| o.replica == i));
        assert_eq!(run_replica(&cfg, 4).unwrap(), a.outcomes[4]);
        let shifted = ResidualSuiteConfig {
            first_replica: 3,
            replicas: 3,
            ..cfg.clone()
        };
        assert_eq!(residual_suite(&shifted).unwrap().outcomes[..], a.outcomes[3..]);
    }
}
