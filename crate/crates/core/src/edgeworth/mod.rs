//! Edgeworth expansions for sums of independent, non-identically distributed steps.
//!
//! A [`CumulantWindow`] selects the steps `j ∈ [start, end)` of a realized environment.
//! The normalized centered sum `Σ_j (L_j − l_j) / B` has distribution function
//! approximated by `Φ(x) + Σ_ν Q_ν(x) L^{−ν/2}`, where `L` is the window length and
//! `Q_ν` is built from the coefficients `λ_ν = L^{(ν−2)/2} B^{−ν} Σ_j γ_{νj}`.

mod oracle;

pub use oracle::{oracle_cdf, GridCdf, MonteCarloCdf, OracleCdf, OracleEstimate, OracleMethod};

use crate::environment::{CompiledState, RealizedEnvironment};
use crate::special::{std_normal_cdf, HermiteSeries};
use crate::summation::NeumaierSum;
use crate::{Error, Result};

/// Highest cumulant order tracked per step.
pub const MAX_CUMULANT_ORDER: usize = 6;

/// Steps `[start, end)` of an environment together with their cumulant sums.
#[derive(Debug, Clone, Copy)]
pub struct CumulantWindow<'a> {
    env: &'a RealizedEnvironment,
    start: usize,
    end: usize,
    b2: f64,
    /// `Σ_j γ_{νj}` for `ν = 3..=6`.
    gamma: [f64; 4],
}

impl<'a> CumulantWindow<'a> {
    pub fn new(env: &'a RealizedEnvironment, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > env.len() {
            return Err(Error::DegenerateWindow { start, end });
        }
        let mut b2 = NeumaierSum::new();
        let mut gamma = [NeumaierSum::new(); 4];
        for j in start..end {
            let c = &env.state(j).moments.cumulants;
            b2.add(c.get(2));
            for (nu, g) in (3..=6).zip(gamma.iter_mut()) {
                g.add(c.get(nu));
            }
        }
        let b2 = b2.value();
        if !(b2 > 0.0) {
            return Err(Error::DegenerateWindow { start, end });
        }
        Ok(Self {
            env,
            start,
            end,
            b2,
            gamma: gamma.map(|g| g.value()),
        })
    }

    /// The window `[0, n)`.
    pub fn full(env: &'a RealizedEnvironment, n: usize) -> Result<Self> {
        Self::new(env, 0, n)
    }

    pub fn env(&self) -> &'a RealizedEnvironment {
        self.env
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn b2(&self) -> f64 {
        self.b2
    }

    pub fn b(&self) -> f64 {
        self.b2.sqrt()
    }

    /// `Σ_{j ∈ window} γ_{νj}` for `ν = 2..=6`.
    pub fn cumulant_sum(&self, nu: usize) -> f64 {
        match nu {
            2 => self.b2,
            3..=6 => self.gamma[nu - 3],
            _ => panic!("cumulant order {nu} not tracked"),
        }
    }

    /// Sum of the step means over the window.
    pub fn mean_sum(&self) -> f64 {
        self.steps().map(|s| s.moments.mean).sum()
    }

    pub fn steps(&self) -> impl Iterator<Item = &'a CompiledState> + 'a {
        let env = self.env;
        (self.start..self.end).map(move |j| env.state(j))
    }
}

/// `λ_3, …, λ_{ν_max}` of a window.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeworthCoefficients {
    lambdas: Vec<f64>,
}

impl EdgeworthCoefficients {
    /// Builds coefficients from explicit `λ_3, λ_4, …` values.
    pub fn from_lambdas(lambdas: Vec<f64>) -> Self {
        Self { lambdas }
    }

    /// `λ_ν`, if available.
    pub fn lambda(&self, nu: usize) -> Option<f64> {
        nu.checked_sub(3).and_then(|i| self.lambdas.get(i).copied())
    }

    /// Largest `ν` with a stored `λ_ν` (2 when none are stored).
    pub fn max_order(&self) -> usize {
        self.lambdas.len() + 2
    }

    /// The expansion order `κ` these coefficients support.
    pub fn order(&self) -> usize {
        self.max_order() - 2
    }
}

pub fn lambda_coeffs(window: &CumulantWindow<'_>, nu_max: usize) -> Result<EdgeworthCoefficients> {
    if !(3..=MAX_CUMULANT_ORDER).contains(&nu_max) {
        return Err(Error::UnsupportedOrder(nu_max));
    }
    let len = window.len() as f64;
    let b = window.b();
    let lambdas = (3..=nu_max)
        .map(|nu| len.powf((nu as f64 - 2.0) / 2.0) * b.powi(-(nu as i32)) * window.cumulant_sum(nu))
        .collect();
    Ok(EdgeworthCoefficients { lambdas })
}

/// All non-negative integer solutions `(k_1, …, k_ν)` of `k_1 + 2k_2 + ⋯ + νk_ν = ν`.
pub fn partitions(nu: usize) -> Vec<Vec<usize>> {
    fn rec(m: usize, remaining: usize, nu: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if m > nu {
            if remaining == 0 {
                out.push(cur.clone());
            }
            return;
        }
        for k in 0..=remaining / m {
            cur.push(k);
            rec(m + 1, remaining - k * m, nu, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if nu == 0 {
        return out;
    }
    rec(1, nu, nu, &mut Vec::with_capacity(nu), &mut out);
    out
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// `Q_ν` as a Hermite series, by enumerating partitions:
/// `Q_ν(x) = −φ(x) Σ' H_{ν+2s−1}(x) Π_m (1/k_m!) (λ_{m+2}/(m+2)!)^{k_m}`.
pub fn q_series_generic(nu: usize, coeffs: &EdgeworthCoefficients) -> Result<HermiteSeries> {
    if nu == 0 {
        return Err(Error::UnsupportedOrder(nu));
    }
    if coeffs.max_order() < nu + 2 {
        return Err(Error::InsufficientCoefficients {
            order: nu,
            needed: nu + 2,
            available: coeffs.max_order(),
        });
    }
    let mut series = HermiteSeries::zero();
    for ks in partitions(nu) {
        let s: usize = ks.iter().sum();
        let mut product = 1.0;
        for (i, &k) in ks.iter().enumerate() {
            if k == 0 {
                continue;
            }
            let m = i + 1;
            let lam = coeffs.lambda(m + 2).expect("checked above");
            product *= (lam / factorial(m + 2)).powi(k as i32) / factorial(k);
        }
        series.add_term(nu + 2 * s - 1, -product);
    }
    Ok(series)
}

pub fn q_poly_generic(nu: usize, coeffs: &EdgeworthCoefficients, x: f64) -> Result<f64> {
    Ok(q_series_generic(nu, coeffs)?.eval(x))
}

/// Environment aggregates entering the closed forms of `Q_{ν,n}(t) / n^{ν/2}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedFormInputs {
    pub n: usize,
    /// `s_n`.
    pub s: f64,
    /// `s_n^{(3)}`.
    pub s3: f64,
    /// `Σ_{j<n} (σ_j^{(4)} − 3(σ_j^{(2)})²)`.
    pub gamma4_sum: f64,
    /// `Σ_{j<n} (σ_j^{(5)} − 10σ_j^{(3)}σ_j^{(2)})`.
    pub gamma5_sum: f64,
}

impl ClosedFormInputs {
    pub fn from_env(env: &RealizedEnvironment, n: usize) -> Result<Self> {
        if n == 0 || n > env.len() {
            return Err(Error::DegenerateWindow { start: 0, end: n });
        }
        let inputs = Self {
            n,
            s: env.s(n),
            s3: env.central_sum(3, n),
            gamma4_sum: env.cumulant_sum(4, n),
            gamma5_sum: env.cumulant_sum(5, n),
        };
        if !(inputs.s > 0.0) {
            return Err(Error::DegenerateWindow { start: 0, end: n });
        }
        Ok(inputs)
    }
}

/// `Q_{ν,n}(t) / n^{ν/2}` for `ν = 1, 2, 3` in closed form.
pub fn q_closed_series(inputs: &ClosedFormInputs, nu: usize) -> Result<HermiteSeries> {
    let ClosedFormInputs {
        s,
        s3,
        gamma4_sum: g4,
        gamma5_sum: g5,
        ..
    } = *inputs;
    if !(s > 0.0) {
        return Err(Error::DegenerateWindow { start: 0, end: inputs.n });
    }
    let mut q = HermiteSeries::zero();
    match nu {
        1 => q.add_term(2, -s3 / (6.0 * s.powi(3))),
        2 => {
            q.add_term(5, -s3 * s3 / (72.0 * s.powi(6)));
            q.add_term(3, -g4 / (24.0 * s.powi(4)));
        }
        3 => {
            q.add_term(8, -s3.powi(3) / (1296.0 * s.powi(9)));
            q.add_term(4, -g5 / (120.0 * s.powi(5)));
            q.add_term(6, -s3 * g4 / (144.0 * s.powi(7)));
        }
        _ => return Err(Error::UnsupportedOrder(nu)),
    }
    Ok(q)
}

pub fn q1_closed(inputs: &ClosedFormInputs, t: f64) -> Result<f64> {
    Ok(q_closed_series(inputs, 1)?.eval(t))
}

pub fn q2_closed(inputs: &ClosedFormInputs, t: f64) -> Result<f64> {
    Ok(q_closed_series(inputs, 2)?.eval(t))
}

pub fn q3_closed(inputs: &ClosedFormInputs, t: f64) -> Result<f64> {
    Ok(q_closed_series(inputs, 3)?.eval(t))
}

/// The main term `Φ(x) + Σ_{ν=1}^{k−2} Q_ν(x) L^{−ν/2}` for one window, cached for repeated evaluation.
#[derive(Debug, Clone)]
pub struct EdgeworthCdf {
    order: usize,
    correction: HermiteSeries,
}

impl EdgeworthCdf {
    /// `order` is the moment order `k` (3..=6); `k = 6` uses the experimental `Q_4`.
    pub fn new(window: &CumulantWindow<'_>, order: usize) -> Result<Self> {
        if !(3..=MAX_CUMULANT_ORDER).contains(&order) {
            return Err(Error::UnsupportedOrder(order));
        }
        let coeffs = lambda_coeffs(window, order.max(3))?;
        let len = window.len() as f64;
        let mut correction = HermiteSeries::zero();
        for nu in 1..=order - 2 {
            let q = q_series_generic(nu, &coeffs)?;
            correction = correction.plus(&q.scaled(len.powf(-(nu as f64) / 2.0)));
        }
        Ok(Self { order, correction })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Raw (unclamped) value.
    pub fn cdf(&self, x: f64) -> f64 {
        std_normal_cdf(x) + self.correction.eval(x)
    }
}

pub fn edgeworth_cdf(window: &CumulantWindow<'_>, order: usize, x: f64) -> Result<f64> {
    Ok(EdgeworthCdf::new(window, order)?.cdf(x))
}
