//! Offspring and moving laws, the i.i.d. environment mixture, and realized environments.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::{rng_from_seed, Rng};
use crate::special::std_normal_cdf;
use crate::{Error, Result};

/// Largest offspring count representable by a law.
pub const MAX_OFFSPRING: usize = 1024;

/// Tolerance on the total mass of probability vectors.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Central moments `σ^{(ν)}` for `ν = 2..=6`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CentralMoments(pub [f64; 5]);

/// Cumulants `γ_ν` for `ν = 2..=6`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cumulants(pub [f64; 5]);

impl CentralMoments {
    pub fn get(&self, nu: usize) -> f64 {
        self.0[nu - 2]
    }
}

impl Cumulants {
    pub fn get(&self, nu: usize) -> f64 {
        self.0[nu - 2]
    }
}

/// Cumulants of a centered variable from its central moments.
pub fn cumulants_from_central_moments(m: &CentralMoments) -> Result<Cumulants> {
    let [s2, s3, s4, s5, s6] = m.0;
    if !(s2 > 0.0) {
        return Err(Error::DegenerateLaw(s2));
    }
    Ok(Cumulants([
        s2,
        s3,
        s4 - 3.0 * s2 * s2,
        s5 - 10.0 * s3 * s2,
        s6 - 15.0 * s4 * s2 - 10.0 * s3 * s3 + 30.0 * s2 * s2 * s2,
    ]))
}

/// Inverse of [`cumulants_from_central_moments`].
pub fn central_moments_from_cumulants(c: &Cumulants) -> CentralMoments {
    let [g2, g3, g4, g5, g6] = c.0;
    CentralMoments([
        g2,
        g3,
        g4 + 3.0 * g2 * g2,
        g5 + 10.0 * g3 * g2,
        g6 + 15.0 * g4 * g2 + 10.0 * g3 * g3 + 15.0 * g2 * g2 * g2,
    ])
}

/// Displacement law `G(ξ)` of the children of one generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum MovingLaw {
    Gaussian { mu: f64, sigma: f64 },
    Uniform { a: f64, b: f64 },
    ShiftedExponential { rate: f64, shift: f64 },
    TwoPoint { x1: f64, p: f64, x2: f64 },
}

impl MovingLaw {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            MovingLaw::Gaussian { mu, sigma } => mu.is_finite() && sigma.is_finite() && sigma > 0.0,
            MovingLaw::Uniform { a, b } => a.is_finite() && b.is_finite() && a < b,
            MovingLaw::ShiftedExponential { rate, shift } => {
                rate.is_finite() && shift.is_finite() && rate > 0.0
            }
            MovingLaw::TwoPoint { x1, p, x2 } => {
                x1.is_finite() && x2.is_finite() && p > 0.0 && p < 1.0 && x1 != x2
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidModel(format!("moving law {self:?} has invalid parameters")))
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            MovingLaw::Gaussian { mu, .. } => mu,
            MovingLaw::Uniform { a, b } => 0.5 * (a + b),
            MovingLaw::ShiftedExponential { rate, shift } => shift + 1.0 / rate,
            MovingLaw::TwoPoint { x1, p, x2 } => p * x1 + (1.0 - p) * x2,
        }
    }

    /// Closed-form central moments `ν = 2..=6`.
    pub fn central_moments(&self) -> CentralMoments {
        match *self {
            MovingLaw::Gaussian { sigma, .. } => {
                let v = sigma * sigma;
                CentralMoments([v, 0.0, 3.0 * v * v, 0.0, 15.0 * v * v * v])
            }
            MovingLaw::Uniform { a, b } => {
                // E X^ν = h^ν / (ν + 1) for even ν on (-h, h)
                let h = 0.5 * (b - a);
                let h2 = h * h;
                CentralMoments([h2 / 3.0, 0.0, h2 * h2 / 5.0, 0.0, h2 * h2 * h2 / 7.0])
            }
            MovingLaw::ShiftedExponential { rate, .. } => {
                // central moments of Exp(1) are the subfactorials 1, 2, 9, 44, 265
                let s = 1.0 / rate;
                CentralMoments([
                    s.powi(2),
                    2.0 * s.powi(3),
                    9.0 * s.powi(4),
                    44.0 * s.powi(5),
                    265.0 * s.powi(6),
                ])
            }
            MovingLaw::TwoPoint { x1, p, x2 } => {
                let l = self.mean();
                let (d1, d2) = (x1 - l, x2 - l);
                let mom = |nu: i32| p * d1.powi(nu) + (1.0 - p) * d2.powi(nu);
                CentralMoments([mom(2), mom(3), mom(4), mom(5), mom(6)])
            }
        }
    }

    /// Lattice laws violate Cramér's condition.
    pub fn is_lattice(&self) -> bool {
        matches!(self, MovingLaw::TwoPoint { .. })
    }

    /// `P(L ≤ x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            MovingLaw::Gaussian { mu, sigma } => std_normal_cdf((x - mu) / sigma),
            MovingLaw::Uniform { a, b } => ((x - a) / (b - a)).clamp(0.0, 1.0),
            MovingLaw::ShiftedExponential { rate, shift } => {
                if x <= shift {
                    0.0
                } else {
                    -(-rate * (x - shift)).exp_m1()
                }
            }
            MovingLaw::TwoPoint { x1, p, x2 } => {
                let (lo, p_lo, hi) = if x1 < x2 { (x1, p, x2) } else { (x2, 1.0 - p, x1) };
                if x < lo {
                    0.0
                } else if x < hi {
                    p_lo
                } else {
                    1.0
                }
            }
        }
    }

    /// `E[(x − L)^+] = ∫_{−∞}^x P(L ≤ y) dy`, the integrated distribution function.
    pub fn integrated_cdf(&self, x: f64) -> f64 {
        match *self {
            MovingLaw::Gaussian { mu, sigma } => {
                let z = (x - mu) / sigma;
                sigma * (z * std_normal_cdf(z) + crate::special::std_normal_pdf(z))
            }
            MovingLaw::Uniform { a, b } => {
                if x <= a {
                    0.0
                } else if x < b {
                    (x - a) * (x - a) / (2.0 * (b - a))
                } else {
                    x - 0.5 * (a + b)
                }
            }
            MovingLaw::ShiftedExponential { rate, shift } => {
                if x <= shift {
                    0.0
                } else {
                    let d = x - shift;
                    d + (-rate * d).exp_m1() / rate
                }
            }
            MovingLaw::TwoPoint { x1, p, x2 } => p * (x - x1).max(0.0) + (1.0 - p) * (x - x2).max(0.0),
        }
    }

    /// An interval outside of which the law has negligible (< 1e-30) or no mass.
    pub fn effective_support(&self) -> (f64, f64) {
        match *self {
            MovingLaw::Gaussian { mu, sigma } => (mu - 12.0 * sigma, mu + 12.0 * sigma),
            MovingLaw::Uniform { a, b } => (a, b),
            MovingLaw::ShiftedExponential { rate, shift } => (shift, shift + 70.0 / rate),
            MovingLaw::TwoPoint { x1, x2, .. } => (x1.min(x2), x1.max(x2)),
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        match *self {
            MovingLaw::Gaussian { mu, sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                mu + sigma * z
            }
            MovingLaw::Uniform { a, b } => a + (b - a) * rng.random::<f64>(),
            MovingLaw::ShiftedExponential { rate, shift } => {
                let u: f64 = rng.random();
                shift - (-u).ln_1p() / rate
            }
            MovingLaw::TwoPoint { x1, p, x2 } => {
                if rng.random::<f64>() < p {
                    x1
                } else {
                    x2
                }
            }
        }
    }
}

/// Offspring law `p(ξ)` on `{0, 1, …, cap}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum OffspringLaw {
    ExplicitPmf { pmf: Vec<f64> },
    /// Poisson(rate) restricted to `{0..=cap}` and renormalized.
    PoissonTruncated { rate: f64, cap: usize },
    /// `P(k) ∝ p (1-p)^k` on `{0..=cap}`, renormalized.
    Geometric { p: f64, cap: usize },
}

impl OffspringLaw {
    /// Normalized probabilities `p_0..p_K`.
    pub fn pmf(&self) -> Result<Vec<f64>> {
        let invalid = |msg: String| Err(Error::InvalidModel(msg));
        match self {
            OffspringLaw::ExplicitPmf { pmf } => {
                if pmf.is_empty() || pmf.len() > MAX_OFFSPRING + 1 {
                    return invalid(format!("pmf length {} outside 1..={}", pmf.len(), MAX_OFFSPRING + 1));
                }
                if pmf.iter().any(|p| !p.is_finite() || *p < 0.0) {
                    return invalid("pmf entries must be finite and non-negative".into());
                }
                let total: f64 = pmf.iter().sum();
                if (total - 1.0).abs() > MASS_TOLERANCE * pmf.len() as f64 {
                    return invalid(format!("pmf sums to {total}, expected 1"));
                }
                Ok(pmf.clone())
            }
            OffspringLaw::PoissonTruncated { rate, cap } => {
                if !(rate.is_finite() && *rate > 0.0) || *cap > MAX_OFFSPRING {
                    return invalid(format!("poisson_truncated(rate={rate}, cap={cap}) is invalid"));
                }
                // weights in log space: k ln r - ln k!
                let mut logw = Vec::with_capacity(cap + 1);
                let mut lf = 0.0;
                for k in 0..=*cap {
                    if k > 0 {
                        lf += (k as f64).ln();
                    }
                    logw.push(k as f64 * rate.ln() - lf);
                }
                Ok(normalize_log_weights(&logw))
            }
            OffspringLaw::Geometric { p, cap } => {
                if !(*p > 0.0 && *p <= 1.0) || *cap > MAX_OFFSPRING {
                    return invalid(format!("geometric(p={p}, cap={cap}) is invalid"));
                }
                let w: Vec<f64> = (0..=*cap).map(|k| p * (1.0 - p).powi(k as i32)).collect();
                let total: f64 = w.iter().sum();
                Ok(w.into_iter().map(|x| x / total).collect())
            }
        }
    }
}

fn normalize_log_weights(logw: &[f64]) -> Vec<f64> {
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// One environment letter: an offspring law paired with a moving law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvState {
    pub offspring: OffspringLaw,
    pub moving: MovingLaw,
}

/// Exact per-state quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StateMoments {
    /// Mean offspring `m`.
    pub offspring_mean: f64,
    /// Moving-law mean `l`.
    pub mean: f64,
    pub central: CentralMoments,
    pub cumulants: Cumulants,
}

pub fn state_moments(state: &EnvState) -> Result<StateMoments> {
    state.moving.validate()?;
    let pmf = state.offspring.pmf()?;
    let central = state.moving.central_moments();
    Ok(StateMoments {
        offspring_mean: pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum(),
        mean: state.moving.mean(),
        central,
        cumulants: cumulants_from_central_moments(&central)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedState {
    pub probability: f64,
    #[serde(flatten)]
    pub state: EnvState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSpec {
    states: Vec<WeightedState>,
}

/// Precomputed sampling tables and moments of one state.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledState {
    pub law: EnvState,
    pub moments: StateMoments,
    offspring_cdf: Vec<f64>,
}

impl CompiledState {
    pub fn sample_offspring(&self, rng: &mut Rng) -> usize {
        let u: f64 = rng.random();
        let k = self.offspring_cdf.partition_point(|&c| c <= u);
        k.min(self.offspring_cdf.len() - 1)
    }

    pub fn max_offspring(&self) -> usize {
        self.offspring_cdf.len() - 1
    }
}

/// The law of the i.i.d. environment: a finite mixture of states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelSpec", into = "ModelSpec")]
pub struct EnvironmentModel {
    states: Vec<WeightedState>,
    compiled: Vec<CompiledState>,
    cumulative: Vec<f64>,
}

impl TryFrom<ModelSpec> for EnvironmentModel {
    type Error = Error;

    fn try_from(spec: ModelSpec) -> Result<Self> {
        EnvironmentModel::new(spec.states)
    }
}

impl From<EnvironmentModel> for ModelSpec {
    fn from(model: EnvironmentModel) -> Self {
        ModelSpec { states: model.states }
    }
}

impl EnvironmentModel {
    /// Builds a model, checking its structure (not its criticality; see [`validate_model`]).
    pub fn new(states: Vec<WeightedState>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::InvalidModel("model has no states".into()));
        }
        let mut total = 0.0;
        for (i, ws) in states.iter().enumerate() {
            if !(ws.probability > 0.0 && ws.probability <= 1.0) {
                return Err(Error::InvalidModel(format!(
                    "state {i}: probability {} outside (0, 1]",
                    ws.probability
                )));
            }
            total += ws.probability;
        }
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidModel(format!("state probabilities sum to {total}, expected 1")));
        }
        let mut compiled = Vec::with_capacity(states.len());
        for (i, ws) in states.iter().enumerate() {
            let moments = state_moments(&ws.state).map_err(|e| match e {
                Error::InvalidModel(m) => Error::InvalidModel(format!("state {i}: {m}")),
                Error::DegenerateLaw(v) => Error::InvalidModel(format!("state {i}: degenerate moving law (variance {v})")),
                other => other,
            })?;
            let pmf = ws.state.offspring.pmf()?;
            let mut acc = 0.0;
            let mut offspring_cdf: Vec<f64> = pmf
                .iter()
                .map(|p| {
                    acc += p;
                    acc
                })
                .collect();
            *offspring_cdf.last_mut().unwrap() = f64::INFINITY;
            compiled.push(CompiledState {
                law: ws.state.clone(),
                moments,
                offspring_cdf,
            });
        }
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = states
            .iter()
            .map(|s| {
                acc += s.probability;
                acc
            })
            .collect();
        *cumulative.last_mut().unwrap() = f64::INFINITY;
        Ok(Self {
            states,
            compiled,
            cumulative,
        })
    }

    /// A one-state (constant) environment.
    pub fn single(state: EnvState) -> Result<Self> {
        Self::new(vec![WeightedState {
            probability: 1.0,
            state,
        }])
    }

    pub fn states(&self) -> &[WeightedState] {
        &self.states
    }

    pub fn compiled(&self, index: usize) -> &CompiledState {
        &self.compiled[index]
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// `E ln m_0 = Σ p_i ln m_i` (−∞ if some state has mean zero).
    pub fn expected_log_mean(&self) -> f64 {
        self.states
            .iter()
            .zip(&self.compiled)
            .map(|(s, c)| s.probability * c.moments.offspring_mean.ln())
            .sum()
    }

    /// Annealed mean `E σ_0^{(ν)}`.
    pub fn annealed_central_moment(&self, nu: usize) -> f64 {
        self.states
            .iter()
            .zip(&self.compiled)
            .map(|(s, c)| s.probability * c.moments.central.get(nu))
            .sum()
    }

    /// Standard deviation of `σ_0^{(ν)}` across the mixture.
    pub fn central_moment_sd(&self, nu: usize) -> f64 {
        let mean = self.annealed_central_moment(nu);
        let var: f64 = self
            .states
            .iter()
            .zip(&self.compiled)
            .map(|(s, c)| s.probability * (c.moments.central.get(nu) - mean).powi(2))
            .sum();
        var.sqrt()
    }

    pub fn has_lattice_state(&self) -> bool {
        self.states.iter().any(|s| s.state.moving.is_lattice())
    }

    pub fn sample_state(&self, rng: &mut Rng) -> usize {
        let u: f64 = rng.random();
        self.cumulative.partition_point(|&c| c <= u).min(self.states.len() - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FindingLevel {
    Pass,
    Warn,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finding {
    pub level: FindingLevel,
    pub code: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub expected_log_mean: f64,
    /// `E σ_0^{(ν)}` for `ν = 2..=6`.
    pub annealed_central_moments: [f64; 5],
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.findings.iter().all(|f| f.level != FindingLevel::Fail)
    }

    pub fn has_warnings(&self) -> bool {
        self.findings.iter().any(|f| f.level == FindingLevel::Warn)
    }
}

/// Checks supercriticality and Cramér's condition, and reports annealed moments.
pub fn validate_model(model: &EnvironmentModel) -> ValidationReport {
    let elm = model.expected_log_mean();
    let mut findings = Vec::new();
    if elm > 0.0 {
        findings.push(Finding {
            level: FindingLevel::Pass,
            code: "supercritical",
            message: format!("E ln m_0 = {elm:.17e} > 0"),
        });
    } else {
        findings.push(Finding {
            level: FindingLevel::Fail,
            code: "not_supercritical",
            message: format!("E ln m_0 = {elm:.17e} <= 0: the process is critical or subcritical"),
        });
    }
    for (i, s) in model.states().iter().enumerate() {
        if s.state.moving.is_lattice() {
            findings.push(Finding {
                level: FindingLevel::Warn,
                code: "lattice_moving_law",
                message: format!("state {i}: lattice moving law violates Cramér's condition"),
            });
        }
    }
    if model.states().iter().all(|s| s.state.moving.is_lattice()) {
        findings.push(Finding {
            level: FindingLevel::Warn,
            code: "cramer_fails_almost_surely",
            message: "Cramér's condition fails for every state".into(),
        });
    }
    findings.push(Finding {
        level: FindingLevel::Pass,
        code: "finite_support_offspring",
        message: "offspring laws have finite support; the moment condition holds for every exponent".into(),
    });
    let annealed = [2, 3, 4, 5, 6].map(|nu| model.annealed_central_moment(nu));
    ValidationReport {
        expected_log_mean: elm,
        annealed_central_moments: annealed,
        findings,
    }
}

/// A realized environment `ξ_0..ξ_{n-1}` with prefix aggregates.
///
/// Index `k` of every prefix array holds the value after `k` generations, so
/// `pi(0) = 1`, `ell(0) = 0` and `central_sum(ν, 0) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct RealizedEnvironment {
    model: EnvironmentModel,
    seq: Vec<usize>,
    log_pi: Vec<f64>,
    ell: Vec<f64>,
    central: [Vec<f64>; 5],
    cumulant: [Vec<f64>; 5],
}

impl RealizedEnvironment {
    pub fn from_sequence(model: EnvironmentModel, seq: Vec<usize>) -> Result<Self> {
        if seq.is_empty() {
            return Err(Error::EmptyEnvironment);
        }
        if let Some(bad) = seq.iter().find(|&&i| i >= model.len()) {
            return Err(Error::InvalidModel(format!("state index {bad} out of range")));
        }
        let n = seq.len();
        let mut log_pi = Vec::with_capacity(n + 1);
        let mut ell = Vec::with_capacity(n + 1);
        let mut central: [Vec<f64>; 5] = Default::default();
        let mut cumulant: [Vec<f64>; 5] = Default::default();
        log_pi.push(0.0);
        ell.push(0.0);
        for v in central.iter_mut().chain(cumulant.iter_mut()) {
            v.reserve(n + 1);
            v.push(0.0);
        }
        for (k, &state) in seq.iter().enumerate() {
            let mom = &model.compiled(state).moments;
            log_pi.push(log_pi[k] + mom.offspring_mean.ln());
            ell.push(ell[k] + mom.mean);
            for i in 0..5 {
                central[i].push(central[i][k] + mom.central.0[i]);
                cumulant[i].push(cumulant[i][k] + mom.cumulants.0[i]);
            }
        }
        Ok(Self {
            model,
            seq,
            log_pi,
            ell,
            central,
            cumulant,
        })
    }

    /// Homogeneous environment of `n` copies of state 0.
    pub fn constant(model: EnvironmentModel, n: usize) -> Result<Self> {
        Self::from_sequence(model, vec![0; n])
    }

    pub fn model(&self) -> &EnvironmentModel {
        &self.model
    }

    pub fn len(&self) -> usize {
        self.seq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seq.is_empty()
    }

    pub fn sequence(&self) -> &[usize] {
        &self.seq
    }

    /// The compiled state of generation `j` (governing `ξ_j`).
    pub fn state(&self, j: usize) -> &CompiledState {
        self.model.compiled(self.seq[j])
    }

    pub fn log_pi(&self, k: usize) -> f64 {
        self.log_pi[k]
    }

    /// `Π_k = m_0 ⋯ m_{k-1}`.
    pub fn pi(&self, k: usize) -> f64 {
        self.log_pi[k].exp()
    }

    /// `ℓ_k = l_0 + ⋯ + l_{k-1}`.
    pub fn ell(&self, k: usize) -> f64 {
        self.ell[k]
    }

    /// `s_k^{(ν)}`, `ν = 2..=6`.
    pub fn central_sum(&self, nu: usize, k: usize) -> f64 {
        self.central[nu - 2][k]
    }

    /// `Σ_{j<k} γ_{ν j}`, `ν = 2..=6`.
    pub fn cumulant_sum(&self, nu: usize, k: usize) -> f64 {
        self.cumulant[nu - 2][k]
    }

    /// `s_k = (s_k^{(2)})^{1/2}`.
    pub fn s(&self, k: usize) -> f64 {
        self.central[0][k].sqrt()
    }
}

/// Samples `ξ_0..ξ_{n-1}` i.i.d. from the mixture.
pub fn sample_environment(model: &EnvironmentModel, n: usize, seed: u64) -> Result<RealizedEnvironment> {
    if n == 0 {
        return Err(Error::EmptyEnvironment);
    }
    let mut rng = rng_from_seed(seed);
    let seq = (0..n).map(|_| model.sample_state(&mut rng)).collect();
    RealizedEnvironment::from_sequence(model.clone(), seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pmf(p: &[f64]) -> OffspringLaw {
        OffspringLaw::ExplicitPmf { pmf: p.to_vec() }
    }

    fn gauss() -> MovingLaw {
        MovingLaw::Gaussian { mu: 0.0, sigma: 1.0 }
    }

    fn state(offspring: OffspringLaw, moving: MovingLaw) -> EnvState {
        EnvState { offspring, moving }
    }

    #[test]
    fn binary_branching_passes() {
        let model = EnvironmentModel::single(state(pmf(&[0.0, 0.0, 1.0]), gauss())).unwrap();
        let report = validate_model(&model);
        assert!(report.passed());
        assert_relative_eq!(report.expected_log_mean, 2f64.ln());
    }

    #[test]
    fn critical_model_fails() {
        let model = EnvironmentModel::single(state(pmf(&[0.0, 1.0]), gauss())).unwrap();
        let report = validate_model(&model);
        assert!(!report.passed());
        assert_eq!(report.expected_log_mean, 0.0);
    }

    #[test]
    fn mixture_log_mean() {
        let model = EnvironmentModel::new(vec![
            WeightedState { probability: 0.5, state: state(pmf(&[0.0, 0.0, 0.0, 1.0]), gauss()) },
            WeightedState { probability: 0.5, state: state(pmf(&[0.5, 0.5]), gauss()) },
        ])
        .unwrap();
        let report = validate_model(&model);
        assert!(report.passed());
        assert_relative_eq!(report.expected_log_mean, 0.5 * 1.5f64.ln(), max_relative = 1e-14);
    }

    #[test]
    fn lattice_law_warns() {
        let model = EnvironmentModel::single(state(
            pmf(&[0.0, 0.0, 1.0]),
            MovingLaw::TwoPoint { x1: 0.0, p: 0.5, x2: 2.0 },
        ))
        .unwrap();
        let report = validate_model(&model);
        assert!(report.passed());
        assert!(report.has_warnings());
    }

    #[test]
    fn structural_errors() {
        assert!(matches!(
            EnvironmentModel::single(state(pmf(&[0.5, 0.4]), gauss())),
            Err(Error::InvalidModel(_))
        ));
        assert!(matches!(
            EnvironmentModel::single(state(pmf(&[0.0, 0.0, 1.0]), MovingLaw::Gaussian { mu: 0.0, sigma: 0.0 })),
            Err(Error::InvalidModel(_))
        ));
        assert!(matches!(
            EnvironmentModel::single(state(
                pmf(&[0.0, 0.0, 1.0]),
                MovingLaw::TwoPoint { x1: 1.0, p: 0.5, x2: 1.0 }
            )),
            Err(Error::InvalidModel(_))
        ));
        assert!(matches!(
            EnvironmentModel::single(state(OffspringLaw::PoissonTruncated { rate: 1.5, cap: 2000 }, gauss())),
            Err(Error::InvalidModel(_))
        ));
    }

    #[test]
    fn closed_form_moments() {
        let g = MovingLaw::Gaussian { mu: 0.0, sigma: 2.0 }.central_moments();
        assert_eq!(g.0, [4.0, 0.0, 48.0, 0.0, 960.0]);

        let u = MovingLaw::Uniform { a: -1.0, b: 1.0 };
        assert_eq!(u.mean(), 0.0);
        let m = u.central_moments();
        assert_relative_eq!(m.get(2), 1.0 / 3.0);
        assert_relative_eq!(m.get(4), 1.0 / 5.0);
        assert_relative_eq!(m.get(6), 1.0 / 7.0);
        assert_eq!(m.get(3), 0.0);
        assert_eq!(m.get(5), 0.0);

        let tp = MovingLaw::TwoPoint { x1: 0.0, p: 0.5, x2: 2.0 };
        assert_eq!(tp.mean(), 1.0);
        let m = tp.central_moments();
        assert_eq!((m.get(2), m.get(3), m.get(4)), (1.0, 0.0, 1.0));
    }

    #[test]
    fn cumulant_relations() {
        let s = 1.7f64;
        let gauss = CentralMoments([s * s, 0.0, 3.0 * s.powi(4), 0.0, 15.0 * s.powi(6)]);
        let c = cumulants_from_central_moments(&gauss).unwrap();
        for nu in 3..=6 {
            assert!(c.get(nu).abs() < 1e-12, "nu={nu}");
        }
        let u = MovingLaw::Uniform { a: -1.0, b: 1.0 }.central_moments();
        let c = cumulants_from_central_moments(&u).unwrap();
        assert_relative_eq!(c.get(4), -2.0 / 15.0, max_relative = 1e-14);
        assert_eq!(c.get(3), 0.0);
        assert_eq!(c.get(5), 0.0);
        assert_eq!(
            cumulants_from_central_moments(&CentralMoments([0.0, 0.0, 0.0, 0.0, 0.0])),
            Err(Error::DegenerateLaw(0.0))
        );
    }

    #[test]
    fn truncated_laws_are_normalized() {
        for law in [
            OffspringLaw::PoissonTruncated { rate: 1.4, cap: 20 },
            OffspringLaw::Geometric { p: 0.4, cap: 50 },
        ] {
            let p = law.pmf().unwrap();
            assert_relative_eq!(p.iter().sum::<f64>(), 1.0, max_relative = 1e-14);
        }
        let p = OffspringLaw::PoissonTruncated { rate: 1.4, cap: 60 }.pmf().unwrap();
        let mean: f64 = p.iter().enumerate().map(|(k, q)| k as f64 * q).sum();
        assert_relative_eq!(mean, 1.4, max_relative = 1e-12);
    }

    #[test]
    fn single_state_sampling() {
        let model = EnvironmentModel::single(state(pmf(&[0.0, 0.0, 1.0]), gauss())).unwrap();
        let env = sample_environment(&model, 20, 9).unwrap();
        assert!(env.sequence().iter().all(|&s| s == 0));
        for k in 0..=20 {
            assert_relative_eq!(env.pi(k), 2f64.powi(k as i32), max_relative = 1e-14);
        }
        assert_eq!(env.pi(0), 1.0);
        assert_eq!(env.ell(0), 0.0);
        assert_eq!(env.central_sum(3, 0), 0.0);
        assert_eq!(sample_environment(&model, 0, 9), Err(Error::EmptyEnvironment));
    }

    #[test]
    fn mixture_frequency() {
        let model = EnvironmentModel::new(vec![
            WeightedState { probability: 0.5, state: state(pmf(&[0.0, 0.0, 1.0]), gauss()) },
            WeightedState {
                probability: 0.5,
                state: state(pmf(&[0.0, 0.0, 0.0, 1.0]), MovingLaw::Uniform { a: -1.0, b: 1.0 }),
            },
        ])
        .unwrap();
        let n = 10_000;
        let env = sample_environment(&model, n, 2024).unwrap();
        let freq = env.sequence().iter().filter(|&&s| s == 0).count() as f64 / n as f64;
        assert!((freq - 0.5).abs() <= 3.0 * (0.25f64 / n as f64).sqrt(), "freq={freq}");
        assert_eq!(env, sample_environment(&model, n, 2024).unwrap());
    }

    #[test]
    fn model_json_roundtrip() {
        let json = r#"{"states":[{"probability":1.0,
            "offspring":{"family":"explicit_pmf","pmf":[0.0,0.6,0.4]},
            "moving":{"family":"shifted_exponential","rate":1.0,"shift":-1.0}}]}"#;
        let model: EnvironmentModel = serde_json::from_str(json).unwrap();
        assert_relative_eq!(model.compiled(0).moments.offspring_mean, 1.4);
        let back: EnvironmentModel = serde_json::from_str(&serde_json::to_string(&model).unwrap()).unwrap();
        assert_eq!(model, back);
        let bad = r#"{"states":[{"probability":1.0,
            "offspring":{"family":"explicit_pmf","pmf":[0.3]},
            "moving":{"family":"uniform","a":0,"b":1}}]}"#;
        assert!(serde_json::from_str::<EnvironmentModel>(bad).is_err());
    }
}
