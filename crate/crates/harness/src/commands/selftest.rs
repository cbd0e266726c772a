//! A reduced property battery that runs in well under a minute.

use std::str::FromStr;
use std::sync::Arc;

use brwre_core::edgeworth::{lambda_coeffs, q_closed_series, q_series_generic, ClosedFormInputs, CumulantWindow};
use brwre_core::environment::{
    central_moments_from_cumulants, cumulants_from_central_moments, sample_environment, CentralMoments, EnvState,
    EnvironmentModel, MovingLaw, OffspringLaw, WeightedState,
};
use brwre_core::expansion::{
    ab_decompose, derivative_audit, gaussian_corollary_rhs, run_replica, split_generation, CdfProvider,
    ExpansionTerms, ResidualSuiteConfig,
};
use brwre_core::martingales::{compute_series, martingale_values, LimitEstimates};
use brwre_core::rng::{rng_from_seed, Rng};
use brwre_core::simulator::{simulate, step_generation, SimConfig};
use brwre_core::special::{hermite_coefficients, hermite_explicit, hermite_recurrence};
use brwre_core::stats::mean_and_se;
use rand::Rng as _;

use super::Verdict;

/// A deliberate defect for checking that the battery notices it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Perturbs the `H_5` coefficient of the closed-form `q_2`.
    Q2,
}

impl FromStr for Fault {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "q2" => Ok(Fault::Q2),
            other => Err(format!("unknown fault {other:?} (known: q2)")),
        }
    }
}

const RANDOM_MODELS: usize = 40;

/// Coefficients of `H_2..H_8`, ascending powers.
const HERMITE_TABLE: [&[f64]; 7] = [
    &[-1.0, 0.0, 1.0],
    &[0.0, -3.0, 0.0, 1.0],
    &[3.0, 0.0, -6.0, 0.0, 1.0],
    &[0.0, 15.0, 0.0, -10.0, 0.0, 1.0],
    &[-15.0, 0.0, 45.0, 0.0, -15.0, 0.0, 1.0],
    &[0.0, -105.0, 0.0, 105.0, 0.0, -21.0, 0.0, 1.0],
    &[105.0, 0.0, -420.0, 0.0, 210.0, 0.0, -28.0, 0.0, 1.0],
];

fn moving_law(rng: &mut Rng) -> MovingLaw {
    match rng.random_range(0..4) {
        0 => MovingLaw::Gaussian {
            mu: rng.random_range(-1.0..1.0),
            sigma: rng.random_range(0.2..3.0),
        },
        1 => {
            let a = rng.random_range(-2.0..1.0);
            MovingLaw::Uniform { a, b: a + rng.random_range(0.5..4.0) }
        }
        2 => MovingLaw::ShiftedExponential {
            rate: rng.random_range(0.3..3.0),
            shift: rng.random_range(-2.0..1.0),
        },
        _ => {
            let x1 = rng.random_range(-2.0..0.0);
            MovingLaw::TwoPoint {
                x1,
                p: rng.random_range(0.05..0.95),
                x2: x1 + rng.random_range(0.5..3.0),
            }
        }
    }
}

/// A mixture of one to three states with random moving laws and offspring laws on
/// `{0, 1, 2, 3}` whose mean exceeds one.
pub fn random_model(rng: &mut Rng) -> EnvironmentModel {
    let states = rng.random_range(1..=3);
    let weights: Vec<f64> = (0..states).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut parts: Vec<WeightedState> = weights
        .iter()
        .map(|w| {
            let p0 = rng.random_range(0.0..0.2);
            let p1 = rng.random_range(0.0..0.4);
            let p3 = rng.random_range(0.0..0.3);
            WeightedState {
                probability: w / total,
                state: EnvState {
                    offspring: OffspringLaw::ExplicitPmf {
                        pmf: vec![p0, p1, 1.0 - p0 - p1 - p3, p3],
                    },
                    moving: moving_law(rng),
                },
            }
        })
        .collect();
    let tail: f64 = parts[1..].iter().map(|s| s.probability).sum();
    parts[0].probability = 1.0 - tail;
    EnvironmentModel::new(parts).expect("random model is valid")
}

fn reference_model() -> EnvironmentModel {
    let state = |pmf: Vec<f64>, moving| EnvState {
        offspring: OffspringLaw::ExplicitPmf { pmf },
        moving,
    };
    EnvironmentModel::new(vec![
        WeightedState {
            probability: 0.5,
            state: state(vec![0.0, 0.6, 0.4], MovingLaw::Uniform { a: -1.0, b: 1.0 }),
        },
        WeightedState {
            probability: 0.5,
            state: state(vec![0.0, 0.6, 0.4], MovingLaw::ShiftedExponential { rate: 1.0, shift: -1.0 }),
        },
    ])
    .expect("reference model is valid")
}

fn check_hermite() -> anyhow::Result<Verdict> {
    let mut worst: f64 = 0.0;
    for m in 0..=12 {
        for i in 0..=120 {
            let x = -6.0 + 0.1 * i as f64;
            let e = hermite_explicit(m, x)?;
            let r = hermite_recurrence(m, x)?;
            worst = worst.max((e - r).abs() / e.abs().max(1.0));
        }
    }
    let mut table_ok = true;
    for (m, want) in (2..).zip(HERMITE_TABLE) {
        table_ok &= hermite_coefficients(m)? == want;
    }
    Ok(Verdict::new(
        "hermite",
        worst <= 1e-9 && table_ok,
        format!("max relative gap {worst:e}, coefficient table {}", if table_ok { "matches" } else { "differs" }),
    ))
}

fn check_cumulants(rng: &mut Rng) -> anyhow::Result<Verdict> {
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let s2: f64 = rng.random_range(0.1..5.0);
        let s4 = s2 * s2 * rng.random_range(1.0..4.0);
        let s3 = rng.random_range(-0.9..0.9) * (s2 * (s4 - s2 * s2)).sqrt();
        let m = CentralMoments([s2, s3, s4, rng.random_range(-1.0..1.0) * s2.powf(2.5), rng.random_range(1.0..20.0) * s2.powi(3)]);
        let back = central_moments_from_cumulants(&cumulants_from_central_moments(&m)?);
        let scale = m.0.iter().fold(1.0f64, |a, v| a.max(v.abs())) * 30.0;
        for (a, b) in m.0.iter().zip(back.0) {
            worst = worst.max((a - b).abs() / scale);
        }
    }
    Ok(Verdict::new("cumulants", worst <= 1e-12, format!("max scaled round-trip gap {worst:e}")))
}

fn check_generic_vs_closed(rng: &mut Rng, fault: Option<Fault>) -> anyhow::Result<Verdict> {
    let mut worst: f64 = 0.0;
    for _ in 0..RANDOM_MODELS {
        let model = random_model(rng);
        let env = sample_environment(&model, 200, rng.random())?;
        for n in [10usize, 50, 200] {
            let coeffs = lambda_coeffs(&CumulantWindow::full(&env, n)?, 5)?;
            let inputs = ClosedFormInputs::from_env(&env, n)?;
            for nu in 1..=3 {
                let mut closed = q_closed_series(&inputs, nu)?;
                if nu == 2 && fault == Some(Fault::Q2) {
                    closed.add_term(5, 1e-6);
                }
                let generic = q_series_generic(nu, &coeffs)?.scaled((n as f64).powf(-(nu as f64) / 2.0));
                for i in 0..11 {
                    let t = -2.5 + 0.5 * i as f64;
                    let c = closed.eval(t);
                    worst = worst.max((generic.eval(t) - c).abs() / (1.0 + c.abs()));
                }
            }
        }
    }
    Ok(Verdict::new(
        "generic_vs_closed_q",
        worst <= 1e-10,
        format!("max relative gap {worst:e} over {RANDOM_MODELS} models"),
    ))
}

fn check_gaussian_reduction() -> anyhow::Result<Verdict> {
    let model = EnvironmentModel::new(vec![
        WeightedState {
            probability: 0.5,
            state: EnvState {
                offspring: OffspringLaw::ExplicitPmf { pmf: vec![0.0, 0.5, 0.5] },
                moving: MovingLaw::Gaussian { mu: 0.2, sigma: 1.0 },
            },
        },
        WeightedState {
            probability: 0.5,
            state: EnvState {
                offspring: OffspringLaw::ExplicitPmf { pmf: vec![0.0, 0.2, 0.8] },
                moving: MovingLaw::Gaussian { mu: -0.4, sigma: 2.0 },
            },
        },
    ])?;
    let env = sample_environment(&model, 24, 3)?;
    let limits = LimitEstimates::exact(1.1, -0.3, 0.8, -1.7);
    let (mut q_max, mut gap): (f64, f64) = (0.0, 0.0);
    for n in [8usize, 16, 24] {
        let terms = ExpansionTerms::from_env(&env, n)?;
        for i in 0..=20 {
            let t = -3.0 + 0.3 * i as f64;
            for nu in 1..=3 {
                q_max = q_max.max(terms.q_derivative(nu, 0).eval(t).abs());
            }
            let want = gaussian_corollary_rhs(t, terms.s(), &limits);
            gap = gap.max((terms.rhs(3, t, &limits)? - want).abs() / (1.0 + want.abs()));
        }
    }
    Ok(Verdict::new(
        "gaussian_reduction",
        q_max <= 1e-15 && gap <= 1e-12,
        format!("max |q_nu| {q_max:e}, max relative RHS gap {gap:e}"),
    ))
}

fn check_derivatives(rng: &mut Rng) -> anyhow::Result<Verdict> {
    let grid: Vec<f64> = (0..=20).map(|i| -3.0 + 0.3 * i as f64).collect();
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let env = sample_environment(&random_model(rng), 32, rng.random())?;
        for n in [8usize, 16, 32] {
            worst = worst.max(derivative_audit(&ExpansionTerms::from_env(&env, n)?, &grid));
        }
    }
    Ok(Verdict::new("derivative_terms", worst <= 1e-6, format!("max gap {worst:e}")))
}

fn check_martingale_property() -> anyhow::Result<Verdict> {
    const PREFIXES: u64 = 4;
    const REDRAWS: usize = 3000;
    let model = reference_model();
    let mut worst_z: f64 = 0.0;
    for prefix in 0..PREFIXES {
        let env = Arc::new(sample_environment(&model, 6, 900 + prefix)?);
        let traj = simulate(env.clone(), SimConfig::new(5, 950 + prefix))?;
        let snap = traj.generation(5)?;
        if snap.is_empty() {
            continue;
        }
        let base = martingale_values(&env, snap);
        let mut rng = rng_from_seed(990 + prefix);
        let mut inc = vec![Vec::with_capacity(REDRAWS); 4];
        for _ in 0..REDRAWS {
            let next = step_generation(&env, snap, usize::MAX, &mut rng)?.expect("no cap");
            for (slot, (v, b)) in inc.iter_mut().zip(martingale_values(&env, &next).iter().zip(base)) {
                slot.push(v - b);
            }
        }
        for d in &inc {
            if let Some((m, se)) = mean_and_se(d) {
                if se > 0.0 {
                    worst_z = worst_z.max(m.abs() / se);
                }
            }
        }
    }
    let env = Arc::new(sample_environment(&model, 4, 77)?);
    let w: Vec<f64> = (0..600u64)
        .map(|r| Ok(compute_series(&simulate(env.clone(), SimConfig::new(4, 5000 + r))?).w[4]))
        .collect::<anyhow::Result<_>>()?;
    let (mw, se) = mean_and_se(&w).unwrap_or((f64::NAN, f64::NAN));
    let wz = (mw - 1.0).abs() / se;
    Ok(Verdict::new(
        "martingale_property",
        worst_z <= 4.0 && wz <= 4.0,
        format!("max |increment mean| / SE = {worst_z:.2}, E W_4 = {mw:.4} ({wz:.2} SE from 1)"),
    ))
}

fn check_ab_identity() -> anyhow::Result<Verdict> {
    let model = reference_model();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for r in 0..6u64 {
        let env = Arc::new(sample_environment(&model, 12, 300 + r)?);
        let k = split_generation(12, 0.12);
        let traj = simulate(env, SimConfig::new(12, 400 + r).with_ancestors_at(k))?;
        if traj.termination().is_extinct() {
            continue;
        }
        for provider in [CdfProvider::ExactGaussian, CdfProvider::Edgeworth { order: 5 }] {
            for k in [0, 1, 3] {
                for t in [-1.0, 0.0, 0.5, 2.0] {
                    let d = ab_decompose(&traj, k, 12, t, provider)?;
                    worst = worst.max(d.identity_gap() / (1.0 + d.lhs_check.abs()));
                    checked += 1;
                }
            }
        }
    }
    Ok(Verdict::new(
        "ab_identity",
        checked > 0 && worst <= 1e-12,
        format!("max relative gap {worst:e} over {checked} decompositions"),
    ))
}

fn check_determinism() -> anyhow::Result<Verdict> {
    let cfg = ResidualSuiteConfig {
        model: reference_model(),
        n_list: vec![8, 12],
        t_grid: vec![-1.0, 0.5],
        replicas: 3,
        first_replica: 0,
        seed: 11,
        n_max: 12,
        particle_cap: 100_000,
        beta: 0.12,
        provider: CdfProvider::default(),
    };
    let same = (0..3).all(|i| match (run_replica(&cfg, i), run_replica(&cfg, i)) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    });
    Ok(Verdict::new("determinism", same, "replica outcomes repeat exactly".into()))
}

/// Runs every check; the battery's seed is fixed so repeated runs agree.
pub fn run_selftest(fault: Option<Fault>) -> anyhow::Result<Vec<Verdict>> {
    let mut rng = rng_from_seed(0x5e1f_7e57);
    Ok(vec![
        check_hermite()?,
        check_cumulants(&mut rng)?,
        check_generic_vs_closed(&mut rng, fault)?,
        check_gaussian_reduction()?,
        check_derivatives(&mut rng)?,
        check_martingale_property()?,
        check_ab_identity()?,
        check_determinism()?,
    ])
}
