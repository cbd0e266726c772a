use std::sync::Arc;

use brwre_core::environment::{
    sample_environment, EnvState, EnvironmentModel, MovingLaw, OffspringLaw, RealizedEnvironment, WeightedState,
};
use brwre_core::martingales::{
    compute_series, compute_truncated, convergence_diagnostic, estimate_limits, martingale_values,
};
use brwre_core::rng::rng_from_seed;
use brwre_core::simulator::{normalized_lhs, simulate, step_generation, SimConfig};
use brwre_core::special::std_normal_cdf;
use brwre_core::stats::mean_and_se;

fn state(pmf: &[f64], moving: MovingLaw) -> EnvState {
    EnvState {
        offspring: OffspringLaw::ExplicitPmf { pmf: pmf.to_vec() },
        moving,
    }
}

fn gauss() -> MovingLaw {
    MovingLaw::Gaussian { mu: 0.0, sigma: 1.0 }
}

fn reference_model() -> EnvironmentModel {
    EnvironmentModel::new(vec![
        WeightedState {
            probability: 0.5,
            state: state(&[0.1, 0.5, 0.3, 0.1], MovingLaw::Uniform { a: -1.0, b: 2.0 }),
        },
        WeightedState {
            probability: 0.5,
            state: state(&[0.0, 0.6, 0.4], MovingLaw::ShiftedExponential { rate: 1.0, shift: -0.5 }),
        },
    ])
    .unwrap()
}

fn env_of(model: &EnvironmentModel, n: usize, seed: u64) -> Arc<RealizedEnvironment> {
    Arc::new(sample_environment(model, n, seed).unwrap())
}

#[test]
fn sampled_moments_match_closed_forms() {
    let laws = [
        MovingLaw::Gaussian { mu: 0.5, sigma: 2.0 },
        MovingLaw::Uniform { a: -1.0, b: 3.0 },
        MovingLaw::ShiftedExponential { rate: 1.5, shift: -0.3 },
        MovingLaw::TwoPoint { x1: -1.0, p: 0.3, x2: 2.0 },
    ];
    let mut rng = rng_from_seed(99);
    for law in laws {
        let mean = law.mean();
        let moments = law.central_moments();
        let draws: Vec<f64> = (0..1_000_000).map(|_| law.sample(&mut rng) - mean).collect();
        for nu in 2..=4 {
            let powers: Vec<f64> = draws.iter().map(|d| d.powi(nu as i32)).collect();
            let (m, se) = mean_and_se(&powers).unwrap();
            assert!((m - moments.get(nu)).abs() <= 4.0 * se, "{law:?} nu={nu}: {m} vs {}", moments.get(nu));
        }
    }
}

#[test]
fn prefix_sums_follow_the_law_of_large_numbers() {
    let model = reference_model();
    let n = 10_000;
    for seed in [1u64, 2, 3] {
        let env = sample_environment(&model, n, seed).unwrap();
        for nu in 2..=6 {
            let gap = (env.central_sum(nu, n) / n as f64 - model.annealed_central_moment(nu)).abs();
            assert!(gap <= 5.0 * model.central_moment_sd(nu) / (n as f64).sqrt(), "seed {seed} nu={nu}: {gap}");
        }
    }
}

#[test]
fn additive_martingale_has_unit_quenched_mean() {
    let env = env_of(&reference_model(), 8, 5);
    let mut w = vec![Vec::new(); 3];
    for r in 0..1000u64 {
        let traj = simulate(env.clone(), SimConfig::new(8, 1000 + r)).unwrap();
        let series = compute_series(&traj);
        for (slot, n) in w.iter_mut().zip([1, 4, 8]) {
            slot.push(series.w[n]);
        }
    }
    for (vals, n) in w.iter().zip([1, 4, 8]) {
        let (m, se) = mean_and_se(vals).unwrap();
        assert!((m - 1.0).abs() <= 4.0 * se, "n={n}: {m} ± {se}");
    }
}

#[test]
fn one_step_increments_are_centred() {
    let model = reference_model();
    for prefix in 0..5u64 {
        let env = env_of(&model, 7, 40 + prefix);
        let traj = simulate(env.clone(), SimConfig::new(6, 70 + prefix)).unwrap();
        let snap = traj.generation(6).unwrap();
        if snap.is_empty() {
            continue;
        }
        let base = martingale_values(&env, snap);
        let mut rng = rng_from_seed(500 + prefix);
        let mut inc = vec![Vec::with_capacity(10_000); 4];
        for _ in 0..10_000 {
            let next = step_generation(&env, snap, usize::MAX, &mut rng).unwrap().unwrap();
            let v = martingale_values(&env, &next);
            for i in 0..4 {
                inc[i].push(v[i] - base[i]);
            }
        }
        for (i, d) in inc.iter().enumerate() {
            let (m, se) = mean_and_se(d).unwrap();
            assert!(m.abs() <= 4.0 * se, "prefix {prefix} i={i}: {m} ± {se}");
        }
    }
}

#[test]
fn binary_gaussian_lhs_averages_to_one_half() {
    let model = EnvironmentModel::single(state(&[0.0, 0.0, 1.0], gauss())).unwrap();
    let env = env_of(&model, 10, 0);
    let vals: Vec<f64> = (0..400u64)
        .map(|r| normalized_lhs(&simulate(env.clone(), SimConfig::new(10, r)).unwrap(), 10, 0.0).unwrap())
        .collect();
    let (m, se) = mean_and_se(&vals).unwrap();
    assert!((m - 0.5).abs() <= 3.0 * se, "{m} ± {se}");
}

#[test]
fn truncation_rate_matches_normal_tail() {
    let model = EnvironmentModel::single(state(&[0.0, 1.0], gauss())).unwrap();
    let env = env_of(&model, 9, 0);
    let replicas = 10_000;
    let differing = (0..replicas as u64)
        .filter(|&r| {
            let traj = simulate(env.clone(), SimConfig::new(9, r)).unwrap();
            let full = compute_series(&traj).values(9);
            compute_truncated(&traj, 9).unwrap().values() != full
        })
        .count();
    let p = 2.0 * (1.0 - std_normal_cdf(3.0));
    let expected = p * replicas as f64;
    let sd = (replicas as f64 * p * (1.0 - p)).sqrt();
    assert!((differing as f64 - expected).abs() <= 4.0 * sd, "{differing} vs {expected}");
}

#[test]
fn limit_estimates_are_unbiased_for_binary_gaussian() {
    let model = EnvironmentModel::single(state(&[0.0, 0.0, 1.0], gauss())).unwrap();
    let env = env_of(&model, 10, 0);
    let mut w = Vec::new();
    let mut v1 = Vec::new();
    for r in 0..1000u64 {
        let traj = simulate(env.clone(), SimConfig::new(10, r)).unwrap();
        let lim = estimate_limits(&compute_series(&traj)).unwrap();
        assert_eq!(lim.estimated_at, 10);
        w.push(lim.w);
        v1.push(lim.v1);
    }
    let (mw, _) = mean_and_se(&w).unwrap();
    assert!((mw - 1.0).abs() < 1e-12);
    let (m1, se1) = mean_and_se(&v1).unwrap();
    assert!(m1.abs() <= 3.0 * se1, "{m1} ± {se1}");
}

fn ensemble(model: &EnvironmentModel, n_max: usize, replicas: u64) -> Vec<brwre_core::martingales::MartingaleSeries> {
    (0..replicas)
        .map(|r| {
            let env = env_of(model, n_max, 10_000 + r);
            compute_series(&simulate(env, SimConfig::new(n_max, r)).unwrap())
        })
        .collect()
}

#[test]
fn single_lineage_walk_does_not_converge() {
    let model = EnvironmentModel::single(state(&[0.0, 1.0], gauss())).unwrap();
    let report = convergence_diagnostic(&ensemble(&model, 32, 200), 1).unwrap();
    assert!(!report.decays, "{:?}", report.increment_slope);
    // the distance to the endpoint shrinks anyway, which is why it is not the verdict
    assert!(report.tail_slope.unwrap() < 0.0);
}

#[test]
fn branching_martingales_converge() {
    let model = EnvironmentModel::single(state(&[0.0, 0.6, 0.4], gauss())).unwrap();
    let series = ensemble(&model, 32, 120);
    for i in [1, 3] {
        let report = convergence_diagnostic(&series, i).unwrap();
        assert!(report.decays, "i={i}: {:?}", report.increment_slope);
        assert!(report.tail_slope.unwrap() < 0.0);
    }
    assert!(convergence_diagnostic(&series[..50], 1).is_err());
}
