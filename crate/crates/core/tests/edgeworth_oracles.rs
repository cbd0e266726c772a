use brwre_core::edgeworth::{
    edgeworth_cdf, lambda_coeffs, oracle_cdf, CumulantWindow, GridCdf, OracleCdf, OracleMethod,
};
use brwre_core::environment::{
    sample_environment, EnvState, EnvironmentModel, MovingLaw, OffspringLaw, RealizedEnvironment, WeightedState,
};
use brwre_core::special::std_normal_cdf;
use brwre_core::stats::loglog_slope;

fn binary(moving: MovingLaw) -> EnvState {
    EnvState {
        offspring: OffspringLaw::ExplicitPmf { pmf: vec![0.0, 0.0, 1.0] },
        moving,
    }
}

fn uniform_steps(len: usize) -> RealizedEnvironment {
    let model = EnvironmentModel::single(binary(MovingLaw::Uniform { a: -1.0, b: 1.0 })).unwrap();
    RealizedEnvironment::constant(model, len).unwrap()
}

fn skewed_mixture() -> EnvironmentModel {
    EnvironmentModel::new(vec![
        WeightedState {
            probability: 0.5,
            state: binary(MovingLaw::Uniform { a: -1.0, b: 2.0 }),
        },
        WeightedState {
            probability: 0.5,
            state: binary(MovingLaw::ShiftedExponential { rate: 2.0, shift: 0.0 }),
        },
    ])
    .unwrap()
}

fn grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect()
}

// Exact CDF of (U_1 + … + U_L) / √(L/3) for U_i ~ U(−1, 1) at x = −1.3, 0.3, 1.0,
// evaluated from the Irwin–Hall formula in 120-digit arithmetic.
const IRWIN_HALL: [(usize, [f64; 3]); 4] = [
    (8, [0.09874091475727477, 0.61580638854514375, 0.83819433213167039]),
    (16, [0.097740366587531366, 0.61686459466538736, 0.83980146736538803]),
    (32, [0.097263310639622842, 0.61738956760437601, 0.84058091881980418]),
    (64, [0.097030173758042756, 0.61765089596388771, 0.8409647587594132]),
];

#[test]
fn grid_oracle_reproduces_irwin_hall() {
    for (len, exact) in IRWIN_HALL {
        let env = uniform_steps(len);
        let window = CumulantWindow::full(&env, len).unwrap();
        let oracle = OracleCdf::build(&window, OracleMethod::default_grid()).unwrap();
        for (x, want) in [-1.3, 0.3, 1.0].into_iter().zip(exact) {
            let got = oracle.eval(x);
            assert!((got.value - want).abs() < 1e-7, "L={len} x={x}: {} vs {want}", got.value);
            assert!(got.band < 1e-5);
        }
    }
}

#[test]
fn monte_carlo_and_grid_agree() {
    let env = sample_environment(&skewed_mixture(), 12, 4).unwrap();
    let window = CumulantWindow::full(&env, 12).unwrap();
    let grid_oracle = OracleCdf::build(&window, OracleMethod::default_grid()).unwrap();
    let mc = OracleCdf::build(&window, OracleMethod::MonteCarlo { samples: 200_000, seed: 8 }).unwrap();
    for x in grid(-2.0, 2.0, 9) {
        let (g, m) = (grid_oracle.eval(x), mc.eval(x));
        assert!((g.value - m.value).abs() <= m.band + g.band, "x={x}: grid {g:?} mc {m:?}");
    }
}

#[test]
fn uniform_window_of_sixteen_beats_normal() {
    let env = uniform_steps(16);
    let window = CumulantWindow::full(&env, 16).unwrap();
    let oracle = OracleCdf::build(&window, OracleMethod::default_grid()).unwrap();
    let (mut e_edge, mut e_phi) = (0.0f64, 0.0f64);
    for x in grid(-2.0, 2.0, 9) {
        let truth = oracle.eval(x).value;
        e_edge = e_edge.max((edgeworth_cdf(&window, 5, x).unwrap() - truth).abs());
        e_phi = e_phi.max((std_normal_cdf(x) - truth).abs());
    }
    assert!(e_edge < e_phi, "{e_edge} vs {e_phi}");
}

#[test]
fn fifth_order_error_decays_with_window_length() {
    let xs = grid(-3.0, 3.0, 25);
    let mut lens = Vec::new();
    let mut errs = Vec::new();
    for len in [8usize, 16, 32, 64] {
        let env = uniform_steps(len);
        let window = CumulantWindow::full(&env, len).unwrap();
        let oracle = GridCdf::build(&window, 1.0 / 400.0, 12.0).unwrap();
        let (mut e5, mut e_phi) = (0.0f64, 0.0f64);
        for &x in &xs {
            let truth = oracle.eval(x).value;
            e5 = e5.max((edgeworth_cdf(&window, 5, x).unwrap() - truth).abs());
            e_phi = e_phi.max((std_normal_cdf(x) - truth).abs());
        }
        assert!(e5 <= e_phi);
        lens.push(len as f64);
        errs.push(e5);
    }
    let slope = loglog_slope(&lens, &errs).unwrap();
    assert!(slope <= -1.0, "slope {slope}");
}

#[test]
fn third_order_beats_normal_on_skewed_windows() {
    let model = skewed_mixture();
    let xs = grid(-2.0, 2.0, 17);
    let mut wins = 0;
    let mut total = 0;
    for seed in 0..5u64 {
        for len in [8usize, 16, 32, 64] {
            let env = sample_environment(&model, len, 100 + seed).unwrap();
            let window = CumulantWindow::full(&env, len).unwrap();
            let oracle = OracleCdf::build(&window, OracleMethod::default_grid()).unwrap();
            let (mut e3, mut e_phi) = (0.0f64, 0.0f64);
            for &x in &xs {
                let truth = oracle.eval(x).value;
                e3 = e3.max((edgeworth_cdf(&window, 3, x).unwrap() - truth).abs());
                e_phi = e_phi.max((std_normal_cdf(x) - truth).abs());
            }
            total += 1;
            if e3 <= e_phi {
                wins += 1;
            }
        }
    }
    assert!(wins * 10 >= total * 9, "{wins}/{total}");
}

#[test]
fn late_window_coefficients_approach_full_window() {
    // |λ₃[k, n) − λ₃[0, n)| ≤ C k / n with C recorded here.
    const C: f64 = 10.0;
    let model = skewed_mixture();
    for seed in 0..10u64 {
        let env = sample_environment(&model, 1000, seed).unwrap();
        for n in [100usize, 400, 1000] {
            let full = lambda_coeffs(&CumulantWindow::full(&env, n).unwrap(), 3).unwrap();
            for k in [1usize, 2, 4] {
                let late = lambda_coeffs(&CumulantWindow::new(&env, k, n).unwrap(), 3).unwrap();
                let gap = (late.lambda(3).unwrap() - full.lambda(3).unwrap()).abs();
                assert!(gap <= C * k as f64 / n as f64, "seed {seed} n={n} k={k}: {gap}");
            }
        }
    }
}

#[test]
fn oracle_rejects_oversized_grids() {
    let env = uniform_steps(4);
    let window = CumulantWindow::full(&env, 4).unwrap();
    let tiny = OracleMethod::GridConvolution {
        step_fraction: 1e-6,
        half_width: 12.0,
    };
    assert!(oracle_cdf(&window, 0.0, tiny).is_err());
    let few = OracleMethod::MonteCarlo { samples: 10, seed: 1 };
    assert!(oracle_cdf(&window, 0.0, few).is_err());
}
