//! Browser bindings for three small interactive views:
//! Edgeworth main terms against the exact window CDF, simulated `Π_n^{−1} Z_n` against the
//! expansion right-hand sides, and a Hermite polynomial table.
//!
//! Each export returns a flat `Float64Array`; the row layout is documented per function.
//! The plain functions (`*_rows`) hold the logic so they can be tested natively.

use brwre_core::edgeworth::{CumulantWindow, EdgeworthCdf, OracleCdf, OracleMethod};
use brwre_core::environment::{EnvState, EnvironmentModel, MovingLaw, OffspringLaw, RealizedEnvironment, WeightedState};
use brwre_core::expansion::{run_replica, CdfProvider, ResidualSuiteConfig};
use brwre_core::special::{hermite_explicit, hermite_recurrence, std_normal_cdf};
use wasm_bindgen::prelude::*;

pub const EDGEWORTH_ROW: usize = 5;
pub const RESIDUAL_ROW: usize = 5;
pub const HERMITE_ROW: usize = 3;
const MAX_REPLICAS: usize = 2000;
const MAX_GENERATION: usize = 24;
const DEMO_PARTICLE_CAP: usize = 500_000;

fn step_law(family: &str) -> Result<MovingLaw, String> {
    Ok(match family {
        "uniform" => MovingLaw::Uniform { a: -1.0, b: 1.0 },
        "exponential" => MovingLaw::ShiftedExponential { rate: 1.0, shift: -1.0 },
        "two_point" => MovingLaw::TwoPoint { x1: -1.0, p: 0.8, x2: 4.0 },
        "gaussian" => MovingLaw::Gaussian { mu: 0.0, sigma: 1.0 },
        other => return Err(format!("unknown step family {other:?}")),
    })
}

fn state(pmf: Vec<f64>, moving: MovingLaw) -> EnvState {
    EnvState {
        offspring: OffspringLaw::ExplicitPmf { pmf },
        moving,
    }
}

/// Uniform and shifted-exponential steps with equal probability, mean offspring 1.4.
pub fn reference_model() -> EnvironmentModel {
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

/// Rows `[x, exact, Φ, EW_3, EW_5]` for `points` values of `x` in `[−3, 3]`, for the
/// normalized sum of `len` i.i.d. steps of the given family.
pub fn edgeworth_rows(family: &str, len: usize, points: usize) -> Result<Vec<f64>, String> {
    if !(1..=256).contains(&len) || !(2..=1001).contains(&points) {
        return Err("len must lie in 1..=256 and points in 2..=1001".into());
    }
    let model = EnvironmentModel::single(state(vec![0.0, 0.0, 1.0], step_law(family)?)).map_err(|e| e.to_string())?;
    let env = RealizedEnvironment::constant(model, len).map_err(|e| e.to_string())?;
    let window = CumulantWindow::full(&env, len).map_err(|e| e.to_string())?;
    let oracle = OracleCdf::build(&window, OracleMethod::default_grid()).map_err(|e| e.to_string())?;
    let ew3 = EdgeworthCdf::new(&window, 3).map_err(|e| e.to_string())?;
    let ew5 = EdgeworthCdf::new(&window, 5).map_err(|e| e.to_string())?;
    let mut out = Vec::with_capacity(points * EDGEWORTH_ROW);
    for i in 0..points {
        let x = -3.0 + 6.0 * i as f64 / (points - 1) as f64;
        out.extend([x, oracle.eval(x).value, std_normal_cdf(x), ew3.cdf(x), ew5.cdf(x)]);
    }
    Ok(out)
}

/// One row `[lhs, rhs_0, rhs_1, rhs_2, rhs_3]` per replica that survives to generation
/// `max(n, 8)` on the reference model. Extinct and capped replicas are dropped.
pub fn residual_rows(seed: u64, n: usize, replicas: usize, t: f64) -> Result<Vec<f64>, String> {
    if !(2..=MAX_GENERATION).contains(&n) || !(1..=MAX_REPLICAS).contains(&replicas) || !t.is_finite() {
        return Err(format!("n must lie in 2..={MAX_GENERATION}, replicas in 1..={MAX_REPLICAS}"));
    }
    let cfg = ResidualSuiteConfig {
        model: reference_model(),
        n_list: vec![n],
        t_grid: vec![t],
        replicas,
        first_replica: 0,
        seed,
        n_max: n.max(8),
        particle_cap: DEMO_PARTICLE_CAP,
        beta: 0.12,
        provider: CdfProvider::ExactGaussian,
    };
    let mut out = Vec::new();
    for i in 0..replicas {
        let o = run_replica(&cfg, i).map_err(|e| e.to_string())?;
        if !o.usable() {
            continue;
        }
        for row in &o.rows {
            out.push(row.lhs);
            out.extend(row.rhs);
        }
    }
    Ok(out)
}

/// Rows `[m, H_m(x) explicit, H_m(x) by recurrence]` for `m = 0..=m_max`.
pub fn hermite_rows(x: f64, m_max: usize) -> Result<Vec<f64>, String> {
    let mut out = Vec::with_capacity((m_max + 1) * HERMITE_ROW);
    for m in 0..=m_max {
        let e = hermite_explicit(m, x).map_err(|e| e.to_string())?;
        let r = hermite_recurrence(m, x).map_err(|e| e.to_string())?;
        out.extend([m as f64, e, r]);
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn edgeworth_comparison(family: &str, len: usize, points: usize) -> Result<Vec<f64>, JsValue> {
    edgeworth_rows(family, len, points).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn expansion_residuals(seed: u32, n: usize, replicas: usize, t: f64) -> Result<Vec<f64>, JsValue> {
    residual_rows(seed as u64, n, replicas, t).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn hermite_table(x: f64, m_max: usize) -> Result<Vec<f64>, JsValue> {
    hermite_rows(x, m_max).map_err(|e| JsValue::from_str(&e))
}
