//! The additive martingale `W_n` and the correction martingales `N_{1,n}`, `N_{2,n}`, `N_{3,n}`.
//!
//! With `x_u = S_u − ℓ_n`:
//!
//! ```text
//! W_n     = Π_n^{-1} Σ_u 1
//! N_{1,n} = Π_n^{-1} Σ_u x_u
//! N_{2,n} = Π_n^{-1} Σ_u (x_u² − s_n²)
//! N_{3,n} = Π_n^{-1} Σ_u (x_u³ − 3 x_u s_n² − s_n^{(3)})
//! ```
//!
//! Sums are accumulated with [`NeumaierSum`].

use serde::Serialize;

use crate::environment::RealizedEnvironment;
use crate::simulator::{GenerationSnapshot, Trajectory};
use crate::stats::{loglog_slope, median};
use crate::summation::NeumaierSum;
use crate::{Error, Result};

/// Minimum generation at which limits are estimated.
pub const MIN_ESTIMATION_GENERATION: usize = 8;
/// Minimum ensemble size for [`convergence_diagnostic`].
pub const MIN_DIAGNOSTIC_REPLICAS: usize = 100;
/// Minimum series length for [`convergence_diagnostic`].
pub const MIN_DIAGNOSTIC_GENERATIONS: usize = 24;
/// First generation entering the diagnostic regressions.
pub const DIAGNOSTIC_START: usize = 8;
/// Increment slope below which a martingale is reported as converging.
pub const DECAY_SLOPE_THRESHOLD: f64 = -0.5;

/// `(W, N_1, N_2, N_3)` for the particles in `positions`, centred at generation `n` of `env`,
/// optionally keeping only particles with `|S_u − ℓ_n| ≤ radius`.
fn centred_sums(env: &RealizedEnvironment, n: usize, positions: &[f64], radius: Option<f64>) -> [f64; 4] {
    if positions.is_empty() {
        return [0.0; 4];
    }
    let ell = env.ell(n);
    let s2 = env.central_sum(2, n);
    let s3 = env.central_sum(3, n);
    let mut sums = [NeumaierSum::new(); 4];
    for &p in positions {
        let x = p - ell;
        if radius.is_some_and(|r| x.abs() > r) {
            continue;
        }
        sums[0].add(1.0);
        sums[1].add(x);
        sums[2].add(x * x - s2);
        sums[3].add(x * x * x - 3.0 * x * s2 - s3);
    }
    let pi = env.pi(n);
    sums.map(|s| s.value() / pi)
}

/// `(W_n, N_{1,n}, N_{2,n}, N_{3,n})` of one generation.
pub fn martingale_values(env: &RealizedEnvironment, snap: &GenerationSnapshot) -> [f64; 4] {
    centred_sums(env, snap.generation, &snap.positions, None)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleSeries {
    pub w: Vec<f64>,
    pub n1: Vec<f64>,
    pub n2: Vec<f64>,
    pub n3: Vec<f64>,
    /// Running maximum of `W_n`.
    pub w_star: Vec<f64>,
    pub population: Vec<usize>,
    /// Set when the trajectory stopped at the particle cap; the series ends before it.
    pub capped: bool,
    pub extinct: bool,
}

impl MartingaleSeries {
    /// Number of stored generations (`0..len`).
    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn last_generation(&self) -> usize {
        self.len() - 1
    }

    pub fn values(&self, n: usize) -> [f64; 4] {
        [self.w[n], self.n1[n], self.n2[n], self.n3[n]]
    }

    /// `N_{i,n}` with `i = 0` meaning `W_n`.
    pub fn component(&self, i: usize) -> &[f64] {
        match i {
            0 => &self.w,
            1 => &self.n1,
            2 => &self.n2,
            3 => &self.n3,
            _ => panic!("martingale index {i} out of range"),
        }
    }
}

pub fn compute_series(traj: &Trajectory) -> MartingaleSeries {
    let env = traj.env();
    let gens = traj.snapshots().len();
    let mut series = MartingaleSeries {
        w: Vec::with_capacity(gens),
        n1: Vec::with_capacity(gens),
        n2: Vec::with_capacity(gens),
        n3: Vec::with_capacity(gens),
        w_star: Vec::with_capacity(gens),
        population: Vec::with_capacity(gens),
        capped: traj.termination().is_capped(),
        extinct: traj.termination().is_extinct(),
    };
    let mut running_max = f64::NEG_INFINITY;
    for snap in traj.snapshots() {
        let [w, n1, n2, n3] = martingale_values(env, snap);
        running_max = running_max.max(w);
        series.w.push(w);
        series.n1.push(n1);
        series.n2.push(n2);
        series.n3.push(n3);
        series.w_star.push(running_max);
        series.population.push(snap.count());
    }
    series
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TruncatedValues {
    pub k: usize,
    pub w: f64,
    pub n1: f64,
    pub n2: f64,
    pub n3: f64,
    pub truncation_radius: f64,
}

impl TruncatedValues {
    pub fn values(&self) -> [f64; 4] {
        [self.w, self.n1, self.n2, self.n3]
    }
}

/// Truncated martingales at generation `k` with the default radius `k`.
pub fn compute_truncated(traj: &Trajectory, k: usize) -> Result<TruncatedValues> {
    compute_truncated_with_radius(traj, k, k as f64)
}

/// Sums restricted to particles with `|S_u − ℓ_k| ≤ radius`.
pub fn compute_truncated_with_radius(traj: &Trajectory, k: usize, radius: f64) -> Result<TruncatedValues> {
    let snap = traj.generation(k)?;
    let [w, n1, n2, n3] = centred_sums(traj.env(), k, &snap.positions, Some(radius));
    Ok(TruncatedValues {
        k,
        w,
        n1,
        n2,
        n3,
        truncation_radius: radius,
    })
}

/// Proxies for the almost-sure limits `W, V_1, V_2, V_3`: the series values at the last
/// generation. `stderr` holds the largest absolute increment over the final quarter of
/// generations, a rough measure of how far the series still moves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LimitEstimates {
    pub w: f64,
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
    pub estimated_at: usize,
    pub stderr: [f64; 4],
}

impl LimitEstimates {
    /// Limits supplied directly (e.g. to evaluate an expansion at matched inputs).
    pub fn exact(w: f64, v1: f64, v2: f64, v3: f64) -> Self {
        Self {
            w,
            v1,
            v2,
            v3,
            estimated_at: 0,
            stderr: [0.0; 4],
        }
    }

    pub fn values(&self) -> [f64; 4] {
        [self.w, self.v1, self.v2, self.v3]
    }
}

pub fn estimate_limits(series: &MartingaleSeries) -> Result<LimitEstimates> {
    if series.capped {
        return Err(Error::InsufficientData("series stopped at the particle cap".into()));
    }
    if series.is_empty() || series.last_generation() < MIN_ESTIMATION_GENERATION {
        return Err(Error::InsufficientData(format!(
            "series must reach generation {MIN_ESTIMATION_GENERATION}"
        )));
    }
    let last = series.last_generation();
    let tail_start = last - last.div_ceil(4);
    let mut stderr = [0.0; 4];
    for (i, se) in stderr.iter_mut().enumerate() {
        let c = series.component(i);
        *se = (tail_start..last).map(|n| (c[n + 1] - c[n]).abs()).fold(0.0, f64::max);
    }
    let [w, v1, v2, v3] = series.values(last);
    Ok(LimitEstimates {
        w,
        v1,
        v2,
        v3,
        estimated_at: last,
        stderr,
    })
}

/// Ensemble convergence report for `N_{i,n}`.
///
/// Two statistics are regressed on `ln n` over `n ≥ 8`: the median distance to the
/// last generation, `|N_{i,n} − N_{i,n_max}|`, and the median one-step increment
/// `|N_{i,n+1} − N_{i,n}|`. The distance to the endpoint shrinks toward `n_max`
/// even for a non-convergent random walk, so the verdict uses the increment slope.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub index: usize,
    pub replicas: usize,
    pub generations: Vec<usize>,
    pub median_tail_distance: Vec<f64>,
    pub tail_slope: Option<f64>,
    pub median_increment: Vec<f64>,
    pub increment_slope: Option<f64>,
    pub decays: bool,
}

pub fn convergence_diagnostic(ensemble: &[MartingaleSeries], i: usize) -> Result<ConvergenceReport> {
    if !(1..=3).contains(&i) {
        return Err(Error::InvalidConfig(format!("martingale index {i} outside 1..=3")));
    }
    let usable: Vec<&MartingaleSeries> = ensemble.iter().filter(|s| !s.capped && !s.extinct).collect();
    if usable.len() < MIN_DIAGNOSTIC_REPLICAS {
        return Err(Error::InsufficientData(format!(
            "{} usable replicas, need {MIN_DIAGNOSTIC_REPLICAS}",
            usable.len()
        )));
    }
    let n_max = usable.iter().map(|s| s.last_generation()).min().unwrap_or(0);
    if n_max < MIN_DIAGNOSTIC_GENERATIONS {
        return Err(Error::InsufficientData(format!(
            "series reach generation {n_max}, need {MIN_DIAGNOSTIC_GENERATIONS}"
        )));
    }
    let generations: Vec<usize> = (DIAGNOSTIC_START..n_max).collect();
    let mut tail = Vec::with_capacity(generations.len());
    let mut inc = Vec::with_capacity(generations.len());
    for &n in &generations {
        let d: Vec<f64> = usable
            .iter()
            .map(|s| (s.component(i)[n] - s.component(i)[n_max]).abs())
            .collect();
        let a: Vec<f64> = usable
            .iter()
            .map(|s| (s.component(i)[n + 1] - s.component(i)[n]).abs())
            .collect();
        tail.push(median(&d).unwrap());
        inc.push(median(&a).unwrap());
    }
    let xs: Vec<f64> = generations.iter().map(|&n| n as f64).collect();
    let tail_slope = loglog_slope(&xs, &tail);
    let increment_slope = loglog_slope(&xs, &inc);
    Ok(ConvergenceReport {
        index: i,
        replicas: usable.len(),
        generations,
        median_tail_distance: tail,
        tail_slope,
        median_increment: inc,
        increment_slope,
        decays: increment_slope.is_some_and(|s| s < DECAY_SLOPE_THRESHOLD),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{sample_environment, EnvState, EnvironmentModel, MovingLaw, OffspringLaw};
    use crate::simulator::{simulate, SimConfig};
    use std::sync::Arc;

    fn env_with(pmf: &[f64], moving: MovingLaw, n: usize, seed: u64) -> Arc<RealizedEnvironment> {
        let model = EnvironmentModel::single(EnvState {
            offspring: OffspringLaw::ExplicitPmf { pmf: pmf.to_vec() },
            moving,
        })
        .unwrap();
        Arc::new(sample_environment(&model, n, seed).unwrap())
    }

    #[test]
    fn generation_zero_values() {
        let env = env_with(&[0.0, 0.0, 1.0], MovingLaw::Uniform { a: 0.0, b: 2.0 }, 8, 1);
        let traj = simulate(env, SimConfig::new(8, 1)).unwrap();
        let series = compute_series(&traj);
        assert_eq!(series.values(0), [1.0, 0.0, 0.0, 0.0]);
        assert!(series.w.iter().all(|&w| w >= 0.0));
        // deterministic binary branching: W_n = 2^n / 2^n
        assert!(series.w.iter().all(|&w| (w - 1.0).abs() < 1e-12));
    }

    #[test]
    fn single_lineage_is_the_centred_walk() {
        let env = env_with(&[0.0, 1.0], MovingLaw::ShiftedExponential { rate: 1.0, shift: 0.0 }, 10, 2);
        let traj = simulate(env, SimConfig::new(10, 5)).unwrap();
        let series = compute_series(&traj);
        for n in 0..=10 {
            let s = traj.generation(n).unwrap().positions[0];
            assert!((series.n1[n] - (s - traj.env().ell(n))).abs() < 1e-12);
        }
    }

    #[test]
    fn truncation_limits() {
        let env = env_with(&[0.0, 0.5, 0.5], MovingLaw::Gaussian { mu: 0.0, sigma: 1.0 }, 10, 3);
        let traj = simulate(env, SimConfig::new(10, 9)).unwrap();
        let series = compute_series(&traj);
        let wide = compute_truncated_with_radius(&traj, 6, 1e9).unwrap();
        assert_eq!(wide.values(), series.values(6));
        let zero = compute_truncated_with_radius(&traj, 6, 0.0).unwrap();
        assert_eq!(zero.values(), [0.0; 4]);
        let default = compute_truncated(&traj, 6).unwrap();
        assert_eq!(default.truncation_radius, 6.0);
        assert!(default.w.abs() <= series.w[6]);
    }

    #[test]
    fn extinct_limits_are_zero() {
        let env = env_with(&[1.0], MovingLaw::Gaussian { mu: 0.0, sigma: 1.0 }, 10, 3);
        let traj = simulate(env, SimConfig::new(10, 1)).unwrap();
        let lim = estimate_limits(&compute_series(&traj)).unwrap();
        assert_eq!(lim.values(), [0.0; 4]);
    }

    #[test]
    fn limits_need_enough_generations() {
        let env = env_with(&[0.0, 0.0, 1.0], MovingLaw::Gaussian { mu: 0.0, sigma: 1.0 }, 5, 3);
        let traj = simulate(env, SimConfig::new(5, 1)).unwrap();
        assert!(matches!(estimate_limits(&compute_series(&traj)), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn streaming_sums_match_sorted_recomputation() {
        let env = env_with(&[0.0, 0.0, 0.3, 0.7], MovingLaw::ShiftedExponential { rate: 0.5, shift: -2.0 }, 12, 4);
        let traj = simulate(env, SimConfig::new(12, 8)).unwrap();
        let series = compute_series(&traj);
        let n = 12;
        let e = traj.env();
        let (ell, s2, s3) = (e.ell(n), e.central_sum(2, n), e.central_sum(3, n));
        let mut terms: Vec<f64> = traj
            .generation(n)
            .unwrap()
            .sorted_positions()
            .iter()
            .map(|p| {
                let x = p - ell;
                x * x * x - 3.0 * x * s2 - s3
            })
            .collect();
        terms.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
        let recomputed = crate::summation::compensated_sum(terms) / e.pi(n);
        assert!((recomputed - series.n3[n]).abs() <= 1e-9 * recomputed.abs().max(1.0));
    }
}
