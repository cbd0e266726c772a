//! The quenched branching random walk.
//!
//! Given a realized environment, generation `n + 1` is built from generation `n`
//! by visiting the particles in stored order; for each particle the offspring count
//! `N_u ~ p(ξ_n)` is drawn first, then one displacement `L_{ui} ~ G(ξ_n)` per child.
//! All draws come from one [`crate::rng::Rng`] stream, so a trajectory is a pure
//! function of the environment and the seed.

use std::sync::{Arc, OnceLock};

use serde::Serialize;

use crate::environment::RealizedEnvironment;
use crate::rng::{rng_from_seed, Rng};
use crate::{Error, Result};

pub const DEFAULT_PARTICLE_CAP: usize = 2_000_000;
pub const MAX_GENERATIONS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimConfig {
    pub n_max: usize,
    pub particle_cap: usize,
    pub seed: u64,
    /// Generation `k` whose members label every later particle.
    pub track_ancestors_at: Option<usize>,
}

impl SimConfig {
    pub fn new(n_max: usize, seed: u64) -> Self {
        Self {
            n_max,
            particle_cap: DEFAULT_PARTICLE_CAP,
            seed,
            track_ancestors_at: None,
        }
    }

    pub fn with_ancestors_at(mut self, k: usize) -> Self {
        self.track_ancestors_at = Some(k);
        self
    }

    pub fn with_particle_cap(mut self, cap: usize) -> Self {
        self.particle_cap = cap;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n_max == 0 || self.n_max > MAX_GENERATIONS {
            return Err(Error::InvalidConfig(format!(
                "n_max = {} outside 1..={MAX_GENERATIONS}",
                self.n_max
            )));
        }
        if self.particle_cap == 0 {
            return Err(Error::InvalidConfig("particle_cap must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "status", content = "generation", rename_all = "snake_case")]
pub enum Termination {
    Completed,
    /// First generation with no particles.
    ExtinctAt(usize),
    /// First generation that would have exceeded the particle cap (not stored).
    CapExceededAt(usize),
}

impl Termination {
    pub fn label(&self) -> String {
        match self {
            Termination::Completed => "completed".into(),
            Termination::ExtinctAt(n) => format!("extinct_at_{n}"),
            Termination::CapExceededAt(n) => format!("cap_exceeded_at_{n}"),
        }
    }

    pub fn is_capped(&self) -> bool {
        matches!(self, Termination::CapExceededAt(_))
    }

    pub fn is_extinct(&self) -> bool {
        matches!(self, Termination::ExtinctAt(_))
    }
}

/// The particles of one generation.
#[derive(Debug, Clone)]
pub struct GenerationSnapshot {
    pub generation: usize,
    /// `S_u` for `u ∈ 𝕋_n`, in creation order.
    pub positions: Vec<f64>,
    /// Index of each particle's parent in the previous snapshot.
    pub parents: Vec<u32>,
    /// Index of each particle's ancestor in the tracked generation, if tracking applies.
    pub ancestor_ids: Option<Vec<u32>>,
    sorted: OnceLock<Vec<f64>>,
}

impl GenerationSnapshot {
    pub fn new(generation: usize, positions: Vec<f64>, parents: Vec<u32>) -> Self {
        debug_assert!(generation == 0 || parents.len() == positions.len());
        Self {
            generation,
            positions,
            parents,
            ancestor_ids: None,
            sorted: OnceLock::new(),
        }
    }

    pub fn root() -> Self {
        Self::new(0, vec![0.0], Vec::new())
    }

    pub fn count(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Positions in increasing order, sorted once on first use.
    pub fn sorted_positions(&self) -> &[f64] {
        self.sorted.get_or_init(|| {
            let mut v = self.positions.clone();
            v.sort_by(f64::total_cmp);
            v
        })
    }
}

/// `Z_n((−∞, threshold]) = #{u ∈ 𝕋_n : S_u ≤ threshold}`.
pub fn counting_measure(snap: &GenerationSnapshot, threshold: f64) -> usize {
    snap.sorted_positions().partition_point(|&p| p <= threshold)
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    env: Arc<RealizedEnvironment>,
    snapshots: Vec<GenerationSnapshot>,
    termination: Termination,
    config: SimConfig,
}

impl Trajectory {
    pub fn env(&self) -> &RealizedEnvironment {
        &self.env
    }

    pub fn env_arc(&self) -> &Arc<RealizedEnvironment> {
        &self.env
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn termination(&self) -> Termination {
        self.termination
    }

    /// Stored snapshots, generation 0 first.
    pub fn snapshots(&self) -> &[GenerationSnapshot] {
        &self.snapshots
    }

    /// Highest stored generation.
    pub fn last_generation(&self) -> usize {
        self.snapshots.len() - 1
    }

    pub fn generation(&self, n: usize) -> Result<&GenerationSnapshot> {
        self.snapshots.get(n).ok_or(Error::Unavailable {
            generation: n,
            termination: self.termination,
        })
    }

    /// Index of the generation-`k` ancestor of every generation-`n` particle.
    pub fn ancestor_indices(&self, n: usize, k: usize) -> Result<Vec<u32>> {
        if k > n {
            return Err(Error::InvalidConfig(format!("ancestor generation {k} after {n}")));
        }
        let snap = self.generation(n)?;
        self.generation(k)?;
        if let (Some(ids), Some(tracked)) = (&snap.ancestor_ids, self.config.track_ancestors_at) {
            if tracked == k {
                return Ok(ids.clone());
            }
        }
        let mut ids: Vec<u32> = (0..snap.count() as u32).collect();
        for g in (k + 1..=n).rev() {
            let parents = &self.snapshots[g].parents;
            for id in ids.iter_mut() {
                *id = parents[*id as usize];
            }
        }
        Ok(ids)
    }
}

/// Builds generation `n + 1` from generation `n`. Returns `Ok(None)` if the new
/// generation would hold more than `cap` particles.
pub fn step_generation(
    env: &RealizedEnvironment,
    parent: &GenerationSnapshot,
    cap: usize,
    rng: &mut Rng,
) -> Result<Option<GenerationSnapshot>> {
    let n = parent.generation;
    if n >= env.len() {
        return Err(Error::EnvironmentTooShort {
            required: n + 1,
            available: env.len(),
        });
    }
    let state = env.state(n);
    let law = &state.law.moving;
    let mut positions = Vec::new();
    let mut parents = Vec::new();
    for (i, &s) in parent.positions.iter().enumerate() {
        let children = state.sample_offspring(rng);
        if positions.len() + children > cap {
            return Ok(None);
        }
        for _ in 0..children {
            positions.push(s + law.sample(rng));
            parents.push(i as u32);
        }
    }
    Ok(Some(GenerationSnapshot::new(n + 1, positions, parents)))
}

pub fn simulate(env: Arc<RealizedEnvironment>, cfg: SimConfig) -> Result<Trajectory> {
    cfg.validate()?;
    if env.len() < cfg.n_max {
        return Err(Error::EnvironmentTooShort {
            required: cfg.n_max,
            available: env.len(),
        });
    }
    let mut rng = rng_from_seed(cfg.seed);
    let mut snapshots = vec![GenerationSnapshot::root()];
    let mut termination = Termination::Completed;
    for n in 0..cfg.n_max {
        let parent = &snapshots[n];
        if parent.is_empty() {
            snapshots.push(GenerationSnapshot::new(n + 1, Vec::new(), Vec::new()));
            continue;
        }
        match step_generation(&env, parent, cfg.particle_cap, &mut rng)? {
            Some(child) => {
                if child.is_empty() && termination == Termination::Completed {
                    termination = Termination::ExtinctAt(n + 1);
                }
                snapshots.push(child);
            }
            None => {
                termination = Termination::CapExceededAt(n + 1);
                break;
            }
        }
    }
    let mut traj = Trajectory {
        env,
        snapshots,
        termination,
        config: cfg,
    };
    if let Some(k) = cfg.track_ancestors_at {
        if k < traj.snapshots.len() {
            for n in k..traj.snapshots.len() {
                let ids = traj.ancestor_indices(n, k)?;
                traj.snapshots[n].ancestor_ids = Some(ids);
            }
        }
    }
    Ok(traj)
}

/// `Π_n^{−1} Z_n(ℓ_n + s_n t)`.
pub fn normalized_lhs(traj: &Trajectory, n: usize, t: f64) -> Result<f64> {
    let snap = traj.generation(n)?;
    if snap.is_empty() {
        return Ok(0.0);
    }
    let env = traj.env();
    let s = env.s(n);
    if !(s > 0.0) {
        return Err(Error::DegenerateWindow { start: 0, end: n });
    }
    let count = counting_measure(snap, env.ell(n) + s * t);
    Ok(count as f64 / env.pi(n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{sample_environment, EnvState, EnvironmentModel, MovingLaw, OffspringLaw};

    fn env_with(pmf: &[f64], moving: MovingLaw, n: usize) -> Arc<RealizedEnvironment> {
        let model = EnvironmentModel::single(EnvState {
            offspring: OffspringLaw::ExplicitPmf { pmf: pmf.to_vec() },
            moving,
        })
        .unwrap();
        Arc::new(sample_environment(&model, n, 1).unwrap())
    }

    fn gauss() -> MovingLaw {
        MovingLaw::Gaussian { mu: 0.0, sigma: 1.0 }
    }

    #[test]
    fn single_lineage() {
        let env = env_with(&[0.0, 1.0], gauss(), 10);
        let traj = simulate(env, SimConfig::new(10, 3)).unwrap();
        assert_eq!(traj.termination(), Termination::Completed);
        for snap in traj.snapshots() {
            assert_eq!(snap.count(), 1);
        }
        assert_eq!(traj.generation(0).unwrap().positions, vec![0.0]);
        let s = traj.generation(10).unwrap().positions[0];
        let expected = if s <= traj.env().s(10) * 0.3 { 1.0 } else { 0.0 };
        assert_eq!(normalized_lhs(&traj, 10, 0.3).unwrap(), expected);
    }

    #[test]
    fn binary_branching_counts() {
        let env = env_with(&[0.0, 0.0, 1.0], gauss(), 12);
        let traj = simulate(env, SimConfig::new(12, 3)).unwrap();
        for (n, snap) in traj.snapshots().iter().enumerate() {
            assert_eq!(snap.count(), 1 << n);
        }
    }

    #[test]
    fn immediate_extinction() {
        let env = env_with(&[1.0], gauss(), 5);
        let traj = simulate(env, SimConfig::new(5, 3)).unwrap();
        assert_eq!(traj.termination(), Termination::ExtinctAt(1));
        for n in 1..=5 {
            assert!(traj.generation(n).unwrap().is_empty());
            assert_eq!(normalized_lhs(&traj, n, 0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn cap_is_a_termination() {
        let env = env_with(&[0.0, 0.0, 1.0], gauss(), 12);
        let traj = simulate(env, SimConfig::new(12, 3).with_particle_cap(100)).unwrap();
        assert_eq!(traj.termination(), Termination::CapExceededAt(7));
        assert_eq!(traj.last_generation(), 6);
        assert!(matches!(normalized_lhs(&traj, 8, 0.0), Err(Error::Unavailable { generation: 8, .. })));
    }

    #[test]
    fn short_environment_is_rejected() {
        let env = env_with(&[0.0, 0.0, 1.0], gauss(), 4);
        assert!(matches!(
            simulate(env, SimConfig::new(5, 1)),
            Err(Error::EnvironmentTooShort { required: 5, available: 4 })
        ));
    }

    #[test]
    fn counting_measure_basics() {
        let snap = GenerationSnapshot::new(1, vec![2.0, -1.0, 0.0], vec![0, 0, 0]);
        assert_eq!(counting_measure(&snap, 0.0), 2);
        assert_eq!(counting_measure(&snap, 1e300), 3);
        assert_eq!(counting_measure(&snap, -1e300), 0);
    }

    #[test]
    fn deterministic_and_ancestry_partitions() {
        let env = env_with(&[0.2, 0.3, 0.5], MovingLaw::Uniform { a: -1.0, b: 1.0 }, 10);
        let cfg = SimConfig::new(10, 77).with_ancestors_at(2);
        let a = simulate(env.clone(), cfg).unwrap();
        let b = simulate(env, cfg).unwrap();
        for (x, y) in a.snapshots().iter().zip(b.snapshots()) {
            assert_eq!(x.positions, y.positions);
        }
        let k_count = a.generation(2).unwrap().count();
        for n in 2..=a.last_generation() {
            let ids = a.generation(n).unwrap().ancestor_ids.as_ref().unwrap();
            assert_eq!(ids.len(), a.generation(n).unwrap().count());
            assert!(ids.iter().all(|&i| (i as usize) < k_count));
            let mut sizes = vec![0usize; k_count];
            for &i in ids {
                sizes[i as usize] += 1;
            }
            assert_eq!(sizes.iter().sum::<usize>(), a.generation(n).unwrap().count());
            // tracked ids agree with chained parent lookup
            assert_eq!(ids, &a.ancestor_indices(n, 2).unwrap());
        }
        assert!(a.generation(1).unwrap().ancestor_ids.is_none());
    }
}
