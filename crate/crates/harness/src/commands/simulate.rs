use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use anyhow::bail;
use brwre_core::environment::{sample_environment, validate_model};
use brwre_core::expansion::split_generation;
use brwre_core::martingales::{compute_series, compute_truncated, MartingaleSeries, TruncatedValues};
use brwre_core::rng::{replica_seed, stream_seed, ENVIRONMENT_STREAM, TREE_STREAM};
use brwre_core::simulator::{simulate, SimConfig, Termination, Trajectory};
use rayon::prelude::*;
use serde::Serialize;

use super::RunOptions;
use crate::config::ExperimentConfig;
use crate::manifest::RunManifest;
use crate::output::{fmt_float, write_json, CsvOut};
use crate::workers::pool;

pub const MARTINGALE_COLUMNS: [&str; 11] = [
    "replica", "n", "W_n", "N1", "N2", "N3", "Wbar_k", "N1bar_k", "N2bar_k", "N3bar_k", "population",
];
pub const TRAJECTORY_COLUMNS: [&str; 4] = ["generation", "particle_index", "ancestor_index_at_k", "position"];
/// Above this fraction of capped replicas the run is flagged.
pub const CAP_WARNING_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReplicaSeeds {
    pub replica: u64,
    pub environment: u64,
    pub tree: u64,
}

impl ReplicaSeeds {
    pub fn derive(master: u64, replica: usize) -> Self {
        let r = replica_seed(master, replica as u64);
        Self {
            replica: r,
            environment: stream_seed(r, ENVIRONMENT_STREAM),
            tree: stream_seed(r, TREE_STREAM),
        }
    }
}

struct ReplicaRun {
    termination: Termination,
    series: MartingaleSeries,
    /// Truncated values at `k = n` with radius `n`, one per stored generation.
    truncated: Vec<TruncatedValues>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateSummary {
    pub replicas: usize,
    pub n_max: usize,
    pub completed: usize,
    pub extinct: usize,
    pub capped: usize,
    pub cap_fraction: f64,
    pub martingale_rows: usize,
    pub trajectories_dumped: usize,
}

#[derive(Debug, Clone)]
pub struct SimulateOutcome {
    pub summary: SimulateSummary,
    /// More than half of the replicas hit the particle cap.
    pub advisory: bool,
}

#[derive(Serialize)]
struct TrajectorySidecar<'a> {
    replica: usize,
    seeds: ReplicaSeeds,
    termination: Termination,
    track_ancestors_at: Option<usize>,
    environment_sequence: &'a [usize],
}

fn dump_trajectory(dir: &Path, replica: usize, seeds: ReplicaSeeds, traj: &Trajectory) -> anyhow::Result<()> {
    let mut csv = CsvOut::create(&dir.join(format!("replica_{replica:06}.csv")), &TRAJECTORY_COLUMNS)?;
    for snap in traj.snapshots() {
        for (i, &p) in snap.positions.iter().enumerate() {
            let anc = snap.ancestor_ids.as_ref().map_or(String::new(), |a| a[i].to_string());
            csv.row([snap.generation.to_string(), i.to_string(), anc, fmt_float(p)])?;
        }
    }
    csv.finish()?;
    let sidecar = TrajectorySidecar {
        replica,
        seeds,
        termination: traj.termination(),
        track_ancestors_at: traj.config().track_ancestors_at,
        environment_sequence: traj.env().sequence(),
    };
    write_json(&dir.join(format!("replica_{replica:06}.json")), &sidecar)
}

fn run_one(cfg: &ExperimentConfig, replica: usize, dump_dir: Option<&Path>) -> anyhow::Result<ReplicaRun> {
    let seeds = ReplicaSeeds::derive(cfg.seed, replica);
    let n_max = cfg.n_max();
    let env = Arc::new(sample_environment(&cfg.model, n_max, seeds.environment)?);
    let sim = SimConfig::new(n_max, seeds.tree)
        .with_particle_cap(cfg.particle_cap)
        .with_ancestors_at(split_generation(n_max, cfg.beta));
    let traj = simulate(env, sim)?;
    if let Some(dir) = dump_dir {
        dump_trajectory(dir, replica, seeds, &traj)?;
    }
    let series = compute_series(&traj);
    let truncated = (0..series.len())
        .map(|n| compute_truncated(&traj, n))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ReplicaRun {
        termination: traj.termination(),
        series,
        truncated,
    })
}

pub fn run_simulate(cfg: &ExperimentConfig, opts: &RunOptions, dump: bool) -> anyhow::Result<SimulateOutcome> {
    let report = validate_model(&cfg.model);
    if !report.passed() {
        bail!("model fails validation (E ln m_0 = {}); see `brwre validate`", report.expected_log_mean);
    }
    let out = opts.prepare()?;
    let dump_dir = if dump {
        let d = out.join("trajectories");
        std::fs::create_dir_all(&d)?;
        Some(d)
    } else {
        None
    };
    // batches only matter to the expansion study
    let total = cfg.replicas;
    let mut manifest = RunManifest::new("simulate", cfg.semantic_hash(), cfg.seed, opts.workers);
    manifest.replica_seeds = (0..total)
        .map(|i| format!("{:016x}", ReplicaSeeds::derive(cfg.seed, i).replica))
        .collect();

    let started = Instant::now();
    let runs: Vec<ReplicaRun> = pool(opts.workers)?.install(|| {
        (0..total)
            .into_par_iter()
            .map(|i| run_one(cfg, i, dump_dir.as_deref()))
            .collect::<anyhow::Result<_>>()
    })?;
    manifest.stage("simulate", total, started);

    let started = Instant::now();
    let mut csv = CsvOut::create(&out.join("martingales.csv"), &MARTINGALE_COLUMNS)?;
    for (replica, run) in runs.iter().enumerate() {
        let s = &run.series;
        for (n, tr) in run.truncated.iter().enumerate() {
            let mut fields = vec![replica.to_string(), n.to_string()];
            fields.extend(s.values(n).iter().chain(tr.values().iter()).map(|&v| fmt_float(v)));
            fields.push(s.population[n].to_string());
            csv.row(fields)?;
        }
    }
    let rows = csv.finish()?;
    manifest.stage("write_martingales", rows, started);

    let count = |f: fn(&Termination) -> bool| runs.iter().filter(|r| f(&r.termination)).count();
    let capped = count(Termination::is_capped);
    let extinct = count(Termination::is_extinct);
    let cap_fraction = capped as f64 / total as f64;
    let summary = SimulateSummary {
        replicas: total,
        n_max: cfg.n_max(),
        completed: total - capped - extinct,
        extinct,
        capped,
        cap_fraction,
        martingale_rows: rows,
        trajectories_dumped: if dump { total } else { 0 },
    };
    write_json(&out.join("simulate_summary.json"), &summary)?;
    write_json(&out.join("simulate_manifest.json"), &manifest)?;
    Ok(SimulateOutcome {
        advisory: cap_fraction > CAP_WARNING_FRACTION,
        summary,
    })
}
