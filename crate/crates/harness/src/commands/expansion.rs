use std::time::Instant;

use anyhow::bail;
use brwre_core::environment::{sample_environment, validate_model, MovingLaw, RealizedEnvironment};
use brwre_core::expansion::{
    derivative_audit, gaussian_corollary_rhs, run_replica, summarize, split_generation, ExpansionTerms,
    ReplicaOutcome, ResidualSuiteConfig, ResidualSummary, AB_IDENTITY_TOLERANCE,
};
use brwre_core::stats::mean_and_se;
use brwre_core::Error;
use rayon::prelude::*;
use serde::Serialize;

use super::simulate::ReplicaSeeds;
use super::{all_passed, RunOptions, Verdict};
use crate::config::ExperimentConfig;
use crate::manifest::RunManifest;
use crate::output::{fmt_float, write_json, CsvOut};
use crate::workers::pool;

pub const EXPANSION_COLUMNS: [&str; 15] = [
    "replica", "n", "t", "lhs", "rhs0", "rhs1", "rhs2", "rhs3", "res0", "res1", "res2", "res3", "A", "B",
    "termination",
];
pub const GAUSSIAN_REDUCTION_TOLERANCE: f64 = 1e-12;
pub const GAUSSIAN_Q_TOLERANCE: f64 = 1e-15;
pub const DERIVATIVE_TOLERANCE: f64 = 1e-6;
/// Replicas whose environments are rebuilt for the analytic checks.
pub const AUDIT_REPLICAS: usize = 20;

#[derive(Debug, Clone, Serialize)]
pub struct BatchGate {
    pub batch: usize,
    pub usable: usize,
    /// Median `|residual_κ|` at the gate `(n, t)`.
    pub median_abs_residual: [f64; 4],
    pub nonincreasing: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScaledA {
    pub n: usize,
    pub t: f64,
    pub replicas: usize,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpansionSummary {
    pub replicas: usize,
    pub batches: usize,
    pub completed: usize,
    pub extinct: usize,
    pub capped: usize,
    pub identity_violations: Vec<String>,
    pub max_identity_gap: f64,
    pub pooled: ResidualSummary,
    pub gate_batches: Vec<BatchGate>,
    /// Pooled slope of the κ = 3 residual at the gate `t`; not gated.
    pub kappa3_slope: Option<f64>,
    /// Mean of `n^{3/2} A` at the gate `(n, t)`.
    pub scaled_a: Option<ScaledA>,
    pub verdicts: Vec<Verdict>,
    pub passed: bool,
}

fn suite_config(cfg: &ExperimentConfig, batch: usize) -> ResidualSuiteConfig {
    ResidualSuiteConfig {
        model: cfg.model.clone(),
        n_list: cfg.n_list.clone(),
        t_grid: cfg.t_grid.clone(),
        replicas: cfg.replicas,
        first_replica: batch * cfg.replicas,
        seed: cfg.seed,
        n_max: cfg.n_max(),
        particle_cap: cfg.particle_cap,
        beta: cfg.beta,
        provider: cfg.provider(),
    }
}

fn environment_of(cfg: &ExperimentConfig, replica: usize) -> anyhow::Result<RealizedEnvironment> {
    let seeds = ReplicaSeeds::derive(cfg.seed, replica);
    Ok(sample_environment(&cfg.model, cfg.n_max(), seeds.environment)?)
}

fn is_gaussian(cfg: &ExperimentConfig) -> bool {
    cfg.model
        .states()
        .iter()
        .all(|s| matches!(s.state.moving, MovingLaw::Gaussian { .. }))
}

/// Third-order RHS with zero corrections against the closed Gaussian form, and, for a
/// Gaussian model, vanishing corrections on the actual environments.
fn gaussian_reduction(cfg: &ExperimentConfig, audit: &[(&ReplicaOutcome, RealizedEnvironment)]) -> anyhow::Result<Verdict> {
    let gaussian_model = is_gaussian(cfg);
    let (mut rhs_gap, mut q_max): (f64, f64) = (0.0, 0.0);
    let mut checked = 0;
    for (outcome, env) in audit {
        let Some(limits) = outcome.limits else { continue };
        for &n in &cfg.n_list {
            let s = env.s(n);
            let zero = ExpansionTerms::gaussian(n, s)?;
            let actual = ExpansionTerms::from_env(env, n)?;
            for &t in &cfg.t_grid {
                let want = gaussian_corollary_rhs(t, s, &limits);
                let scale = 1.0 + want.abs();
                rhs_gap = rhs_gap.max((zero.rhs(3, t, &limits)? - want).abs() / scale);
                if gaussian_model {
                    rhs_gap = rhs_gap.max((actual.rhs(3, t, &limits)? - want).abs() / scale);
                    for nu in 1..=3 {
                        q_max = q_max.max(actual.q_derivative(nu, 0).eval(t).abs());
                    }
                }
                checked += 1;
            }
        }
    }
    if checked == 0 {
        return Ok(Verdict::skipped("gaussian_reduction", "no usable replicas".into()));
    }
    let detail = if gaussian_model {
        format!("max relative RHS gap {rhs_gap:e}, max |q_nu| {q_max:e} over {checked} points")
    } else {
        format!("max relative RHS gap {rhs_gap:e} with corrections zeroed, {checked} points")
    };
    Ok(Verdict::new(
        "gaussian_reduction",
        rhs_gap <= GAUSSIAN_REDUCTION_TOLERANCE && q_max <= GAUSSIAN_Q_TOLERANCE,
        detail,
    ))
}

fn derivative_verdict(cfg: &ExperimentConfig, audit: &[(&ReplicaOutcome, RealizedEnvironment)]) -> anyhow::Result<Verdict> {
    let mut worst: f64 = 0.0;
    for (_, env) in audit {
        for &n in &cfg.n_list {
            worst = worst.max(derivative_audit(&ExpansionTerms::from_env(env, n)?, &cfg.t_grid));
        }
    }
    if audit.is_empty() {
        return Ok(Verdict::skipped("derivative_terms", "no environments audited".into()));
    }
    Ok(Verdict::new(
        "derivative_terms",
        worst <= DERIVATIVE_TOLERANCE,
        format!("max |symbolic - finite difference| = {worst:e} over {} environments", audit.len()),
    ))
}

fn nonincreasing(m: &[f64; 4]) -> bool {
    m[1] <= m[0] && m[2] <= m[1]
}

pub fn run_expansion(cfg: &ExperimentConfig, opts: &RunOptions) -> anyhow::Result<ExpansionSummary> {
    let report = validate_model(&cfg.model);
    if !report.passed() {
        bail!("model fails validation (E ln m_0 = {}); see `brwre validate`", report.expected_log_mean);
    }
    let out = opts.prepare()?;
    let total = cfg.total_replicas();
    let mut manifest = RunManifest::new("verify-expansion", cfg.semantic_hash(), cfg.seed, opts.workers);
    manifest.replica_seeds = (0..total)
        .map(|i| format!("{:016x}", ReplicaSeeds::derive(cfg.seed, i).replica))
        .collect();
    let suites: Vec<ResidualSuiteConfig> = (0..cfg.batches).map(|b| suite_config(cfg, b)).collect();
    for s in &suites {
        s.validate()?;
    }

    let started = Instant::now();
    let results: Vec<Result<ReplicaOutcome, String>> = pool(opts.workers)?.install(|| {
        (0..total)
            .into_par_iter()
            .map(|i| match run_replica(&suites[i / cfg.replicas], i) {
                Ok(o) => Ok(Ok(o)),
                Err(Error::IdentityViolation(m)) => Ok(Err(m)),
                Err(e) => Err(e),
            })
            .collect::<Result<_, Error>>()
    })?;
    manifest.stage("residual_suite", total, started);
    let mut violations = Vec::new();
    let mut outcomes = Vec::with_capacity(total);
    for r in results {
        match r {
            Ok(o) => outcomes.push(o),
            Err(m) => violations.push(m),
        }
    }

    let started = Instant::now();
    let mut csv = CsvOut::create(&out.join("expansion.csv"), &EXPANSION_COLUMNS)?;
    let mut max_gap: f64 = 0.0;
    for o in &outcomes {
        for r in &o.rows {
            max_gap = max_gap.max((r.a + r.b - r.lhs).abs() / (1.0 + r.lhs.abs()));
            let mut fields = vec![r.replica.to_string(), r.n.to_string(), fmt_float(r.t), fmt_float(r.lhs)];
            fields.extend(r.rhs.iter().chain(&r.residual).map(|&v| fmt_float(v)));
            fields.push(fmt_float(r.a));
            fields.push(fmt_float(r.b));
            fields.push(r.termination.label());
            csv.row(fields)?;
        }
    }
    let rows = csv.finish()?;
    manifest.stage("write_csv", rows, started);

    let started = Instant::now();
    let pooled = summarize(&cfg.n_list, &cfg.t_grid, &outcomes);
    let gate = cfg.gate;
    let gate_cell_exists = cfg.n_list.contains(&gate.n) && cfg.t_grid.contains(&gate.t);
    let gate_batches: Vec<BatchGate> = if gate_cell_exists {
        (0..cfg.batches)
            .map(|b| {
                let range = b * cfg.replicas..(b + 1) * cfg.replicas;
                let batch = summarize(
                    &cfg.n_list,
                    &cfg.t_grid,
                    outcomes.iter().filter(|o| range.contains(&o.replica)),
                );
                let cell = batch.cell(gate.n, gate.t).expect("gate cell present");
                BatchGate {
                    batch: b,
                    usable: cell.replicas,
                    median_abs_residual: cell.median_abs_residual,
                    nonincreasing: nonincreasing(&cell.median_abs_residual),
                }
            })
            .collect()
    } else {
        Vec::new()
    };

    let audit: Vec<(&ReplicaOutcome, RealizedEnvironment)> = outcomes
        .iter()
        .filter(|o| o.usable())
        .take(AUDIT_REPLICAS)
        .map(|o| Ok((o, environment_of(cfg, o.replica)?)))
        .collect::<anyhow::Result<_>>()?;

    let mut verdicts = Vec::new();
    verdicts.push(Verdict::new(
        "ab_identity",
        violations.is_empty() && max_gap <= AB_IDENTITY_TOLERANCE,
        if violations.is_empty() {
            format!("max |A + B - lhs| / (1 + |lhs|) = {max_gap:e} over {rows} rows")
        } else {
            format!("{} replicas violated: {}", violations.len(), violations.join("; "))
        },
    ));
    verdicts.push(gaussian_reduction(cfg, &audit)?);
    verdicts.push(derivative_verdict(cfg, &audit)?);

    if gate_batches.is_empty() {
        verdicts.push(Verdict::skipped(
            "order_monotonicity",
            format!("gate n = {}, t = {} not in n_list x t_grid", gate.n, gate.t),
        ));
    } else {
        let good = gate_batches.iter().filter(|g| g.nonincreasing).count();
        let frac = good as f64 / gate_batches.len() as f64;
        verdicts.push(Verdict::new(
            "order_monotonicity",
            frac >= gate.batch_fraction,
            format!(
                "{good}/{} batches nonincreasing in kappa = 0, 1, 2 at n = {}, t = {}; need {}",
                gate_batches.len(),
                gate.n,
                gate.t,
                gate.batch_fraction
            ),
        ));
    }
    let gate_slopes = pooled.slope(gate.t).map(|s| s.slopes);
    match gate_slopes {
        Some([Some(s0), Some(s1), ..]) => verdicts.push(Verdict::new(
            "slope_gap",
            s1 <= s0 - gate.slope_gap,
            format!("slope kappa0 {s0:.4}, kappa1 {s1:.4}; need kappa1 <= kappa0 - {}", gate.slope_gap),
        )),
        _ => verdicts.push(Verdict::skipped(
            "slope_gap",
            format!("no slope fit at t = {} (needs two or more n with usable replicas)", gate.t),
        )),
    }
    let kappa3_slope = gate_slopes.and_then(|s| s[3]);
    verdicts.push(Verdict::skipped(
        "kappa3_reported",
        match (gate_slopes, pooled.cell(gate.n, gate.t)) {
            (Some(s), Some(c)) => format!(
                "slope {}, median |res3| {} at n = {} (not gated)",
                s[3].map_or("n/a".into(), |v| format!("{v:.4}")),
                fmt_float(c.median_abs_residual[3]),
                gate.n
            ),
            _ => "not available".into(),
        },
    ));

    let scaled: Vec<f64> = outcomes
        .iter()
        .filter(|o| o.usable())
        .flat_map(|o| o.rows.iter())
        .filter(|r| r.n == gate.n && r.t == gate.t)
        .map(|r| (gate.n as f64).powf(1.5) * r.a)
        .collect();
    let scaled_a = mean_and_se(&scaled).map(|(mean, stderr)| ScaledA {
        n: gate.n,
        t: gate.t,
        replicas: scaled.len(),
        mean,
        stderr,
    });
    if let Some(s) = &scaled_a {
        verdicts.push(Verdict::skipped(
            "scaled_a_reported",
            format!(
                "mean n^1.5 A = {:.4e} +- {:.2e} at k = {} (not gated)",
                s.mean,
                s.stderr,
                split_generation(gate.n, cfg.beta)
            ),
        ));
    }
    manifest.stage("summary", verdicts.len(), started);

    let summary = ExpansionSummary {
        replicas: total,
        batches: cfg.batches,
        completed: pooled.completed,
        extinct: pooled.extinct,
        capped: pooled.capped,
        identity_violations: violations,
        max_identity_gap: max_gap,
        pooled,
        gate_batches,
        kappa3_slope,
        scaled_a,
        passed: all_passed(&verdicts),
        verdicts,
    };
    write_json(&out.join("expansion_summary.json"), &summary)?;
    write_json(&out.join("expansion_manifest.json"), &manifest)?;
    Ok(summary)
}
