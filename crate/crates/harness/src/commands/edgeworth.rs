use std::time::Instant;

use brwre_core::edgeworth::{CumulantWindow, EdgeworthCdf, OracleCdf, OracleMethod};
use brwre_core::environment::{
    sample_environment, EnvState, EnvironmentModel, MovingLaw, OffspringLaw, RealizedEnvironment,
};
use brwre_core::rng::{replica_seed, stream_seed, ENVIRONMENT_STREAM, ORACLE_STREAM};
use brwre_core::special::std_normal_cdf;
use brwre_core::stats::{loglog_slope, median};
use rayon::prelude::*;
use serde::Serialize;

use super::{all_passed, RunOptions, Verdict};
use crate::config::ExperimentConfig;
use crate::manifest::RunManifest;
use crate::output::{fmt_float, write_json, CsvOut};
use crate::workers::pool;

pub const EDGEWORTH_COLUMNS: [&str; 9] = ["env", "L", "x", "oracle", "oracle_band", "phi", "ew3", "ew4", "ew5"];
pub const EDGEWORTH_ORDERS: [usize; 3] = [3, 4, 5];
/// Fraction of windows in which the k = 3 term must not lose to Φ.
pub const K3_WIN_FRACTION: f64 = 0.9;
pub const K5_SLOPE_LIMIT: f64 = -1.0;
/// Below this sup error against Φ a window counts as Gaussian and the comparisons are skipped.
pub const GAUSSIAN_FLOOR: f64 = 1e-12;
const EXACTNESS_TOLERANCE: f64 = 1e-15;
const TRIANGULAR_TOLERANCE: f64 = 1e-7;

struct WindowStudy {
    env: usize,
    len: usize,
    /// Per x: oracle value, band, Φ, Edgeworth k = 3, 4, 5.
    points: Vec<[f64; 6]>,
}

impl WindowStudy {
    fn sup_error(&self, col: usize) -> f64 {
        self.points.iter().map(|p| (p[col] - p[0]).abs()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WindowErrors {
    pub env: usize,
    pub len: usize,
    pub phi: f64,
    pub ew3: f64,
    pub ew4: f64,
    pub ew5: f64,
    pub max_oracle_band: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EdgeworthSummary {
    pub lengths: Vec<usize>,
    pub environments: usize,
    /// Median over environments of the sup error, per length.
    pub median_sup_error: MedianErrors,
    /// Log-log slope of the median sup error against `L`.
    pub slopes: SlopeSet,
    pub windows: Vec<WindowErrors>,
    pub verdicts: Vec<Verdict>,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MedianErrors {
    pub phi: Vec<f64>,
    pub ew3: Vec<f64>,
    pub ew4: Vec<f64>,
    pub ew5: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SlopeSet {
    pub phi: Option<f64>,
    pub ew3: Option<f64>,
    pub ew4: Option<f64>,
    pub ew5: Option<f64>,
}

fn binary(moving: MovingLaw) -> EnvState {
    EnvState {
        offspring: OffspringLaw::ExplicitPmf { pmf: vec![0.0, 0.0, 1.0] },
        moving,
    }
}

fn constant_env(moving: MovingLaw, len: usize) -> anyhow::Result<RealizedEnvironment> {
    Ok(RealizedEnvironment::constant(EnvironmentModel::single(binary(moving))?, len)?)
}

/// Gaussian steps: every Edgeworth main term is Φ.
pub fn gaussian_exactness(x_grid: &[f64]) -> anyhow::Result<Verdict> {
    let env = constant_env(MovingLaw::Gaussian { mu: 0.3, sigma: 1.7 }, 8)?;
    let window = CumulantWindow::full(&env, 8)?;
    let mut worst: f64 = 0.0;
    for order in 3..=6 {
        let cdf = EdgeworthCdf::new(&window, order)?;
        for &x in x_grid {
            worst = worst.max((cdf.cdf(x) - std_normal_cdf(x)).abs());
        }
    }
    Ok(Verdict::new(
        "gaussian_exactness",
        worst <= EXACTNESS_TOLERANCE,
        format!("max |EW_k - Phi| = {worst:e} over k = 3..6"),
    ))
}

/// Two U(−1, 1) steps: the sum has the triangular law on [−2, 2].
pub fn uniform_pair_triangular(x_grid: &[f64], method: OracleMethod) -> anyhow::Result<Verdict> {
    let env = constant_env(MovingLaw::Uniform { a: -1.0, b: 1.0 }, 2)?;
    let window = CumulantWindow::full(&env, 2)?;
    let oracle = OracleCdf::build(&window, method)?;
    let b = window.b();
    let mut worst: f64 = 0.0;
    let mut band: f64 = 0.0;
    for &x in x_grid {
        let y = (x * b).clamp(-2.0, 2.0);
        let exact = if y <= 0.0 { (y + 2.0).powi(2) / 8.0 } else { 1.0 - (2.0 - y).powi(2) / 8.0 };
        let got = oracle.eval(x);
        worst = worst.max((got.value - exact).abs());
        band = band.max(got.band);
    }
    let tol = TRIANGULAR_TOLERANCE.max(band);
    Ok(Verdict::new(
        "uniform_pair_triangular",
        worst <= tol,
        format!("max |oracle - triangular| = {worst:e}, tolerance {tol:e}"),
    ))
}

fn study_window(
    env: &RealizedEnvironment,
    e: usize,
    len: usize,
    x_grid: &[f64],
    method: OracleMethod,
) -> anyhow::Result<WindowStudy> {
    let window = CumulantWindow::full(env, len)?;
    let oracle = OracleCdf::build(&window, method)?;
    let cdfs = EDGEWORTH_ORDERS.map(|k| EdgeworthCdf::new(&window, k));
    let [c3, c4, c5] = cdfs;
    let (c3, c4, c5) = (c3?, c4?, c5?);
    let points = x_grid
        .iter()
        .map(|&x| {
            let o = oracle.eval(x);
            [o.value, o.band, std_normal_cdf(x), c3.cdf(x), c4.cdf(x), c5.cdf(x)]
        })
        .collect();
    Ok(WindowStudy { env: e, len, points })
}

/// The oracle method for environment `e`; Monte Carlo draws use a per-environment stream.
fn oracle_for(cfg: &ExperimentConfig, e: usize) -> OracleMethod {
    cfg.oracle.method(stream_seed(replica_seed(cfg.seed, e as u64), ORACLE_STREAM))
}

pub fn run_edgeworth(cfg: &ExperimentConfig, opts: &RunOptions) -> anyhow::Result<EdgeworthSummary> {
    let out = opts.prepare()?;
    let study = &cfg.edgeworth_study;
    let lengths = study.lengths.clone();
    let l_max = lengths.iter().copied().max().unwrap_or(1);
    let mut manifest = RunManifest::new("verify-edgeworth", cfg.semantic_hash(), cfg.seed, opts.workers);
    manifest.replica_seeds = (0..study.environments)
        .map(|e| format!("{:016x}", replica_seed(cfg.seed, e as u64)))
        .collect();

    let started = Instant::now();
    let mut verdicts = vec![
        gaussian_exactness(&study.x_grid)?,
        uniform_pair_triangular(&study.x_grid, OracleMethod::default_grid())?,
    ];
    manifest.stage("builtin_checks", verdicts.len(), started);

    let started = Instant::now();
    let jobs: Vec<(usize, usize)> = (0..study.environments)
        .flat_map(|e| lengths.iter().map(move |&l| (e, l)))
        .collect();
    let windows: Vec<WindowStudy> = pool(opts.workers)?.install(|| {
        let envs = (0..study.environments)
            .into_par_iter()
            .map(|e| {
                let seed = stream_seed(replica_seed(cfg.seed, e as u64), ENVIRONMENT_STREAM);
                Ok(sample_environment(&cfg.model, l_max, seed)?)
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        jobs.par_iter()
            .map(|&(e, l)| study_window(&envs[e], e, l, &study.x_grid, oracle_for(cfg, e)))
            .collect::<anyhow::Result<Vec<_>>>()
    })?;
    manifest.stage("oracle_study", windows.len(), started);

    let started = Instant::now();
    let mut csv = CsvOut::create(&out.join("edgeworth.csv"), &EDGEWORTH_COLUMNS)?;
    for w in &windows {
        for (x, p) in study.x_grid.iter().zip(&w.points) {
            let mut fields = vec![w.env.to_string(), w.len.to_string(), fmt_float(*x)];
            fields.extend(p.iter().map(|&v| fmt_float(v)));
            csv.row(fields)?;
        }
    }
    let rows = csv.finish()?;
    manifest.stage("write_csv", rows, started);

    let errors: Vec<WindowErrors> = windows
        .iter()
        .map(|w| WindowErrors {
            env: w.env,
            len: w.len,
            phi: w.sup_error(2),
            ew3: w.sup_error(3),
            ew4: w.sup_error(4),
            ew5: w.sup_error(5),
            max_oracle_band: w.points.iter().map(|p| p[1]).fold(0.0, f64::max),
        })
        .collect();
    let per_len = |f: fn(&WindowErrors) -> f64| -> Vec<f64> {
        lengths
            .iter()
            .map(|&l| {
                let v: Vec<f64> = errors.iter().filter(|w| w.len == l).map(f).collect();
                median(&v).unwrap_or(f64::NAN)
            })
            .collect()
    };
    let medians = MedianErrors {
        phi: per_len(|w| w.phi),
        ew3: per_len(|w| w.ew3),
        ew4: per_len(|w| w.ew4),
        ew5: per_len(|w| w.ew5),
    };
    let xs: Vec<f64> = lengths.iter().map(|&l| l as f64).collect();
    let fit = |ys: &[f64]| if xs.len() >= 2 { loglog_slope(&xs, ys) } else { None };
    let slopes = SlopeSet {
        phi: fit(&medians.phi),
        ew3: fit(&medians.ew3),
        ew4: fit(&medians.ew4),
        ew5: fit(&medians.ew5),
    };

    let informative: Vec<&WindowErrors> = errors.iter().filter(|w| w.phi > GAUSSIAN_FLOOR).collect();
    if informative.is_empty() {
        let why = "every window is Gaussian; Phi is exact".to_string();
        verdicts.push(Verdict::skipped("k3_beats_phi", why.clone()));
        verdicts.push(Verdict::skipped("k5_no_worse_than_phi", why.clone()));
        verdicts.push(Verdict::skipped("k5_slope", why));
    } else {
        let wins = informative.iter().filter(|w| w.ew3 <= w.phi).count();
        let frac = wins as f64 / informative.len() as f64;
        verdicts.push(Verdict::new(
            "k3_beats_phi",
            frac >= K3_WIN_FRACTION,
            format!("{wins}/{} windows, need {K3_WIN_FRACTION}", informative.len()),
        ));
        let losses: Vec<String> = informative
            .iter()
            .filter(|w| w.ew5 > w.phi)
            .map(|w| format!("env {} L={}", w.env, w.len))
            .collect();
        verdicts.push(Verdict::new(
            "k5_no_worse_than_phi",
            losses.is_empty(),
            if losses.is_empty() {
                format!("all {} windows", informative.len())
            } else {
                format!("k = 5 worse than Phi in {}", losses.join(", "))
            },
        ));
        verdicts.push(match slopes.ew5 {
            Some(s) => Verdict::new("k5_slope", s <= K5_SLOPE_LIMIT, format!("slope {s:.4}, need <= {K5_SLOPE_LIMIT}")),
            None => Verdict::skipped("k5_slope", "fewer than two window lengths".into()),
        });
    }

    let summary = EdgeworthSummary {
        lengths,
        environments: study.environments,
        median_sup_error: medians,
        slopes,
        windows: errors,
        passed: all_passed(&verdicts),
        verdicts,
    };
    write_json(&out.join("edgeworth_summary.json"), &summary)?;
    write_json(&out.join("edgeworth_manifest.json"), &manifest)?;
    Ok(summary)
}
