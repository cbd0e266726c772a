use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use brwre_harness::commands::edgeworth::run_edgeworth;
use brwre_harness::commands::expansion::run_expansion;
use brwre_harness::commands::selftest::{run_selftest, Fault};
use brwre_harness::commands::simulate::{run_simulate, CAP_WARNING_FRACTION};
use brwre_harness::commands::validate::run_validate;
use brwre_harness::commands::{all_passed, RunOptions, Verdict};
use brwre_harness::config::ExperimentConfig;
use brwre_harness::exit;
use brwre_harness::workers::resolve_workers;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "brwre", version, about = "Branching random walks in random environments: simulation and expansion checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    knobs: Knobs,
}

#[derive(Args)]
struct Knobs {
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Replicas per batch (overrides the config).
    #[arg(long, global = true)]
    replicas: Option<usize>,
    /// Worker threads; BRWRE_WORKERS takes precedence.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory (overrides the config; default "out").
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model for supercriticality and Cramér's condition.
    Validate { config: PathBuf },
    /// Simulate replicas and write the martingale series.
    Simulate {
        config: PathBuf,
        /// Also write every particle of every replica.
        #[arg(long)]
        dump_trajectories: bool,
    },
    /// Compare Edgeworth main terms with the oracle CDF.
    VerifyEdgeworth { config: PathBuf },
    /// Run the residual suite and the A/B decomposition checks.
    VerifyExpansion { config: PathBuf },
    /// Run the reduced property battery.
    Selftest {
        /// Deliberately break a component (known: q2).
        #[arg(long)]
        inject_fault: Option<Fault>,
    },
}

fn load(path: &Path, knobs: &Knobs) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = knobs.seed {
        cfg.seed = seed;
    }
    if let Some(r) = knobs.replicas {
        cfg.replicas = r;
    }
    if let Some(out) = &knobs.out {
        cfg.output = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn options(cfg: &ExperimentConfig, knobs: &Knobs) -> anyhow::Result<RunOptions> {
    let out = cfg.output.clone().unwrap_or_else(|| PathBuf::from("out"));
    Ok(RunOptions::new(out, resolve_workers(knobs.workers)?))
}

fn report(verdicts: &[Verdict]) -> i32 {
    for v in verdicts {
        println!("{}", v.line());
    }
    if all_passed(verdicts) {
        exit::OK
    } else {
        exit::FAILED
    }
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    let knobs = &cli.knobs;
    match cli.command {
        Command::Validate { config } => {
            let cfg = load(&config, knobs)?;
            let report = run_validate(&cfg, &mut std::io::stdout().lock())?;
            Ok(if report.passed() { exit::OK } else { exit::FAILED })
        }
        Command::Simulate {
            config,
            dump_trajectories,
        } => {
            let cfg = load(&config, knobs)?;
            let opts = options(&cfg, knobs)?;
            let outcome = run_simulate(&cfg, &opts, dump_trajectories)?;
            let s = &outcome.summary;
            println!(
                "{} replicas: {} completed, {} extinct, {} capped; {} rows in {}",
                s.replicas,
                s.completed,
                s.extinct,
                s.capped,
                s.martingale_rows,
                opts.out_dir.join("martingales.csv").display()
            );
            if outcome.advisory {
                eprintln!(
                    "warning: {:.1}% of replicas exceeded the particle cap (limit {:.0}%)",
                    100.0 * s.cap_fraction,
                    100.0 * CAP_WARNING_FRACTION
                );
                return Ok(exit::ADVISORY);
            }
            Ok(exit::OK)
        }
        Command::VerifyEdgeworth { config } => {
            let cfg = load(&config, knobs)?;
            let summary = run_edgeworth(&cfg, &options(&cfg, knobs)?)?;
            Ok(report(&summary.verdicts))
        }
        Command::VerifyExpansion { config } => {
            let cfg = load(&config, knobs)?;
            let summary = run_expansion(&cfg, &options(&cfg, knobs)?)?;
            Ok(report(&summary.verdicts))
        }
        Command::Selftest { inject_fault } => {
            let verdicts = run_selftest(inject_fault)?;
            Ok(report(&verdicts))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit::ERROR
        }
    };
    let _ = std::io::stdout().flush();
    ExitCode::from(code as u8)
}
