use cfmimo::harness::config::{load_config, ExperimentId, RunConfig};
use cfmimo::harness::{run, run_validation, write_layout, write_run, HarnessError, Mode};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "cfmimo", version, about = "Cell-free massive MIMO uplink SE under hardware impairments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo lower and upper bounds.
    Simulate(Common),
    /// Deterministic-equivalent lower bound.
    De(Common),
    /// DE against Monte-Carlo with HA-PMMSE combining.
    Compare(Common),
    /// Invariant suite; exits nonzero on any failure.
    Validate(Common),
    /// Dump AP and UE positions.
    Layout(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config with network, hardware and experiment sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Experiment id, overriding the config.
    #[arg(long)]
    experiment: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Output directory (default: experiment.output or ./out).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    grid_stride: Option<usize>,
    /// Worker threads; results do not depend on it.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

fn resolve(c: &Common, fallback: ExperimentId) -> Result<(RunConfig, PathBuf), HarnessError> {
    let mut cfg = match &c.config {
        Some(p) => load_config(p)?,
        None => RunConfig::desk(fallback),
    };
    if let Some(id) = &c.experiment {
        let id = ExperimentId::parse(id).ok_or_else(|| HarnessError::InvalidConfig(format!("unknown experiment `{id}`")))?;
        cfg.experiment.id = id;
        if c.config.is_none() {
            cfg = RunConfig::desk(id);
        }
    }
    if let Some(s) = c.seed {
        cfg.experiment.master_seed = s;
    }
    if let Some(t) = c.trials {
        cfg.experiment.trials = t;
    }
    if let Some(g) = c.grid_stride {
        cfg.experiment.grid_stride = g;
    }
    cfg.validate()?;
    let out = c
        .out
        .clone()
        .or_else(|| cfg.experiment.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok((cfg, out))
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, HarnessError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::InvalidConfig(e.to_string()))
}

fn execute(cli: Cli) -> Result<bool, HarnessError> {
    let (common, mode) = match &cli.command {
        Command::Simulate(c) => (c, Some(Mode::Simulate)),
        Command::De(c) => (c, Some(Mode::De)),
        Command::Compare(c) => (c, Some(Mode::Compare)),
        Command::Validate(c) | Command::Layout(c) => (c, None),
    };
    let fallback = match cli.command {
        Command::Validate(_) => ExperimentId::Validate,
        _ => ExperimentId::Fig1PowerSweep,
    };
    let (mut cfg, out) = resolve(common, fallback)?;
    let workers = common.workers;
    let pool = pool(workers)?;
    let nthreads = pool.current_num_threads();
    pool.install(|| match (&cli.command, mode) {
        (Command::Layout(_), _) => {
            let p = write_layout(&out, &cfg)?;
            println!("{}", p.display());
            Ok(true)
        }
        (Command::Validate(_), _) => {
            cfg.experiment.id = ExperimentId::Validate;
            let (ok, checks) = run_validation(&out, &cfg, nthreads)?;
            for c in &checks {
                println!("{} {} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            Ok(ok)
        }
        (_, Some(mode)) => {
            if cfg.experiment.id == ExperimentId::Validate {
                let (ok, _) = run_validation(&out, &cfg, nthreads)?;
                return Ok(ok);
            }
            let res = run(&cfg, mode, nthreads)?;
            for w in &res.warnings {
                eprintln!("warning: {w}");
            }
            if let Some((_, _, s)) = &res.compare {
                println!(
                    "SINR |rel err|: median {:.4} p90 {:.4} max {:.4}; SE |rel err|: median {:.4} p90 {:.4} max {:.4}",
                    s.sinr.median, s.sinr.p90, s.sinr.max, s.se.median, s.se.p90, s.se.max
                );
            }
            let m = write_run(&out, &cfg, &res, nthreads)?;
            println!("{}", m.display());
            Ok(true)
        }
        _ => unreachable!("every subcommand is matched"),
    })
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
