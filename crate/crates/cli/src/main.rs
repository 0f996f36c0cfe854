//! `epikal`: simulate epidemics, fit them by Kalman-filter likelihood, profile
//! parameters, check fits by simulation and run replication benchmarks.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use epikal::ModelKind;
use serde::Serialize;

use commands::Output;

#[derive(Parser)]
#[command(name = "epikal", version, about = "Kalman-filter inference for partially observed epidemics")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON configuration (or a manifest from an earlier run).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_parser = parse_model)]
    model: Option<ModelKind>,
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: epikal::Error| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Simulate observed epidemics.
    Simulate {
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        n_pop: Option<u64>,
        #[arg(long)]
        n_target: Option<usize>,
        #[arg(long)]
        trajectories: bool,
    },
    /// Maximum-likelihood fit of an observation series.
    Fit {
        /// Observation CSV, or `boarding-school`.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        n_starts: Option<usize>,
        /// Also write the state-space system and per-step filter output.
        #[arg(long)]
        dump_system: bool,
    },
    /// Profile-likelihood confidence interval for one parameter.
    Profile {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        param: Option<String>,
        #[arg(long)]
        points: Option<usize>,
        #[arg(long)]
        n_starts: Option<usize>,
    },
    /// Post-predictive percentile bands at the observation times.
    Ppcheck {
        #[arg(long)]
        data: Option<PathBuf>,
        /// `fit.json` whose estimates are simulated.
        #[arg(long)]
        fit: Option<PathBuf>,
        #[arg(long)]
        n_sims: Option<usize>,
    },
    /// Simulate-then-fit replication study.
    Bench {
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        n_pop: Option<u64>,
        #[arg(long)]
        n_target: Option<usize>,
    },
}

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Simulation(epikal::Error),
    Inference(epikal::Error),
}

impl Failure {
    pub fn config(e: epikal::Error) -> Self {
        Failure::Config(e.to_string())
    }

    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Simulation(_) => 3,
            Failure::Inference(_) => 4,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Simulation(e) => write!(f, "simulation failed: {e}"),
            Failure::Inference(e) => write!(f, "inference failed: {e}"),
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn finish<C: Serialize>(
    name: &str,
    cfg: &C,
    out: &Output,
    run: impl FnOnce(&C, &Output) -> Result<String, Failure>,
) -> Result<String, Failure> {
    out.manifest(name, cfg)?;
    run(cfg, out)
}

fn run(cli: Cli) -> Result<String, Failure> {
    let g = &cli.global;
    if let Some(n) = g.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Config(e.to_string()))?;
    }
    let out = Output::new(&g.out)?;
    let cfg_path = g.config.as_deref();
    match cli.command {
        Command::Simulate { replicates, n_pop, n_target, trajectories } => {
            let mut cfg: config::SimulateConfig = config::load(cfg_path, "simulate")?;
            set(&mut cfg.model, g.model);
            set(&mut cfg.seed, g.seed);
            set(&mut cfg.replicates, replicates);
            set(&mut cfg.n_pop, n_pop);
            set(&mut cfg.n_target, n_target);
            cfg.trajectories |= trajectories;
            finish("simulate", &cfg, &out, commands::simulate)
        }
        Command::Fit { data, n_starts, dump_system } => {
            let mut cfg: config::FitConfig = config::load(cfg_path, "fit")?;
            set(&mut cfg.model, g.model);
            set(&mut cfg.seed, g.seed);
            cfg.data = data.or(cfg.data);
            set(&mut cfg.options.n_starts, n_starts);
            cfg.options.seed = cfg.seed;
            cfg.dump_system |= dump_system;
            finish("fit", &cfg, &out, commands::fit_cmd)
        }
        Command::Profile { data, param, points, n_starts } => {
            let mut cfg: config::ProfileConfig = config::load(cfg_path, "profile")?;
            set(&mut cfg.model, g.model);
            set(&mut cfg.seed, g.seed);
            cfg.data = data.or(cfg.data);
            set(&mut cfg.param, param);
            set(&mut cfg.points, points);
            set(&mut cfg.options.n_starts, n_starts);
            cfg.options.seed = cfg.seed;
            finish("profile", &cfg, &out, commands::profile_cmd)
        }
        Command::Ppcheck { data, fit, n_sims } => {
            let mut cfg: config::PpcheckConfig = config::load(cfg_path, "ppcheck")?;
            set(&mut cfg.model, g.model);
            set(&mut cfg.seed, g.seed);
            cfg.data = data.or(cfg.data);
            cfg.fit = fit.or(cfg.fit);
            set(&mut cfg.n_sims, n_sims);
            finish("ppcheck", &cfg, &out, commands::ppcheck)
        }
        Command::Bench { replicates, n_pop, n_target } => {
            let mut cfg: config::BenchConfig = config::load(cfg_path, "bench")?;
            set(&mut cfg.model, g.model);
            set(&mut cfg.seed, g.seed);
            set(&mut cfg.replicates, replicates);
            set(&mut cfg.n_pop, n_pop);
            set(&mut cfg.n_target, n_target);
            cfg.options.seed = cfg.seed;
            finish("bench", &cfg, &out, commands::bench)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("epikal: {e}");
            ExitCode::from(e.code())
        }
    }
}
