//! `pbdw`: runs state-estimation experiments from a JSON configuration.
//!
//! Exit status 2 signals an unusable configuration (unreadable file, invalid
//! JSON, schema violation); exit status 1 a failing task. In both cases a
//! JSON error record is written to stderr.

mod cache;
mod config;
mod error;
mod output;
mod tasks;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use config::{ExperimentConfig, Task};
use error::CliError;
use tasks::{Ctx, Options};

#[derive(Parser)]
#[command(name = "pbdw", version, about = "Reduced-model state estimation experiments")]
#[command(args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for the numerical kernels.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Overrides the configured task.
    #[arg(long, value_enum)]
    task: Option<Task>,
    /// Also evaluate a competitor and check that the fitted map dominates it.
    #[arg(long, value_enum)]
    competitor: Option<Competitor>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Competitor {
    PoorMans,
}

#[derive(Subcommand)]
enum Command {
    /// Brute-force oracle benchmarks.
    Oracle {
        #[command(subcommand)]
        action: OracleCommand,
    },
    /// State estimates from an observation file.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// CSV with header `sensor_id,value` (optionally `observation_id` first).
        #[arg(long)]
        observations: PathBuf,
        /// Use the piecewise estimator.
        #[arg(long)]
        pw: bool,
        /// Also estimate parameters.
        #[arg(long)]
        params: bool,
        /// Bound on the raw sensor noise.
        #[arg(long, default_value_t = 0.0)]
        noise_level: f64,
    },
    /// Parameter estimation by metric projection.
    Invert {
        #[command(flatten)]
        common: Common,
        /// State CSV (`node,value`) to project onto the manifold.
        #[arg(long, conflicts_with_all = ["from_observation", "map"])]
        state: Option<PathBuf>,
        /// Observation CSV recovered through `--map`.
        #[arg(long, requires = "map")]
        from_observation: Option<PathBuf>,
        /// Fitted affine map written by `fit_affine`.
        #[arg(long, requires = "from_observation")]
        map: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Writes a benchmark report for the configured model.
    Bench {
        #[command(flatten)]
        common: Common,
    },
}

enum Failure {
    Config { path: Option<String>, message: String },
    Task(String),
}

impl From<CliError> for Failure {
    fn from(e: CliError) -> Self {
        Failure::Task(e.0)
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Failure> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| Failure::Config { path: None, message: "--config is required".into() })?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config { path: None, message: format!("{}: {e}", path.display()) })?;
    let mut cfg = config::parse(&text).map_err(|e| Failure::Config { path: Some(e.path), message: e.message })?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: &ExperimentConfig) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("pbdw-out"))
}

fn init_threads(common: &Common) -> Result<(), Failure> {
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Config { path: None, message: format!("--threads: {e}") })?;
    }
    Ok(())
}

fn run_task(common: &Common, task: Option<Task>, opts: &Options) -> Result<(), Failure> {
    init_threads(common)?;
    let mut cfg = load_config(common)?;
    if let Some(t) = task {
        cfg.task = Some(t);
    }
    let task = cfg.task.ok_or_else(|| Failure::Config {
        path: Some("task".into()),
        message: "no task configured; set `task` or pass --task".into(),
    })?;
    let dir = out_dir(common, &cfg);
    let mut ctx = Ctx::new(cfg)?;
    let summary = tasks::run(&mut ctx, task, opts)?;
    finish(ctx, &dir, task_name(task), &summary)
}

fn task_name(task: Task) -> &'static str {
    match task {
        Task::GreedyDecay => "greedy_decay",
        Task::FitAffine => "fit_affine",
        Task::BuildPw => "build_pw",
        Task::EstimateState => "estimate_state",
        Task::EstimateParam => "estimate_param",
        Task::BenchOracle => "bench_oracle",
        Task::CompareAll => "compare_all",
    }
}

fn finish(mut ctx: Ctx, dir: &Path, task: &str, summary: &serde_json::Value) -> Result<(), Failure> {
    ctx.artifacts.add_json("summary.json", summary)?;
    let manifest = ctx.manifest(task)?;
    std::mem::take(&mut ctx.artifacts).write(dir, manifest)?;
    println!("{}", serde_json::to_string_pretty(summary).map_err(CliError::from)?);
    Ok(())
}

fn invert(common: &Common, state: Option<&PathBuf>, obs: Option<&PathBuf>, map: Option<&PathBuf>) -> Result<(), Failure> {
    init_threads(common)?;
    let cfg = load_config(common)?;
    let dir = out_dir(common, &cfg);
    let ctx = Ctx::new(cfg)?;
    let records = match (state, obs, map) {
        (Some(s), None, None) => tasks::invert_state(&ctx, s)?,
        (None, Some(o), Some(m)) => tasks::invert_observations(&ctx, o, m)?,
        _ => {
            return Err(Failure::Config {
                path: None,
                message: "pass either --state or --from-observation with --map".into(),
            })
        }
    };
    let mut ctx = ctx;
    ctx.artifacts.add_json("invert.json", &records)?;
    finish(ctx, &dir, "invert", &json!({"records": records}))
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        None => {
            let opts = Options {
                competitor_poor_mans: matches!(cli.run.competitor, Some(Competitor::PoorMans)),
                ..Options::default()
            };
            run_task(&cli.run.common, cli.run.task, &opts)
        }
        Some(Command::Oracle { action: OracleCommand::Bench { common } }) => {
            run_task(&common, Some(Task::BenchOracle), &Options::default())
        }
        Some(Command::Estimate { common, observations, pw, params, noise_level }) => {
            let opts = Options { observations: Some(observations), noise_level, piecewise: pw, ..Options::default() };
            let task = if params { Task::EstimateParam } else { Task::EstimateState };
            run_task(&common, Some(task), &opts)
        }
        Some(Command::Invert { common, state, from_observation, map }) => {
            invert(&common, state.as_ref(), from_observation.as_ref(), map.as_ref())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config { path, message }) => {
            eprintln!("{}", json!({"error": {"kind": "config", "path": path, "message": message}}));
            ExitCode::from(2)
        }
        Err(Failure::Task(message)) => {
            eprintln!("{}", json!({"error": {"kind": "task", "message": message}}));
            ExitCode::from(1)
        }
    }
}
