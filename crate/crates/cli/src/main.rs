use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pds_core::config::{load_json, ConstrainedConfig, GraphInfoConfig, RunConfig, ScheduleCheckConfig};
use pds_core::harness::{self, ExperimentPlan, Scale};
use pds_core::schedule::{build, verify_conditions, ScheduleMode};
use pds_core::Error;

#[derive(Debug, Parser)]
#[command(name = "pds", version, about = "Primal-dual sliding solvers over simulated agent networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, env = "PDS_OUT")]
    out: Option<PathBuf>,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for parallel cells and replications.
    #[arg(long, global = true, env = "PDS_THREADS")]
    threads: Option<usize>,

    /// Size preset for `plan`.
    #[arg(long, global = true, value_enum, default_value_t = ScaleArg::Desk)]
    scale: ScaleArg,

    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// One solver run.
    Run,
    /// An experiment plan; the built-in desk plan when no config is given.
    Plan,
    /// Checks a step-size schedule against its step-size conditions.
    ValidateSchedule,
    /// Prints size, maximum degree and operator norm of a graph.
    GraphInfo {
        /// Edge-list file to read instead of a JSON config.
        #[arg(long, conflicts_with = "config")]
        edge_list: Option<PathBuf>,
    },
    /// Solves `min Σ f_i s.t. Ax = b`.
    SolveConstrained,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScaleArg {
    Desk,
    Paper,
}

impl From<ScaleArg> for Scale {
    fn from(s: ScaleArg) -> Self {
        match s {
            ScaleArg::Desk => Scale::Desk,
            ScaleArg::Paper => Scale::Paper,
        }
    }
}

/// Failure classes and their exit codes.
enum Failure {
    Config(String),
    Solver(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config_error() {
            Failure::Config(e.to_string())
        } else {
            Failure::Solver(e.to_string())
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Solver(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Solver(msg)) => {
            eprintln!("solver error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn require_config(cli: &Cli) -> Result<&Path, Failure> {
    cli.config
        .as_deref()
        .ok_or_else(|| Failure::Config("--config is required for this subcommand".into()))
}

/// Prints to stdout, tolerating a closed pipe.
fn emit(text: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Config(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn dispatch(cli: &Cli) -> Result<u8, Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Config(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Run => {
            let mut cfg: RunConfig = load_json(require_config(cli)?)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let report = harness::execute_run(&cfg)?;
            let summary = serde_json::to_string_pretty(&report.summary)?;
            emit(&summary);
            if let Some(dir) = &cli.out {
                write_file(&dir.join("summary.json"), &summary)?;
                write_file(&dir.join("metrics.csv"), &report.csv)?;
            }
            Ok(0)
        }
        Command::Plan => {
            let mut plan = match &cli.config {
                Some(p) => load_json::<ExperimentPlan>(p)?,
                None => ExperimentPlan::desk_default(),
            };
            if let Some(s) = cli.seed {
                plan.seed = s;
            }
            let table = harness::run_plan(&plan, cli.scale.into())?;
            let dir = cli
                .out
                .clone()
                .or_else(|| plan.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("results"));
            table.write(&dir)?;
            emit(table.to_csv().trim_end());
            log::info!("wrote {}", dir.display());
            Ok(0)
        }
        Command::ValidateSchedule => {
            let cfg: ScheduleCheckConfig = load_json(require_config(cli)?)?;
            let s = build(&cfg.schedule)?;
            let n = cfg
                .horizon
                .or(cfg.schedule.n)
                .ok_or_else(|| Failure::Config("a horizon is required for deterministic schedules".into()))?;
            if cfg.schedule.mode == ScheduleMode::Stochastic && n > cfg.schedule.n.unwrap_or(n) {
                return Err(Failure::Config("horizon exceeds the planned N".into()));
            }
            let report = verify_conditions(&s, cfg.schedule.mode, n);
            emit(&report.to_json()?);
            if let Some(dir) = &cli.out {
                write_file(&dir.join("schedule.json"), &s.dump_json(n)?)?;
            }
            for f in report.failures() {
                eprintln!("condition failed: {f:?}");
            }
            Ok(if report.passed { 0 } else { 2 })
        }
        Command::GraphInfo { edge_list } => {
            let info = match edge_list {
                Some(p) => harness::graph_info_from_edge_list(p)?,
                None => {
                    let mut cfg: GraphInfoConfig = load_json(require_config(cli)?)?;
                    if let Some(s) = cli.seed {
                        cfg.seed = s;
                    }
                    harness::graph_info(&cfg)?
                }
            };
            emit(&serde_json::to_string_pretty(&info)?);
            Ok(0)
        }
        Command::SolveConstrained => {
            let mut cfg: ConstrainedConfig = load_json(require_config(cli)?)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let summary = serde_json::to_string_pretty(&harness::execute_constrained(&cfg)?)?;
            emit(&summary);
            if let Some(dir) = &cli.out {
                write_file(&dir.join("constrained.json"), &summary)?;
            }
            Ok(0)
        }
    }
}
