//! Command-line front end.
//!
//! Every subcommand writes to the output directory: the effective config as
//! `config.toml`, a `manifest.txt`, and its CSV results. Exit codes are 0 on
//! success, 1 on I/O errors, 2 on usage or config errors and 3 when a
//! validation invariant fails.

pub mod config;
pub mod validate;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

pub use config::{parse_config, parse_str, ConfigError, RunConfig};

use crate::experiments::{
    build_policy, correlation_sweep, pareto_sweep, robustness_correlation, robustness_domain, run_episode_with, summarize, trace_csv,
    ExperimentError, SweepTable,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "lanechange", version, about = "Lane-change planning under latent driver behavior")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set planner.iterations=100`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Output directory (default: the config's `output.dir`).
    #[arg(long, env = "LANECHANGE_OUT", global = true)]
    pub out: Option<PathBuf>,
    /// Episodes per sweep cell.
    #[arg(long, global = true)]
    pub episodes: Option<usize>,
    /// Planner iterations per decision.
    #[arg(long, global = true)]
    pub iterations: Option<usize>,
    /// Base seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Planner(s) to run; repeat for several.
    #[arg(long, global = true)]
    pub planner: Vec<String>,
    /// Record wall-clock times, which makes outputs non-reproducible.
    #[arg(long, global = true)]
    pub wall_time: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one episode and write its trace.
    Episode,
    /// Success versus unsafe rate over the λ grid.
    Pareto,
    /// Safe-and-successful rate as the copula correlation varies.
    Correlation,
    /// Planner correlation held fixed while the world's varies.
    RobustnessCorrelation,
    /// Worlds with parameter ranges widened by each factor.
    RobustnessDomain,
    /// Model identity checks and a crash fuzz.
    Validate,
    /// Print the effective configuration.
    Config,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Episode => "episode",
            Command::Pareto => "pareto",
            Command::Correlation => "correlation",
            Command::RobustnessCorrelation => "robustness-correlation",
            Command::RobustnessDomain => "robustness-domain",
            Command::Validate => "validate",
            Command::Config => "config",
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Invariant(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Experiment(_) => EXIT_CONFIG,
            CliError::Io { .. } => EXIT_IO,
            CliError::Invariant(_) => EXIT_INVARIANT,
        }
    }
}

/// Applies the shorthand flags on top of config file and `--set` overrides.
pub fn effective_config(common: &CommonArgs) -> Result<RunConfig, ConfigError> {
    let mut overrides = common.overrides.clone();
    if let Some(n) = common.episodes {
        overrides.push(format!("sweep.episodes={n}"));
    }
    if let Some(n) = common.iterations {
        overrides.push(format!("planner.iterations={n}"));
    }
    if let Some(s) = common.seed {
        overrides.push(format!("sweep.base_seed={s}"));
        overrides.push(format!("episode.seed={s}"));
    }
    if let Some(first) = common.planner.first() {
        overrides.push(format!("episode.planner={first}"));
        let list: Vec<String> = common.planner.iter().map(|p| format!("\"{p}\"")).collect();
        overrides.push(format!("sweep.planners=[{}]", list.join(", ")));
    }
    let mut cfg = parse_config(common.config.as_deref(), &overrides)?;
    if let Some(o) = &common.out {
        cfg.output_dir = o.display().to_string();
    }
    Ok(cfg)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::Io {
            path: parent.display().to_string(),
            source: e,
        })?;
    }
    std::fs::write(&path, contents).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn manifest(command: &str, cfg: &RunConfig, elapsed: Option<f64>) -> String {
    let mut m = String::new();
    let _ = writeln!(m, "program = lanechange {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(m, "command = {command}");
    let _ = writeln!(m, "episodes = {}", cfg.episodes);
    let _ = writeln!(m, "base_seed = {}", cfg.base_seed);
    let _ = writeln!(
        m,
        "planners = {}",
        cfg.planners.iter().map(|p| p.as_str()).collect::<Vec<_>>().join(",")
    );
    if let Some(t) = elapsed {
        let _ = writeln!(m, "wall_time_s = {t:.3}");
    }
    m
}

fn write_sweep(dir: &Path, table: &SweepTable, wall_time: bool) -> Result<String, CliError> {
    write(dir, &format!("{}.csv", table.name), &table.to_csv(wall_time))?;
    for (planner, series) in table.plot_series() {
        write(dir, &format!("plots/{}_{}.csv", table.name, planner), &series)?;
    }
    let mut s = String::new();
    for c in &table.cells {
        let m = &c.summary;
        let keys: Vec<String> = table.keys.iter().zip(&c.spec.keys).map(|(k, v)| format!("{k}={v}")).collect();
        let _ = writeln!(
            s,
            "{:<15} {:<22} success {:.3} unsafe {:.3} safe&successful {:.3} ±{:.3}",
            c.spec.planner.as_str(),
            keys.join(" "),
            m.success_rate,
            m.unsafe_rate,
            m.safe_and_successful,
            m.hoeffding_eps
        );
    }
    Ok(s)
}

fn execute(cli: &Cli) -> Result<String, CliError> {
    let cfg = effective_config(&cli.common)?;
    let dir = PathBuf::from(&cfg.output_dir);
    let start = Instant::now();
    let wall = cli.common.wall_time;
    let settings = cfg.sweep_settings();
    let dist = cfg.distribution().map_err(ExperimentError::from)?;

    if matches!(cli.command, Command::Config) {
        return Ok(cfg.echo());
    }
    write(&dir, "config.toml", &cfg.echo())?;

    let report = match cli.command {
        Command::Episode => {
            let ep = cfg.episode_config();
            let mut policy = build_policy(cfg.episode_planner, &dist, &dist, &ep);
            let mut rows = Vec::new();
            let r = run_episode_with(&mut policy, &dist, &ep, cfg.episode_seed, Some(&mut rows));
            write(&dir, "trace.csv", &trace_csv(&rows))?;
            let m = summarize(std::slice::from_ref(&r), cfg.confidence)?;
            format!(
                "planner {} seed {} end {} steps {} distance {:.1} hard_brakes {} unsafe {} reward {:.3} hard_brakes_per_km {:.3}\n",
                cfg.episode_planner,
                r.seed,
                r.end.as_str(),
                r.steps,
                r.distance,
                r.hard_brakes,
                r.unsafe_event,
                r.total_reward,
                m.hard_brakes_per_km
            )
        }
        Command::Pareto => write_sweep(&dir, &pareto_sweep(&cfg.planners, &cfg.lambdas, &dist, &settings)?, wall)?,
        Command::Correlation => write_sweep(&dir, &correlation_sweep(&cfg.planners, &cfg.rhos, cfg.lambda, &settings)?, wall)?,
        Command::RobustnessCorrelation => write_sweep(
            &dir,
            &robustness_correlation(&cfg.planners, &cfg.rho_plan, &cfg.rho_sim, cfg.lambda, &settings)?,
            wall,
        )?,
        Command::RobustnessDomain => write_sweep(
            &dir,
            &robustness_domain(&cfg.planners, &cfg.factors, &dist, cfg.lambda, &settings)?,
            wall,
        )?,
        Command::Validate => {
            let (report, ok) = validate::run_validation(&cfg.sim, cfg.fuzz_episodes, cfg.base_seed, cfg.max_steps);
            write(&dir, "validate.txt", &report)?;
            if !ok {
                return Err(CliError::Invariant(report));
            }
            report
        }
        Command::Config => unreachable!(),
    };
    let elapsed = wall.then(|| start.elapsed().as_secs_f64());
    write(&dir, "manifest.txt", &manifest(cli.command.name(), &cfg, elapsed))?;
    Ok(report)
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Reports go to stdout, errors to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with_output(args, &mut std::io::stdout())
}

/// As [`run`], with the report written to `out`.
pub fn run_with_output<I, T>(args: I, out: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(report) => match out.write_all(report.as_bytes()) {
            Ok(()) => EXIT_OK,
            Err(_) => EXIT_IO,
        },
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
