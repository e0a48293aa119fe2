//! Command-line front end: `diagnose`, `run` and `report`.
//!
//! Every command takes the same TOML configuration file; flags override
//! the values it holds. Artifacts go only under the directory named by
//! `--out`, and each command leaves a manifest listing what it wrote.

pub mod backends;
pub mod config;
pub mod diagnose;
pub mod error;
pub mod files;
pub mod manifest;
pub mod report;
pub mod run;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use metaharness::controller::Signals;
use metaharness::harness::Policy;

pub use config::Config;
pub use error::CliError;
pub use manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "metaharness", version, about = "Metacognitive stop/retry control for language-model inference")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// TOML configuration for backends, pricing, budgets and thresholds.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; overrides `jobs` in the config.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Grade FOK/JOL on an anchor set and fit the controller.
    Diagnose(DiagnoseArgs),
    /// Run a policy over a problem set and write its trajectory log.
    Run(RunArgs),
    /// Merge trajectory logs into comparison tables.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Http,
    Sim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SignalsArg {
    Joint,
    FokOnly,
    JolOnly,
}

impl From<SignalsArg> for Signals {
    fn from(s: SignalsArg) -> Self {
        match s {
            SignalsArg::Joint => Signals::Joint,
            SignalsArg::FokOnly => Signals::FokOnly,
            SignalsArg::JolOnly => Signals::JolOnly,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DiagnoseArgs {
    /// Line-delimited anchor triples, or problems with gold answers to elicit
    /// triples from.
    #[arg(long)]
    pub anchors: PathBuf,
    /// Directory for the report card, controller and manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Needed only when the anchors file holds problems.
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    /// Signals the controller reads.
    #[arg(long, value_enum, default_value_t = SignalsArg::Joint)]
    pub signals: SignalsArg,
    /// Stop threshold stored in the controller; overrides the config.
    #[arg(long)]
    pub p_stop: Option<f64>,
    /// Name recorded on the card; defaults to the configured model.
    #[arg(long)]
    pub model_id: Option<String>,
    /// Release the controller even when the verdict is an absent signal.
    #[arg(long)]
    pub force: bool,
    /// Attempt budget used while eliciting anchors.
    #[arg(long)]
    pub k_max: Option<usize>,
    /// Write raw backend exchanges to `debug.jsonl` in the output directory.
    #[arg(long)]
    pub debug: bool,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Line-delimited problems with gold answers.
    #[arg(long)]
    pub problems: PathBuf,
    /// Directory for the trajectory log, report and manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Policy name, e.g. `harness`, `pass1`, `fixed_k`, `hand_rule:0.25`.
    #[arg(long, default_value = "harness")]
    pub policy: Policy,
    /// Controller artifact; required by controller-gated policies.
    #[arg(long)]
    pub controller: Option<PathBuf>,
    /// Backend kind; inferred from the config when omitted.
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    /// Continue an interrupted run, skipping problems already in the log.
    #[arg(long)]
    pub resume: bool,
    /// Attempt budget; overrides the config.
    #[arg(long)]
    pub k_max: Option<usize>,
    /// Overrides the stop threshold stored in the controller artifact.
    #[arg(long)]
    pub p_stop: Option<f64>,
    /// Write raw backend exchanges to `debug.jsonl` in the output directory.
    #[arg(long)]
    pub debug: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Trajectory logs of policies run on the same problems and seed.
    #[arg(required = true)]
    pub logs: Vec<PathBuf>,
    /// Also write `report.json` and `report.txt` here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parse `args`, dispatch, and return the process exit code.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() { write!(stderr, "{rendered}") } else { write!(stdout, "{rendered}") };
            return code;
        }
    };
    match dispatch(&cli, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Diagnose(a) => diagnose::cmd_diagnose(&cli.global, a, stdout, stderr).map(|_| ()),
        Command::Run(a) => run::cmd_run(&cli.global, a, stdout, stderr).map(|_| ()),
        Command::Report(a) => report::cmd_report(&cli.global, a, stdout).map(|_| ()),
    }
}

/// Config after flag overrides shared by every command.
pub(crate) fn resolve(global: &GlobalArgs) -> Result<(Config, u64, usize), CliError> {
    let mut config = Config::load(global.config.as_deref())?;
    if let Some(seed) = global.seed {
        config.seed = Some(seed);
    }
    if let Some(jobs) = global.jobs {
        config.jobs = Some(jobs as usize);
    }
    let seed = config.seed.unwrap_or(0);
    let jobs = config.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    Ok((config, seed, jobs))
}

pub(crate) fn pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {jobs} workers: {e}")))
}
