//! Command-line front end for the fedcluster engine.
//!
//! `fedcluster list` prints the experiment catalog; `fedcluster run <name>`
//! resolves a configuration (defaults, optional TOML file, flags), runs it
//! and writes CSV plus JSON outputs under `<out>/<name>/`.

pub mod config;
pub mod error;
pub mod registry;
pub mod runner;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::config::{parse_attack, ExperimentConfig, Overrides, SeedList};
use crate::error::{CliError, CliResult, EXIT_DIVERGED, EXIT_INVALID};
use crate::registry::Experiment;

/// Environment variable read when `--threads` is absent.
pub const THREADS_ENV: &str = "FEDCLUSTER_THREADS";

#[derive(Debug, Parser)]
#[command(name = "fedcluster", version, about = "Clustered federated learning experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// List the available experiments.
    List {
        /// Emit JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Run one experiment.
    Run(Box<RunArgs>),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Experiment name (see `list`).
    pub experiment: String,
    /// TOML file merged over the experiment defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run a single seed.
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Seed list: `A..B`, `A..=B` or a single integer.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Comma-separated algorithm names.
    #[arg(long, value_delimiter = ',')]
    pub algos: Option<Vec<String>>,
    /// Output root directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Step size (overrides any 1/L scaling).
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Threshold-clustering rounds per step.
    #[arg(long)]
    pub cluster_rounds: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Percentile radius policy.
    #[arg(long)]
    pub percentile: Option<f64>,
    /// Fixed clipping radius; wins over `--percentile`.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Byzantine fraction.
    #[arg(long)]
    pub beta: Option<f64>,
    /// `none`, `sign_flip`, `large_gradient[:scale]` or `edge_of_ball[:margin]`.
    #[arg(long)]
    pub attack: Option<String>,
    /// Comma-separated noise levels.
    #[arg(long, value_delimiter = ',')]
    pub sigma: Option<Vec<f64>>,
    /// Clients per cluster.
    #[arg(long)]
    pub n_i: Option<usize>,
    /// Worker threads (default: all cores, or FEDCLUSTER_THREADS).
    #[arg(long)]
    pub threads: Option<usize>,
}

impl RunArgs {
    fn overrides(&self) -> CliResult<Overrides> {
        let seeds = match (&self.seeds, self.seed) {
            (Some(s), _) => Some(SeedList::parse(s)?),
            (None, Some(n)) => Some(SeedList(vec![n])),
            (None, None) => None,
        };
        Ok(Overrides {
            seeds,
            algos: self.algos.clone(),
            out: self.out.clone(),
            eta: self.eta,
            rounds: self.rounds,
            cluster_rounds: self.cluster_rounds,
            batch_size: self.batch_size,
            percentile: self.percentile,
            tau: self.tau,
            beta: self.beta,
            attack: self.attack.as_deref().map(parse_attack).transpose()?,
            sigma: self.sigma.clone(),
            n_i: self.n_i,
        })
    }

    /// Resolves the final configuration for this invocation.
    pub fn resolve(&self) -> CliResult<(Experiment, ExperimentConfig)> {
        let experiment: Experiment = self.experiment.parse()?;
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(experiment, path)?,
            None => experiment.defaults(),
        };
        cfg.apply(self.overrides()?);
        cfg.validate(experiment)?;
        Ok((experiment, cfg))
    }

    fn thread_count(&self) -> CliResult<Option<usize>> {
        let n = match self.threads {
            Some(n) => Some(n),
            None => match std::env::var(THREADS_ENV) {
                Ok(v) => Some(
                    v.trim()
                        .parse()
                        .map_err(|_| CliError::Invalid(format!("{THREADS_ENV}='{v}' is not an integer")))?,
                ),
                Err(_) => None,
            },
        };
        if n == Some(0) {
            return Err(CliError::Invalid("thread count must be positive".into()));
        }
        Ok(n)
    }
}

fn list(json_out: bool, out: &mut impl Write) -> std::io::Result<()> {
    if json_out {
        let rows: Vec<_> = Experiment::ALL
            .iter()
            .map(|e| json!({ "name": e.name(), "description": e.description(), "algorithms": e.algorithms() }))
            .collect();
        writeln!(out, "{}", serde_json::to_string_pretty(&rows).map_err(std::io::Error::from)?)
    } else {
        for e in Experiment::ALL {
            writeln!(out, "{:<22} {}", e.name(), e.description())?;
        }
        Ok(())
    }
}

fn run(args: &RunArgs, out: &mut impl Write) -> CliResult<i32> {
    let (experiment, cfg) = args.resolve()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.thread_count()? {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Invalid(format!("cannot build thread pool: {e}")))?;
    let outcome = pool.install(|| runner::run_experiment(experiment, &cfg))?;
    for (name, ok) in &outcome.checks {
        writeln!(out, "{} {name}", if *ok { "PASS" } else { "FAIL" })?;
    }
    writeln!(out, "wrote {}", outcome.dir.display())?;
    if outcome.diverged {
        writeln!(out, "at least one run diverged")?;
        return Ok(EXIT_DIVERGED);
    }
    Ok(0)
}

/// Parses `args` (including the program name) and executes the command,
/// returning the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { 0 };
        }
    };
    let mut stdout = std::io::stdout().lock();
    let result = match &cli.command {
        Command::List { json } => list(*json, &mut stdout).map(|_| 0).map_err(CliError::from),
        Command::Run(args) => run(args, &mut stdout),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
