use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use emoc_core::Strategy;
use emoc_harness::export::{summary_path, StrategySummary};
use emoc_harness::{run_experiment, selfcheck, Dataset, ExperimentConfig, HarnessError, DATA_DIR_ENV};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("no dataset: pass --data DIR, set {DATA_DIR_ENV}, or use --synthetic")]
    NoData,
    #[error("bad seed list {0:?}: expected e.g. `0,3,7` or `0..5`")]
    Seeds(String),
    #[error("every run failed")]
    AllFailed,
    #[error("{0} self-check(s) failed")]
    Checks(usize),
}

#[derive(Debug, Parser)]
#[command(name = "emoc", version, about = "Active learning with class discovery: experiments and self-checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one strategy.
    Run {
        #[command(flatten)]
        common: Common,
        /// emoc, random, min, one_vs_two or max.
        #[arg(long, default_value_t = Strategy::Emoc)]
        strategy: Strategy,
    },
    /// Run several strategies on shared seeds and partitions.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated; defaults to every strategy.
        #[arg(long, value_delimiter = ',')]
        strategies: Vec<Strategy>,
    },
    /// Verify gradients, Jacobians and the EMOC score against reference
    /// implementations.
    Check,
    /// Print the effective configuration as TOML.
    Config {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct Source {
    /// CIFAR-100 binary directory (train.bin, test.bin).
    #[arg(long, env = DATA_DIR_ENV, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Use the Gaussian-blob dataset instead of CIFAR-100.
    #[arg(long)]
    synthetic: bool,
}

#[derive(Debug, Args)]
struct Common {
    #[command(flatten)]
    source: Source,
    /// TOML file layered over the preset; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed list (`0,4,9`) or half-open range (`0..5`). Defaults to
    /// `0..num_initializations`.
    #[arg(long)]
    seeds: Option<String>,
    /// Stop after this many selection steps.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, CliError> {
    let bad = || CliError::Seeds(text.to_string());
    let seeds: Vec<u64> = if let Some((a, b)) = text.split_once("..") {
        let (a, b) = (a.trim().parse::<u64>().map_err(|_| bad())?, b.trim().parse::<u64>().map_err(|_| bad())?);
        (a..b).collect()
    } else {
        text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

impl Source {
    fn data_dir(&self) -> Result<Option<&Path>, CliError> {
        match (&self.data, self.synthetic) {
            (_, true) => Ok(None),
            (Some(dir), false) => Ok(Some(dir)),
            (None, false) => Err(CliError::NoData),
        }
    }

    fn config(&self, file: Option<&Path>) -> Result<ExperimentConfig, CliError> {
        let preset = if self.data_dir()?.is_some() { ExperimentConfig::paper() } else { ExperimentConfig::desk_scale() };
        Ok(match file {
            Some(path) => ExperimentConfig::load(&preset, path)?,
            None => preset,
        })
    }

    fn dataset(&self, cfg: &ExperimentConfig) -> Result<Dataset, CliError> {
        Ok(match self.data_dir()? {
            Some(dir) => Dataset::cifar100(dir)?,
            None => Dataset::synthetic(&cfg.synthetic)?,
        })
    }
}

fn experiment(common: &Common, strategies: &[Strategy]) -> Result<(), CliError> {
    let mut cfg = common.source.config(common.config.as_deref())?;
    if common.steps.is_some() {
        cfg.protocol.steps_budget = common.steps;
    }
    cfg.validate()?;
    let seeds = match &common.seeds {
        Some(text) => parse_seeds(text)?,
        None => (0..cfg.protocol.num_initializations as u64).collect(),
    };
    let data = common.source.dataset(&cfg)?;
    eprintln!(
        "{} train / {} test samples, {} strategies x {} seeds",
        data.train.len(),
        data.test.len(),
        strategies.len(),
        seeds.len()
    );
    let started = Instant::now();
    let outcome = run_experiment(&data, &cfg, strategies, &seeds)?;
    for f in &outcome.failures {
        let which = f.strategy.map(|s| format!(" ({s})")).unwrap_or_default();
        eprintln!("seed {}{which} failed: {}", f.seed, f.error);
    }
    if outcome.records.is_empty() {
        return Err(CliError::AllFailed);
    }
    emoc_harness::write_results(&common.out, &outcome.records, &outcome.summary)?;
    println!("{:<10} {:>6} {:>10} {:>12} {:>10}", "strategy", "seeds", "complete", "to-discover", "final-acc");
    for s in &outcome.summary.strategies {
        print_row(s);
    }
    eprintln!(
        "wrote {} and {} in {:.1}s",
        common.out.display(),
        summary_path(&common.out).display(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn print_row(s: &StrategySummary) {
    println!(
        "{:<10} {:>6} {:>10} {:>12.1} {:>9.2}%",
        s.strategy.name(),
        s.seeds,
        format!("{}/{}", s.completed_seeds, s.seeds),
        s.mean_samples_to_discovery,
        s.mean_final_accuracy_pct
    );
}

fn check() -> Result<(), CliError> {
    let reports = selfcheck::run_all();
    let mut failed = 0;
    for r in &reports {
        let verdict = if r.passed() { "ok" } else { "FAILED" };
        println!("{:<10} {:>4} cases  worst {:.2e}  tol {:.0e}  {verdict}", r.name, r.cases, r.worst_error, r.tolerance);
        failed += usize::from(!r.passed());
    }
    if failed > 0 {
        return Err(CliError::Checks(failed));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { common, strategy } => experiment(common, &[*strategy]),
        Command::Compare { common, strategies } if strategies.is_empty() => experiment(common, &Strategy::ALL),
        Command::Compare { common, strategies } => experiment(common, strategies),
        Command::Check => check(),
        Command::Config { source, config } => {
            source.config(config.as_deref()).map(|cfg| print!("{}", cfg.to_toml()))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
