mod config;
mod selftest;
mod stages;
mod store;

use std::fmt;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Parser, Subcommand};

use config::RunConfig;
use store::RunDir;

/// Generate, verify, evaluate and analyse cycle-consistent reasoning tasks.
///
/// Exit status: 0 on success (including runs cut short by the call budget
/// or ctrl-c, which mark their manifests incomplete), 1 when content fails
/// a check, 2 for configuration, credential or runner start-up problems.
#[derive(Debug, Parser)]
#[command(name = "cyclebench", version)]
struct Cli {
    /// TOML run configuration. Required by every subcommand except
    /// `selftest`.
    #[arg(long, short, global = true, default_value = "cyclebench.toml")]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate and gate seed tasks into corpus/seeds/.
    Generate,
    /// Expand every seed into variations, writing corpus/p0/.
    Expand,
    /// Build the symbol-remapped counterpart of every symbolic task.
    Remap {
        /// P0 shard or task directory. Default: corpus/p0/ of the run.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Output directory. Default: corpus/p1/ of the run.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-derive every stored output and re-run the cycle check.
    Verify {
        /// Shard file or task/corpus directory. Default: the run's corpus.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Solve and judge every task with every configured solver; resumes.
    Evaluate {
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Analyst labels, variation statistics, spectrum and complexity table.
    Analyze {
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Leaderboard and cost tables.
    Report {
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Offline end-to-end run with scripted models; prints a digest of the
    /// run directory.
    Selftest {
        /// Must be empty or absent.
        #[arg(long, default_value = "cyclebench-selftest")]
        run_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Content(String),
}

impl CliError {
    pub fn io(path: &Path, e: io::Error) -> Self {
        CliError::Content(format!("{}: {e}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Content(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Content(m) => f.write_str(m),
        }
    }
}

fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    if !path.exists() {
        return Err(CliError::Config(format!(
            "config file {} not found (pass --config)",
            path.display()
        )));
    }
    RunConfig::load(path)
}

fn finish(outcome: stages::Outcome, cancel: &AtomicBool) -> Result<(), CliError> {
    if outcome.incomplete {
        let why = if cancel.load(Ordering::SeqCst) { "interrupted" } else { "call budget exhausted" };
        eprintln!("incomplete: {why}; partial results written");
    }
    Ok(())
}

fn run(cli: Cli, cancel: Arc<AtomicBool>) -> Result<(), CliError> {
    if let Command::Selftest { run_dir, seed } = &cli.command {
        let base = if cli.config.exists() { RunConfig::load(&cli.config)? } else { RunConfig::default() };
        let summary = selftest::run(&base, run_dir, *seed, &cancel)?;
        println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
        if !summary.all_pass {
            return Err(CliError::Content("self-test corpus failed re-verification".into()));
        }
        return Ok(());
    }

    let config = load_config(&cli.config)?;
    let rd = RunDir::new(&config.run_dir);
    let corpus_or_default = |c: &Option<PathBuf>| c.clone().unwrap_or_else(|| rd.corpus());
    match &cli.command {
        Command::Generate => {
            let gateway = stages::build_gateway(&config, cancel.clone())?;
            let pool = stages::start_pool(&config)?;
            finish(stages::generate(&config, &rd, &gateway, &pool)?, &cancel)
        }
        Command::Expand => {
            let gateway = stages::build_gateway(&config, cancel.clone())?;
            let pool = stages::start_pool(&config)?;
            finish(stages::expand(&config, &rd, &gateway, &pool)?, &cancel)
        }
        Command::Remap { corpus, out } => {
            let pool = stages::start_pool(&config)?;
            let corpus = corpus.clone().unwrap_or_else(|| rd.p0());
            let out = out.clone().unwrap_or_else(|| rd.p1());
            finish(stages::remap(&config, &corpus, &out, &pool)?, &cancel)
        }
        Command::Verify { corpus } => {
            let pool = stages::start_pool(&config)?;
            let report = stages::verify(&corpus_or_default(corpus), &pool, pool.size())?;
            store::write_json(&rd.reports().join("verify.json"), &report)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            if report.all_pass {
                Ok(())
            } else {
                Err(CliError::Content(format!(
                    "{} of {} task(s) failed verification",
                    report.failures.len(),
                    report.tasks
                )))
            }
        }
        Command::Evaluate { corpus } => {
            let gateway = stages::build_gateway(&config, cancel.clone())?;
            finish(stages::evaluate(&config, &rd, &corpus_or_default(corpus), &gateway)?, &cancel)
        }
        Command::Analyze { corpus } => {
            let gateway = stages::build_gateway(&config, cancel.clone())?;
            let pool = stages::start_pool(&config)?;
            let outcome = stages::analyze(&config, &rd, &corpus_or_default(corpus), &gateway, &pool)?;
            finish(outcome, &cancel)
        }
        Command::Report { corpus } => {
            print!("{}", stages::report(&config, &rd, &corpus_or_default(corpus))?);
            Ok(())
        }
        Command::Selftest { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cancel = Arc::new(AtomicBool::new(false));
    let flag = cancel.clone();
    // a second ctrl-c exits at once
    let _ = ctrlc::set_handler(move || {
        if flag.swap(true, Ordering::SeqCst) {
            std::process::exit(130);
        }
        eprintln!("interrupt: finishing calls in flight, then writing partial results");
    });
    match run(cli, cancel) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cyclebench: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
