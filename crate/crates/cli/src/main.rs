use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] genderfuse::Error),
    /// A check or run completed but did not pass.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(e) if !e.is_data_error() => 1,
            _ => 2,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "genderfuse",
    version,
    about = "Author gender prediction from tweets with an embedding-fusion CNN, baselines and construct statistics",
    after_long_help = config::keys_help()
)]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
pub struct GlobalOpts {
    /// Config file of `key = value` lines (applied after GENDERFUSE_CONFIG)
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key; repeatable
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Suppress progress output on stderr
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a PAN author-profiling directory into corpus JSONL
    ImportPan(commands::ImportPan),
    /// Normalize, tokenize and tag a corpus; writes vocab.json and docs.jsonl
    Preprocess(commands::Preprocess),
    /// Cross-validate a CNN variant and save one checkpoint per fold
    Train(commands::Train),
    /// Ensemble predictions of saved fold models
    Predict(commands::Predict),
    /// Score predictions against truth and print the Mean/SD/Voting report
    Evaluate(commands::Evaluate),
    /// Cross-validate TF-IDF linear baselines (lr, svm)
    Baseline(commands::Baseline),
    /// Per-year construct odds ratios and chi-square tests by predicted gender
    Analyze(commands::Analyze),
    /// Generate synthetic corpora
    #[command(subcommand)]
    Synth(commands::Synth),
    /// Finite-difference gradient check of a small model
    Gradcheck(commands::Gradcheck),
    /// Run the invariant suites and print PASS/FAIL per check
    Selftest(commands::Selftest),
}

fn load_config(g: &GlobalOpts) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(p) = std::env::var_os("GENDERFUSE_CONFIG").filter(|p| !p.is_empty()) {
        cfg.merge_file(&PathBuf::from(p))?;
    }
    if let Some(p) = &g.config {
        cfg.merge_file(p)?;
    }
    for kv in &g.set {
        cfg.merge_assignment(kv)?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = load_config(&cli.global)?;
    let quiet = cli.global.quiet;
    match cli.command {
        Command::ImportPan(c) => c.run(quiet),
        Command::Preprocess(c) => c.run(&mut cfg),
        Command::Train(c) => c.run(&mut cfg, quiet),
        Command::Predict(c) => c.run(&mut cfg),
        Command::Evaluate(c) => c.run(),
        Command::Baseline(c) => c.run(&mut cfg),
        Command::Analyze(c) => c.run(&mut cfg),
        Command::Synth(c) => c.run(&mut cfg),
        Command::Gradcheck(c) => c.run(&mut cfg),
        Command::Selftest(c) => c.run(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
