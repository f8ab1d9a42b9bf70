//! `curio`: batch scoring, card management, retrieval and replay.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 input error, 3 partial
//! replay, 4 gate refusal.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use curio_core::config::Overrides;
use curio_core::distributions::LogBase;

#[derive(Parser)]
#[command(
    name = "curio",
    version,
    about = "Curiosity-gated knowledge retrieval toolkit"
)]
pub struct Cli {
    /// TOML run configuration; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Top-K tokens kept per decoding step.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Weight of the residual-mass penalty.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Gate threshold.
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Per-step decay of older gains.
    #[arg(long, global = true)]
    decay_base: Option<f64>,
    /// Base of the log-probabilities in dump files.
    #[arg(long, global = true, value_enum)]
    log_base: Option<Base>,
    /// Card store directory.
    #[arg(long, global = true)]
    store_root: Option<PathBuf>,
    /// Run against a curio-service instance instead of in-process.
    #[arg(long, global = true, value_name = "URL")]
    server: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Base {
    E,
    #[value(name = "10")]
    Ten,
}

#[derive(Subcommand)]
pub enum Command {
    /// Information gain between a prior and a posterior log-prob dump.
    Score {
        /// Prior JSONL dump, or a single {"prior","posterior"} document.
        prior: PathBuf,
        posterior: Option<PathBuf>,
    },
    #[command(subcommand)]
    Cards(CardsCommand),
    /// Replay an episode log through scoring and gating.
    Replay {
        log: PathBuf,
        /// Write the JSON report here; otherwise it goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Retrieve from the configured corpora when a gate fires.
        #[arg(long)]
        retrieve: bool,
        /// Write the final gate state (JSON) here.
        #[arg(long)]
        save_gate_state: Option<PathBuf>,
        #[command(flatten)]
        corpora: CorpusArgs,
    },
    /// Build a new card version for an app from the corpora.
    Retrieve {
        #[arg(long)]
        app: String,
        #[command(flatten)]
        corpora: CorpusArgs,
        #[arg(long)]
        max_units: Option<usize>,
        /// Also write the rendered card here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Retrieve even though the gate has not fired.
        #[arg(long)]
        force: bool,
        /// Gate state file (JSON), updated when the retrieval acknowledges a
        /// trigger.
        #[arg(long)]
        gate_state: Option<PathBuf>,
        /// Score report whose top tokens focus the query.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Extra focus term; repeatable.
        #[arg(long = "focus", value_name = "TERM")]
        focus: Vec<String>,
    },
}

#[derive(Subcommand)]
pub enum CardsCommand {
    /// Check that card files parse and round-trip canonically.
    Validate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Print a card file in canonical form.
    Render { file: PathBuf },
    /// One line per stored app: name, version, entry count.
    List,
    /// Store card files as new versions.
    Add {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

#[derive(Args, Clone, Default)]
pub struct CorpusArgs {
    /// Directory of plain-text, Markdown or HTML docs.
    #[arg(long)]
    corpus_docs: Option<PathBuf>,
    /// JSONL repository export.
    #[arg(long)]
    corpus_git: Option<PathBuf>,
    /// Directory of episode logs.
    #[arg(long)]
    corpus_traj: Option<PathBuf>,
}

impl Cli {
    fn overrides(&self) -> Overrides {
        let mut o = Overrides {
            k: self.k,
            lambda: self.lambda,
            tau: self.tau,
            decay_base: self.decay_base,
            log_base: self.log_base.map(|b| match b {
                Base::E => LogBase::E,
                Base::Ten => LogBase::Ten,
            }),
            store_root: self.store_root.clone(),
            ..Overrides::default()
        };
        let corpora = match &self.command {
            Command::Replay { corpora, .. } => Some(corpora),
            Command::Retrieve {
                corpora, max_units, ..
            } => {
                o.max_units = *max_units;
                Some(corpora)
            }
            _ => None,
        };
        if let Some(c) = corpora {
            o.corpus_docs = c.corpus_docs.clone();
            o.corpus_git = c.corpus_git.clone();
            o.corpus_traj = c.corpus_traj.clone();
        }
        o
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("{}", f.message());
            f.exit_code()
        }
    }
}
