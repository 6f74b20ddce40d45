use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use isochrony::pipeline::{cmd_ablate, cmd_evaluate, cmd_prepare, cmd_train, cmd_translate, ExperimentConfig, Split};

/// Duration-aware factored translation experiments.
#[derive(Parser)]
#[command(name = "isochrony", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Overrides the configured working directory.
    #[arg(long)]
    work_dir: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Replace existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Heldout,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Heldout => Split::Heldout,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate or ingest the corpus and write factored/interleaved data.
    Prepare(Common),
    /// Train a model on the prepared corpus.
    Train(Common),
    /// Decode a split with the best checkpoint.
    Translate {
        #[command(flatten)]
        common: Common,
        /// Split to decode; defaults to the configured one.
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
    },
    /// Score translations of a split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
    },
    /// Train and evaluate every cell of the configured grid.
    Ablate(Common),
}

fn load(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&c.config).with_context(|| format!("loading {}", c.config.display()))?;
    if let Some(w) = &c.work_dir {
        cfg.work_dir = w.clone();
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Prepare(c) => {
            let dir = cmd_prepare(&load(&c)?, c.force)?;
            println!("prepared corpus in {}", dir.display());
        }
        Command::Train(c) => {
            let ckpt = cmd_train(&load(&c)?, c.force)?;
            println!("best checkpoint {}", ckpt.display());
        }
        Command::Translate { common, split } => {
            let cfg = load(&common)?;
            let split = split.map(Split::from).unwrap_or(cfg.run.translate_split);
            let out = cmd_translate(&cfg, split, common.force)?;
            println!("translations in {}", out.display());
        }
        Command::Evaluate { common, split } => {
            let cfg = load(&common)?;
            let split = split.map(Split::from).unwrap_or(cfg.run.translate_split);
            let r = cmd_evaluate(&cfg, split, common.force)?;
            println!(
                "BLEU {:.2}  overlap {:.4}  wrong pauses {}  exact {:.3}",
                r.bleu, r.speech_overlap, r.wrong_pause_count, r.exact_match
            );
        }
        Command::Ablate(c) => {
            let out = cmd_ablate(&load(&c)?, c.force)?;
            for cell in &out.cells {
                match (&cell.report, &cell.error) {
                    (Some(r), _) => println!(
                        "{:>3} {}  BLEU {:.2} overlap {:.4}",
                        cell.index, cell.label, r.bleu, r.speech_overlap
                    ),
                    (None, e) => eprintln!(
                        "{:>3} {}  FAILED: {}",
                        cell.index,
                        cell.label,
                        e.as_deref().unwrap_or("")
                    ),
                }
            }
            println!("results in {}", out.dir.display());
            return Ok(out.failures() == 0);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
