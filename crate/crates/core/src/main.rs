use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Parser, Subcommand};
use scanet::cli;
use scanet::config::KEY_DOCS;
use scanet::eval::ProposalStrategy;

fn config_help() -> String {
    let mut s = String::from("Config keys (JSON file via --config, or --set key=value):\n");
    for (k, doc) in KEY_DOCS {
        s.push_str(&format!("  {k:<16} {doc}\n"));
    }
    s.push_str("\nLog verbosity: SCANET_LOG=error|warn|info|debug (default warn).");
    s
}

#[derive(Parser)]
#[command(name = "scanet", version, about = "Scene-complexity-aware weakly supervised moment retrieval")]
#[command(after_help = config_help())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Run configuration (JSON). Omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable, wins over the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus (and `<out>.oracle.json` ground truth) from a spec file.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print scene complexity per video as CSV.
    Complexity {
        #[arg(long)]
        corpus: PathBuf,
        /// File of nouns to ignore, one per line.
        #[arg(long)]
        human_nouns: Option<String>,
        /// Largest reported complexity.
        #[arg(long, default_value_t = 12)]
        k: usize,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train both stages; writes checkpoints, the negative cache and metrics to a run directory.
    #[command(after_help = config_help())]
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint; writes per-query CSV, aggregate JSON and heatmap CSV.
    #[command(after_help = config_help())]
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scene/proposal count heatmap CSV for one proposal strategy.
    #[command(after_help = config_help())]
    Mismatch {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// adaptive | fixed:N | window:W[+W..],S (window widths and stride in frames)
        #[arg(long, default_value = "adaptive")]
        strategy: ProposalStrategy,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit(text: &str, out: Option<&PathBuf>) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| anyhow!("io {}: {e}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Generate { spec, out } => cli::cmd_generate(&spec, &out)?,
        Command::Complexity {
            corpus,
            human_nouns,
            k,
            out,
        } => emit(&cli::cmd_complexity(&corpus, human_nouns.as_deref(), k)?, out.as_ref())?,
        Command::Train { corpus, cfg, out } => {
            let cfg = cli::load_config(cfg.config.as_deref(), &cfg.overrides)?;
            cli::cmd_train(&corpus, &cfg, &out)?;
        }
        Command::Eval {
            corpus,
            checkpoint,
            cfg,
            out,
        } => {
            let cfg = cli::load_config(cfg.config.as_deref(), &cfg.overrides)?;
            let report = cli::cmd_eval(&corpus, &checkpoint, &cfg, &out)?;
            println!(
                "R@1,IoU=0.3 {:.4}  R@1,IoU=0.5 {:.4}  mIoU {:.4}",
                report.recall(1, 0.3),
                report.recall(1, 0.5),
                report.miou
            );
        }
        Command::Mismatch {
            corpus,
            checkpoint,
            strategy,
            cfg,
            out,
        } => {
            let cfg = cli::load_config(cfg.config.as_deref(), &cfg.overrides)?;
            emit(&cli::cmd_mismatch(&corpus, &checkpoint, &cfg, &strategy)?, out.as_ref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SCANET_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // each error's message already embeds its causes
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
