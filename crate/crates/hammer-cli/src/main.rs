//! `hammer`: desk-scale experiment driver for the hierarchical moment
//! localization models in `hammer-core`.
//!
//! Five subcommands cover the whole loop: `gen-data` synthesizes a corpus,
//! `train` fits a model, `eval` scores a checkpoint, `localize` answers one
//! query, and `ablate` sweeps configuration axes. Every command is
//! deterministic given `--seed`; wall-clock timestamps only appear in
//! sidecar `.log` files.

mod commands;
mod config;
mod exec;
mod io;
mod report;

use std::io::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};

use crate::commands::localize::Query;

const CONFIG_HELP: &str = "\
CONFIGURATION:
  Settings resolve in this order (later wins):
    built-in defaults < preset < --config FILE < --set KEY=VALUE (in order) < named flags
  `seed` is applied before the preset so preset corpora derive from the
  chosen master seed. The effective configuration is echoed to
  <out>/config.resolved, which is itself a valid --config file.

LOGGING:
  HAMMER_LOG=error|info|debug selects the stderr log level (default: info).

EXIT STATUS:
  0 on success; otherwise non-zero with a single `error: ...` line on stderr.";

#[derive(Parser)]
#[command(
    name = "hammer",
    version,
    about = "Train and evaluate hierarchical moment-localization models on synthetic video corpora",
    after_help = CONFIG_HELP
)]
struct Cli {
    /// Master seed for every random choice made by the command.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Flat KEY=VALUE configuration file; `#` starts a comment.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Directory that receives this command's artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<String>,

    /// Write into a non-empty output directory.
    #[arg(long, global = true)]
    force: bool,

    /// Worker threads for evaluation queries and ablation arms.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Override any configuration key (repeatable, applied in order).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic video corpus with annotated queries.
    GenData {
        /// Corpus preset: tiny, long, or custom.
        #[arg(long)]
        preset: Option<String>,
    },
    /// Train a model on a dataset directory.
    Train {
        /// Dataset directory written by gen-data.
        #[arg(long, value_name = "DIR")]
        data: Option<String>,
        /// Model family: hammer or flat.
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Frames per clip in the hierarchical encoder.
        #[arg(long)]
        clip_length: Option<usize>,
        /// Weight of the video retrieval loss.
        #[arg(long)]
        lambda_vr: Option<f64>,
        /// Weight of the temporal localization loss.
        #[arg(long)]
        lambda_tl: Option<f64>,
        /// Weight of the masked language model loss.
        #[arg(long)]
        lambda_mlm: Option<f64>,
        /// Drop the cross-modal transformer (sets cross_modal_layers=0).
        #[arg(long)]
        no_cross_modal: bool,
        /// Evaluate the heldout split every N epochs (0 disables).
        #[arg(long)]
        eval_every: Option<usize>,
    },
    /// Evaluate a checkpoint on one split of a dataset.
    Eval {
        /// Checkpoint file or the directory train wrote it into.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<String>,
        #[arg(long, value_name = "DIR")]
        data: Option<String>,
        /// Which split to score: heldout or train.
        #[arg(long)]
        split: Option<String>,
        /// Comma-separated recall cutoffs, e.g. 1,10,100.
        #[arg(long)]
        k_list: Option<String>,
        /// Comma-separated IoU thresholds, e.g. 0.5,0.7.
        #[arg(long)]
        tau_list: Option<String>,
        /// Candidates localized per query (0 = max of k_list).
        #[arg(long)]
        eval_k: Option<usize>,
        /// Score perfect oracle predictions instead of a model.
        #[arg(long)]
        oracle: bool,
    },
    /// Rank candidate moments for a single query.
    Localize {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<String>,
        #[arg(long, value_name = "DIR")]
        data: Option<String>,
        /// Query id from the dataset, e.g. q00012.
        #[arg(long, conflicts_with = "tokens")]
        query_id: Option<String>,
        /// Raw token ids, space- or comma-separated.
        #[arg(long)]
        tokens: Option<String>,
        /// Number of candidates to print.
        #[arg(long)]
        k: Option<usize>,
        /// Boundary decoding rule: joint or greedy-repair.
        #[arg(long)]
        decode: Option<String>,
    },
    /// Train and evaluate one arm per combination of --vary values.
    Ablate {
        #[arg(long, value_name = "DIR")]
        data: Option<String>,
        /// Axis to sweep, e.g. --vary mlm_fm=true,false (repeatable).
        #[arg(long, value_name = "KEY=V1,V2")]
        vary: Vec<String>,
        #[arg(long)]
        epochs: Option<usize>,
    },
}

/// Map the named convenience flags onto configuration keys. These are the
/// highest-precedence assignments, applied after --set.
fn named_overrides(cli: &Cli) -> Vec<(&'static str, String)> {
    let mut named: Vec<(&'static str, String)> = Vec::new();
    if let Some(seed) = cli.seed {
        named.push(("seed", seed.to_string()));
    }
    if let Some(out) = &cli.out {
        named.push(("out_dir", out.clone()));
    }
    if let Some(threads) = cli.threads {
        named.push(("threads", threads.to_string()));
    }
    let mut push = |key: &'static str, value: Option<String>| {
        if let Some(v) = value {
            named.push((key, v));
        }
    };
    match &cli.cmd {
        Cmd::GenData { preset } => {
            push("preset", preset.clone());
        }
        Cmd::Train {
            data,
            model,
            epochs,
            clip_length,
            lambda_vr,
            lambda_tl,
            lambda_mlm,
            no_cross_modal,
            eval_every,
        } => {
            push("data_dir", data.clone());
            push("model", model.clone());
            push("epochs", epochs.map(|v| v.to_string()));
            push("clip_length", clip_length.map(|v| v.to_string()));
            push("lambda_vr", lambda_vr.map(|v| v.to_string()));
            push("lambda_tl", lambda_tl.map(|v| v.to_string()));
            push("lambda_mlm", lambda_mlm.map(|v| v.to_string()));
            if *no_cross_modal {
                push("cross_modal_layers", Some("0".into()));
            }
            push("eval_every", eval_every.map(|v| v.to_string()));
        }
        Cmd::Eval {
            checkpoint,
            data,
            split,
            k_list,
            tau_list,
            eval_k,
            oracle: _,
        } => {
            push("checkpoint", checkpoint.clone());
            push("data_dir", data.clone());
            push("split", split.clone());
            push("k_list", k_list.clone());
            push("tau_list", tau_list.clone());
            push("eval_k", eval_k.map(|v| v.to_string()));
        }
        Cmd::Localize {
            checkpoint,
            data,
            query_id: _,
            tokens: _,
            k,
            decode,
        } => {
            push("checkpoint", checkpoint.clone());
            push("data_dir", data.clone());
            push("top_k", k.map(|v| v.to_string()));
            push("decode", decode.clone());
        }
        Cmd::Ablate { data, vary: _, epochs } => {
            push("data_dir", data.clone());
            push("epochs", epochs.map(|v| v.to_string()));
        }
    }
    named
}

fn dispatch(cli: Cli) -> Result<()> {
    let named = named_overrides(&cli);
    let cfg = config::resolve(cli.config.as_deref(), &cli.set, &named)?;
    match &cli.cmd {
        Cmd::GenData { .. } => commands::gen_data::run(&cfg, cli.force),
        Cmd::Train { .. } => commands::train::run(&cfg, cli.force),
        Cmd::Eval { oracle, .. } => commands::eval::run(&cfg, cli.force, *oracle),
        Cmd::Localize { query_id, tokens, .. } => {
            let query = match (query_id, tokens) {
                (Some(id), _) => Query::Id(id.clone()),
                (None, Some(text)) => Query::Tokens(text.clone()),
                (None, None) => bail!("pass --query-id or --tokens to choose a query"),
            };
            commands::localize::run(&cfg, query)
        }
        Cmd::Ablate { vary, .. } => commands::ablate::run(&cfg, vary, cli.force),
    }
}

fn main() {
    let env = env_logger::Env::new().filter_or("HAMMER_LOG", "info");
    env_logger::Builder::from_env(env)
        .format(|buf, record| writeln!(buf, "[{}] {}", record.level(), record.args()))
        .target(env_logger::Target::Stderr)
        .init();

    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        let msg = format!("{e:#}").replace('\n', " ");
        eprintln!("error: {msg}");
        std::process::exit(1);
    }
}
